#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vla/common.hpp"

namespace vla::sim {

// World constants. Workspace is the unit square; images are 64x64.
constexpr int kImageSize = 64;
constexpr double kMaxStep = 0.05;      // max gripper displacement per step
constexpr double kGraspRadius = 0.03;  // grasp succeeds within this distance
constexpr double kNearDist = 0.15;     // "near" relation threshold
constexpr double kDirMargin = 0.05;    // dominance margin for directional relations

enum class Shape { Circle, Square, Triangle };

std::string shape_name(Shape s);
Shape shape_from_name(const std::string& name);

struct ObjectSpec {
  std::string id;
  std::string category;
  std::string color;
  Shape shape{Shape::Circle};
  double x{0.0}, y{0.0}, theta{0.0};
  double half_extent{0.05};
  bool operator==(const ObjectSpec&) const = default;
};

struct ContainerSpec {
  std::string id;
  std::string category;  // box, tray, plate, ...
  std::string color;
  double x{0.0}, y{0.0};
  double half_w{0.1}, half_h{0.1};
  bool operator==(const ContainerSpec&) const = default;
};

struct ButtonSpec {
  std::string id;
  std::string color;
  double x{0.0}, y{0.0};
  double half_extent{0.04};
  int label{0};
  bool operator==(const ButtonSpec&) const = default;
};

struct RobotState {
  double x{0.5}, y{0.5};
  bool gripper_open{true};
  std::string held;  // empty = nothing held
  bool operator==(const RobotState&) const = default;
};

struct SceneState {
  double width{1.0}, height{1.0};
  std::vector<ObjectSpec> objects;
  std::vector<ContainerSpec> containers;
  std::vector<ButtonSpec> buttons;
  RobotState robot;

  const ObjectSpec* find_object(const std::string& id) const;
  ObjectSpec* find_object(const std::string& id);
  const ContainerSpec* find_container(const std::string& id) const;
  const ButtonSpec* find_button(const std::string& id) const;
  bool has_entity(const std::string& id) const;
  // Centroid of any entity ("gripper" included).
  Vec2 centroid(const std::string& id) const;

  bool operator==(const SceneState& other) const = default;
};

struct Action {
  double dx{0.0}, dy{0.0}, dtheta{0.0};
  double grip{0.0};  // <= 0 open, > 0 close
  bool is_zero() const { return dx == 0.0 && dy == 0.0 && dtheta == 0.0 && grip == 0.0; }
};

struct Observation {
  int width{kImageSize}, height{kImageSize};
  uint64_t appearance_seed{0};
  std::vector<uint8_t> pixels;  // row-major, y * width * 3 + x * 3 + channel

  uint8_t at(int x, int y, int c) const { return pixels[(y * width + x) * 3 + c]; }
  bool operator==(const Observation&) const = default;
};

enum class Pred { Inside, OnTopOf, Near, LeftOf, RightOf, InFrontOf, Behind };

std::string pred_name(Pred p);
Pred pred_from_name(const std::string& name);

struct Relation {
  std::string subject;
  Pred pred{Pred::Near};
  std::string object;
  bool operator==(const Relation& other) const = default;
};

struct SceneGraph {
  std::vector<std::string> nodes;
  std::vector<Relation> relations;
  bool has(const Relation& r) const;
  bool has_node(const std::string& id) const;
};

struct GoalPredicate {
  std::vector<Relation> required;  // conjunction
};

// --- Layout declarations (inputs to init_scene / solve_layout) ---

struct ObjectDecl {
  std::string id;
  std::string category;
  std::string color;
  Shape shape{Shape::Circle};
  double half_extent{0.05};
};

struct ContainerDecl {
  std::string id;
  std::string category;
  std::string color;
  double half_w{0.1}, half_h{0.1};
};

struct ButtonDecl {
  std::string id;
  std::string color;
  double half_extent{0.04};
  int label{0};
};

struct LayoutSpec {
  double width{1.0}, height{1.0};
  std::vector<ObjectDecl> objects;
  std::vector<ContainerDecl> containers;
  std::vector<ButtonDecl> buttons;
};

// --- Operations ---

// Deterministic scene construction: non-overlapping uniform poses, robot at
// workspace center. Throws InfeasibleLayoutError when entities cannot fit.
SceneState init_scene(const LayoutSpec& layout, uint64_t seed);

// Pure kinematics step: clamped gripper motion, grasp/release logic, held
// object tracking. Degenerate actions are clamped, never rejected.
SceneState step(const SceneState& state, const Action& action);

// Pure rasterizer. appearance_seed selects background color, per-color
// palette jitter and a global brightness factor; geometry is untouched.
Observation render(const SceneState& state, uint64_t appearance_seed);

// Pixel bounding box of an entity's rendered footprint.
PixBox project_box(const SceneState& state, const std::string& entity_id);

// Pixel projection of a workspace point (clamped into the frame).
Vec2 to_pixel(const SceneState& state, double x, double y);

// Pixel mask of the entity's geometric footprint (independent of draw order
// and appearance). Row-major width*height bools.
std::vector<uint8_t> entity_mask(const SceneState& state, const std::string& entity_id);

SceneGraph derive_scene_graph(const SceneState& state);

// True iff every required relation is present in the graph. Goals referencing
// ids absent from the graph raise UnknownEntityError.
bool check_goal(const SceneGraph& graph, const GoalPredicate& goal);

}  // namespace vla::sim
