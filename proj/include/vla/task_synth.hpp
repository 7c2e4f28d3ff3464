#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vla/sim.hpp"

namespace vla::task {

enum class Style { Direct, Attribute, Category, GoalConditioned, Reasoning };
enum class Split { ID, UnseenObject, NewBackground, UnseenInstruction };

std::string style_name(Style s);
std::string split_name(Split s);
Split split_from_name(const std::string& name);

constexpr int kMaxEpisodeSteps = 400;
constexpr int kSolverAttempts = 1000;  // N_max for the layout solver
constexpr int kDefaultPadLen = 8;
constexpr double kDefaultIdleThreshold = 1e-4;

struct SubTask {
  std::string instruction;
  sim::GoalPredicate goal;
};

struct TaskSpec {
  std::string task_id;
  std::string instruction;
  Style style{Style::Direct};
  sim::GoalPredicate goal;
  sim::LayoutSpec layout;
  std::vector<sim::Relation> layout_constraints;
  std::vector<SubTask> subtask_plan;
  Split split{Split::ID};
};

struct TrajStep {
  sim::SceneState state;  // state the action is applied to
  sim::Action action;
  int subtask_index{0};
  bool is_padding{false};
};

struct Trajectory {
  std::string task_id;
  std::vector<TrajStep> steps;
  sim::SceneState final_state;
  uint64_t appearance_seed{0};
  bool verified{false};
  // Filled by replay_render, parallel to steps; empty until rendered.
  std::vector<sim::Observation> observations;
};

// --- Asset vocabulary (ID vs unseen pools are disjoint by construction) ---

struct AssetDef {
  std::string category;
  std::string group;  // fruits, toys, vegetables, bottles, snacks
  sim::Shape shape;
  std::string color;
};

const std::vector<AssetDef>& id_assets();
const std::vector<AssetDef>& unseen_assets();
const std::vector<std::string>& id_container_colors();
const std::vector<std::string>& unseen_container_colors();

// Instruction template pool for a style; the unseen pool shares no strings
// with the ID pool.
const std::vector<std::string>& template_pool(Style style, bool unseen);

// --- Operations ---

// Rejection sampling over init_scene-style pose draws until the derived
// scene graph satisfies every constraint. Throws InfeasibleLayoutError with
// the attempt count after kSolverAttempts failures.
sim::SceneState solve_layout(const sim::LayoutSpec& layout,
                             const std::vector<sim::Relation>& constraints,
                             uint64_t rng_seed);

struct InstructionInputs {
  std::string object_category;
  std::string object_color;
  sim::Shape object_shape{sim::Shape::Circle};
  std::string container_category;
  std::string container_color;
  std::string group;                    // for Style::Category
  std::vector<int> button_labels;       // for Style::Reasoning
  std::vector<std::string> button_colors;
};

struct InstructionResult {
  std::string text;
  int reasoning_answer{-1};        // evaluated arithmetic value (Reasoning only)
  int reasoning_button_index{-1};  // index of the matching button label
};

InstructionResult synthesize_instruction(const InstructionInputs& in, Style style,
                                         Split split, uint64_t rng_seed);

// Scripted demonstrator: approach target, grasp, carry, release. Pure in
// (state, sub_goal); emits the zero action once the sub-goal holds.
sim::Action expert_policy(const sim::SceneState& state, const sim::GoalPredicate& sub_goal);

struct CollectOptions {
  int max_steps{kMaxEpisodeSteps};
  // Uniform per-component jitter added to executed (and recorded) actions;
  // the expert replans each step, so demonstrations still reach their goals.
  double action_noise{0.0};
};

// Closed-loop expert rollout with post-hoc replay verification and goal
// validation. Throws BudgetExhaustedError when max_steps is hit.
Trajectory collect_episode(const TaskSpec& task, uint64_t rng_seed,
                           const CollectOptions& opts = {});

// Re-checks a finished trajectory: exact replay equality plus final-goal
// validation. Used by collect_episode and as an independent offline audit.
bool verify_and_validate(const Trajectory& traj, const sim::GoalPredicate& goal);

// Decoupled rendering pass: attaches observations; states/actions untouched.
Trajectory replay_render(const Trajectory& traj, uint64_t appearance_seed);

// Removes idle frames (except grasp/release frames), inserts pad_len zero
// action padding frames after each subtask segment, and re-simulates states
// so the replay invariant holds on the result.
Trajectory segment_and_pad(const Trajectory& traj, int pad_len = kDefaultPadLen,
                           double idle_threshold = kDefaultIdleThreshold);

// --- Task generation ---

struct TaskGenOptions {
  Split split{Split::ID};
  int n_objects{3};      // objects in the scene (>=1; first is the target)
  int n_containers{2};   // >=1; first is the destination
  Style style{Style::Direct};
};

TaskSpec make_pick_place_task(const TaskGenOptions& opts, uint64_t seed);

// The four-subtask stacking fixture (bun, meat, lettuce, bun onto a plate).
TaskSpec make_sandwich_task(uint64_t seed);

// Arithmetic button-press task: press the button whose label equals the
// expression's value (goal: gripper near that button).
TaskSpec make_reasoning_task(uint64_t seed);

}  // namespace vla::task
