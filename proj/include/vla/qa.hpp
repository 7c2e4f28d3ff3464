#pragma once

#include <string>
#include <variant>
#include <vector>

#include "vla/sim.hpp"
#include "vla/task_synth.hpp"

namespace vla::qa {

// Auxiliary spatial cue appended to instructions; it never gets a textual
// response of its own.
inline constexpr const char* kSpatialCue =
    "Figure out how to execute it, then locate the key object needed.";

inline constexpr double kSpatialPromptProb = 0.5;
inline constexpr int kMaxPoints = 10;
inline constexpr int kMaxImageDim = 1024;
inline constexpr int kOccupancyGrid = 16;  // free-space occupancy cells per side

enum class QaType { General, Box, Point, Trajectory };
enum class Format { Json, Xml };

std::string qa_type_name(QaType t);
QaType qa_type_from_name(const std::string& name);

struct BoxAnswer {
  PixBox box;
  bool operator==(const BoxAnswer&) const = default;
};

struct PointAnswer {
  std::vector<std::pair<int, int>> points;  // 1..10 entries
  bool operator==(const PointAnswer&) const = default;
};

struct TrajAnswer {
  std::vector<std::pair<int, int>> waypoints;  // >= 2, consecutive distinct
  bool operator==(const TrajAnswer&) const = default;
};

struct TextAnswer {
  std::string text;
  bool operator==(const TextAnswer&) const = default;
};

using Answer = std::variant<BoxAnswer, PointAnswer, TrajAnswer, TextAnswer>;

struct QARecord {
  QaType qa_type{QaType::Box};
  std::string question;
  int width{sim::kImageSize};
  int height{sim::kImageSize};
  Answer answer;
  std::string answer_text;  // serialized answer, the training target
  Format format{Format::Json};
  task::Split split_tag{task::Split::ID};

  // Provenance for lazy rendering and metric ground truth.
  sim::SceneState scene;
  uint64_t appearance_seed{0};
  std::vector<uint8_t> gt_mask;  // width*height free-space mask (point QA only)
};

struct OccludedEntityError : Error {
  using Error::Error;
};

struct NoFreeSpaceError : Error {
  using Error::Error;
};

struct TooShortSegmentError : Error {
  using Error::Error;
};

// --- serialization (bit-exact schemas) ---

std::string serialize(const Answer& answer, Format format);

// Extracts the first well-formed payload for the given type from arbitrary
// surrounding prose. Throws MalformedPayloadError naming the first violation.
Answer parse(const std::string& text, QaType qa_type);

// Resolution and point-count admission rule.
bool filter_record(const QARecord& record);

// --- emitters ---

struct EmitContext {
  sim::SceneState state;
  uint64_t appearance_seed{0};
  task::Split split{task::Split::ID};
};

// Grounding query over one entity; answer is its projected pixel box.
QARecord emit_box_qa(const EmitContext& ctx, const std::string& entity_id, uint64_t rng_seed);

enum class PointQuery { ObjectReference, FreeSpace };

// Object-reference: centroids of entities matching the target's description.
// Free-space: up to 10 points in unoccupied occupancy-grid cells; the record
// stores the ground-truth free mask.
QARecord emit_point_qa(const EmitContext& ctx, PointQuery kind, const std::string& entity_id,
                       uint64_t rng_seed, int max_points = kMaxPoints);

// Gripper waypoints of one subtask, subsampled at `stride` with both
// endpoints always present; padding frames excluded.
QARecord emit_traj_qa(const task::Trajectory& traj, int subtask_index, int stride,
                      task::Split split, uint64_t rng_seed);

// Toy general QA: scene captioning or an arithmetic word problem.
QARecord emit_general_qa(const EmitContext& ctx, uint64_t rng_seed);

// Pixels where the entity is actually visible under the draw order (geometric
// footprint minus entities drawn above it).
std::vector<uint8_t> visible_mask(const sim::SceneState& state, const std::string& entity_id);

}  // namespace vla::qa
