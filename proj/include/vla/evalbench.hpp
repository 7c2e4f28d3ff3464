#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vla/model.hpp"
#include "vla/qa.hpp"
#include "vla/task_synth.hpp"

namespace vla::evalbench {

// --- grounding metrics ---

double iou(const PixBox& a, const PixBox& b);

// Fraction of predicted points landing on nonzero mask pixels.
double point_accuracy(const std::vector<std::pair<int, int>>& points,
                      const std::vector<uint8_t>& mask, int width, int height);

// Arc-length resampling of a pixel polyline to n points.
std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, int n);

inline constexpr int kTrajResamplePoints = 16;
inline constexpr double kTrajMaePenalty = 64.0;  // unparseable-output penalty, px

// Mean per-point absolute error (|dx| + |dy|) after shared resampling.
double traj_mae(const std::vector<std::pair<int, int>>& predicted,
                const std::vector<std::pair<int, int>>& reference);

struct GroundingMetrics {
  double iou_at_05_rate{0.0};
  double point_accuracy{0.0};
  double traj_mae{0.0};
  int n_box{0};
  int n_point{0};
  int n_traj{0};
};

// generate -> parse -> score; malformed generations take the failure scores.
// Point accuracy is measured on free-space records (those carrying a mask).
GroundingMetrics eval_grounding(const planner::Planner& planner,
                                const std::vector<qa::QARecord>& records,
                                int max_new_tokens = 96);

// --- closed-loop rollouts ---

struct Perturbation {
  enum class Kind { MoveEntity, UndoRelation, Replan };
  int at_step{0};
  Kind kind{Kind::MoveEntity};
  std::string entity;            // MoveEntity / UndoRelation target
  Vec2 new_pos;                  // MoveEntity destination
  std::optional<task::TaskSpec> new_task;  // Replan payload
};

// Pure: returns the perturbed state; only the targeted entity moves.
sim::SceneState apply_perturbation(const sim::SceneState& state, const Perturbation& p);

struct EpisodeResult {
  std::string task_id;
  bool success{false};
  int steps_used{0};
  int subtasks_completed{0};
  std::vector<std::pair<int, std::string>> perturbations_applied;
  std::string failure_reason;  // empty on success
};

// Chunk-level policy interface shared by the trained model and the scripted
// expert stand-in. Chunks are raw action rows (dx, dy, dtheta, grip).
class Policy {
 public:
  virtual ~Policy() = default;
  virtual void reset(const task::TaskSpec& task) = 0;
  virtual std::string next_subtask(const sim::SceneState& state, const sim::Observation& obs,
                                   const std::string& instruction,
                                   const std::vector<std::string>& completed) = 0;
  virtual nn::Mat action_chunk(const sim::SceneState& state, const sim::Observation& obs,
                               const std::string& sub_instruction, Rng& rng) = 0;
};

class ScriptedPolicy : public Policy {
 public:
  explicit ScriptedPolicy(int horizon = 16) : horizon_(horizon) {}
  void reset(const task::TaskSpec& task) override { plan_ = task.subtask_plan; }
  std::string next_subtask(const sim::SceneState& state, const sim::Observation&,
                           const std::string&, const std::vector<std::string>&) override;
  nn::Mat action_chunk(const sim::SceneState& state, const sim::Observation&,
                       const std::string& sub_instruction, Rng&) override;

 private:
  int horizon_;
  std::vector<task::SubTask> plan_;
};

class ModelPolicy : public Policy {
 public:
  explicit ModelPolicy(const model::UnifiedModel& m) : model_(m) {}
  void reset(const task::TaskSpec&) override {}
  std::string next_subtask(const sim::SceneState&, const sim::Observation& obs,
                           const std::string& instruction,
                           const std::vector<std::string>& completed) override;
  nn::Mat action_chunk(const sim::SceneState&, const sim::Observation& obs,
                       const std::string& sub_instruction, Rng& rng) override;

 private:
  const model::UnifiedModel& model_;
  expert::ActionCodec codec_;
};

struct RolloutOptions {
  int max_steps{task::kMaxEpisodeSteps};
  double completion_tau{1e-2};
  uint64_t appearance_seed{0};
};

EpisodeResult rollout(Policy& policy, const task::TaskSpec& task, const RolloutOptions& opts,
                      const std::vector<Perturbation>& schedule, uint64_t seed);

// --- suites and reporting ---

struct SplitResult {
  std::string split;
  int n{0};
  int successes{0};
  double sr{0.0};
  double wilson_lo{0.0};
  double wilson_hi{0.0};
  std::vector<EpisodeResult> episodes;
};

std::pair<double, double> wilson_interval(int successes, int n, double z = 1.96);

struct SuiteOptions {
  int n_objects{3};
  int n_containers{2};
  RolloutOptions rollout;
};

SplitResult eval_suite(Policy& policy, task::Split split, int n_episodes, uint64_t seed,
                       const SuiteOptions& opts);

// report.json + episodes.csv with stable field order.
void write_report(const std::vector<SplitResult>& splits,
                  const GroundingMetrics* grounding, const std::string& dir,
                  const Json& config_info);

}  // namespace vla::evalbench
