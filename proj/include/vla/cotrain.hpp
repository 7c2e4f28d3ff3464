#pragma once

#include <functional>
#include <string>
#include <vector>

#include "vla/model.hpp"

namespace vla::cotrain {

enum class Aggregation { Summed, Alternating };

std::string aggregation_name(Aggregation a);
Aggregation aggregation_from_name(const std::string& s);

struct TrainConfig {
  int stage{2};
  int robot_batch{256};
  int mm_batch{64};
  int steps{1000};
  double lr{3e-4};
  double weight_decay{0.01};
  Aggregation aggregation{Aggregation::Summed};
  double gamma{0.5};
  double w_action{1.0};
  double w_ntp{1.0};
  uint64_t seed{0};
  int n_threads{2};
  bool spatial_prompt{true};
  int log_every{25};
};

struct StepLosses {
  double action{-1.0};
  double ntp{-1.0};
};

struct LogRow {
  int step;
  double l_action;
  double l_ntp;
  double lr;
};

// Stage-2 dual-supervision trainer. Batch parallelism uses per-thread
// gradient buffers merged in thread order, so results are deterministic for a
// fixed (config, seed, thread count) triple.
class Trainer {
 public:
  Trainer(model::UnifiedModel& model, const TrainConfig& cfg);

  // One optimization step. In summed mode both losses back-propagate into a
  // single update; in alternating mode even steps take the action loss and
  // odd steps the NTP loss. Throws on stage mismatch or two empty batches.
  StepLosses joint_step(const std::vector<const model::RobotSample*>& robot_batch,
                        const std::vector<const model::QASample*>& qa_batch);

  // Runs cfg.steps of joint_step over the datasets with seeded batch draws.
  std::vector<LogRow> run(const std::vector<model::RobotSample>& robot,
                          const std::vector<model::QASample>& qa);

  int64_t step_index() const { return step_; }
  nn::AdamW& optimizer() { return opt_; }

 private:
  model::UnifiedModel& model_;
  TrainConfig cfg_;
  nn::AdamW opt_;
  int64_t step_{0};
};

// Stage 1: next-token prediction only; connector and expert stay untouched.
std::vector<LogRow> stage1_pretrain(model::UnifiedModel& model,
                                    const std::vector<model::QASample>& qa,
                                    const TrainConfig& cfg);

void write_log_csv(const std::vector<LogRow>& rows, const std::string& path);

// --- gradient analysis ---

struct GradMatrix {
  nn::Mat rows;           // n_steps x n_planner_values, rows l2-normalized
  std::string objective;  // "grounding" or "action"
};

enum class Objective { Grounding, Action };

// Records per-step planner gradients of the chosen objective without applying
// updates. Batches are drawn from the samples with a seeded stream.
GradMatrix collect_gradients(const model::UnifiedModel& model, Objective objective,
                             const std::vector<model::RobotSample>& robot,
                             const std::vector<model::QASample>& qa, int n_steps,
                             int batch_size, const TrainConfig& cfg);

// Projection-space similarity: mean squared cosine of the principal angles
// between the top-r right singular subspaces. Symmetric, in [0, 1].
double pss(const GradMatrix& a, const GradMatrix& b, int r);

void save_grad_matrix(const GradMatrix& g, const std::string& path);
GradMatrix load_grad_matrix(const std::string& path);

inline constexpr int kDefaultPssRank = 10;

}  // namespace vla::cotrain
