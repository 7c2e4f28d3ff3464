#pragma once

#include <memory>
#include <string>

#include "vla/connector.hpp"
#include "vla/expert.hpp"
#include "vla/planner.hpp"
#include "vla/serde.hpp"

namespace vla::model {

// Separator between question and answer in the planner's token stream.
inline constexpr const char* kAnswerSep = " => ";

struct ModelConfig {
  planner::PlannerParams planner;
  connector::ConnectorConfig connector;
  expert::ExpertConfig expert;
  uint64_t init_seed{0};
  int stage{1};
  // Whether action instructions carry the spatial cue (training and rollout).
  bool spatial_prompt{true};

  // Widths the connector and expert share with the planner.
  void link();
  Json to_json() const;
  static ModelConfig from_json(const Json& j);
};

struct QASample {
  std::string question;
  std::string answer;
  sim::SceneState scene;
  uint64_t appearance_seed{0};
};

struct RobotSample {
  sim::SceneState state;
  uint64_t appearance_seed{0};
  std::string instruction;  // sub-instruction; spatial prompt applied upstream
  nn::Mat chunk;            // H x 4, codec-normalized
};

// Planner + querying transformer + diffusion expert over one ParamStore.
class UnifiedModel {
 public:
  explicit UnifiedModel(const ModelConfig& cfg);

  nn::ParamStore& params() { return store_; }
  const nn::ParamStore& params() const { return store_; }
  const ModelConfig& config() const { return cfg_; }
  ModelConfig& mutable_config() { return cfg_; }

  const planner::Planner& planner() const { return *planner_; }
  const connector::Connector& connector() const { return *connector_; }
  const expert::ActionExpert& expert() const { return *expert_; }

  // [BOS] + text tokens for conditioning (no EOS).
  static std::vector<int> condition_tokens(const std::string& text);

  // Diffusion loss for one robot sample; gamma < 0 uses the connector config.
  nn::Tape::Ref action_loss(nn::Tape& t, const RobotSample& s, Rng& rng,
                            double gamma = -1.0) const;

  // Masked next-token-prediction loss for one QA sample.
  nn::Tape::Ref qa_loss(nn::Tape& t, const QASample& s) const;

  // Condition token values for chunk sampling (inference path).
  nn::Mat make_condition(const std::string& instruction, const sim::Observation& obs,
                         const sim::SceneState& state, double gamma = -1.0) const;

  // True for parameters touched only by the NTP objective.
  static bool ntp_exclusive(const std::string& param_name);

 private:
  ModelConfig cfg_;
  nn::ParamStore store_;
  std::unique_ptr<planner::Planner> planner_;
  std::unique_ptr<connector::Connector> connector_;
  std::unique_ptr<expert::ActionExpert> expert_;
};

// Versioned binary checkpoint: JSON header (config, provenance) + raw tensors.
void save_checkpoint(const UnifiedModel& model, const std::string& path,
                     const Json& provenance = Json::object());
std::unique_ptr<UnifiedModel> load_checkpoint(const std::string& path);
Json checkpoint_header(const std::string& path);

// Copies planner.* tensors from a checkpoint into an existing model, leaving
// connector and expert parameters at their fresh initialization.
void load_planner_weights(UnifiedModel& model, const std::string& path);

}  // namespace vla::model
