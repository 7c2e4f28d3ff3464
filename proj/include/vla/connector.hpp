#pragma once

#include <vector>

#include "vla/nn.hpp"

namespace vla::connector {

struct ConnectorConfig {
  int n_queries{16};   // M
  int k_layers{1};     // cross-attend to the last k planner layers
  double gamma{0.5};   // gradient decay factor on planner states
  int d_model{128};    // shared with the planner
  int n_heads{2};

  void validate() const;
};

// Querying transformer: a fixed set of learnable query tokens cross-attends
// to the last k planner layers (block i reads selected layer i, final layer
// last). The gradient decay sits on the planner states entering each block,
// so only action-loss gradients flowing back into the planner attenuate.
class Connector {
 public:
  Connector(const ConnectorConfig& cfg, nn::ParamStore& store, Rng& rng,
            std::string prefix = "connector");

  // hidden_states: planner layer outputs, earliest first. Returns the latent
  // plan (M x d_model). gamma overrides the config when >= 0.
  nn::Tape::Ref query_attend(nn::Tape& t,
                             const std::vector<nn::Tape::Ref>& hidden_states,
                             double gamma = -1.0) const;

  const ConnectorConfig& config() const { return cfg_; }

 private:
  struct Block {
    nn::Param *ln_q_g, *ln_q_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    nn::Param *ln_f_g, *ln_f_b, *ff_w1, *ff_b1, *ff_w2, *ff_b2;
  };

  ConnectorConfig cfg_;
  std::string prefix_;
  nn::Param* query_tokens_;
  std::vector<Block> blocks_;
};

}  // namespace vla::connector
