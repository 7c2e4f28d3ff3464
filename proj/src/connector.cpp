#include "vla/connector.hpp"

#include <cmath>

namespace vla::connector {

void ConnectorConfig::validate() const {
  if (n_queries < 1) throw Error("connector needs at least one query token");
  if (k_layers < 1) throw Error("k must be >= 1");
  if (gamma < 0.0 || gamma > 1.0) throw Error("gamma must lie in [0, 1]");
  if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
}

Connector::Connector(const ConnectorConfig& cfg, nn::ParamStore& store, Rng& rng,
                     std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
  const int d = cfg_.d_model;
  auto nrm = [&](const std::string& n, int r, int c) -> nn::Param* {
    return &store.create_normal(prefix_ + "." + n, r, c, rng);
  };
  auto ones = [&](const std::string& n, int c) -> nn::Param* {
    return &store.create_ones(prefix_ + "." + n, 1, c);
  };
  auto zeros = [&](const std::string& n, int c) -> nn::Param* {
    return &store.create(prefix_ + "." + n, 1, c);
  };

  query_tokens_ = nrm("query_tokens", cfg_.n_queries, d);
  blocks_.resize(cfg_.k_layers);
  for (int i = 0; i < cfg_.k_layers; ++i) {
    const std::string p = "b" + std::to_string(i) + ".";
    Block& b = blocks_[i];
    b.ln_q_g = ones(p + "ln_q_g", d);
    b.ln_q_b = zeros(p + "ln_q_b", d);
    b.wq = nrm(p + "wq", d, d);
    b.bq = zeros(p + "bq", d);
    b.wk = nrm(p + "wk", d, d);
    b.bk = zeros(p + "bk", d);
    b.wv = nrm(p + "wv", d, d);
    b.bv = zeros(p + "bv", d);
    b.wo = nrm(p + "wo", d, d);
    b.bo = zeros(p + "bo", d);
    b.ln_f_g = ones(p + "ln_f_g", d);
    b.ln_f_b = zeros(p + "ln_f_b", d);
    b.ff_w1 = nrm(p + "ff_w1", d, 4 * d);
    b.ff_b1 = zeros(p + "ff_b1", 4 * d);
    b.ff_w2 = nrm(p + "ff_w2", 4 * d, d);
    b.ff_b2 = zeros(p + "ff_b2", d);
  }
}

nn::Tape::Ref Connector::query_attend(nn::Tape& t,
                                      const std::vector<nn::Tape::Ref>& hidden_states,
                                      double gamma) const {
  if (hidden_states.empty()) throw Error("no planner hidden states");
  if (cfg_.k_layers > static_cast<int>(hidden_states.size()))
    throw Error("k exceeds planner depth");
  if (gamma < 0.0) gamma = cfg_.gamma;
  if (gamma > 1.0) throw Error("gamma must lie in [0, 1]");

  const int d = cfg_.d_model;
  const int dh = d / cfg_.n_heads;
  const size_t base = hidden_states.size() - cfg_.k_layers;

  nn::Tape::Ref queries = t.param(*query_tokens_);
  for (int i = 0; i < cfg_.k_layers; ++i) {
    const Block& b = blocks_[i];
    nn::Tape::Ref kv = t.grad_decay(hidden_states[base + i], gamma);

    nn::Tape::Ref qn = t.add_rowvec(t.mul_rowvec(t.rownorm(queries), t.param(*b.ln_q_g)),
                                    t.param(*b.ln_q_b));
    nn::Tape::Ref q = t.linear(qn, *b.wq, b.bq);
    nn::Tape::Ref k = t.linear(kv, *b.wk, b.bk);
    nn::Tape::Ref v = t.linear(kv, *b.wv, b.bv);

    std::vector<nn::Tape::Ref> heads;
    for (int h = 0; h < cfg_.n_heads; ++h) {
      nn::Tape::Ref qh = t.slice_cols(q, h * dh, dh);
      nn::Tape::Ref kh = t.slice_cols(k, h * dh, dh);
      nn::Tape::Ref vh = t.slice_cols(v, h * dh, dh);
      nn::Tape::Ref scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(dh));
      nn::Tape::Ref probs = t.softmax_rows(scores, nullptr);
      heads.push_back(t.matmul(probs, vh));
    }
    queries = t.add(queries, t.linear(t.concat_cols(heads), *b.wo, b.bo));

    nn::Tape::Ref fn = t.add_rowvec(t.mul_rowvec(t.rownorm(queries), t.param(*b.ln_f_g)),
                                    t.param(*b.ln_f_b));
    nn::Tape::Ref ff = t.linear(t.gelu(t.linear(fn, *b.ff_w1, b.ff_b1)), *b.ff_w2, b.ff_b2);
    queries = t.add(queries, ff);
  }
  return queries;
}

}  // namespace vla::connector
