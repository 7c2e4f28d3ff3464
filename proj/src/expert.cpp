#include "vla/expert.hpp"

#include <cmath>

namespace vla::expert {

DiffusionSchedule make_schedule(int T, double beta1, double betaT) {
  if (T < 1) throw Error("schedule needs T >= 1");
  if (!(beta1 > 0.0) || !(beta1 <= betaT) || !(betaT < 1.0))
    throw Error("schedule needs 0 < beta1 <= betaT < 1");
  DiffusionSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double prod = 1.0;
  for (int t = 0; t < T; ++t) {
    s.beta(t) = T == 1 ? beta1 : beta1 + (betaT - beta1) * t / (T - 1);
    s.alpha(t) = 1.0 - s.beta(t);
    prod *= s.alpha(t);
    s.alpha_bar(t) = prod;
  }
  return s;
}

nn::Mat add_noise(const nn::Mat& x0, int t, const nn::Mat& eps,
                  const DiffusionSchedule& sched) {
  if (t < 1 || t > sched.T) throw Error("diffusion step out of range");
  if (x0.rows() != eps.rows() || x0.cols() != eps.cols())
    throw ShapeMismatchError("noise shape mismatch");
  const double ab = sched.alpha_bar(t - 1);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

bool detect_completion(const nn::Mat& chunk, double tau) {
  if (tau <= 0.0) throw Error("tau must be positive");
  const int h = static_cast<int>(chunk.rows());
  const int tail = h / 2;
  const double m = chunk.bottomRows(tail > 0 ? tail : h).cwiseAbs().maxCoeff();
  return m < tau;
}

Eigen::VectorXd robot_state_vector(const sim::SceneState& state) {
  Eigen::VectorXd v(5);
  double theta = 0.0;
  if (!state.robot.held.empty()) {
    if (const auto* o = state.find_object(state.robot.held)) theta = o->theta;
  }
  v << state.robot.x, state.robot.y, theta, state.robot.gripper_open ? 1.0 : 0.0,
      state.robot.held.empty() ? 0.0 : 1.0;
  return v;
}

void ExpertConfig::validate() const {
  if (horizon < 1) throw Error("horizon must be >= 1");
  if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
}

ActionExpert::ActionExpert(const ExpertConfig& cfg, nn::ParamStore& store, Rng& rng,
                           std::string prefix)
    : cfg_(cfg), sched_(make_schedule(cfg.T, cfg.beta1, cfg.betaT)),
      prefix_(std::move(prefix)) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int vc = cfg_.vision_channels;
  auto nrm = [&](const std::string& n, int r, int c) -> nn::Param* {
    return &store.create_normal(prefix_ + "." + n, r, c, rng);
  };
  auto ones = [&](const std::string& n, int c) -> nn::Param* {
    return &store.create_ones(prefix_ + "." + n, 1, c);
  };
  auto zeros = [&](const std::string& n, int c) -> nn::Param* {
    return &store.create(prefix_ + "." + n, 1, c);
  };

  conv1_w_ = nrm("conv1_w", 8 * 8 * 3, vc);  // 8x8 stride-8 patch conv
  conv1_b_ = zeros("conv1_b", vc);
  conv2_w_ = nrm("conv2_w", 9 * vc, vc);     // 3x3 conv on the 8x8 grid
  conv2_b_ = zeros("conv2_b", vc);
  vproj_w_ = nrm("vproj_w", vc, d);
  vproj_b_ = zeros("vproj_b", d);
  vpos_ = nrm("vpos", 64, d);

  st_w1_ = nrm("st_w1", cfg_.state_dim, d);
  st_b1_ = zeros("st_b1", d);
  st_w2_ = nrm("st_w2", d, d);
  st_b2_ = zeros("st_b2", d);

  lat_w_ = nrm("lat_w", cfg_.cond_dim, d);
  lat_b_ = zeros("lat_b", d);

  in_w_ = nrm("in_w", cfg_.action_dim, d);
  in_b_ = zeros("in_b", d);
  time_w_ = nrm("time_w", d, d);
  time_b_ = zeros("time_b", d);
  chunk_pos_ = nrm("chunk_pos", cfg_.horizon, d);

  blocks_.resize(cfg_.n_blocks);
  for (int i = 0; i < cfg_.n_blocks; ++i) {
    const std::string p = "b" + std::to_string(i) + ".";
    Block& b = blocks_[i];
    b.ln1_g = ones(p + "ln1_g", d);
    b.ln1_b = zeros(p + "ln1_b", d);
    b.sa_wq = nrm(p + "sa_wq", d, d);
    b.sa_bq = zeros(p + "sa_bq", d);
    b.sa_wk = nrm(p + "sa_wk", d, d);
    b.sa_bk = zeros(p + "sa_bk", d);
    b.sa_wv = nrm(p + "sa_wv", d, d);
    b.sa_bv = zeros(p + "sa_bv", d);
    b.sa_wo = nrm(p + "sa_wo", d, d);
    b.sa_bo = zeros(p + "sa_bo", d);
    b.ln2_g = ones(p + "ln2_g", d);
    b.ln2_b = zeros(p + "ln2_b", d);
    b.ca_wq = nrm(p + "ca_wq", d, d);
    b.ca_bq = zeros(p + "ca_bq", d);
    b.ca_wk = nrm(p + "ca_wk", d, d);
    b.ca_bk = zeros(p + "ca_bk", d);
    b.ca_wv = nrm(p + "ca_wv", d, d);
    b.ca_bv = zeros(p + "ca_bv", d);
    b.ca_wo = nrm(p + "ca_wo", d, d);
    b.ca_bo = zeros(p + "ca_bo", d);
    b.ln3_g = ones(p + "ln3_g", d);
    b.ln3_b = zeros(p + "ln3_b", d);
    b.ff_w1 = nrm(p + "ff_w1", d, 4 * d);
    b.ff_b1 = zeros(p + "ff_b1", 4 * d);
    b.ff_w2 = nrm(p + "ff_w2", 4 * d, d);
    b.ff_b2 = zeros(p + "ff_b2", d);
  }
  lnf_g_ = ones("lnf_g", d);
  lnf_b_ = zeros("lnf_b", d);
  out_w_ = nrm("out_w", d, cfg_.action_dim);
  out_b_ = zeros("out_b", cfg_.action_dim);
}

nn::Tape::Ref ActionExpert::vision_encode(nn::Tape& t, const sim::Observation& obs) const {
  if (obs.width != sim::kImageSize || obs.height != sim::kImageSize ||
      obs.pixels.size() != static_cast<size_t>(obs.width) * obs.height * 3)
    throw ShapeMismatchError("observation shape mismatch");

  constexpr int kPatch = 8;
  const int g = sim::kImageSize / kPatch;  // 8
  nn::Mat patches(g * g, kPatch * kPatch * 3);
  for (int py = 0; py < g; ++py) {
    for (int px = 0; px < g; ++px) {
      int k = 0;
      for (int dy = 0; dy < kPatch; ++dy)
        for (int dx = 0; dx < kPatch; ++dx)
          for (int c = 0; c < 3; ++c)
            patches(py * g + px, k++) =
                obs.at(px * kPatch + dx, py * kPatch + dy, c) / 255.0 - 0.5;
    }
  }
  nn::Tape::Ref h = t.relu(t.linear(t.input(std::move(patches)), *conv1_w_, conv1_b_));
  h = t.relu(t.linear(t.im2col3x3(h, g, g), *conv2_w_, conv2_b_));
  h = t.linear(h, *vproj_w_, vproj_b_);
  return t.add(h, t.param(*vpos_));
}

nn::Tape::Ref ActionExpert::encode_state(nn::Tape& t, const Eigen::VectorXd& sv) const {
  if (sv.size() != cfg_.state_dim) throw ShapeMismatchError("state vector size mismatch");
  nn::Mat row(1, cfg_.state_dim);
  row.row(0) = sv.transpose();
  nn::Tape::Ref h = t.tanh_op(t.linear(t.input(std::move(row)), *st_w1_, st_b1_));
  return t.linear(h, *st_w2_, st_b2_);
}

nn::Tape::Ref ActionExpert::build_condition(nn::Tape& t, nn::Tape::Ref latent_plan,
                                            nn::Tape::Ref visual,
                                            nn::Tape::Ref state_emb) const {
  nn::Tape::Ref lat = t.linear(latent_plan, *lat_w_, lat_b_);
  return t.concat_rows({lat, visual, state_emb});
}

nn::Tape::Ref ActionExpert::attention(nn::Tape& t, nn::Tape::Ref q_in, nn::Tape::Ref kv_in,
                                      nn::Param* wq, nn::Param* bq, nn::Param* wk,
                                      nn::Param* bk, nn::Param* wv, nn::Param* bv,
                                      nn::Param* wo, nn::Param* bo) const {
  const int dh = cfg_.d_model / cfg_.n_heads;
  nn::Tape::Ref q = t.linear(q_in, *wq, bq);
  nn::Tape::Ref k = t.linear(kv_in, *wk, bk);
  nn::Tape::Ref v = t.linear(kv_in, *wv, bv);
  std::vector<nn::Tape::Ref> heads;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    nn::Tape::Ref qh = t.slice_cols(q, h * dh, dh);
    nn::Tape::Ref kh = t.slice_cols(k, h * dh, dh);
    nn::Tape::Ref vh = t.slice_cols(v, h * dh, dh);
    nn::Tape::Ref scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(dh));
    heads.push_back(t.matmul(t.softmax_rows(scores, nullptr), vh));
  }
  return t.linear(t.concat_cols(heads), *wo, bo);
}

nn::Tape::Ref ActionExpert::denoiser_forward(nn::Tape& t, nn::Tape::Ref x_t, int step_t,
                                             nn::Tape::Ref cond) const {
  if (t.val(x_t).rows() != cfg_.horizon ||
      t.val(x_t).cols() != cfg_.action_dim)
    throw ShapeMismatchError("chunk shape mismatch");

  nn::Tape::Ref time_emb =
      t.linear(t.input(nn::sinusoidal_embedding(step_t, cfg_.d_model)), *time_w_, time_b_);
  nn::Tape::Ref h = t.linear(x_t, *in_w_, in_b_);
  h = t.add(h, t.param(*chunk_pos_));
  h = t.add_rowvec(h, time_emb);

  auto ln = [&](nn::Tape::Ref x, nn::Param* g, nn::Param* b) {
    return t.add_rowvec(t.mul_rowvec(t.rownorm(x), t.param(*g)), t.param(*b));
  };

  for (const Block& b : blocks_) {
    h = t.add(h, attention(t, ln(h, b.ln1_g, b.ln1_b), ln(h, b.ln1_g, b.ln1_b), b.sa_wq,
                           b.sa_bq, b.sa_wk, b.sa_bk, b.sa_wv, b.sa_bv, b.sa_wo, b.sa_bo));
    h = t.add(h, attention(t, ln(h, b.ln2_g, b.ln2_b), cond, b.ca_wq, b.ca_bq, b.ca_wk,
                           b.ca_bk, b.ca_wv, b.ca_bv, b.ca_wo, b.ca_bo));
    nn::Tape::Ref ffn = ln(h, b.ln3_g, b.ln3_b);
    h = t.add(h, t.linear(t.gelu(t.linear(ffn, *b.ff_w1, b.ff_b1)), *b.ff_w2, b.ff_b2));
  }
  return t.linear(ln(h, lnf_g_, lnf_b_), *out_w_, out_b_);
}

nn::Tape::Ref ActionExpert::diffusion_loss(nn::Tape& t, const nn::Mat& x0,
                                           nn::Tape::Ref cond, Rng& rng) const {
  const int step_t = 1 + static_cast<int>(rng.uniform_int(static_cast<uint64_t>(sched_.T)));
  nn::Mat eps(x0.rows(), x0.cols());
  for (int r = 0; r < eps.rows(); ++r)
    for (int c = 0; c < eps.cols(); ++c) eps(r, c) = rng.normal();
  nn::Tape::Ref x_t = t.input(add_noise(x0, step_t, eps, sched_));
  nn::Tape::Ref pred = denoiser_forward(t, x_t, step_t, cond);
  return t.mse(pred, eps);
}

nn::Mat ActionExpert::sample_chunk(const nn::Mat& cond_values, Rng& rng) const {
  nn::Mat x(cfg_.horizon, cfg_.action_dim);
  for (int r = 0; r < x.rows(); ++r)
    for (int c = 0; c < x.cols(); ++c) x(r, c) = rng.normal();

  for (int step_t = sched_.T; step_t >= 1; --step_t) {
    nn::Tape t;
    nn::Tape::Ref cond = t.input(cond_values);
    nn::Tape::Ref eps_hat = denoiser_forward(t, t.input(x), step_t, cond);
    const nn::Mat& e = t.val(eps_hat);

    const double beta = sched_.beta(step_t - 1);
    const double alpha = sched_.alpha(step_t - 1);
    const double abar = sched_.alpha_bar(step_t - 1);
    x = (x - beta / std::sqrt(1.0 - abar) * e) / std::sqrt(alpha);
    if (step_t > 1) {
      const double sigma = std::sqrt(beta);
      for (int r = 0; r < x.rows(); ++r)
        for (int c = 0; c < x.cols(); ++c) x(r, c) += sigma * rng.normal();
    }
  }
  return x;
}

}  // namespace vla::expert
