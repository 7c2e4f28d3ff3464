#pragma once

#include <vector>

#include "vla/nn.hpp"
#include "vla/sim.hpp"

namespace vla::expert {

// DDPM noise schedule with a linear beta ramp.
struct DiffusionSchedule {
  int T{50};
  Eigen::VectorXd beta;       // 1-indexed at [t-1]
  Eigen::VectorXd alpha;      // 1 - beta
  Eigen::VectorXd alpha_bar;  // running product
};

DiffusionSchedule make_schedule(int T = 50, double beta1 = 1e-4, double betaT = 0.02);

// Forward process q(x_t | x_0) = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps.
nn::Mat add_noise(const nn::Mat& x0, int t, const nn::Mat& eps,
                  const DiffusionSchedule& sched);

// True iff the trailing H/2 actions all stay below tau in max-abs.
bool detect_completion(const nn::Mat& chunk, double tau = 1e-2);

// Raw action <-> normalized chunk rows. dx, dy are scaled by the max step so
// the diffusion target is O(1); grip is already in [-1, 1].
struct ActionCodec {
  double pos_scale{sim::kMaxStep};
  double theta_scale{1.0};

  Eigen::RowVector4d encode(const sim::Action& a) const {
    return {a.dx / pos_scale, a.dy / pos_scale, a.dtheta / theta_scale, a.grip};
  }
  sim::Action decode(const Eigen::RowVector4d& r) const {
    return sim::Action{r(0) * pos_scale, r(1) * pos_scale, r(2) * theta_scale, r(3)};
  }
};

struct ExpertConfig {
  int horizon{16};      // H
  int action_dim{4};
  int d_model{64};
  int n_blocks{2};
  int n_heads{2};
  int cond_dim{128};    // width of incoming latent-plan tokens
  int vision_channels{24};
  int state_dim{5};     // gripper x, y, held theta, open flag, held flag
  int T{50};
  double beta1{1e-4};
  double betaT{0.02};

  void validate() const;
};

Eigen::VectorXd robot_state_vector(const sim::SceneState& state);

// System-1 executor: conditional DDPM over action chunks with a small
// convolutional vision encoder and a two-layer state projector.
class ActionExpert {
 public:
  ActionExpert(const ExpertConfig& cfg, nn::ParamStore& store, Rng& rng,
               std::string prefix = "expert");

  // (grid*grid) x d_model visual tokens from a raw observation.
  nn::Tape::Ref vision_encode(nn::Tape& t, const sim::Observation& obs) const;

  // 1 x d_model embedding of the robot state vector.
  nn::Tape::Ref encode_state(nn::Tape& t, const Eigen::VectorXd& sv) const;

  // Projects latent-plan tokens (M x cond_dim) into expert width and stacks
  // them with visual and state tokens into the conditioning sequence.
  nn::Tape::Ref build_condition(nn::Tape& t, nn::Tape::Ref latent_plan,
                                nn::Tape::Ref visual, nn::Tape::Ref state_emb) const;

  // Predicted noise for a noised chunk (H x 4), conditioned via
  // cross-attention.
  nn::Tape::Ref denoiser_forward(nn::Tape& t, nn::Tape::Ref x_t, int step_t,
                                 nn::Tape::Ref cond) const;

  // L2 noise-prediction loss with t and eps drawn from rng.
  nn::Tape::Ref diffusion_loss(nn::Tape& t, const nn::Mat& x0, nn::Tape::Ref cond,
                               Rng& rng) const;

  // Ancestral DDPM sampling with precomputed condition token values.
  nn::Mat sample_chunk(const nn::Mat& cond_values, Rng& rng) const;

  const ExpertConfig& config() const { return cfg_; }
  const DiffusionSchedule& schedule() const { return sched_; }

 private:
  struct Block {
    nn::Param *ln1_g, *ln1_b, *sa_wq, *sa_bq, *sa_wk, *sa_bk, *sa_wv, *sa_bv, *sa_wo, *sa_bo;
    nn::Param *ln2_g, *ln2_b, *ca_wq, *ca_bq, *ca_wk, *ca_bk, *ca_wv, *ca_bv, *ca_wo, *ca_bo;
    nn::Param *ln3_g, *ln3_b, *ff_w1, *ff_b1, *ff_w2, *ff_b2;
  };

  nn::Tape::Ref attention(nn::Tape& t, nn::Tape::Ref q_in, nn::Tape::Ref kv_in,
                          nn::Param* wq, nn::Param* bq, nn::Param* wk, nn::Param* bk,
                          nn::Param* wv, nn::Param* bv, nn::Param* wo,
                          nn::Param* bo) const;

  ExpertConfig cfg_;
  DiffusionSchedule sched_;
  std::string prefix_;
  // vision encoder
  nn::Param *conv1_w_, *conv1_b_, *conv2_w_, *conv2_b_, *vproj_w_, *vproj_b_, *vpos_;
  // state encoder
  nn::Param *st_w1_, *st_b1_, *st_w2_, *st_b2_;
  // condition projection for latent plan tokens
  nn::Param *lat_w_, *lat_b_;
  // denoiser
  nn::Param *in_w_, *in_b_, *time_w_, *time_b_, *chunk_pos_;
  nn::Param *lnf_g_, *lnf_b_, *out_w_, *out_b_;
  std::vector<Block> blocks_;
};

}  // namespace vla::expert
