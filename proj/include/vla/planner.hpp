#pragma once

#include <string>
#include <vector>

#include "vla/nn.hpp"
#include "vla/sim.hpp"

namespace vla::planner {

// Character-level vocabulary: printable ASCII plus specials.
struct Vocab {
  static constexpr int kPad = 0;
  static constexpr int kBos = 1;
  static constexpr int kEos = 2;
  static constexpr int kImg = 3;
  static constexpr int kAsciiBase = 4;   // token for ' '
  static constexpr int kSize = 4 + 95;   // printable ASCII 32..126

  static int size() { return kSize; }
  static std::vector<int> tokenize(const std::string& text);
  static std::string detokenize(const std::vector<int>& tokens);
};

struct PlannerParams {
  int n_layers{4};
  int d_model{128};
  int n_heads{4};
  int context{512};
  int patch{8};
  int image_size{sim::kImageSize};

  int image_tokens() const {
    const int g = image_size / patch;
    return g * g;
  }
  int head_dim() const { return d_model / n_heads; }
  void validate() const;
};

// Decoder-only transformer over [image patch tokens || text tokens]. Image
// tokens attend among themselves; text attends causally and sees all image
// tokens. All layer outputs are exposed for the connector.
class Planner {
 public:
  Planner(const PlannerParams& cfg, nn::ParamStore& store, Rng& rng,
          std::string prefix = "planner");

  struct ForwardOut {
    nn::Tape::Ref logits;               // (n_text, vocab)
    std::vector<nn::Tape::Ref> hidden;  // per layer, (n_img + n_text, d_model)
    int n_img{0};
  };

  // Patch embedding of an observation (n_img x d_model).
  nn::Tape::Ref encode_image(nn::Tape& t, const sim::Observation& obs) const;

  ForwardOut forward(nn::Tape& t, const std::vector<int>& text_tokens,
                     nn::Tape::Ref image_tokens) const;

  // Mean cross-entropy over masked positions (mask marks answer tokens).
  static nn::Tape::Ref ntp_loss(nn::Tape& t, nn::Tape::Ref logits,
                                const std::vector<int>& targets,
                                const std::vector<uint8_t>& mask);

  // Greedy decoding until EOS or budget; deterministic.
  std::string generate(const std::string& prompt, const sim::Observation& obs,
                       int max_new_tokens) const;

  const PlannerParams& config() const { return cfg_; }

 private:
  struct Layer {
    nn::Param *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    nn::Param *ln2_g, *ln2_b, *mlp_w1, *mlp_b1, *mlp_w2, *mlp_b2;
  };

  nn::Tape::Ref block(nn::Tape& t, nn::Tape::Ref x, const Layer& l,
                      const nn::Mat& mask) const;

  PlannerParams cfg_;
  std::string prefix_;
  nn::Param *tok_emb_, *pos_txt_, *patch_w_, *patch_b_, *pos_img_;
  nn::Param *ln_f_g_, *ln_f_b_, *out_w_, *out_b_;
  std::vector<Layer> layers_;
};

// Appends the fixed spatial cue; idempotent.
std::string apply_spatial_prompt(const std::string& instruction);

// Subtask scheduling realized as QA generation. Builds the scheduling prompt
// from the instruction and completed sub-instructions.
std::string scheduling_prompt(const std::string& instruction,
                              const std::vector<std::string>& completed);
std::string plan_next_subtask(const Planner& planner, const std::string& instruction,
                              const std::vector<std::string>& completed,
                              const sim::Observation& obs, int max_new_tokens = 64);

inline constexpr const char* kDoneToken = "DONE";

}  // namespace vla::planner
