#include "vla/planner.hpp"

#include <cmath>

#include "vla/qa.hpp"

namespace vla::planner {

std::vector<int> Vocab::tokenize(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) {
    if (c >= 32 && c <= 126)
      out.push_back(kAsciiBase + c - 32);
    else
      out.push_back(kAsciiBase + '?' - 32);  // designated replacement byte
  }
  return out;
}

std::string Vocab::detokenize(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t >= kAsciiBase && t < kSize) out.push_back(static_cast<char>(t - kAsciiBase + 32));
    // specials render as nothing
  }
  return out;
}

void PlannerParams::validate() const {
  if (d_model % n_heads != 0) throw Error("d_model must be divisible by n_heads");
  if (image_size % patch != 0) throw Error("patch must divide image size");
}

Planner::Planner(const PlannerParams& cfg, nn::ParamStore& store, Rng& rng,
                 std::string prefix)
    : cfg_(cfg), prefix_(std::move(prefix)) {
  cfg_.validate();
  const int d = cfg_.d_model;
  const int v = Vocab::size();
  auto nrm = [&](const std::string& n, int r, int c) -> nn::Param* {
    return &store.create_normal(prefix_ + "." + n, r, c, rng);
  };
  auto ones = [&](const std::string& n, int c) -> nn::Param* {
    return &store.create_ones(prefix_ + "." + n, 1, c);
  };
  auto zeros = [&](const std::string& n, int c) -> nn::Param* {
    return &store.create(prefix_ + "." + n, 1, c);
  };

  tok_emb_ = nrm("tok_emb", v, d);
  pos_txt_ = nrm("pos_txt", cfg_.context, d);
  patch_w_ = nrm("patch_w", cfg_.patch * cfg_.patch * 3, d);
  patch_b_ = zeros("patch_b", d);
  // learned, but initialized with a smooth 2-D sinusoid so patch coordinates
  // start out linearly decodable (coordinate digits generalize across
  // positions instead of being memorized per cell)
  pos_img_ = nrm("pos_img", cfg_.image_tokens(), d);
  {
    const int grid = cfg_.image_size / cfg_.patch;
    for (int gy = 0; gy < grid; ++gy) {
      for (int gx = 0; gx < grid; ++gx) {
        const nn::Mat ex = nn::sinusoidal_embedding(gx, d / 2);
        const nn::Mat ey = nn::sinusoidal_embedding(gy, d - d / 2);
        nn::Mat row(1, d);
        row << ex, ey;
        pos_img_->value.row(gy * grid + gx) = 0.5 * row;
      }
    }
  }

  layers_.resize(cfg_.n_layers);
  for (int i = 0; i < cfg_.n_layers; ++i) {
    const std::string p = "l" + std::to_string(i) + ".";
    Layer& l = layers_[i];
    l.ln1_g = ones(p + "ln1_g", d);
    l.ln1_b = zeros(p + "ln1_b", d);
    l.wq = nrm(p + "wq", d, d);
    l.bq = zeros(p + "bq", d);
    l.wk = nrm(p + "wk", d, d);
    l.bk = zeros(p + "bk", d);
    l.wv = nrm(p + "wv", d, d);
    l.bv = zeros(p + "bv", d);
    l.wo = nrm(p + "wo", d, d);
    l.bo = zeros(p + "bo", d);
    l.ln2_g = ones(p + "ln2_g", d);
    l.ln2_b = zeros(p + "ln2_b", d);
    l.mlp_w1 = nrm(p + "mlp_w1", d, 4 * d);
    l.mlp_b1 = zeros(p + "mlp_b1", 4 * d);
    l.mlp_w2 = nrm(p + "mlp_w2", 4 * d, d);
    l.mlp_b2 = zeros(p + "mlp_b2", d);
  }
  ln_f_g_ = ones("ln_f_g", d);
  ln_f_b_ = zeros("ln_f_b", d);
  out_w_ = nrm("out_w", d, v);
  out_b_ = zeros("out_b", v);
}

nn::Tape::Ref Planner::encode_image(nn::Tape& t, const sim::Observation& obs) const {
  if (obs.width != cfg_.image_size || obs.height != cfg_.image_size ||
      obs.pixels.size() != static_cast<size_t>(obs.width) * obs.height * 3)
    throw ShapeMismatchError("observation shape mismatch");

  const int g = cfg_.image_size / cfg_.patch;
  const int pdim = cfg_.patch * cfg_.patch * 3;
  nn::Mat patches(g * g, pdim);
  for (int py = 0; py < g; ++py) {
    for (int px = 0; px < g; ++px) {
      int k = 0;
      for (int dy = 0; dy < cfg_.patch; ++dy) {
        for (int dx = 0; dx < cfg_.patch; ++dx) {
          const int x = px * cfg_.patch + dx, y = py * cfg_.patch + dy;
          for (int c = 0; c < 3; ++c)
            patches(py * g + px, k++) = obs.at(x, y, c) / 255.0 - 0.5;
        }
      }
    }
  }
  nn::Tape::Ref e = t.linear(t.input(std::move(patches)), *patch_w_, patch_b_);
  return t.add(e, t.param(*pos_img_));
}

nn::Tape::Ref Planner::block(nn::Tape& t, nn::Tape::Ref x, const Layer& l,
                             const nn::Mat& mask) const {
  const int dh = cfg_.head_dim();
  nn::Tape::Ref xn = t.add_rowvec(t.mul_rowvec(t.rownorm(x), t.param(*l.ln1_g)),
                                  t.param(*l.ln1_b));
  nn::Tape::Ref q = t.linear(xn, *l.wq, l.bq);
  nn::Tape::Ref k = t.linear(xn, *l.wk, l.bk);
  nn::Tape::Ref v = t.linear(xn, *l.wv, l.bv);

  std::vector<nn::Tape::Ref> heads;
  for (int h = 0; h < cfg_.n_heads; ++h) {
    nn::Tape::Ref qh = t.slice_cols(q, h * dh, dh);
    nn::Tape::Ref kh = t.slice_cols(k, h * dh, dh);
    nn::Tape::Ref vh = t.slice_cols(v, h * dh, dh);
    nn::Tape::Ref scores = t.scale(t.matmul(qh, t.transpose(kh)), 1.0 / std::sqrt(dh));
    nn::Tape::Ref probs = t.softmax_rows(scores, &mask);
    heads.push_back(t.matmul(probs, vh));
  }
  nn::Tape::Ref attn = t.linear(t.concat_cols(heads), *l.wo, l.bo);
  x = t.add(x, attn);

  nn::Tape::Ref hn = t.add_rowvec(t.mul_rowvec(t.rownorm(x), t.param(*l.ln2_g)),
                                  t.param(*l.ln2_b));
  nn::Tape::Ref m = t.linear(t.gelu(t.linear(hn, *l.mlp_w1, l.mlp_b1)), *l.mlp_w2, l.mlp_b2);
  return t.add(x, m);
}

Planner::ForwardOut Planner::forward(nn::Tape& t, const std::vector<int>& text_tokens,
                                     nn::Tape::Ref image_tokens) const {
  const int n_img = static_cast<int>(t.val(image_tokens).rows());
  const int n_txt = static_cast<int>(text_tokens.size());
  const int n = n_img + n_txt;
  if (n > cfg_.context) throw ContextOverflowError("sequence length exceeds context");

  std::vector<int> positions(n_txt);
  for (int i = 0; i < n_txt; ++i) positions[i] = i;
  nn::Tape::Ref txt = t.add(t.gather_rows(t.param(*tok_emb_), text_tokens),
                            t.gather_rows(t.param(*pos_txt_), positions));
  nn::Tape::Ref x = t.concat_rows({image_tokens, txt});

  // image block is bidirectional and closed; text is causal and sees images
  nn::Mat mask = nn::Mat::Zero(n, n);
  for (int qpos = 0; qpos < n; ++qpos) {
    for (int kpos = 0; kpos < n; ++kpos) {
      const bool allowed = kpos < n_img ? true : (qpos >= n_img && kpos <= qpos);
      mask(qpos, kpos) = allowed ? 1.0 : 0.0;
    }
  }

  ForwardOut out;
  out.n_img = n_img;
  for (const Layer& l : layers_) {
    x = block(t, x, l, mask);
    out.hidden.push_back(x);
  }
  nn::Tape::Ref xf = t.add_rowvec(t.mul_rowvec(t.rownorm(x), t.param(*ln_f_g_)),
                                  t.param(*ln_f_b_));
  out.logits = t.linear(t.slice_rows(xf, n_img, n_txt), *out_w_, out_b_);
  return out;
}

nn::Tape::Ref Planner::ntp_loss(nn::Tape& t, nn::Tape::Ref logits,
                                const std::vector<int>& targets,
                                const std::vector<uint8_t>& mask) {
  return t.ce_masked(logits, targets, mask);
}

std::string Planner::generate(const std::string& prompt, const sim::Observation& obs,
                              int max_new_tokens) const {
  std::vector<int> tokens;
  tokens.push_back(Vocab::kBos);
  for (int tok : Vocab::tokenize(prompt)) tokens.push_back(tok);

  std::vector<int> out_tokens;
  for (int step = 0; step < max_new_tokens; ++step) {
    if (static_cast<int>(tokens.size()) + cfg_.image_tokens() >= cfg_.context) break;
    nn::Tape t;
    nn::Tape::Ref img = encode_image(t, obs);
    ForwardOut fwd = forward(t, tokens, img);
    const nn::Mat& logits = t.val(fwd.logits);
    int best = 0;
    logits.row(logits.rows() - 1).maxCoeff(&best);
    if (best == Vocab::kEos) break;
    tokens.push_back(best);
    out_tokens.push_back(best);
  }
  return Vocab::detokenize(out_tokens);
}

std::string apply_spatial_prompt(const std::string& instruction) {
  const std::string cue = qa::kSpatialCue;
  if (instruction.size() >= cue.size() &&
      instruction.compare(instruction.size() - cue.size(), cue.size(), cue) == 0)
    return instruction;
  if (instruction.empty()) return cue;
  return instruction + " " + cue;
}

std::string scheduling_prompt(const std::string& instruction,
                              const std::vector<std::string>& completed) {
  std::string done;
  for (size_t i = 0; i < completed.size(); ++i) {
    if (i) done += "; ";
    done += completed[i];
  }
  return "TASK: " + instruction + " DONE: " + done + " NEXT:";
}

std::string plan_next_subtask(const Planner& planner, const std::string& instruction,
                              const std::vector<std::string>& completed,
                              const sim::Observation& obs, int max_new_tokens) {
  std::string text = planner.generate(scheduling_prompt(instruction, completed), obs,
                                      max_new_tokens);
  // trim surrounding whitespace
  const auto b = text.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = text.find_last_not_of(' ');
  return text.substr(b, e - b + 1);
}

}  // namespace vla::planner
