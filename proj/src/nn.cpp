#include "vla/nn.hpp"

#include <cmath>

namespace vla::nn {

Param& ParamStore::create(const std::string& name, int rows, int cols) {
  if (find(name)) throw Error("duplicate parameter name: " + name);
  auto p = std::make_unique<Param>();
  p->name = name;
  p->value = Mat::Zero(rows, cols);
  p->uid = static_cast<int>(params_.size());
  params_.push_back(std::move(p));
  return *params_.back();
}

Param& ParamStore::create_normal(const std::string& name, int rows, int cols, Rng& rng,
                                 double stddev) {
  Param& p = create(name, rows, cols);
  for (int c = 0; c < cols; ++c)
    for (int r = 0; r < rows; ++r) p.value(r, c) = rng.normal(0.0, stddev);
  return p;
}

Param& ParamStore::create_ones(const std::string& name, int rows, int cols) {
  Param& p = create(name, rows, cols);
  p.value.setOnes();
  return p;
}

Param* ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p->name == name) return p.get();
  return nullptr;
}

size_t ParamStore::total_values() const {
  size_t n = 0;
  for (const auto& p : params_) n += static_cast<size_t>(p->value.size());
  return n;
}

void ParamStore::zero_grads() {
  for (const auto& p : params_) p->grad.resize(0, 0);
}

GradBuffer::GradBuffer(const ParamStore& store) : grads_(store.count()) {}

void GradBuffer::add(int uid, const Mat& g) {
  if (grads_[uid].size() == 0)
    grads_[uid] = g;
  else
    grads_[uid] += g;
}

void GradBuffer::merge_into_params(ParamStore& store) const {
  for (size_t i = 0; i < grads_.size(); ++i) {
    if (grads_[i].size() == 0) continue;
    Param& p = *store.all()[i];
    if (p.grad.size() == 0)
      p.grad = grads_[i];
    else
      p.grad += grads_[i];
  }
}

void GradBuffer::merge_from(const GradBuffer& other) {
  for (size_t i = 0; i < grads_.size(); ++i) {
    if (other.grads_[i].size() == 0) continue;
    if (grads_[i].size() == 0)
      grads_[i] = other.grads_[i];
    else
      grads_[i] += other.grads_[i];
  }
}

const Mat* GradBuffer::get(int uid) const {
  return grads_[uid].size() ? &grads_[uid] : nullptr;
}

Tape::Ref Tape::push(Mat val, std::function<void()> back, Param* leaf) {
  nodes_.push_back(Node{std::move(val), Mat(), std::move(back), leaf});
  return Ref{static_cast<int>(nodes_.size()) - 1};
}

Mat& Tape::grad_of(int i) {
  Node& n = nodes_[i];
  if (n.grad.size() == 0) n.grad = Mat::Zero(n.val.rows(), n.val.cols());
  return n.grad;
}

Tape::Ref Tape::input(Mat m) { return push(std::move(m)); }

Tape::Ref Tape::param(Param& p) { return push(p.value, nullptr, &p); }

Tape::Ref Tape::matmul(Ref a, Ref b) {
  Mat v;
  v.noalias() = nodes_[a.i].val * nodes_[b.i].val;
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, b, out] {
    const Mat& g = nodes_[out.i].grad;
    grad_of(a.i).noalias() += g * nodes_[b.i].val.transpose();
    grad_of(b.i).noalias() += nodes_[a.i].val.transpose() * g;
  };
  return out;
}

Tape::Ref Tape::add(Ref a, Ref b) {
  Ref out = push(nodes_[a.i].val + nodes_[b.i].val);
  nodes_[out.i].back = [this, a, b, out] {
    const Mat& g = nodes_[out.i].grad;
    grad_of(a.i) += g;
    grad_of(b.i) += g;
  };
  return out;
}

Tape::Ref Tape::sub(Ref a, Ref b) {
  Ref out = push(nodes_[a.i].val - nodes_[b.i].val);
  nodes_[out.i].back = [this, a, b, out] {
    const Mat& g = nodes_[out.i].grad;
    grad_of(a.i) += g;
    grad_of(b.i) -= g;
  };
  return out;
}

Tape::Ref Tape::add_rowvec(Ref a, Ref row) {
  Mat v = nodes_[a.i].val;
  v.rowwise() += nodes_[row.i].val.row(0);
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, row, out] {
    const Mat& g = nodes_[out.i].grad;
    grad_of(a.i) += g;
    grad_of(row.i).row(0) += g.colwise().sum();
  };
  return out;
}

Tape::Ref Tape::mul_rowvec(Ref a, Ref row) {
  Mat v = nodes_[a.i].val;
  v.array().rowwise() *= nodes_[row.i].val.row(0).array();
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, row, out] {
    const Mat& g = nodes_[out.i].grad;
    Mat ga = g;
    ga.array().rowwise() *= nodes_[row.i].val.row(0).array();
    grad_of(a.i) += ga;
    grad_of(row.i).row(0) += (g.array() * nodes_[a.i].val.array()).colwise().sum().matrix();
  };
  return out;
}

Tape::Ref Tape::scale(Ref a, double s) {
  Ref out = push(nodes_[a.i].val * s);
  nodes_[out.i].back = [this, a, out, s] { grad_of(a.i) += nodes_[out.i].grad * s; };
  return out;
}

Tape::Ref Tape::hadamard(Ref a, Ref b) {
  Ref out = push(nodes_[a.i].val.cwiseProduct(nodes_[b.i].val));
  nodes_[out.i].back = [this, a, b, out] {
    const Mat& g = nodes_[out.i].grad;
    grad_of(a.i) += g.cwiseProduct(nodes_[b.i].val);
    grad_of(b.i) += g.cwiseProduct(nodes_[a.i].val);
  };
  return out;
}

Tape::Ref Tape::relu(Ref a) {
  Ref out = push(nodes_[a.i].val.cwiseMax(0.0));
  nodes_[out.i].back = [this, a, out] {
    const Mat& g = nodes_[out.i].grad;
    grad_of(a.i).array() += g.array() * (nodes_[a.i].val.array() > 0.0).cast<double>();
  };
  return out;
}

Tape::Ref Tape::gelu(Ref a) {
  constexpr double k = 0.7978845608028654;  // sqrt(2 / pi)
  const Mat& x = nodes_[a.i].val;
  Mat inner = (k * (x.array() + 0.044715 * x.array().cube())).matrix();
  Mat th = inner.array().tanh().matrix();
  Mat v = (0.5 * x.array() * (1.0 + th.array())).matrix();
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, out, th = std::move(th), k] {
    const Mat& x = nodes_[a.i].val;
    const Mat& g = nodes_[out.i].grad;
    auto sech2 = (1.0 - th.array().square());
    auto dinner = k * (1.0 + 3.0 * 0.044715 * x.array().square());
    auto dv = 0.5 * (1.0 + th.array()) + 0.5 * x.array() * sech2 * dinner;
    grad_of(a.i).array() += g.array() * dv;
  };
  return out;
}

Tape::Ref Tape::tanh_op(Ref a) {
  Mat v = nodes_[a.i].val.array().tanh().matrix();
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, out] {
    const Mat& y = nodes_[out.i].val;
    grad_of(a.i).array() += nodes_[out.i].grad.array() * (1.0 - y.array().square());
  };
  return out;
}

Tape::Ref Tape::rownorm(Ref a) {
  constexpr double eps = 1e-5;
  const Mat& x = nodes_[a.i].val;
  const int n = static_cast<int>(x.cols());
  Eigen::VectorXd mean = x.rowwise().mean();
  Mat centered = x.colwise() - mean;
  Eigen::VectorXd var = centered.array().square().rowwise().mean();
  Eigen::VectorXd inv_sd = (var.array() + eps).rsqrt();
  Mat y = centered.array().colwise() * inv_sd.array();
  Ref out = push(y);
  nodes_[out.i].back = [this, a, out, inv_sd = std::move(inv_sd), n] {
    const Mat& y = nodes_[out.i].val;
    const Mat& g = nodes_[out.i].grad;
    Eigen::VectorXd gm = g.rowwise().mean();
    Eigen::VectorXd gym = (g.array() * y.array()).rowwise().mean();
    Mat dx = (g.colwise() - gm).array() - (y.array().colwise() * gym.array());
    dx.array().colwise() *= inv_sd.array();
    grad_of(a.i) += dx;
    (void)n;
  };
  return out;
}

Tape::Ref Tape::softmax_rows(Ref scores, const Mat* allow_mask) {
  Mat s = nodes_[scores.i].val;
  if (allow_mask) {
    s = (allow_mask->array() > 0.0).select(s, Mat::Constant(s.rows(), s.cols(), -1e30));
  }
  Mat y(s.rows(), s.cols());
  for (int r = 0; r < s.rows(); ++r) {
    const double m = s.row(r).maxCoeff();
    Eigen::ArrayXd e = (s.row(r).array() - m).exp();
    y.row(r) = (e / e.sum()).matrix();
  }
  Ref out = push(std::move(y));
  nodes_[out.i].back = [this, scores, out] {
    const Mat& y = nodes_[out.i].val;
    const Mat& g = nodes_[out.i].grad;
    Eigen::VectorXd dot = (g.array() * y.array()).rowwise().sum();
    grad_of(scores.i).array() += y.array() * (g.array().colwise() - dot.array());
  };
  return out;
}

Tape::Ref Tape::gather_rows(Ref table, std::vector<int> ids) {
  const Mat& t = nodes_[table.i].val;
  Mat v(static_cast<int>(ids.size()), t.cols());
  for (size_t i = 0; i < ids.size(); ++i) v.row(static_cast<int>(i)) = t.row(ids[i]);
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, table, out, ids = std::move(ids)] {
    const Mat& g = nodes_[out.i].grad;
    Mat& gt = grad_of(table.i);
    for (size_t i = 0; i < ids.size(); ++i) gt.row(ids[i]) += g.row(static_cast<int>(i));
  };
  return out;
}

Tape::Ref Tape::slice_rows(Ref a, int r0, int n) {
  Ref out = push(nodes_[a.i].val.middleRows(r0, n));
  nodes_[out.i].back = [this, a, out, r0, n] {
    grad_of(a.i).middleRows(r0, n) += nodes_[out.i].grad;
  };
  return out;
}

Tape::Ref Tape::slice_cols(Ref a, int c0, int n) {
  Ref out = push(nodes_[a.i].val.middleCols(c0, n));
  nodes_[out.i].back = [this, a, out, c0, n] {
    grad_of(a.i).middleCols(c0, n) += nodes_[out.i].grad;
  };
  return out;
}

Tape::Ref Tape::concat_rows(const std::vector<Ref>& parts) {
  int rows = 0;
  const int cols = static_cast<int>(nodes_[parts[0].i].val.cols());
  for (Ref p : parts) rows += static_cast<int>(nodes_[p.i].val.rows());
  Mat v(rows, cols);
  int r = 0;
  for (Ref p : parts) {
    const Mat& m = nodes_[p.i].val;
    v.middleRows(r, m.rows()) = m;
    r += static_cast<int>(m.rows());
  }
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, out, parts] {
    const Mat& g = nodes_[out.i].grad;
    int r = 0;
    for (Ref p : parts) {
      const int n = static_cast<int>(nodes_[p.i].val.rows());
      grad_of(p.i) += g.middleRows(r, n);
      r += n;
    }
  };
  return out;
}

Tape::Ref Tape::concat_cols(const std::vector<Ref>& parts) {
  int cols = 0;
  const int rows = static_cast<int>(nodes_[parts[0].i].val.rows());
  for (Ref p : parts) cols += static_cast<int>(nodes_[p.i].val.cols());
  Mat v(rows, cols);
  int c = 0;
  for (Ref p : parts) {
    const Mat& m = nodes_[p.i].val;
    v.middleCols(c, m.cols()) = m;
    c += static_cast<int>(m.cols());
  }
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, out, parts] {
    const Mat& g = nodes_[out.i].grad;
    int c = 0;
    for (Ref p : parts) {
      const int n = static_cast<int>(nodes_[p.i].val.cols());
      grad_of(p.i) += g.middleCols(c, n);
      c += n;
    }
  };
  return out;
}

Tape::Ref Tape::transpose(Ref a) {
  Ref out = push(nodes_[a.i].val.transpose());
  nodes_[out.i].back = [this, a, out] {
    grad_of(a.i) += nodes_[out.i].grad.transpose();
  };
  return out;
}

Tape::Ref Tape::im2col3x3(Ref a, int grid_h, int grid_w) {
  const Mat& x = nodes_[a.i].val;
  const int c = static_cast<int>(x.cols());
  if (x.rows() != grid_h * grid_w) throw ShapeMismatchError("im2col3x3 grid mismatch");
  Mat v = Mat::Zero(grid_h * grid_w, 9 * c);
  for (int gy = 0; gy < grid_h; ++gy) {
    for (int gx = 0; gx < grid_w; ++gx) {
      const int row = gy * grid_w + gx;
      int k = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx, ++k) {
          const int ny = gy + dy, nx = gx + dx;
          if (ny < 0 || ny >= grid_h || nx < 0 || nx >= grid_w) continue;
          v.block(row, k * c, 1, c) = x.row(ny * grid_w + nx);
        }
      }
    }
  }
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, out, grid_h, grid_w, c] {
    const Mat& g = nodes_[out.i].grad;
    Mat& ga = grad_of(a.i);
    for (int gy = 0; gy < grid_h; ++gy) {
      for (int gx = 0; gx < grid_w; ++gx) {
        const int row = gy * grid_w + gx;
        int k = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx, ++k) {
            const int ny = gy + dy, nx = gx + dx;
            if (ny < 0 || ny >= grid_h || nx < 0 || nx >= grid_w) continue;
            ga.row(ny * grid_w + nx) += g.block(row, k * c, 1, c);
          }
        }
      }
    }
  };
  return out;
}

Tape::Ref Tape::grad_decay(Ref a, double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw Error("gradient decay factor out of [0, 1]");
  Ref out = push(nodes_[a.i].val);
  nodes_[out.i].back = [this, a, out, gamma] {
    if (gamma != 0.0) grad_of(a.i) += gamma * nodes_[out.i].grad;
  };
  return out;
}

Tape::Ref Tape::mean_all(Ref a) {
  const Mat& x = nodes_[a.i].val;
  Mat v(1, 1);
  v(0, 0) = x.mean();
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, out] {
    const double g = nodes_[out.i].grad(0, 0) / static_cast<double>(nodes_[a.i].val.size());
    grad_of(a.i).array() += g;
  };
  return out;
}

Tape::Ref Tape::mse(Ref a, const Mat& target) {
  const Mat& x = nodes_[a.i].val;
  if (x.rows() != target.rows() || x.cols() != target.cols())
    throw ShapeMismatchError("mse shape mismatch");
  Mat diff = x - target;
  Mat v(1, 1);
  v(0, 0) = diff.array().square().mean();
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, a, out, diff = std::move(diff)] {
    const double g = nodes_[out.i].grad(0, 0);
    grad_of(a.i) += (2.0 / static_cast<double>(diff.size())) * g * diff;
  };
  return out;
}

Tape::Ref Tape::ce_masked(Ref logits, std::vector<int> targets, std::vector<uint8_t> mask) {
  const Mat& x = nodes_[logits.i].val;
  const int rows = static_cast<int>(x.rows());
  if (static_cast<int>(targets.size()) != rows || static_cast<int>(mask.size()) != rows)
    throw ShapeMismatchError("ce_masked target/mask length mismatch");
  int n_masked = 0;
  for (uint8_t m : mask) n_masked += m ? 1 : 0;
  if (n_masked == 0) throw Error("ce_masked: empty mask");

  Mat probs(x.rows(), x.cols());
  double loss = 0.0;
  for (int r = 0; r < rows; ++r) {
    const double m = x.row(r).maxCoeff();
    Eigen::ArrayXd e = (x.row(r).array() - m).exp();
    const double z = e.sum();
    probs.row(r) = (e / z).matrix();
    if (mask[r]) loss += std::log(z) + m - x(r, targets[r]);
  }
  Mat v(1, 1);
  v(0, 0) = loss / n_masked;
  Ref out = push(std::move(v));
  nodes_[out.i].back = [this, logits, out, probs = std::move(probs),
                        targets = std::move(targets), mask = std::move(mask), n_masked] {
    const double g = nodes_[out.i].grad(0, 0) / n_masked;
    Mat& gl = grad_of(logits.i);
    for (int r = 0; r < probs.rows(); ++r) {
      if (!mask[r]) continue;
      gl.row(r) += g * probs.row(r);
      gl(r, targets[r]) -= g;
    }
  };
  return out;
}

Tape::Ref Tape::linear(Ref x, Param& w, Param* b) {
  Ref out = matmul(x, param(w));
  if (b) out = add_rowvec(out, param(*b));
  return out;
}

void Tape::backward(Ref scalar_loss, double seed_grad) {
  Node& loss = nodes_[scalar_loss.i];
  if (loss.val.size() != 1) throw ShapeMismatchError("backward target must be scalar");
  grad_of(scalar_loss.i)(0, 0) += seed_grad;
  for (int i = scalar_loss.i; i >= 0; --i) {
    Node& n = nodes_[i];
    if (n.back && has_grad(i)) n.back();
  }
}

void Tape::flush_grads(GradBuffer& buf) const {
  for (const Node& n : nodes_)
    if (n.leaf && n.grad.size()) buf.add(n.leaf->uid, n.grad);
}

void Tape::flush_grads_direct() const {
  for (const Node& n : nodes_) {
    if (!n.leaf || n.grad.size() == 0) continue;
    if (n.leaf->grad.size() == 0)
      n.leaf->grad = n.grad;
    else
      n.leaf->grad += n.grad;
  }
}

void AdamW::step(ParamStore& store, double lr_scale) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  const double lr = cfg_.lr * lr_scale;
  for (const auto& up : store.all()) {
    Param& p = *up;
    // Parameters with no gradient this step stay bit-identical (no decay, no
    // momentum drift); stage-1 must leave the expert untouched.
    if (p.grad.size() == 0) continue;
    if (p.adam_m.size() == 0) {
      p.adam_m = Mat::Zero(p.value.rows(), p.value.cols());
      p.adam_v = Mat::Zero(p.value.rows(), p.value.cols());
    }
    const Mat& g = p.grad;
    p.adam_m = cfg_.beta1 * p.adam_m + (1.0 - cfg_.beta1) * g;
    p.adam_v = cfg_.beta2 * p.adam_v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    const Mat mhat = p.adam_m / bc1;
    const Mat vhat = p.adam_v / bc2;
    p.value.array() -=
        lr * (mhat.array() / (vhat.array().sqrt() + cfg_.eps) + cfg_.weight_decay * p.value.array());
    p.grad.resize(0, 0);
  }
}

double cosine_lr_scale(int64_t step, int64_t total_steps, double floor) {
  if (total_steps <= 0) return 1.0;
  const int64_t warmup = std::max<int64_t>(1, total_steps / 20);
  const double ramp = std::min(1.0, static_cast<double>(step + 1) / static_cast<double>(warmup));
  const double frac = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return ramp * (floor + (1.0 - floor) * 0.5 * (1.0 + std::cos(M_PI * frac)));
}

Mat sinusoidal_embedding(int t, int dim) {
  Mat e(1, dim);
  for (int i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * i / dim);
    e(0, 2 * i) = std::sin(t * freq);
    e(0, 2 * i + 1) = std::cos(t * freq);
  }
  if (dim % 2) e(0, dim - 1) = 0.0;
  return e;
}

}  // namespace vla::nn
