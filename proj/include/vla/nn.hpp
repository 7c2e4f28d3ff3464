#pragma once

#define EIGEN_DONT_PARALLELIZE 1

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vla/common.hpp"
#include "vla/rng.hpp"

namespace vla::nn {

using Mat = Eigen::MatrixXd;

struct Param {
  std::string name;
  Mat value;
  Mat grad;
  Mat adam_m, adam_v;
  int uid{-1};
};

// Named parameter registry with a stable iteration order (creation order).
class ParamStore {
 public:
  Param& create(const std::string& name, int rows, int cols);
  Param& create_normal(const std::string& name, int rows, int cols, Rng& rng,
                       double stddev = 0.02);
  Param& create_ones(const std::string& name, int rows, int cols);
  Param* find(const std::string& name) const;
  const std::vector<std::unique_ptr<Param>>& all() const { return params_; }
  size_t count() const { return params_.size(); }
  size_t total_values() const;
  void zero_grads();

 private:
  std::vector<std::unique_ptr<Param>> params_;
};

// Per-thread gradient accumulator keyed by Param::uid, merged into Param.grad
// in a caller-controlled order so batch parallelism stays deterministic.
class GradBuffer {
 public:
  explicit GradBuffer(const ParamStore& store);
  void add(int uid, const Mat& g);
  void merge_into_params(ParamStore& store) const;
  void merge_from(const GradBuffer& other);
  const Mat* get(int uid) const;

 private:
  std::vector<Mat> grads_;  // empty matrices mean "untouched"
};

// Reverse-mode tape over dense matrices. Build a fresh tape per sample.
class Tape {
 public:
  struct Ref {
    int i{-1};
    bool valid() const { return i >= 0; }
  };

  Ref input(Mat m);
  Ref param(Param& p);

  Ref matmul(Ref a, Ref b);
  Ref add(Ref a, Ref b);
  Ref sub(Ref a, Ref b);
  Ref add_rowvec(Ref a, Ref row);   // row is 1 x cols, broadcast over rows
  Ref mul_rowvec(Ref a, Ref row);
  Ref scale(Ref a, double s);
  Ref hadamard(Ref a, Ref b);
  Ref relu(Ref a);
  Ref gelu(Ref a);
  Ref tanh_op(Ref a);
  Ref rownorm(Ref a);               // per-row (x - mean) / sqrt(var + eps)
  Ref softmax_rows(Ref scores, const Mat* allow_mask);  // mask 1 = attendable
  Ref gather_rows(Ref table, std::vector<int> ids);
  Ref slice_rows(Ref a, int r0, int n);
  Ref slice_cols(Ref a, int c0, int n);
  Ref concat_rows(const std::vector<Ref>& parts);
  Ref concat_cols(const std::vector<Ref>& parts);
  Ref transpose(Ref a);
  Ref im2col3x3(Ref a, int grid_h, int grid_w);  // zero-padded 3x3 neighborhoods
  Ref grad_decay(Ref a, double gamma);           // identity forward, gamma-scaled backward
  Ref mean_all(Ref a);                           // scalar
  Ref mse(Ref a, const Mat& target);             // scalar, mean over entries
  Ref ce_masked(Ref logits, std::vector<int> targets, std::vector<uint8_t> mask);

  Ref linear(Ref x, Param& w, Param* b = nullptr);

  const Mat& val(Ref r) const { return nodes_[r.i].val; }
  double scalar(Ref r) const { return nodes_[r.i].val(0, 0); }

  void backward(Ref scalar_loss, double seed_grad = 1.0);
  // Tape-local leaf gradients, accumulated into a buffer (deterministic merge)
  // or straight into the parameters.
  void flush_grads(GradBuffer& buf) const;
  void flush_grads_direct() const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat val;
    Mat grad;
    std::function<void()> back;
    Param* leaf{nullptr};
  };

  Mat& grad_of(int i);
  bool has_grad(int i) const { return nodes_[i].grad.size() > 0; }
  Ref push(Mat val, std::function<void()> back = nullptr, Param* leaf = nullptr);

  std::vector<Node> nodes_;
};

struct AdamWConfig {
  double lr{3e-4};
  double beta1{0.9};
  double beta2{0.999};
  double eps{1e-8};
  double weight_decay{0.01};
};

class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}
  // Applies Param.grad and clears it. lr_scale multiplies the base rate
  // (cosine schedules are driven from outside).
  void step(ParamStore& store, double lr_scale = 1.0);
  int64_t steps_taken() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }

 private:
  AdamWConfig cfg_;
  int64_t t_{0};
};

double cosine_lr_scale(int64_t step, int64_t total_steps, double floor = 0.05);

// Sinusoidal embedding of an integer timestep (1 x dim).
Mat sinusoidal_embedding(int t, int dim);

}  // namespace vla::nn
