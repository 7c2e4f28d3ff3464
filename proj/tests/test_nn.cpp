#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "vla/nn.hpp"

using namespace vla;
using namespace vla::nn;

namespace {

// Central-difference gradient of a scalar graph with respect to one param.
Mat fd_grad(Param& p, const std::function<double()>& eval, double h = 1e-6) {
  Mat g(p.value.rows(), p.value.cols());
  for (int c = 0; c < p.value.cols(); ++c) {
    for (int r = 0; r < p.value.rows(); ++r) {
      const double orig = p.value(r, c);
      p.value(r, c) = orig + h;
      const double up = eval();
      p.value(r, c) = orig - h;
      const double dn = eval();
      p.value(r, c) = orig;
      g(r, c) = (up - dn) / (2.0 * h);
    }
  }
  return g;
}

double rel_err(const Mat& a, const Mat& b) {
  const double denom = std::max(1e-12, a.norm() + b.norm());
  return (a - b).norm() / denom;
}

Mat random_mat(Rng& rng, int r, int c, double s = 1.0) {
  Mat m(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) m(i, j) = rng.normal(0.0, s);
  return m;
}

}  // namespace

TEST_CASE("matmul / add / rowvec ops match finite differences") {
  Rng rng(1);
  ParamStore store;
  Param& w = store.create("w", 4, 5);
  w.value = random_mat(rng, 4, 5);
  Param& b = store.create("b", 1, 5);
  b.value = random_mat(rng, 1, 5);
  Param& g = store.create("g", 1, 5);
  g.value = random_mat(rng, 1, 5);
  const Mat x = random_mat(rng, 3, 4);
  const Mat target = random_mat(rng, 3, 5);

  auto eval = [&]() {
    Tape t;
    Tape::Ref h = t.mul_rowvec(t.add_rowvec(t.matmul(t.input(x), t.param(w)), t.param(b)),
                               t.param(g));
    return t.scalar(t.mse(h, target));
  };

  Tape t;
  Tape::Ref h = t.mul_rowvec(t.add_rowvec(t.matmul(t.input(x), t.param(w)), t.param(b)),
                             t.param(g));
  Tape::Ref loss = t.mse(h, target);
  t.backward(loss);
  t.flush_grads_direct();

  CHECK(rel_err(w.grad, fd_grad(w, eval)) < 1e-7);
  CHECK(rel_err(b.grad, fd_grad(b, eval)) < 1e-7);
  CHECK(rel_err(g.grad, fd_grad(g, eval)) < 1e-7);
}

TEST_CASE("gelu / tanh / relu / rownorm match finite differences") {
  Rng rng(2);
  ParamStore store;
  Param& w = store.create("w", 6, 6);
  w.value = random_mat(rng, 6, 6, 0.7);
  const Mat x = random_mat(rng, 4, 6);
  const Mat target = random_mat(rng, 4, 6);

  for (int mode = 0; mode < 4; ++mode) {
    auto graph = [&](Tape& t) {
      Tape::Ref h = t.matmul(t.input(x), t.param(w));
      if (mode == 0) h = t.gelu(h);
      if (mode == 1) h = t.tanh_op(h);
      if (mode == 2) h = t.relu(h);
      if (mode == 3) h = t.rownorm(h);
      return t.mse(h, target);
    };
    auto eval = [&]() {
      Tape t;
      return t.scalar(graph(t));
    };
    Tape t;
    Tape::Ref loss = graph(t);
    t.backward(loss);
    t.flush_grads_direct();
    CHECK(rel_err(w.grad, fd_grad(w, eval)) < 2e-6);
    w.grad.resize(0, 0);
  }
}

TEST_CASE("masked softmax rows sum to one and backprop correctly") {
  Rng rng(3);
  ParamStore store;
  Param& w = store.create("w", 5, 5);
  w.value = random_mat(rng, 5, 5);
  const Mat x = random_mat(rng, 5, 5);
  Mat mask = Mat::Zero(5, 5);
  for (int q = 0; q < 5; ++q)
    for (int k = 0; k <= q; ++k) mask(q, k) = 1.0;  // causal
  const Mat target = random_mat(rng, 5, 5, 0.3);

  auto graph = [&](Tape& t) {
    Tape::Ref scores = t.matmul(t.input(x), t.param(w));
    Tape::Ref probs = t.softmax_rows(scores, &mask);
    return std::pair(probs, t.mse(probs, target));
  };

  Tape t;
  auto [probs, loss] = graph(t);
  const Mat& pv = t.val(probs);
  for (int r = 0; r < 5; ++r) {
    CHECK(pv.row(r).sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (int c = r + 1; c < 5; ++c) CHECK(pv(r, c) == 0.0);
  }
  t.backward(loss);
  t.flush_grads_direct();
  auto eval = [&]() {
    Tape tt;
    return tt.scalar(graph(tt).second);
  };
  CHECK(rel_err(w.grad, fd_grad(w, eval)) < 2e-6);
}

TEST_CASE("gather / slice / concat / transpose / im2col backprop") {
  Rng rng(4);
  ParamStore store;
  Param& table = store.create("table", 7, 6);
  table.value = random_mat(rng, 7, 6);
  Param& w = store.create("w", 54, 3);
  w.value = random_mat(rng, 54, 3, 0.4);
  const std::vector<int> ids = {2, 5, 2, 0, 6, 1, 3, 3, 4};  // 9 rows = 3x3 grid
  const Mat target = random_mat(rng, 9, 3);

  auto graph = [&](Tape& t) {
    Tape::Ref e = t.gather_rows(t.param(table), ids);
    Tape::Ref cols = t.im2col3x3(e, 3, 3);  // 9 x 54
    Tape::Ref h = t.matmul(cols, t.param(w));
    Tape::Ref left = t.slice_cols(h, 0, 2);
    Tape::Ref right = t.slice_cols(h, 2, 1);
    Tape::Ref joined = t.concat_cols({left, right});
    Tape::Ref tr = t.transpose(t.transpose(joined));
    return t.mse(tr, target);
  };
  auto eval = [&]() {
    Tape t;
    return t.scalar(graph(t));
  };
  Tape t;
  Tape::Ref loss = graph(t);
  t.backward(loss);
  t.flush_grads_direct();
  CHECK(rel_err(table.grad, fd_grad(table, eval)) < 2e-6);
  CHECK(rel_err(w.grad, fd_grad(w, eval)) < 2e-6);
}

TEST_CASE("ce_masked: closed forms and mask exactness") {
  ParamStore store;
  Rng rng(5);
  const int v = 7;

  // one-hot logits matching targets -> loss ~ 0
  Mat logits = Mat::Constant(3, v, -100.0);
  logits(0, 2) = 100.0;
  logits(1, 0) = 100.0;
  logits(2, 5) = 100.0;
  {
    Tape t;
    Tape::Ref l = t.ce_masked(t.input(logits), {2, 0, 5}, {1, 1, 1});
    CHECK(t.scalar(l) == doctest::Approx(0.0).epsilon(1e-9));
  }
  // uniform logits -> ln V
  {
    Tape t;
    Tape::Ref l = t.ce_masked(t.input(Mat::Zero(4, v)), {1, 2, 3, 4}, {1, 1, 1, 1});
    CHECK(t.scalar(l) == doctest::Approx(std::log(static_cast<double>(v))).epsilon(1e-12));
  }
  // masking removes a position's contribution exactly
  {
    const Mat x = random_mat(rng, 3, v);
    Tape t1, t2, t3;
    const double all = t1.scalar(t1.ce_masked(t1.input(x), {1, 2, 3}, {1, 1, 1}));
    const double no2 = t2.scalar(t2.ce_masked(t2.input(x), {1, 2, 3}, {1, 0, 1}));
    const double only2 = t3.scalar(t3.ce_masked(t3.input(x), {1, 2, 3}, {0, 1, 0}));
    CHECK(3.0 * all == doctest::Approx(2.0 * no2 + only2).epsilon(1e-12));
  }
  // empty mask is an error
  {
    Tape t;
    CHECK_THROWS_AS(t.ce_masked(t.input(Mat::Zero(2, v)), {0, 1}, {0, 0}), Error);
  }
  // gradient against finite differences
  {
    Param& w = store.create("w", 4, v);
    w.value = random_mat(rng, 4, v, 0.5);
    const Mat x = random_mat(rng, 4, 4);
    auto graph = [&](Tape& t) {
      return t.ce_masked(t.matmul(t.input(x), t.param(w)), {1, 4, 2, 6}, {0, 1, 1, 1});
    };
    auto eval = [&]() {
      Tape t;
      return t.scalar(graph(t));
    };
    Tape t;
    t.backward(graph(t));
    t.flush_grads_direct();
    CHECK(rel_err(w.grad, fd_grad(w, eval)) < 1e-7);
  }
}

TEST_CASE("grad_decay: identity forward, scaled backward") {
  Rng rng(6);
  ParamStore store;
  Param& w = store.create("w", 4, 4);
  w.value = random_mat(rng, 4, 4);
  const Mat x = random_mat(rng, 3, 4);
  const Mat target = random_mat(rng, 3, 4);

  auto run = [&](double gamma) {
    Tape t;
    Tape::Ref h = t.matmul(t.input(x), t.param(w));
    Tape::Ref d = t.grad_decay(h, gamma);
    Tape::Ref loss = t.mse(d, target);
    const double lv = t.scalar(loss);
    t.backward(loss);
    t.flush_grads_direct();
    Mat g = w.grad;
    w.grad.resize(0, 0);
    return std::pair(lv, g);
  };

  const auto [l1, g1] = run(1.0);
  const auto [l5, g5] = run(0.5);
  const auto [l0, g0] = run(0.0);
  CHECK(l1 == l5);  // forward invariance
  CHECK(l1 == l0);
  CHECK((g5 - 0.5 * g1).norm() == doctest::Approx(0.0).epsilon(1e-15));
  CHECK(g0.size() == 0);  // gamma 0 never touches the upstream gradient

  Tape t;
  CHECK_THROWS_AS(t.grad_decay(t.input(x), 1.5), Error);
  CHECK_THROWS_AS(t.grad_decay(t.input(x), -0.1), Error);
}

TEST_CASE("GradBuffer merge order independence of thread partitioning") {
  Rng rng(7);
  ParamStore store;
  Param& w = store.create("w", 3, 3);
  w.value = random_mat(rng, 3, 3);
  const Mat x = random_mat(rng, 2, 3);
  const Mat target = random_mat(rng, 2, 3);

  auto sample_grad = [&](int i) {
    Tape t;
    Tape::Ref loss = t.mse(t.matmul(t.input(x * (i + 1)), t.param(w)), target);
    t.backward(loss);
    GradBuffer buf(store);
    t.flush_grads(buf);
    return buf;
  };

  GradBuffer a(store);
  for (int i = 0; i < 4; ++i) a.merge_from(sample_grad(i));
  store.zero_grads();
  a.merge_into_params(store);
  const Mat ga = w.grad;

  store.zero_grads();
  GradBuffer b0(store), b1(store);
  b0.merge_from(sample_grad(0));
  b0.merge_from(sample_grad(2));
  b1.merge_from(sample_grad(1));
  b1.merge_from(sample_grad(3));
  // merging per-thread buffers in thread order is the trainer's contract
  GradBuffer total(store);
  total.merge_from(b0);
  total.merge_from(b1);
  total.merge_into_params(store);
  const Mat gb = w.grad;
  CHECK((ga - gb).norm() < 1e-12);
}

TEST_CASE("AdamW: untouched parameters stay bit-identical") {
  Rng rng(8);
  ParamStore store;
  Param& w = store.create("w", 2, 2);
  w.value = random_mat(rng, 2, 2);
  Param& frozen = store.create("frozen", 2, 2);
  frozen.value = random_mat(rng, 2, 2);
  const Mat before = frozen.value;

  AdamW opt;
  for (int i = 0; i < 5; ++i) {
    w.grad = Mat::Ones(2, 2);
    opt.step(store);
  }
  CHECK(frozen.value == before);
  CHECK(w.value != before);
}

TEST_CASE("AdamW decreases a quadratic objective") {
  Rng rng(9);
  ParamStore store;
  Param& w = store.create("w", 4, 4);
  w.value = random_mat(rng, 4, 4);
  const Mat target = random_mat(rng, 4, 4);

  AdamWConfig cfg;
  cfg.lr = 5e-2;
  AdamW opt(cfg);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 200; ++i) {
    Tape t;
    Tape::Ref loss = t.mse(t.param(w), target);
    const double lv = t.scalar(loss);
    if (i == 0) first = lv;
    last = lv;
    t.backward(loss);
    t.flush_grads_direct();
    opt.step(store);
  }
  CHECK(last < 0.05 * first);
}

TEST_CASE("sinusoidal embeddings are bounded and distinct") {
  const Mat a = sinusoidal_embedding(1, 32);
  const Mat b = sinusoidal_embedding(2, 32);
  CHECK(a.rows() == 1);
  CHECK(a.cols() == 32);
  CHECK(a.cwiseAbs().maxCoeff() <= 1.0);
  CHECK((a - b).norm() > 0.1);
}

TEST_CASE("cosine schedule: warmup ramp then cosine decay to the floor") {
  // warmup spans total/20 steps
  CHECK(cosine_lr_scale(0, 100) < cosine_lr_scale(4, 100));
  CHECK(cosine_lr_scale(4, 100) == doctest::Approx(1.0 * (0.05 + 0.95 * 0.5 * (1.0 + std::cos(M_PI * 0.04)))));
  CHECK(cosine_lr_scale(100, 100) == doctest::Approx(0.05));
  CHECK(cosine_lr_scale(50, 100) == doctest::Approx(0.525));
}
