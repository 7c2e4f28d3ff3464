#include "vla/cotrain.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <fstream>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vla::cotrain {

namespace {

bool is_planner_param(const nn::Param& p) { return p.name.rfind("planner.", 0) == 0; }

size_t planner_value_count(const model::UnifiedModel& m) {
  size_t n = 0;
  for (const auto& p : m.params().all())
    if (is_planner_param(*p)) n += static_cast<size_t>(p->value.size());
  return n;
}

void flatten_planner_grads(const model::UnifiedModel& m, const nn::GradBuffer& buf,
                           Eigen::VectorXd& row) {
  Eigen::Index off = 0;
  for (const auto& p : m.params().all()) {
    if (!is_planner_param(*p)) continue;
    const Eigen::Index n = p->value.size();
    if (const nn::Mat* g = buf.get(p->uid)) {
      row.segment(off, n) = Eigen::Map<const Eigen::VectorXd>(g->data(), n);
    } else {
      row.segment(off, n).setZero();
    }
    off += n;
  }
}

struct BatchResult {
  double loss_sum{0.0};
  int count{0};
};

}  // namespace

std::string aggregation_name(Aggregation a) {
  return a == Aggregation::Summed ? "summed" : "alternating";
}

Aggregation aggregation_from_name(const std::string& s) {
  return s == "alternating" ? Aggregation::Alternating : Aggregation::Summed;
}

Trainer::Trainer(model::UnifiedModel& model, const TrainConfig& cfg)
    : model_(model), cfg_(cfg) {
  nn::AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  opt_ = nn::AdamW(oc);
}

StepLosses Trainer::joint_step(const std::vector<const model::RobotSample*>& robot_batch,
                               const std::vector<const model::QASample*>& qa_batch) {
  if (cfg_.stage != 2) throw Error("joint_step requires stage 2");

  bool do_action = !robot_batch.empty() && cfg_.w_action > 0.0;
  bool do_ntp = !qa_batch.empty() && cfg_.w_ntp > 0.0;
  if (cfg_.aggregation == Aggregation::Alternating) {
    if (step_ % 2 == 0)
      do_ntp = false;
    else
      do_action = false;
  }
  if (!do_action && !do_ntp) throw Error("joint_step has no work: both batches empty");

  struct Work {
    const model::RobotSample* robot{nullptr};
    const model::QASample* qa{nullptr};
    uint64_t rng_seed{0};
    double seed_grad{0.0};
  };
  std::vector<Work> work;
  if (do_action) {
    for (size_t i = 0; i < robot_batch.size(); ++i)
      work.push_back({robot_batch[i], nullptr,
                      derive_seed(cfg_.seed, 0xac7, static_cast<uint64_t>(step_), i),
                      cfg_.w_action / static_cast<double>(robot_batch.size())});
  }
  if (do_ntp) {
    for (size_t i = 0; i < qa_batch.size(); ++i)
      work.push_back({nullptr, qa_batch[i], 0,
                      cfg_.w_ntp / static_cast<double>(qa_batch.size())});
  }

  const int n_threads = std::max(1, cfg_.n_threads);
  std::vector<nn::GradBuffer> bufs;
  bufs.reserve(n_threads);
  for (int i = 0; i < n_threads; ++i) bufs.emplace_back(model_.params());
  std::vector<double> losses(work.size(), 0.0);
  std::exception_ptr failure;

#ifdef _OPENMP
#pragma omp parallel num_threads(n_threads)
#endif
  {
#ifdef _OPENMP
    const int tid = omp_get_thread_num();
#else
    const int tid = 0;
#endif
    try {
      for (size_t i = tid; i < work.size(); i += n_threads) {
        const Work& w = work[i];
        nn::Tape t;
        nn::Tape::Ref loss;
        if (w.robot) {
          Rng rng(w.rng_seed);
          loss = model_.action_loss(t, *w.robot, rng, cfg_.gamma);
        } else {
          loss = model_.qa_loss(t, *w.qa);
        }
        losses[i] = t.scalar(loss);
        t.backward(loss, w.seed_grad);
        t.flush_grads(bufs[tid]);
      }
    } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);

  model_.params().zero_grads();
  for (int i = 0; i < n_threads; ++i) bufs[i].merge_into_params(model_.params());
  opt_.step(model_.params(), nn::cosine_lr_scale(step_, cfg_.steps));
  ++step_;

  StepLosses out;
  BatchResult ra, rn;
  size_t idx = 0;
  if (do_action) {
    for (size_t i = 0; i < robot_batch.size(); ++i, ++idx) {
      ra.loss_sum += losses[idx];
      ++ra.count;
    }
  }
  if (do_ntp) {
    for (size_t i = 0; i < qa_batch.size(); ++i, ++idx) {
      rn.loss_sum += losses[idx];
      ++rn.count;
    }
  }
  if (ra.count) out.action = ra.loss_sum / ra.count;
  if (rn.count) out.ntp = rn.loss_sum / rn.count;
  return out;
}

std::vector<LogRow> Trainer::run(const std::vector<model::RobotSample>& robot,
                                 const std::vector<model::QASample>& qa) {
  std::vector<LogRow> log;
  for (int s = 0; s < cfg_.steps; ++s) {
    Rng draw(derive_seed(cfg_.seed, 0xba7c4, static_cast<uint64_t>(s)));
    std::vector<const model::RobotSample*> rb;
    std::vector<const model::QASample*> qb;
    if (!robot.empty())
      for (int i = 0; i < cfg_.robot_batch; ++i)
        rb.push_back(&robot[draw.uniform_int(robot.size())]);
    if (!qa.empty())
      for (int i = 0; i < cfg_.mm_batch; ++i) qb.push_back(&qa[draw.uniform_int(qa.size())]);

    const StepLosses l = joint_step(rb, qb);
    if (s % cfg_.log_every == 0 || s + 1 == cfg_.steps)
      log.push_back({s, l.action, l.ntp,
                     opt_.config().lr * nn::cosine_lr_scale(s, cfg_.steps)});
  }
  return log;
}

std::vector<LogRow> stage1_pretrain(model::UnifiedModel& model,
                                    const std::vector<model::QASample>& qa,
                                    const TrainConfig& cfg) {
  if (qa.empty()) throw Error("stage-1 pretraining needs a non-empty QA dataset");
  nn::AdamWConfig oc;
  oc.lr = cfg.lr;
  oc.weight_decay = cfg.weight_decay;
  nn::AdamW opt(oc);

  const int n_threads = std::max(1, cfg.n_threads);
  std::vector<LogRow> log;
  for (int s = 0; s < cfg.steps; ++s) {
    Rng draw(derive_seed(cfg.seed, 0x57a9e1, static_cast<uint64_t>(s)));
    std::vector<const model::QASample*> batch;
    for (int i = 0; i < cfg.mm_batch; ++i) batch.push_back(&qa[draw.uniform_int(qa.size())]);

    std::vector<nn::GradBuffer> bufs;
    bufs.reserve(n_threads);
    for (int i = 0; i < n_threads; ++i) bufs.emplace_back(model.params());
    std::vector<double> losses(batch.size(), 0.0);
    std::exception_ptr failure;

#ifdef _OPENMP
#pragma omp parallel num_threads(n_threads)
#endif
    {
#ifdef _OPENMP
      const int tid = omp_get_thread_num();
#else
      const int tid = 0;
#endif
      try {
        for (size_t i = tid; i < batch.size(); i += n_threads) {
          nn::Tape t;
          nn::Tape::Ref loss = model.qa_loss(t, *batch[i]);
          losses[i] = t.scalar(loss);
          t.backward(loss, 1.0 / static_cast<double>(batch.size()));
          t.flush_grads(bufs[tid]);
        }
      } catch (...) {
#ifdef _OPENMP
#pragma omp critical
#endif
        failure = std::current_exception();
      }
    }
    if (failure) std::rethrow_exception(failure);
    model.params().zero_grads();
    for (int i = 0; i < n_threads; ++i) bufs[i].merge_into_params(model.params());
    opt.step(model.params(), nn::cosine_lr_scale(s, cfg.steps));

    if (s % cfg.log_every == 0 || s + 1 == cfg.steps) {
      double sum = 0.0;
      for (double l : losses) sum += l;
      log.push_back({s, -1.0, sum / losses.size(),
                     oc.lr * nn::cosine_lr_scale(s, cfg.steps)});
    }
  }
  return log;
}

void write_log_csv(const std::vector<LogRow>& rows, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw Error("cannot write " + path);
  f << "step,L_action,L_ntp,lr\n";
  for (const auto& r : rows)
    f << r.step << "," << r.l_action << "," << r.l_ntp << "," << r.lr << "\n";
}

GradMatrix collect_gradients(const model::UnifiedModel& model, Objective objective,
                             const std::vector<model::RobotSample>& robot,
                             const std::vector<model::QASample>& qa, int n_steps,
                             int batch_size, const TrainConfig& cfg) {
  if (n_steps < kDefaultPssRank)
    throw Error("collect_gradients needs at least " + std::to_string(kDefaultPssRank) +
                " probe steps");
  if (objective == Objective::Action && robot.empty())
    throw Error("no robot samples for the action objective");
  if (objective == Objective::Grounding && qa.empty())
    throw Error("no QA samples for the grounding objective");

  GradMatrix gm;
  gm.objective = objective == Objective::Action ? "action" : "grounding";
  const size_t cols = planner_value_count(model);
  gm.rows.resize(n_steps, static_cast<Eigen::Index>(cols));

  Eigen::VectorXd row(static_cast<Eigen::Index>(cols));
  for (int s = 0; s < n_steps; ++s) {
    Rng draw(derive_seed(cfg.seed, 0x9c0de, static_cast<uint64_t>(s),
                         objective == Objective::Action ? 1 : 2));
    nn::GradBuffer buf(model.params());
    for (int i = 0; i < batch_size; ++i) {
      nn::Tape t;
      nn::Tape::Ref loss;
      if (objective == Objective::Action) {
        const auto& sample = robot[draw.uniform_int(robot.size())];
        Rng rng(derive_seed(cfg.seed, 0xd1f, static_cast<uint64_t>(s), i));
        loss = model.action_loss(t, sample, rng, cfg.gamma);
      } else {
        loss = model.qa_loss(t, qa[draw.uniform_int(qa.size())]);
      }
      t.backward(loss, 1.0 / batch_size);
      t.flush_grads(buf);
    }
    flatten_planner_grads(model, buf, row);
    const double norm = row.norm();
    if (norm > 0.0) row /= norm;
    gm.rows.row(s) = row.transpose();
  }
  return gm;
}

namespace {

// Top-r right singular subspace through the row Gram matrix (rows are few,
// columns are the parameter axis).
nn::Mat top_right_subspace(const nn::Mat& g, int r) {
  const Eigen::Index n = g.rows();
  nn::Mat gram = g * g.transpose();
  Eigen::SelfAdjointEigenSolver<nn::Mat> es(gram);
  if (es.info() != Eigen::Success) throw Error("eigendecomposition failed");
  const Eigen::VectorXd& evals = es.eigenvalues();  // ascending
  const double lmax = evals(n - 1);
  int rank = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    if (evals(i) > std::max(0.0, lmax) * 1e-12 && evals(i) > 1e-300) ++rank;
  if (rank < r)
    throw Error("rank deficiency: matrix has rank " + std::to_string(rank) +
                " < r = " + std::to_string(r));

  nn::Mat v(g.cols(), r);
  for (int k = 0; k < r; ++k) {
    const Eigen::Index idx = n - 1 - k;  // largest first
    const double sigma = std::sqrt(evals(idx));
    v.col(k) = (g.transpose() * es.eigenvectors().col(idx)) / sigma;
  }
  return v;
}

nn::Mat normalized_rows(const nn::Mat& g) {
  nn::Mat out = g;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double n = out.row(i).norm();
    if (n > 0.0) out.row(i) /= n;
  }
  return out;
}

}  // namespace

double pss(const GradMatrix& a, const GradMatrix& b, int r) {
  if (r < 1) throw Error("pss rank must be >= 1");
  if (a.rows.cols() != b.rows.cols())
    throw Error("gradient matrices have different column counts");
  if (a.rows.rows() < r || b.rows.rows() < r)
    throw Error("gradient matrices need at least r rows");
  const nn::Mat va = top_right_subspace(normalized_rows(a.rows), r);
  const nn::Mat vb = top_right_subspace(normalized_rows(b.rows), r);
  return (va.transpose() * vb).squaredNorm() / static_cast<double>(r);
}

void save_grad_matrix(const GradMatrix& g, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write " + path);
  f.write("VLAG", 4);
  const uint32_t ver = 1;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  const uint64_t rows = g.rows.rows(), cols = g.rows.cols(), olen = g.objective.size();
  f.write(reinterpret_cast<const char*>(&rows), 8);
  f.write(reinterpret_cast<const char*>(&cols), 8);
  f.write(reinterpret_cast<const char*>(&olen), 8);
  f.write(g.objective.data(), static_cast<std::streamsize>(olen));
  f.write(reinterpret_cast<const char*>(g.rows.data()),
          static_cast<std::streamsize>(sizeof(double) * g.rows.size()));
}

GradMatrix load_grad_matrix(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("missing gradient matrix: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::string(magic, 4) != "VLAG") throw Error("not a gradient matrix: " + path);
  uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != 1) throw Error("gradient matrix version mismatch");
  uint64_t rows = 0, cols = 0, olen = 0;
  f.read(reinterpret_cast<char*>(&rows), 8);
  f.read(reinterpret_cast<char*>(&cols), 8);
  f.read(reinterpret_cast<char*>(&olen), 8);
  GradMatrix g;
  g.objective.resize(olen);
  f.read(g.objective.data(), static_cast<std::streamsize>(olen));
  g.rows.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  f.read(reinterpret_cast<char*>(g.rows.data()),
         static_cast<std::streamsize>(sizeof(double) * g.rows.size()));
  if (!f) throw Error("truncated gradient matrix: " + path);
  return g;
}

}  // namespace vla::cotrain
