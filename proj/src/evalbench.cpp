#include "vla/evalbench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "vla/dataset.hpp"

namespace vla::evalbench {

double iou(const PixBox& a, const PixBox& b) {
  const long aw = static_cast<long>(a.x2 - a.x1), ah = static_cast<long>(a.y2 - a.y1);
  const long bw = static_cast<long>(b.x2 - b.x1), bh = static_cast<long>(b.y2 - b.y1);
  if (aw <= 0 || ah <= 0 || bw <= 0 || bh <= 0) throw Error("degenerate box in iou");
  const long ix = std::max(0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
  const long iy = std::max(0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
  const double inter = static_cast<double>(ix) * iy;
  const double uni = static_cast<double>(aw) * ah + static_cast<double>(bw) * bh - inter;
  return inter / uni;
}

double point_accuracy(const std::vector<std::pair<int, int>>& points,
                      const std::vector<uint8_t>& mask, int width, int height) {
  if (points.empty()) return 0.0;
  int in = 0;
  for (const auto& [x, y] : points) {
    if (x < 0 || y < 0 || x >= width || y >= height) continue;
    if (mask[static_cast<size_t>(y) * width + x]) ++in;
  }
  return static_cast<double>(in) / static_cast<double>(points.size());
}

std::vector<Vec2> resample_polyline(const std::vector<Vec2>& pts, int n) {
  if (pts.size() < 2) throw Error("polyline needs at least 2 points");
  std::vector<double> cum(pts.size(), 0.0);
  for (size_t i = 1; i < pts.size(); ++i) cum[i] = cum[i - 1] + dist(pts[i - 1], pts[i]);
  const double total = cum.back();
  if (total <= 0.0) throw Error("degenerate zero-length polyline");

  std::vector<Vec2> out(n);
  size_t seg = 0;
  for (int k = 0; k < n; ++k) {
    const double s = total * k / (n - 1);
    while (seg + 1 < pts.size() - 1 && cum[seg + 1] < s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double u = len > 0.0 ? (s - cum[seg]) / len : 0.0;
    out[k] = {pts[seg].x + u * (pts[seg + 1].x - pts[seg].x),
              pts[seg].y + u * (pts[seg + 1].y - pts[seg].y)};
  }
  return out;
}

double traj_mae(const std::vector<std::pair<int, int>>& predicted,
                const std::vector<std::pair<int, int>>& reference) {
  auto to_vec = [](const std::vector<std::pair<int, int>>& v) {
    std::vector<Vec2> out;
    out.reserve(v.size());
    for (const auto& [x, y] : v) out.push_back({static_cast<double>(x), static_cast<double>(y)});
    return out;
  };
  const std::vector<Vec2> p = resample_polyline(to_vec(predicted), kTrajResamplePoints);
  const std::vector<Vec2> r = resample_polyline(to_vec(reference), kTrajResamplePoints);
  double sum = 0.0;
  for (int i = 0; i < kTrajResamplePoints; ++i)
    sum += std::abs(p[i].x - r[i].x) + std::abs(p[i].y - r[i].y);
  return sum / kTrajResamplePoints;
}

GroundingMetrics eval_grounding(const planner::Planner& planner,
                                const std::vector<qa::QARecord>& records,
                                int max_new_tokens) {
  GroundingMetrics m;
  int box_hits = 0;
  double point_sum = 0.0, mae_sum = 0.0;

  for (const auto& rec : records) {
    if (rec.qa_type == qa::QaType::General) continue;
    const sim::Observation obs = sim::render(rec.scene, rec.appearance_seed);
    const std::string text =
        planner.generate(rec.question + model::kAnswerSep, obs, max_new_tokens);

    if (rec.qa_type == qa::QaType::Box) {
      ++m.n_box;
      try {
        const auto parsed = std::get<qa::BoxAnswer>(qa::parse(text, qa::QaType::Box));
        const auto& gt = std::get<qa::BoxAnswer>(rec.answer);
        if (iou(parsed.box, gt.box) >= 0.5) ++box_hits;
      } catch (const Error&) {
        // malformed output scores zero
      }
    } else if (rec.qa_type == qa::QaType::Point) {
      if (rec.gt_mask.empty()) continue;  // accuracy is defined against free space
      ++m.n_point;
      try {
        const auto parsed = std::get<qa::PointAnswer>(qa::parse(text, qa::QaType::Point));
        point_sum += point_accuracy(parsed.points, rec.gt_mask, rec.width, rec.height);
      } catch (const Error&) {
      }
    } else if (rec.qa_type == qa::QaType::Trajectory) {
      ++m.n_traj;
      double mae = kTrajMaePenalty;
      try {
        const auto parsed =
            std::get<qa::TrajAnswer>(qa::parse(text, qa::QaType::Trajectory));
        const auto& gt = std::get<qa::TrajAnswer>(rec.answer);
        mae = std::min(traj_mae(parsed.waypoints, gt.waypoints), kTrajMaePenalty);
      } catch (const Error&) {
      }
      mae_sum += mae;
    }
  }
  if (m.n_box) m.iou_at_05_rate = static_cast<double>(box_hits) / m.n_box;
  if (m.n_point) m.point_accuracy = point_sum / m.n_point;
  if (m.n_traj) m.traj_mae = mae_sum / m.n_traj;
  return m;
}

sim::SceneState apply_perturbation(const sim::SceneState& state, const Perturbation& p) {
  sim::SceneState out = state;
  switch (p.kind) {
    case Perturbation::Kind::MoveEntity: {
      if (auto* o = out.find_object(p.entity)) {
        if (out.robot.held == p.entity) break;  // held objects track the gripper
        o->x = std::clamp(p.new_pos.x, 0.0, out.width);
        o->y = std::clamp(p.new_pos.y, 0.0, out.height);
      } else if (out.find_container(p.entity)) {
        for (auto& c : out.containers) {
          if (c.id != p.entity) continue;
          c.x = std::clamp(p.new_pos.x, c.half_w, out.width - c.half_w);
          c.y = std::clamp(p.new_pos.y, c.half_h, out.height - c.half_h);
        }
      } else {
        throw UnknownEntityError("perturbation targets unknown entity " + p.entity);
      }
      break;
    }
    case Perturbation::Kind::UndoRelation: {
      auto* o = out.find_object(p.entity);
      if (!o) throw UnknownEntityError("perturbation targets unknown entity " + p.entity);
      if (out.robot.held == p.entity) break;
      o->x = std::clamp(p.new_pos.x, o->half_extent, out.width - o->half_extent);
      o->y = std::clamp(p.new_pos.y, o->half_extent, out.height - o->half_extent);
      break;
    }
    case Perturbation::Kind::Replan:
      break;  // handled by the rollout loop
  }
  return out;
}

std::string ScriptedPolicy::next_subtask(const sim::SceneState& state, const sim::Observation&,
                                         const std::string&,
                                         const std::vector<std::string>&) {
  const sim::SceneGraph g = sim::derive_scene_graph(state);
  for (const auto& s : plan_)
    if (!sim::check_goal(g, s.goal)) return s.instruction;
  return planner::kDoneToken;
}

nn::Mat ScriptedPolicy::action_chunk(const sim::SceneState& state, const sim::Observation&,
                                     const std::string& sub_instruction, Rng&) {
  nn::Mat chunk = nn::Mat::Zero(horizon_, 4);
  const task::SubTask* target = nullptr;
  const sim::SceneGraph g = sim::derive_scene_graph(state);
  for (const auto& s : plan_) {
    if (s.instruction == sub_instruction && !sim::check_goal(g, s.goal)) {
      target = &s;
      break;
    }
  }
  if (!target) return chunk;  // unknown or already satisfied: idle chunk

  sim::SceneState rolled = state;
  for (int h = 0; h < horizon_; ++h) {
    const sim::Action a = task::expert_policy(rolled, target->goal);
    chunk.row(h) << a.dx, a.dy, a.dtheta, a.grip;
    rolled = sim::step(rolled, a);
  }
  return chunk;
}

std::string ModelPolicy::next_subtask(const sim::SceneState&, const sim::Observation& obs,
                                      const std::string& instruction,
                                      const std::vector<std::string>& completed) {
  return planner::plan_next_subtask(model_.planner(), instruction, completed, obs);
}

nn::Mat ModelPolicy::action_chunk(const sim::SceneState& state, const sim::Observation& obs,
                                  const std::string& sub_instruction, Rng& rng) {
  const std::string prompted = model_.config().spatial_prompt
                                   ? planner::apply_spatial_prompt(sub_instruction)
                                   : sub_instruction;
  const nn::Mat cond = model_.make_condition(prompted, obs, state);
  nn::Mat chunk = model_.expert().sample_chunk(cond, rng);
  for (Eigen::Index h = 0; h < chunk.rows(); ++h) {
    const sim::Action a = codec_.decode(chunk.row(h));
    chunk.row(h) << a.dx, a.dy, a.dtheta, a.grip;
  }
  return chunk;
}

EpisodeResult rollout(Policy& policy, const task::TaskSpec& task, const RolloutOptions& opts,
                      const std::vector<Perturbation>& schedule, uint64_t seed) {
  EpisodeResult result;
  result.task_id = task.task_id;

  sim::SceneState state =
      task::solve_layout(task.layout, task.layout_constraints, derive_seed(seed, 0xe91));
  Rng rng(derive_seed(seed, 0x401));

  const task::TaskSpec* active = &task;
  task::TaskSpec replanned_task;
  std::vector<std::string> completed;
  policy.reset(task);

  auto render_now = [&] { return sim::render(state, opts.appearance_seed); };

  std::string sub =
      policy.next_subtask(state, render_now(), active->instruction, completed);

  int steps = 0;
  std::vector<bool> fired(schedule.size(), false);  // each perturbation fires once
  auto goal_ok = [&] {
    return sim::check_goal(sim::derive_scene_graph(state), active->goal);
  };
  if (goal_ok()) {
    result.success = true;
    return result;
  }

  while (steps < opts.max_steps) {
    if (sub == planner::kDoneToken) {
      result.success = goal_ok();
      if (!result.success) result.failure_reason = "planner finished before goal";
      result.steps_used = steps;
      result.subtasks_completed = static_cast<int>(completed.size());
      return result;
    }

    const nn::Mat chunk = policy.action_chunk(state, render_now(), sub, rng);
    bool replanned = false;
    for (Eigen::Index h = 0; h < chunk.rows() && steps < opts.max_steps; ++h) {
      for (size_t pi = 0; pi < schedule.size(); ++pi) {
        const auto& p = schedule[pi];
        if (fired[pi] || p.at_step > steps) continue;
        fired[pi] = true;
        if (p.kind == Perturbation::Kind::Replan && p.new_task) {
          replanned_task = *p.new_task;
          active = &replanned_task;
          completed.clear();
          policy.reset(replanned_task);
          replanned = true;
          result.perturbations_applied.emplace_back(steps, "replan");
        } else {
          state = apply_perturbation(state, p);
          result.perturbations_applied.emplace_back(
              steps, p.kind == Perturbation::Kind::MoveEntity ? "move" : "undo");
        }
      }
      if (replanned) break;

      const sim::Action a{chunk(h, 0), chunk(h, 1), chunk(h, 2), chunk(h, 3)};
      state = sim::step(state, a);
      ++steps;
      if (goal_ok()) {
        result.success = true;
        result.steps_used = steps;
        result.subtasks_completed = static_cast<int>(completed.size());
        return result;
      }
    }

    if (replanned) {
      sub = policy.next_subtask(state, render_now(), active->instruction, completed);
      continue;
    }
    if (expert::detect_completion(chunk, opts.completion_tau)) {
      completed.push_back(sub);
      sub = policy.next_subtask(state, render_now(), active->instruction, completed);
    }
  }
  result.steps_used = steps;
  result.subtasks_completed = static_cast<int>(completed.size());
  result.failure_reason = "step budget exhausted";
  return result;
}

std::pair<double, double> wilson_interval(int successes, int n, double z) {
  if (n == 0) return {0.0, 0.0};
  const double p = static_cast<double>(successes) / n;
  const double z2 = z * z;
  const double denom = 1.0 + z2 / n;
  const double center = (p + z2 / (2.0 * n)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / n + z2 / (4.0 * n * n)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

SplitResult eval_suite(Policy& policy, task::Split split, int n_episodes, uint64_t seed,
                       const SuiteOptions& opts) {
  SplitResult res;
  res.split = task::split_name(split);
  res.n = n_episodes;

  static const task::Style kStyles[] = {task::Style::Direct, task::Style::Attribute,
                                        task::Style::GoalConditioned};
  for (int i = 0; i < n_episodes; ++i) {
    task::TaskGenOptions gen;
    gen.split = split;
    gen.n_objects = opts.n_objects;
    gen.n_containers = opts.n_containers;
    gen.style = kStyles[i % 3];
    const task::TaskSpec task = task::make_pick_place_task(gen, derive_seed(seed, 0x7a, i));

    RolloutOptions ro = opts.rollout;
    Rng arng(derive_seed(seed, 0xa9, i));
    ro.appearance_seed = dataset::appearance_seed_for(split, arng);

    EpisodeResult ep = rollout(policy, task, ro, {}, derive_seed(seed, 0xe9, i));
    if (ep.success) ++res.successes;
    res.episodes.push_back(std::move(ep));
  }
  res.sr = res.n ? static_cast<double>(res.successes) / res.n : 0.0;
  std::tie(res.wilson_lo, res.wilson_hi) = wilson_interval(res.successes, res.n);
  return res;
}

void write_report(const std::vector<SplitResult>& splits, const GroundingMetrics* grounding,
                  const std::string& dir, const Json& config_info) {
  std::filesystem::create_directories(dir);

  Json j;
  j["config"] = config_info;
  Json sp = Json::array();
  for (const auto& s : splits) {
    sp.push_back(Json{{"split", s.split},
                      {"episodes", s.n},
                      {"successes", s.successes},
                      {"success_rate", s.sr},
                      {"wilson_lo", s.wilson_lo},
                      {"wilson_hi", s.wilson_hi}});
  }
  j["splits"] = sp;
  if (grounding) {
    j["grounding"] = Json{{"iou_at_05_rate", grounding->iou_at_05_rate},
                          {"point_accuracy", grounding->point_accuracy},
                          {"traj_mae", grounding->traj_mae},
                          {"n_box", grounding->n_box},
                          {"n_point", grounding->n_point},
                          {"n_traj", grounding->n_traj}};
  }
  j["config_hash"] = hex64(fnv1a(config_info.dump()));

  std::ofstream rf(dir + "/report.json");
  if (!rf) throw Error("cannot write report.json under " + dir);
  rf << j.dump(2) << "\n";

  std::ofstream cf(dir + "/episodes.csv");
  if (!cf) throw Error("cannot write episodes.csv under " + dir);
  cf << "split,task_id,success,steps_used,subtasks_completed,failure_reason\n";
  for (const auto& s : splits) {
    for (const auto& e : s.episodes) {
      cf << s.split << "," << e.task_id << "," << (e.success ? 1 : 0) << "," << e.steps_used
         << "," << e.subtasks_completed << "," << e.failure_reason << "\n";
    }
  }
}

}  // namespace vla::evalbench
