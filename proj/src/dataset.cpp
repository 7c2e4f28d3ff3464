#include "vla/dataset.hpp"

#include <filesystem>
#include <fstream>

namespace vla::dataset {

namespace {

std::string mask_to_hex(const std::vector<uint8_t>& mask) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve((mask.size() + 3) / 4);
  int nibble = 0, bits = 0;
  for (uint8_t b : mask) {
    nibble = (nibble << 1) | (b ? 1 : 0);
    if (++bits == 4) {
      out.push_back(digits[nibble]);
      nibble = 0;
      bits = 0;
    }
  }
  if (bits) out.push_back(digits[nibble << (4 - bits)]);
  return out;
}

std::vector<uint8_t> mask_from_hex(const std::string& hex, size_t n) {
  std::vector<uint8_t> mask(n, 0);
  for (size_t i = 0; i < n; ++i) {
    const size_t d = i / 4;
    if (d >= hex.size()) break;
    const char c = hex[d];
    const int v = c <= '9' ? c - '0' : 10 + c - 'a';
    mask[i] = (v >> (3 - i % 4)) & 1;
  }
  return mask;
}

Json answer_payload(const qa::Answer& a) {
  if (const auto* b = std::get_if<qa::BoxAnswer>(&a))
    return Json{{"box", {b->box.x1, b->box.y1, b->box.x2, b->box.y2}}};
  if (const auto* p = std::get_if<qa::PointAnswer>(&a)) {
    Json pts = Json::array();
    for (const auto& [x, y] : p->points) pts.push_back(Json::array({x, y}));
    return Json{{"points", pts}};
  }
  if (const auto* t = std::get_if<qa::TrajAnswer>(&a)) {
    Json pts = Json::array();
    for (const auto& [x, y] : t->waypoints) pts.push_back(Json::array({x, y}));
    return Json{{"trajectory", pts}};
  }
  return Json{{"text", std::get<qa::TextAnswer>(a).text}};
}

qa::Answer answer_from_payload(const Json& j) {
  if (j.contains("box")) {
    const auto& b = j.at("box");
    return qa::BoxAnswer{{b.at(0), b.at(1), b.at(2), b.at(3)}};
  }
  if (j.contains("points")) {
    qa::PointAnswer p;
    for (const auto& r : j.at("points")) p.points.emplace_back(r.at(0), r.at(1));
    return p;
  }
  if (j.contains("trajectory")) {
    qa::TrajAnswer t;
    for (const auto& r : j.at("trajectory")) t.waypoints.emplace_back(r.at(0), r.at(1));
    return t;
  }
  return qa::TextAnswer{j.at("text")};
}

std::string format_name(qa::Format f) { return f == qa::Format::Json ? "json" : "xml"; }
qa::Format format_from_name(const std::string& s) {
  return s == "xml" ? qa::Format::Xml : qa::Format::Json;
}

}  // namespace

uint64_t appearance_seed_for(task::Split split, Rng& rng) {
  const uint64_t pool = split == task::Split::NewBackground ? 0xbac2u : 0xbac1u;
  return derive_seed(pool, rng.uniform_int(kAppearancePoolSize));
}

Json GenConfig::to_json() const {
  return Json{{"episodes", episodes},
              {"split", task::split_name(split)},
              {"n_objects", n_objects},
              {"n_containers", n_containers},
              {"qa_per_episode", qa_per_episode},
              {"seed", seed},
              {"action_noise", action_noise},
              {"pad_len", pad_len},
              {"idle_threshold", idle_threshold},
              {"max_steps", max_steps},
              {"materialize_obs", materialize_obs},
              {"grounding_focus", grounding_focus}};
}

GenConfig GenConfig::from_json(const Json& j) {
  GenConfig c;
  c.episodes = j.value("episodes", c.episodes);
  c.split = task::split_from_name(j.value("split", std::string("ID")));
  c.n_objects = j.value("n_objects", c.n_objects);
  c.n_containers = j.value("n_containers", c.n_containers);
  c.qa_per_episode = j.value("qa_per_episode", c.qa_per_episode);
  c.seed = j.value("seed", c.seed);
  c.action_noise = j.value("action_noise", c.action_noise);
  c.pad_len = j.value("pad_len", c.pad_len);
  c.idle_threshold = j.value("idle_threshold", c.idle_threshold);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.materialize_obs = j.value("materialize_obs", c.materialize_obs);
  c.grounding_focus = j.value("grounding_focus", c.grounding_focus);
  return c;
}

Json qa_record_to_json(const qa::QARecord& rec) {
  Json j{{"qa_type", qa::qa_type_name(rec.qa_type)},
         {"question", rec.question},
         {"answer_text", rec.answer_text},
         {"format", format_name(rec.format)},
         {"image_path", ""},
         {"width", rec.width},
         {"height", rec.height},
         {"gt_payload", answer_payload(rec.answer)},
         {"split_tag", task::split_name(rec.split_tag)},
         {"scene", serde::to_json(rec.scene)},
         {"appearance_seed", rec.appearance_seed}};
  if (!rec.gt_mask.empty()) j["gt_mask"] = mask_to_hex(rec.gt_mask);
  return j;
}

qa::QARecord qa_record_from_json(const Json& j) {
  qa::QARecord rec;
  rec.qa_type = qa::qa_type_from_name(j.at("qa_type"));
  rec.question = j.at("question");
  rec.answer_text = j.at("answer_text");
  rec.format = format_from_name(j.at("format"));
  rec.width = j.at("width");
  rec.height = j.at("height");
  rec.answer = answer_from_payload(j.at("gt_payload"));
  rec.split_tag = task::split_from_name(j.at("split_tag"));
  rec.scene = serde::state_from_json(j.at("scene"));
  rec.appearance_seed = j.at("appearance_seed");
  if (j.contains("gt_mask"))
    rec.gt_mask = mask_from_hex(j.at("gt_mask"),
                                static_cast<size_t>(rec.width) * rec.height);
  return rec;
}

GenStats gen_corpus(const GenConfig& cfg, const std::string& out_dir) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  if (cfg.materialize_obs) fs::create_directories(out_dir + "/obs");

  std::ofstream ef(out_dir + "/episodes.ndjson");
  std::ofstream qf(out_dir + "/qa.ndjson");
  if (!ef || !qf) throw Error("cannot write corpus files under " + out_dir);

  GenStats stats;
  uint64_t ehash = 0xcbf29ce484222325ull, qhash = 0xcbf29ce484222325ull;
  Json tasks = Json::array();

  static const task::Style kStyles[] = {task::Style::Direct, task::Style::Attribute,
                                        task::Style::GoalConditioned};

  // question + separator + answer must fit the planner text budget
  constexpr size_t kCorpusTextBudget = 220;
  auto write_qa = [&](const qa::QARecord& rec) {
    if (!qa::filter_record(rec)) return;  // admission rule; emitters stay within it
    if (rec.question.size() + rec.answer_text.size() + 8 > kCorpusTextBudget) return;
    const std::string line = qa_record_to_json(rec).dump();
    qhash = fnv1a(line.data(), line.size(), qhash);
    qf << line << "\n";
    ++stats.qa_written;
  };

  for (int e = 0; e < cfg.episodes; ++e) {
    task::TaskGenOptions topts;
    topts.split = cfg.split;
    topts.n_objects = cfg.n_objects;
    topts.n_containers = cfg.n_containers;
    topts.style = kStyles[e % 3];
    const task::TaskSpec spec =
        task::make_pick_place_task(topts, derive_seed(cfg.seed, 0x7a5, e));

    task::CollectOptions copts;
    copts.max_steps = cfg.max_steps;
    copts.action_noise = cfg.action_noise;
    task::Trajectory traj;
    try {
      traj = task::collect_episode(spec, derive_seed(cfg.seed, 0xe5, e), copts);
    } catch (const BudgetExhaustedError&) {
      ++stats.rejected;
      continue;
    }
    if (!traj.verified) {  // only verified, validated episodes are kept
      ++stats.rejected;
      continue;
    }
    const task::Trajectory padded =
        task::segment_and_pad(traj, cfg.pad_len, cfg.idle_threshold);

    Rng arng(derive_seed(cfg.seed, 0xa9, e));
    const uint64_t app_seed = appearance_seed_for(cfg.split, arng);

    Json subtasks = Json::array();
    for (const auto& st : spec.subtask_plan) subtasks.push_back(st.instruction);
    tasks.push_back(Json{{"task_id", spec.task_id},
                         {"split", task::split_name(spec.split)},
                         {"style", task::style_name(spec.style)},
                         {"instruction", spec.instruction},
                         {"subtasks", subtasks},
                         {"goal", serde::to_json(spec.goal)},
                         {"steps", padded.steps.size()},
                         {"appearance_seed", app_seed}});

    for (size_t i = 0; i < padded.steps.size(); ++i) {
      const auto& st = padded.steps[i];
      std::string obs_path;
      if (cfg.materialize_obs) {
        obs_path = "obs/" + spec.task_id + "-" + std::to_string(i) + ".rgb";
        const sim::Observation obs = sim::render(st.state, app_seed);
        std::ofstream of(out_dir + "/" + obs_path, std::ios::binary);
        of.write(reinterpret_cast<const char*>(obs.pixels.data()),
                 static_cast<std::streamsize>(obs.pixels.size()));
      }
      const Json rec{{"task_id", spec.task_id},
                     {"step_index", i},
                     {"subtask_index", st.subtask_index},
                     {"is_padding", st.is_padding},
                     {"state", serde::to_json(st.state)},
                     {"action", serde::to_json(st.action)},
                     {"observation_path", obs_path},
                     {"appearance_seed", app_seed}};
      const std::string line = rec.dump();
      ehash = fnv1a(line.data(), line.size(), ehash);
      ef << line << "\n";
      ++stats.steps_written;
    }
    ++stats.episodes_written;

    // --- QA emission from this episode ---
    Rng qrng(derive_seed(cfg.seed, 0x9a, e));
    const auto& steps = padded.steps;
    for (int k = 0; k < cfg.qa_per_episode; ++k) {
      const auto& st = steps[qrng.uniform_int(steps.size())];
      qa::EmitContext ctx{st.state, app_seed, cfg.split};
      const uint64_t qseed = derive_seed(cfg.seed, 0x9b, e, k);
      int kind = static_cast<int>(qrng.uniform_int(cfg.grounding_focus ? 8 : 4));
      if (kind >= 4) kind = 0;  // grounding focus: half of the draws are boxes
      try {
        if (kind == 0) {
          std::vector<std::string> ids;
          for (const auto& o : st.state.objects) ids.push_back(o.id);
          for (const auto& c : st.state.containers) ids.push_back(c.id);
          write_qa(qa::emit_box_qa(ctx, ids[qrng.uniform_int(ids.size())], qseed));
        } else if (kind == 1) {
          if (!st.state.objects.empty()) {
            const auto& o = st.state.objects[qrng.uniform_int(st.state.objects.size())];
            write_qa(qa::emit_point_qa(ctx, qa::PointQuery::ObjectReference, o.id, qseed));
          }
        } else if (kind == 2) {
          write_qa(qa::emit_point_qa(ctx, qa::PointQuery::FreeSpace, "", qseed, 6));
        } else {
          write_qa(qa::emit_general_qa(ctx, qseed));
        }
      } catch (const Error&) {
        // occluded target or no free space: skip this draw
      }
    }

    // trajectory QA per subtask; stride keeps answers inside the planner
    // context (at most ~8 waypoints)
    for (size_t si = 0; si < spec.subtask_plan.size(); ++si) {
      int seg_len = 0;
      for (const auto& st : steps)
        if (st.subtask_index == static_cast<int>(si) && !st.is_padding) ++seg_len;
      const int stride = std::max(2, (seg_len + 6) / 7);
      try {
        qa::QARecord rec = qa::emit_traj_qa(padded, static_cast<int>(si), stride, cfg.split,
                                            derive_seed(cfg.seed, 0x9c, e, si));
        rec.question = "trace the gripper path for: " + spec.subtask_plan[si].instruction;
        rec.answer_text = qa::serialize(rec.answer, rec.format);
        write_qa(rec);
      } catch (const qa::TooShortSegmentError&) {
      }
    }

    // scheduling QA: next sub-instruction per boundary, then DONE
    std::vector<std::string> done;
    for (size_t si = 0; si <= spec.subtask_plan.size(); ++si) {
      // state at the first step of subtask si (or final state for DONE)
      const sim::SceneState* sstate = &padded.final_state;
      for (const auto& st : steps) {
        if (st.subtask_index == static_cast<int>(si) && !st.is_padding) {
          sstate = &st.state;
          break;
        }
      }
      qa::QARecord rec;
      rec.qa_type = qa::QaType::General;
      rec.split_tag = cfg.split;
      rec.scene = *sstate;
      rec.appearance_seed = app_seed;
      rec.format = qa::Format::Json;
      rec.question = planner::scheduling_prompt(spec.instruction, done);
      const std::string answer = si < spec.subtask_plan.size()
                                     ? spec.subtask_plan[si].instruction
                                     : std::string(planner::kDoneToken);
      rec.answer = qa::TextAnswer{answer};
      rec.answer_text = answer;
      write_qa(rec);
      if (si < spec.subtask_plan.size()) done.push_back(spec.subtask_plan[si].instruction);
    }
  }

  stats.episodes_hash = hex64(ehash);
  stats.qa_hash = hex64(qhash);

  Json pools;
  for (task::Style s : {task::Style::Direct, task::Style::Attribute, task::Style::Category,
                        task::Style::GoalConditioned, task::Style::Reasoning}) {
    pools["id"][task::style_name(s)] = task::template_pool(s, false);
    pools["unseen"][task::style_name(s)] = task::template_pool(s, true);
  }
  Json vocab;
  {
    Json idv = Json::array(), unv = Json::array();
    for (const auto& a : task::id_assets()) idv.push_back(a.category);
    for (const auto& a : task::unseen_assets()) unv.push_back(a.category);
    vocab["id_categories"] = idv;
    vocab["unseen_categories"] = unv;
    vocab["id_container_colors"] = task::id_container_colors();
    vocab["unseen_container_colors"] = task::unseen_container_colors();
  }

  const Json manifest{{"config", cfg.to_json()},
                      {"tasks", tasks},
                      {"template_pools", pools},
                      {"vocabulary", vocab},
                      {"counts", Json{{"episodes", stats.episodes_written},
                                      {"steps", stats.steps_written},
                                      {"qa", stats.qa_written},
                                      {"rejected", stats.rejected}}},
                      {"hashes", Json{{"episodes", stats.episodes_hash},
                                      {"qa", stats.qa_hash}}}};
  std::ofstream mf(out_dir + "/manifest.json");
  mf << manifest.dump(2) << "\n";
  return stats;
}

Json load_manifest(const std::string& dir) {
  std::ifstream f(dir + "/manifest.json");
  if (!f) throw Error("missing manifest.json under " + dir);
  Json j;
  f >> j;
  return j;
}

std::vector<qa::QARecord> load_qa_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw Error("missing QA dataset: " + path);
  std::vector<qa::QARecord> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(qa_record_from_json(Json::parse(line)));
  }
  return out;
}

std::vector<model::QASample> qa_to_samples(const std::vector<qa::QARecord>& records) {
  std::vector<model::QASample> out;
  out.reserve(records.size());
  for (const auto& r : records)
    out.push_back({r.question, r.answer_text, r.scene, r.appearance_seed});
  return out;
}

std::vector<model::RobotSample> load_robot_windows(const std::string& dir,
                                                   const RobotLoadOptions& opts) {
  const Json manifest = load_manifest(dir);
  std::map<std::string, std::vector<std::string>> subtask_text;
  for (const auto& t : manifest.at("tasks")) {
    std::vector<std::string> subs;
    for (const auto& s : t.at("subtasks")) subs.push_back(s);
    subtask_text[t.at("task_id")] = subs;
  }

  std::ifstream f(dir + "/episodes.ndjson");
  if (!f) throw Error("missing episodes.ndjson under " + dir);

  const expert::ActionCodec codec;
  std::vector<model::RobotSample> out;

  struct Step {
    sim::SceneState state;
    Eigen::RowVector4d action;
    int subtask{0};
  };
  std::vector<Step> episode;
  std::string cur_task;
  uint64_t cur_seed = 0;

  auto flush = [&]() {
    if (episode.empty()) return;
    const auto it = subtask_text.find(cur_task);
    if (it == subtask_text.end()) throw Error("episode task missing from manifest: " + cur_task);
    const int n = static_cast<int>(episode.size());
    for (int i = 0; i < n; i += opts.window_stride) {
      model::RobotSample s;
      s.state = episode[i].state;
      s.appearance_seed = cur_seed;
      const int sub = std::min(episode[i].subtask,
                               static_cast<int>(it->second.size()) - 1);
      s.instruction = it->second[sub >= 0 ? sub : 0];
      if (opts.spatial_prompt) s.instruction = planner::apply_spatial_prompt(s.instruction);
      s.chunk = nn::Mat::Zero(opts.horizon, 4);
      for (int h = 0; h < opts.horizon && i + h < n; ++h)
        s.chunk.row(h) = codec.encode(sim::Action{
            episode[i + h].action(0), episode[i + h].action(1), episode[i + h].action(2),
            episode[i + h].action(3)});
      out.push_back(std::move(s));
    }
    episode.clear();
  };

  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const Json j = Json::parse(line);
    const std::string tid = j.at("task_id");
    if (tid != cur_task) {
      flush();
      cur_task = tid;
    }
    cur_seed = j.at("appearance_seed");
    Step st;
    st.state = serde::state_from_json(j.at("state"));
    const sim::Action a = serde::action_from_json(j.at("action"));
    st.action << a.dx, a.dy, a.dtheta, a.grip;
    st.subtask = j.at("subtask_index");
    episode.push_back(std::move(st));
  }
  flush();
  return out;
}

}  // namespace vla::dataset
