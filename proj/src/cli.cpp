#include "vla/cli.hpp"

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>

#include "vla/cotrain.hpp"
#include "vla/dataset.hpp"
#include "vla/evalbench.hpp"

namespace vla::cli {

namespace fs = std::filesystem;

namespace {

struct MissingInputError : Error {
  using Error::Error;
};

struct ConfigParseError : Error {
  using Error::Error;
};

struct Args {
  std::string command;
  std::map<std::string, std::string> flags;
  std::vector<std::string> positional;  // dotted overrides and run dirs
};

Args parse_args(int argc, const char* const* argv) {
  Args a;
  if (argc < 2) throw ConfigParseError("usage: vla <command> [flags] [key=value ...]");
  a.command = argv[1];
  for (int i = 2; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg.rfind("--", 0) == 0) {
      const std::string name = arg.substr(2);
      if (i + 1 >= argc) throw ConfigParseError("flag --" + name + " needs a value");
      a.flags[name] = argv[++i];
    } else {
      a.positional.push_back(arg);
    }
  }
  return a;
}

std::string flag_or(const Args& a, const std::string& name, const std::string& dflt) {
  const auto it = a.flags.find(name);
  return it == a.flags.end() ? dflt : it->second;
}

std::string require_flag(const Args& a, const std::string& name) {
  const auto it = a.flags.find(name);
  if (it == a.flags.end()) throw ConfigParseError("missing required flag --" + name);
  return it->second;
}

Json load_config(const Args& a) {
  Json cfg = Json::object();
  const auto it = a.flags.find("config");
  if (it != a.flags.end()) {
    if (!fs::exists(it->second)) throw MissingInputError("config file not found: " + it->second);
    std::ifstream f(it->second);
    try {
      f >> cfg;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigParseError("config parse failed: " + std::string(e.what()));
    }
  }
  // dotted-key overrides: a.b.c=value (value parsed as JSON when possible)
  for (const std::string& kv : a.positional) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigParseError("override must be key=value: " + kv);
    std::string key = kv.substr(0, eq);
    const std::string raw = kv.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(raw);
    } catch (const nlohmann::json::exception&) {
      value = raw;  // plain string
    }
    Json* node = &cfg;
    size_t pos = 0;
    while (true) {
      const size_t dot = key.find('.', pos);
      const std::string part = key.substr(pos, dot == std::string::npos ? dot : dot - pos);
      if (dot == std::string::npos) {
        (*node)[part] = value;
        break;
      }
      node = &(*node)[part];
      pos = dot + 1;
    }
  }
  return cfg;
}

uint64_t effective_seed(const Args& a, const Json& cfg, uint64_t dflt) {
  uint64_t seed = dflt;
  if (cfg.contains("seed")) seed = cfg.at("seed").get<uint64_t>();
  if (const char* env = std::getenv("M1_SEED")) seed = std::strtoull(env, nullptr, 10);
  const auto it = a.flags.find("seed");
  if (it != a.flags.end()) seed = std::strtoull(it->second.c_str(), nullptr, 10);
  return seed;
}

uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) return 0;
  uint64_t h = 0xcbf29ce484222325ull;
  char buf[1 << 16];
  while (f) {
    f.read(buf, sizeof(buf));
    h = fnv1a(buf, static_cast<size_t>(f.gcount()), h);
  }
  return h;
}

void write_run_manifest(const std::string& out_dir, const std::string& command,
                        const Json& effective_config, const Json& inputs,
                        const Json& outputs, double wall_sec) {
  Json m{{"command", command},
         {"config", effective_config},
         {"config_hash", hex64(fnv1a(effective_config.dump()))},
         {"inputs", inputs},
         {"outputs", outputs},
         {"wall_clock_sec", wall_sec}};
  std::ofstream f(out_dir + "/run_manifest.json");
  f << m.dump(2) << "\n";
}

cotrain::TrainConfig train_config_from(const Json& j, uint64_t seed) {
  cotrain::TrainConfig c;
  c.stage = j.value("stage", c.stage);
  c.robot_batch = j.value("robot_batch", c.robot_batch);
  c.mm_batch = j.value("mm_batch", c.mm_batch);
  c.steps = j.value("steps", c.steps);
  c.lr = j.value("lr", c.lr);
  c.weight_decay = j.value("weight_decay", c.weight_decay);
  c.aggregation = cotrain::aggregation_from_name(j.value("aggregation", std::string("summed")));
  c.gamma = j.value("gamma", c.gamma);
  c.w_action = j.value("w_action", c.w_action);
  c.w_ntp = j.value("w_ntp", c.w_ntp);
  c.n_threads = j.value("n_threads", c.n_threads);
  c.spatial_prompt = j.value("spatial_prompt", c.spatial_prompt);
  c.log_every = j.value("log_every", c.log_every);
  c.seed = seed;
  return c;
}

int cmd_gen_data(const Args& args) {
  const Json cfg = load_config(args);
  const std::string out = require_flag(args, "out");
  fs::create_directories(out);

  dataset::GenConfig gc = dataset::GenConfig::from_json(cfg.value("gen", Json::object()));
  gc.seed = effective_seed(args, cfg.value("gen", Json::object()), gc.seed);

  const auto t0 = std::chrono::steady_clock::now();
  const dataset::GenStats stats = dataset::gen_corpus(gc, out);
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  Json eff = cfg;
  eff["gen"] = gc.to_json();
  write_run_manifest(out, "gen-data", eff, Json::object(),
                     Json{{"episodes", stats.episodes_written},
                          {"steps", stats.steps_written},
                          {"qa", stats.qa_written},
                          {"rejected", stats.rejected},
                          {"episodes_hash", stats.episodes_hash},
                          {"qa_hash", stats.qa_hash}},
                     wall);
  std::cout << "gen-data: " << stats.episodes_written << " episodes, " << stats.qa_written
            << " qa records -> " << out << "\n";
  return kOk;
}

int cmd_train(const Args& args, bool stage2) {
  const Json cfg = load_config(args);
  const std::string out = require_flag(args, "out");
  fs::create_directories(out);

  const std::string data_dir = cfg.value("data", Json::object()).value("dir", std::string());
  if (data_dir.empty() || !fs::exists(data_dir + "/qa.ndjson"))
    throw MissingInputError("data.dir with qa.ndjson required");

  const uint64_t seed = effective_seed(args, cfg.value("train", Json::object()), 1);
  cotrain::TrainConfig tc = train_config_from(cfg.value("train", Json::object()), seed);
  tc.stage = stage2 ? 2 : 1;

  model::ModelConfig mc = model::ModelConfig::from_json(cfg.value("model", Json::object()));
  mc.stage = tc.stage;
  mc.spatial_prompt = tc.spatial_prompt;
  mc.connector.gamma = tc.gamma;
  auto m = std::make_unique<model::UnifiedModel>(mc);

  const std::string resume = flag_or(args, "resume", "");
  if (!resume.empty()) {
    if (!fs::exists(resume)) throw MissingInputError("resume checkpoint not found: " + resume);
    model::load_planner_weights(*m, resume);
  }

  const auto records = dataset::load_qa_records(data_dir + "/qa.ndjson");
  const auto qa_samples = dataset::qa_to_samples(records);

  const auto t0 = std::chrono::steady_clock::now();
  std::vector<cotrain::LogRow> log;
  if (!stage2) {
    log = cotrain::stage1_pretrain(*m, qa_samples, tc);
  } else {
    dataset::RobotLoadOptions ro;
    ro.horizon = mc.expert.horizon;
    ro.spatial_prompt = tc.spatial_prompt;
    ro.window_stride = cfg.value("data", Json::object()).value("window_stride", 2);
    const auto robot = dataset::load_robot_windows(data_dir, ro);
    cotrain::Trainer trainer(*m, tc);
    log = trainer.run(robot, tc.w_ntp > 0.0 ? qa_samples : std::vector<model::QASample>{});

    const Json probe = cfg.value("probe", Json::object());
    if (probe.value("collect_grads", false)) {
      const int n_steps = probe.value("steps", 24);
      const int bs = probe.value("batch", 8);
      const auto ga = cotrain::collect_gradients(*m, cotrain::Objective::Action, robot,
                                                 qa_samples, n_steps, bs, tc);
      const auto gg = cotrain::collect_gradients(*m, cotrain::Objective::Grounding, robot,
                                                 qa_samples, n_steps, bs, tc);
      cotrain::save_grad_matrix(ga, out + "/grads_action.bin");
      cotrain::save_grad_matrix(gg, out + "/grads_grounding.bin");
    }
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const std::string ckpt = out + "/model.ckpt";
  model::save_checkpoint(*m, ckpt,
                         Json{{"stage", tc.stage},
                              {"seed", seed},
                              {"resume", resume},
                              {"data_dir", data_dir},
                              {"data_hash", hex64(file_hash(data_dir + "/qa.ndjson"))}});
  cotrain::write_log_csv(log, out + "/train_log.csv");

  Json eff = cfg;
  eff["train"]["seed"] = seed;
  write_run_manifest(out, stage2 ? "posttrain" : "pretrain", eff,
                     Json{{"qa_hash", hex64(file_hash(data_dir + "/qa.ndjson"))},
                          {"episodes_hash", hex64(file_hash(data_dir + "/episodes.ndjson"))},
                          {"resume", resume}},
                     Json{{"checkpoint", ckpt},
                          {"checkpoint_hash", hex64(file_hash(ckpt))}},
                     wall);
  std::cout << (stage2 ? "posttrain" : "pretrain") << ": " << tc.steps << " steps -> " << ckpt
            << "\n";
  return kOk;
}

int cmd_eval(const Args& args) {
  const std::string ckpt = require_flag(args, "ckpt");
  if (!fs::exists(ckpt)) throw MissingInputError("checkpoint not found: " + ckpt);
  const std::string split_name = flag_or(args, "split", "ID");
  const int episodes = std::stoi(flag_or(args, "episodes", "20"));
  const std::string out = flag_or(args, "out", "eval_out");
  fs::create_directories(out);

  auto m = model::load_checkpoint(ckpt);
  evalbench::ModelPolicy policy(*m);

  evalbench::SuiteOptions so;
  const uint64_t seed = effective_seed(args, Json::object(), 7);
  const auto t0 = std::chrono::steady_clock::now();
  const evalbench::SplitResult res =
      evalbench::eval_suite(policy, task::split_from_name(split_name), episodes, seed, so);

  std::optional<evalbench::GroundingMetrics> gm;
  const std::string qa_path = flag_or(args, "qa", "");
  if (!qa_path.empty()) {
    if (!fs::exists(qa_path)) throw MissingInputError("qa dataset not found: " + qa_path);
    const auto records = dataset::load_qa_records(qa_path);
    gm = evalbench::eval_grounding(m->planner(), records);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const Json info{{"checkpoint", ckpt},
                  {"checkpoint_hash", hex64(file_hash(ckpt))},
                  {"split", split_name},
                  {"episodes", episodes},
                  {"seed", seed}};
  evalbench::write_report({res}, gm ? &*gm : nullptr, out, info);
  write_run_manifest(out, "eval", info, Json{{"ckpt_hash", hex64(file_hash(ckpt))}},
                     Json{{"report", out + "/report.json"}}, wall);
  std::cout << "eval " << split_name << ": SR " << res.sr << " (" << res.successes << "/"
            << res.n << ")\n";
  return kOk;
}

int cmd_pss(const Args& args) {
  const std::string pa = require_flag(args, "grads-a");
  const std::string pb = require_flag(args, "grads-b");
  if (!fs::exists(pa)) throw MissingInputError("gradient dump not found: " + pa);
  if (!fs::exists(pb)) throw MissingInputError("gradient dump not found: " + pb);
  const int rank = std::stoi(flag_or(args, "rank", std::to_string(cotrain::kDefaultPssRank)));

  const cotrain::GradMatrix a = cotrain::load_grad_matrix(pa);
  const cotrain::GradMatrix b = cotrain::load_grad_matrix(pb);
  const double value = cotrain::pss(a, b, rank);

  const Json j{{"r", rank},
               {"n_steps_a", a.rows.rows()},
               {"n_steps_b", b.rows.rows()},
               {"objective_a", a.objective},
               {"objective_b", b.objective},
               {"pss", value},
               {"config_hash", hex64(fnv1a(pa + "|" + pb + "|" + std::to_string(rank)))}};
  const std::string out = flag_or(args, "out", "");
  if (!out.empty()) {
    std::ofstream f(out);
    f << j.dump(2) << "\n";
  }
  std::cout << j.dump(2) << "\n";
  return kOk;
}

int cmd_report(const Args& args) {
  std::vector<std::string> runs;
  for (const auto& p : args.positional)
    if (p.find('=') == std::string::npos) runs.push_back(p);
  const auto it = args.flags.find("runs");
  if (it != args.flags.end()) runs.push_back(it->second);
  if (runs.empty()) throw ConfigParseError("report needs run directories");

  Json combined = Json::array();
  for (const auto& dir : runs) {
    const std::string path = dir + "/report.json";
    if (!fs::exists(path)) throw MissingInputError("no report.json under " + dir);
    std::ifstream f(path);
    Json j;
    f >> j;
    j["run_dir"] = dir;
    combined.push_back(j);
  }
  const std::string out = flag_or(args, "out", "combined_report.json");
  std::ofstream f(out);
  f << combined.dump(2) << "\n";
  std::cout << "report: merged " << runs.size() << " runs -> " << out << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv) {
  Args args;
  try {
    args = parse_args(argc, argv);
  } catch (const ConfigParseError& e) {
    std::cerr << e.what() << "\n";
    return kConfigParse;
  }

  try {
    if (args.command == "gen-data") return cmd_gen_data(args);
    if (args.command == "pretrain") return cmd_train(args, false);
    if (args.command == "posttrain") return cmd_train(args, true);
    if (args.command == "eval") return cmd_eval(args);
    if (args.command == "pss") return cmd_pss(args);
    if (args.command == "report") return cmd_report(args);
    std::cerr << "unknown command: " << args.command << "\n";
    return kUnknownCommand;
  } catch (const ConfigParseError& e) {
    std::cerr << e.what() << "\n";
    return kConfigParse;
  } catch (const MissingInputError& e) {
    std::cerr << e.what() << "\n";
    return kMissingInput;
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return kRuntimeError;
  }
}

}  // namespace vla::cli
