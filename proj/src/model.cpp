#include "vla/model.hpp"

#include <cstring>
#include <fstream>

namespace vla::model {

void ModelConfig::link() {
  connector.d_model = planner.d_model;
  expert.cond_dim = planner.d_model;
}

Json ModelConfig::to_json() const {
  return Json{
      {"planner",
       Json{{"n_layers", planner.n_layers},
            {"d_model", planner.d_model},
            {"n_heads", planner.n_heads},
            {"context", planner.context},
            {"patch", planner.patch},
            {"image_size", planner.image_size}}},
      {"connector",
       Json{{"n_queries", connector.n_queries},
            {"k_layers", connector.k_layers},
            {"gamma", connector.gamma},
            {"n_heads", connector.n_heads}}},
      {"expert",
       Json{{"horizon", expert.horizon},
            {"d_model", expert.d_model},
            {"n_blocks", expert.n_blocks},
            {"n_heads", expert.n_heads},
            {"vision_channels", expert.vision_channels},
            {"T", expert.T},
            {"beta1", expert.beta1},
            {"betaT", expert.betaT}}},
      {"init_seed", init_seed},
      {"stage", stage},
      {"spatial_prompt", spatial_prompt}};
}

ModelConfig ModelConfig::from_json(const Json& j) {
  ModelConfig c;
  const Json p = j.value("planner", Json::object());
  c.planner.n_layers = p.value("n_layers", c.planner.n_layers);
  c.planner.d_model = p.value("d_model", c.planner.d_model);
  c.planner.n_heads = p.value("n_heads", c.planner.n_heads);
  c.planner.context = p.value("context", c.planner.context);
  c.planner.patch = p.value("patch", c.planner.patch);
  c.planner.image_size = p.value("image_size", c.planner.image_size);
  const Json q = j.value("connector", Json::object());
  c.connector.n_queries = q.value("n_queries", c.connector.n_queries);
  c.connector.k_layers = q.value("k_layers", c.connector.k_layers);
  c.connector.gamma = q.value("gamma", c.connector.gamma);
  c.connector.n_heads = q.value("n_heads", c.connector.n_heads);
  const Json e = j.value("expert", Json::object());
  c.expert.horizon = e.value("horizon", c.expert.horizon);
  c.expert.d_model = e.value("d_model", c.expert.d_model);
  c.expert.n_blocks = e.value("n_blocks", c.expert.n_blocks);
  c.expert.n_heads = e.value("n_heads", c.expert.n_heads);
  c.expert.vision_channels = e.value("vision_channels", c.expert.vision_channels);
  c.expert.T = e.value("T", c.expert.T);
  c.expert.beta1 = e.value("beta1", c.expert.beta1);
  c.expert.betaT = e.value("betaT", c.expert.betaT);
  c.init_seed = j.value("init_seed", c.init_seed);
  c.stage = j.value("stage", c.stage);
  c.spatial_prompt = j.value("spatial_prompt", true);
  c.link();
  return c;
}

UnifiedModel::UnifiedModel(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.link();
  Rng prng(derive_seed(cfg_.init_seed, 0x91a));
  planner_ = std::make_unique<planner::Planner>(cfg_.planner, store_, prng);
  Rng crng(derive_seed(cfg_.init_seed, 0xc0a));
  connector_ = std::make_unique<connector::Connector>(cfg_.connector, store_, crng);
  Rng erng(derive_seed(cfg_.init_seed, 0xe9b));
  expert_ = std::make_unique<expert::ActionExpert>(cfg_.expert, store_, erng);
}

std::vector<int> UnifiedModel::condition_tokens(const std::string& text) {
  std::vector<int> tokens;
  tokens.push_back(planner::Vocab::kBos);
  for (int t : planner::Vocab::tokenize(text)) tokens.push_back(t);
  return tokens;
}

nn::Tape::Ref UnifiedModel::action_loss(nn::Tape& t, const RobotSample& s, Rng& rng,
                                        double gamma) const {
  const sim::Observation obs = sim::render(s.state, s.appearance_seed);
  nn::Tape::Ref img = planner_->encode_image(t, obs);
  planner::Planner::ForwardOut fwd =
      planner_->forward(t, condition_tokens(s.instruction), img);
  nn::Tape::Ref latent = connector_->query_attend(t, fwd.hidden, gamma);
  nn::Tape::Ref visual = expert_->vision_encode(t, obs);
  nn::Tape::Ref state_emb = expert_->encode_state(t, expert::robot_state_vector(s.state));
  nn::Tape::Ref cond = expert_->build_condition(t, latent, visual, state_emb);
  return expert_->diffusion_loss(t, s.chunk, cond, rng);
}

nn::Tape::Ref UnifiedModel::qa_loss(nn::Tape& t, const QASample& s) const {
  const sim::Observation obs = sim::render(s.scene, s.appearance_seed);
  const std::vector<int> prompt = planner::Vocab::tokenize(s.question + kAnswerSep);
  const std::vector<int> answer = planner::Vocab::tokenize(s.answer);

  std::vector<int> full;
  full.push_back(planner::Vocab::kBos);
  full.insert(full.end(), prompt.begin(), prompt.end());
  full.insert(full.end(), answer.begin(), answer.end());
  full.push_back(planner::Vocab::kEos);

  const std::vector<int> inputs(full.begin(), full.end() - 1);
  const std::vector<int> targets(full.begin() + 1, full.end());
  std::vector<uint8_t> mask(targets.size(), 0);
  for (size_t i = prompt.size(); i < targets.size(); ++i) mask[i] = 1;

  nn::Tape::Ref img = planner_->encode_image(t, obs);
  planner::Planner::ForwardOut fwd = planner_->forward(t, inputs, img);
  return planner::Planner::ntp_loss(t, fwd.logits, targets, mask);
}

nn::Mat UnifiedModel::make_condition(const std::string& instruction,
                                     const sim::Observation& obs,
                                     const sim::SceneState& state, double gamma) const {
  nn::Tape t;
  nn::Tape::Ref img = planner_->encode_image(t, obs);
  planner::Planner::ForwardOut fwd = planner_->forward(t, condition_tokens(instruction), img);
  nn::Tape::Ref latent = connector_->query_attend(t, fwd.hidden, gamma);
  nn::Tape::Ref visual = expert_->vision_encode(t, obs);
  nn::Tape::Ref state_emb = expert_->encode_state(t, expert::robot_state_vector(state));
  nn::Tape::Ref cond = expert_->build_condition(t, latent, visual, state_emb);
  return t.val(cond);
}

bool UnifiedModel::ntp_exclusive(const std::string& param_name) {
  // The logits head feeds only the NTP objective.
  return param_name == "planner.out_w" || param_name == "planner.out_b";
}

namespace {
constexpr char kMagic[4] = {'V', 'L', 'A', '1'};
constexpr uint32_t kVersion = 1;
}  // namespace

void save_checkpoint(const UnifiedModel& model, const std::string& path,
                     const Json& provenance) {
  Json header;
  header["config"] = model.config().to_json();
  header["provenance"] = provenance;
  Json tensors = Json::array();
  for (const auto& p : model.params().all()) {
    tensors.push_back(Json{{"name", p->name},
                           {"rows", p->value.rows()},
                           {"cols", p->value.cols()}});
  }
  header["tensors"] = tensors;
  const std::string hdr = header.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open " + path + " for writing");
  f.write(kMagic, 4);
  const uint32_t ver = kVersion;
  f.write(reinterpret_cast<const char*>(&ver), 4);
  const uint64_t n = hdr.size();
  f.write(reinterpret_cast<const char*>(&n), 8);
  f.write(hdr.data(), static_cast<std::streamsize>(hdr.size()));
  for (const auto& p : model.params().all()) {
    f.write(reinterpret_cast<const char*>(p->value.data()),
            static_cast<std::streamsize>(sizeof(double) * p->value.size()));
  }
  if (!f) throw CheckpointError("write failed: " + path);
}

namespace {

Json read_header(std::ifstream& f, const std::string& path) {
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw CheckpointError("not a checkpoint file: " + path);
  uint32_t ver = 0;
  f.read(reinterpret_cast<char*>(&ver), 4);
  if (ver != kVersion)
    throw CheckpointError("checkpoint version mismatch in " + path);
  uint64_t n = 0;
  f.read(reinterpret_cast<char*>(&n), 8);
  std::string hdr(n, '\0');
  f.read(hdr.data(), static_cast<std::streamsize>(n));
  if (!f) throw CheckpointError("truncated checkpoint header: " + path);
  try {
    return Json::parse(hdr);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError("corrupt checkpoint header: " + std::string(e.what()));
  }
}

}  // namespace

Json checkpoint_header(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("missing checkpoint: " + path);
  return read_header(f, path);
}

std::unique_ptr<UnifiedModel> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("missing checkpoint: " + path);
  const Json header = read_header(f, path);
  auto model = std::make_unique<UnifiedModel>(ModelConfig::from_json(header.at("config")));

  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name");
    const int rows = tj.at("rows");
    const int cols = tj.at("cols");
    nn::Param* p = model->params().find(name);
    if (!p) throw CheckpointError("checkpoint tensor has no parameter: " + name);
    if (p->value.rows() != rows || p->value.cols() != cols)
      throw CheckpointError("tensor shape mismatch for " + name);
    f.read(reinterpret_cast<char*>(p->value.data()),
           static_cast<std::streamsize>(sizeof(double) * p->value.size()));
    if (!f) throw CheckpointError("truncated checkpoint tensors: " + path);
  }
  return model;
}

void load_planner_weights(UnifiedModel& model, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("missing checkpoint: " + path);
  const Json header = read_header(f, path);
  for (const auto& tj : header.at("tensors")) {
    const std::string name = tj.at("name");
    const int rows = tj.at("rows");
    const int cols = tj.at("cols");
    const size_t bytes = sizeof(double) * static_cast<size_t>(rows) * cols;
    if (name.rfind("planner.", 0) == 0) {
      nn::Param* p = model.params().find(name);
      if (!p) throw CheckpointError("planner tensor missing in target model: " + name);
      if (p->value.rows() != rows || p->value.cols() != cols)
        throw CheckpointError("planner tensor shape mismatch for " + name);
      f.read(reinterpret_cast<char*>(p->value.data()), static_cast<std::streamsize>(bytes));
    } else {
      f.seekg(static_cast<std::streamoff>(bytes), std::ios::cur);
    }
    if (!f) throw CheckpointError("truncated checkpoint tensors: " + path);
  }
}

}  // namespace vla::model
