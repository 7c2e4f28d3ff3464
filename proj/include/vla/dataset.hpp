#pragma once

#include <string>
#include <vector>

#include "vla/model.hpp"
#include "vla/qa.hpp"
#include "vla/task_synth.hpp"

namespace vla::dataset {

// Appearance seed pools. Training splits share one pool; new-background draws
// from a disjoint pool so backgrounds are genuinely unseen.
inline constexpr int kAppearancePoolSize = 64;
uint64_t appearance_seed_for(task::Split split, Rng& rng);

struct GenConfig {
  int episodes{100};
  task::Split split{task::Split::ID};
  int n_objects{3};
  int n_containers{2};
  int qa_per_episode{3};
  uint64_t seed{1};
  double action_noise{0.008};
  int pad_len{task::kDefaultPadLen};
  double idle_threshold{task::kDefaultIdleThreshold};
  int max_steps{task::kMaxEpisodeSteps};
  bool materialize_obs{false};
  // Bias QA emission toward box records (grounding-focused corpora).
  bool grounding_focus{false};

  Json to_json() const;
  static GenConfig from_json(const Json& j);
};

struct GenStats {
  int episodes_written{0};
  int steps_written{0};
  int qa_written{0};
  int rejected{0};
  std::string episodes_hash;
  std::string qa_hash;
};

// Writes episodes.ndjson (one record per step), qa.ndjson and manifest.json.
GenStats gen_corpus(const GenConfig& cfg, const std::string& out_dir);

Json load_manifest(const std::string& dir);
std::vector<qa::QARecord> load_qa_records(const std::string& path);
std::vector<model::QASample> qa_to_samples(const std::vector<qa::QARecord>& records);

struct RobotLoadOptions {
  int horizon{16};
  int window_stride{2};
  bool spatial_prompt{true};
};

// Chunk windows over the padded step stream; windows past the episode end are
// zero-filled (the robot idles after finishing).
std::vector<model::RobotSample> load_robot_windows(const std::string& dir,
                                                   const RobotLoadOptions& opts);

// Serialization helpers shared with tests.
Json qa_record_to_json(const qa::QARecord& rec);
qa::QARecord qa_record_from_json(const Json& j);

}  // namespace vla::dataset
