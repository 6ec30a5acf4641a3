#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciem/frontend.hpp"
#include "ciem/noisemix.hpp"
#include "ciem/trainer.hpp"
#include "ciem/verify.hpp"

namespace ciem {

struct PathsConfig {
  std::string clean_manifest;
  std::string noise_manifest;
  std::string audio_dir;
  std::string train_manifest;
  std::string enroll_manifest;
  std::string test_manifest;
  std::string trials;
  std::string feature_cache;
  std::string model_dir;
  std::string report_dir;
};

/// Training hyperparameters as exposed in the config file. Label-space sizes
/// (input dim, speaker count, environment classes) come from the data.
struct TrainSection {
  std::vector<std::size_t> trunk_hidden{2048, 1024, 1024, 512, 200};
  std::vector<std::size_t> head_hidden{512, 512};
  double env_lambda = 1.5;
  double snr_lambda = 0.002;
  std::size_t env_classes = 0;  // 0: infer from the training manifest
  std::size_t minibatch = 256;
  std::size_t epochs = 10;
  double lr = 0.01;
  double lr_decay = 1.0;
  std::size_t lr_decay_every = 1;
  double clean_snr_target_db = 40.0;
  bool warm_start = true;
  NumericMode numeric = NumericMode::kFloat32;
};

struct EvalSection {
  EnrollPooling pooling = EnrollPooling::kFrames;
  std::vector<std::string> strata_order{"Quiet", "TV", "Music", "1m", "3m", "5m"};
};

struct ToySection {
  ToySpec spec;
  std::size_t eval_speakers = 8;
  std::size_t enroll_utts = 3;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::size_t jobs = 1;
  PathsConfig paths;
  FrontendOptions frontend;
  MixSpec mix;
  TrainSection train;
  ProbeSpec probe;
  EvalSection eval;
  ToySection toy;

  nlohmann::json json;  // merged document the typed fields were read from

  static ExperimentConfig from_json(const nlohmann::json& j);
};

nlohmann::json default_config_json();

/// Applies "a.b.c=value". The value is parsed as JSON when possible and taken
/// as a string otherwise; unknown keys are a ConfigError.
void apply_override(nlohmann::json& doc, const std::string& assignment);

/// Defaults <- config file <- --set overrides <- --seed/--jobs flags; the
/// CIEM_CACHE_DIR environment variable replaces paths.feature_cache.
ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed = std::nullopt,
                             std::optional<std::size_t> jobs = std::nullopt);

}  // namespace ciem
