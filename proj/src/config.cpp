#include "ciem/config.hpp"

#include <cstdlib>
#include <fstream>

#include "ciem/rng.hpp"

namespace ciem {

using nlohmann::json;

json default_config_json() {
  return json::parse(R"({
  "seed": 0,
  "jobs": 1,
  "paths": {
    "clean_manifest": "",
    "noise_manifest": "",
    "audio_dir": "work/audio",
    "train_manifest": "work/train.jsonl",
    "enroll_manifest": "work/enroll.jsonl",
    "test_manifest": "work/test.jsonl",
    "trials": "work/trials.txt",
    "feature_cache": "work/features",
    "model_dir": "work/models",
    "report_dir": "work/reports"
  },
  "frontend": {
    "n_mels": 29, "win_ms": 25.0, "hop_ms": 10.0, "preemphasis": 0.97,
    "log_floor": 1e-10, "delta_window": 2, "splice_left": 25, "splice_right": 25,
    "var_floor": 1e-8
  },
  "mix": {
    "snr_low_db": 0.0, "snr_high_db": 20.0, "environments": [1, 2, 3, 4],
    "copies": 1, "include_clean": true
  },
  "train": {
    "trunk_hidden": [2048, 1024, 1024, 512, 200],
    "head_hidden": [512, 512],
    "env_lambda": 1.5,
    "snr_lambda": 0.002,
    "env_classes": 0,
    "minibatch": 256,
    "epochs": 10,
    "lr": 0.01,
    "lr_decay": 1.0,
    "lr_decay_every": 1,
    "clean_snr_target_db": 40.0,
    "warm_start": true,
    "numeric": "float32"
  },
  "probe": {
    "hidden": [64], "epochs": 60, "lr": 0.02, "minibatch": 64, "holdout": 0.3
  },
  "eval": {
    "pooling": "frames",
    "strata_order": ["Quiet", "TV", "Music", "1m", "3m", "5m"]
  },
  "toy": {
    "n_speakers": 16, "eval_speakers": 8, "n_envs": 3, "dim": 20,
    "frames_per_utt": 20, "utts_per_speaker": 12, "enroll_utts": 3,
    "centroid_scale": 1.0, "env_offset_scale": 1.0, "noise_std": 0.5
  }
})");
}

namespace {

void merge_known(json& dst, const json& src, const std::string& prefix) {
  if (!src.is_object()) throw ConfigError("config section '" + prefix + "' must be an object");
  for (const auto& [key, value] : src.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!dst.contains(key)) throw ConfigError("unknown config key '" + path + "'");
    if (dst[key].is_object()) {
      merge_known(dst[key], value, path);
    } else {
      dst[key] = value;
    }
  }
}

template <typename T>
T get(const json& j, const char* key, const std::string& section) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config key '" + section + "." + key + "': " + e.what());
  }
}

}  // namespace

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("--set expects <dotted.key>=<value>, got '" + assignment + "'");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? dot : dot - start);
    if (!node->is_object() || !node->contains(part)) {
      throw ConfigError("unknown config key '" + key + "'");
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("cannot assign to config section '" + key + "'");
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = std::move(value);
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  ExperimentConfig c;
  c.json = j;
  c.seed = get<std::uint64_t>(j, "seed", "");
  c.jobs = get<std::size_t>(j, "jobs", "");
  if (c.jobs == 0) throw ConfigError("jobs must be >= 1");

  const auto& p = j.at("paths");
  c.paths.clean_manifest = get<std::string>(p, "clean_manifest", "paths");
  c.paths.noise_manifest = get<std::string>(p, "noise_manifest", "paths");
  c.paths.audio_dir = get<std::string>(p, "audio_dir", "paths");
  c.paths.train_manifest = get<std::string>(p, "train_manifest", "paths");
  c.paths.enroll_manifest = get<std::string>(p, "enroll_manifest", "paths");
  c.paths.test_manifest = get<std::string>(p, "test_manifest", "paths");
  c.paths.trials = get<std::string>(p, "trials", "paths");
  c.paths.feature_cache = get<std::string>(p, "feature_cache", "paths");
  c.paths.model_dir = get<std::string>(p, "model_dir", "paths");
  c.paths.report_dir = get<std::string>(p, "report_dir", "paths");

  const auto& f = j.at("frontend");
  c.frontend.n_mels = get<int>(f, "n_mels", "frontend");
  c.frontend.win_ms = get<double>(f, "win_ms", "frontend");
  c.frontend.hop_ms = get<double>(f, "hop_ms", "frontend");
  c.frontend.preemphasis = get<double>(f, "preemphasis", "frontend");
  c.frontend.log_floor = get<double>(f, "log_floor", "frontend");
  c.frontend.delta_window = get<int>(f, "delta_window", "frontend");
  c.frontend.splice_left = get<int>(f, "splice_left", "frontend");
  c.frontend.splice_right = get<int>(f, "splice_right", "frontend");
  c.frontend.var_floor = get<double>(f, "var_floor", "frontend");
  c.frontend.validate();

  const auto& m = j.at("mix");
  c.mix.snr_low_db = get<double>(m, "snr_low_db", "mix");
  c.mix.snr_high_db = get<double>(m, "snr_high_db", "mix");
  c.mix.environments = get<std::vector<int>>(m, "environments", "mix");
  c.mix.copies = get<std::size_t>(m, "copies", "mix");
  c.mix.include_clean = get<bool>(m, "include_clean", "mix");
  c.mix.seed = derive_seed(c.seed, "mix");
  c.mix.validate();

  const auto& t = j.at("train");
  c.train.trunk_hidden = get<std::vector<std::size_t>>(t, "trunk_hidden", "train");
  c.train.head_hidden = get<std::vector<std::size_t>>(t, "head_hidden", "train");
  c.train.env_lambda = get<double>(t, "env_lambda", "train");
  c.train.snr_lambda = get<double>(t, "snr_lambda", "train");
  c.train.env_classes = get<std::size_t>(t, "env_classes", "train");
  c.train.minibatch = get<std::size_t>(t, "minibatch", "train");
  c.train.epochs = get<std::size_t>(t, "epochs", "train");
  c.train.lr = get<double>(t, "lr", "train");
  c.train.lr_decay = get<double>(t, "lr_decay", "train");
  c.train.lr_decay_every = get<std::size_t>(t, "lr_decay_every", "train");
  c.train.clean_snr_target_db = get<double>(t, "clean_snr_target_db", "train");
  c.train.warm_start = get<bool>(t, "warm_start", "train");
  const auto numeric = get<std::string>(t, "numeric", "train");
  if (numeric == "float32") {
    c.train.numeric = NumericMode::kFloat32;
  } else if (numeric == "float64") {
    c.train.numeric = NumericMode::kFloat64;
  } else {
    throw ConfigError("train.numeric must be float32 or float64");
  }
  if (c.train.trunk_hidden.empty()) throw ConfigError("train.trunk_hidden is empty");
  if (!(c.train.env_lambda >= 0) || !(c.train.snr_lambda >= 0)) {
    throw ConfigError("lambda values must be >= 0");
  }

  const auto& pr = j.at("probe");
  c.probe.hidden = get<std::vector<std::size_t>>(pr, "hidden", "probe");
  c.probe.epochs = get<std::size_t>(pr, "epochs", "probe");
  c.probe.lr = get<double>(pr, "lr", "probe");
  c.probe.minibatch = get<std::size_t>(pr, "minibatch", "probe");
  c.probe.holdout = get<double>(pr, "holdout", "probe");
  c.probe.seed = derive_seed(c.seed, "probe");

  const auto& ev = j.at("eval");
  const auto pooling = get<std::string>(ev, "pooling", "eval");
  if (pooling == "frames") {
    c.eval.pooling = EnrollPooling::kFrames;
  } else if (pooling == "utterances") {
    c.eval.pooling = EnrollPooling::kUtteranceMeans;
  } else {
    throw ConfigError("eval.pooling must be 'frames' or 'utterances'");
  }
  c.eval.strata_order = get<std::vector<std::string>>(ev, "strata_order", "eval");

  const auto& ty = j.at("toy");
  c.toy.spec.n_speakers = get<std::size_t>(ty, "n_speakers", "toy");
  c.toy.eval_speakers = get<std::size_t>(ty, "eval_speakers", "toy");
  c.toy.spec.n_envs = get<std::size_t>(ty, "n_envs", "toy");
  c.toy.spec.dim = get<std::size_t>(ty, "dim", "toy");
  c.toy.spec.frames_per_utt = get<std::size_t>(ty, "frames_per_utt", "toy");
  c.toy.spec.utts_per_speaker = get<std::size_t>(ty, "utts_per_speaker", "toy");
  c.toy.enroll_utts = get<std::size_t>(ty, "enroll_utts", "toy");
  c.toy.spec.centroid_scale = get<double>(ty, "centroid_scale", "toy");
  c.toy.spec.env_offset_scale = get<double>(ty, "env_offset_scale", "toy");
  c.toy.spec.noise_std = get<double>(ty, "noise_std", "toy");
  c.toy.spec.seed = derive_seed(c.seed, "toy");
  return c;
}

ExperimentConfig load_config(const std::optional<std::filesystem::path>& file,
                             const std::vector<std::string>& overrides,
                             std::optional<std::uint64_t> seed,
                             std::optional<std::size_t> jobs) {
  json doc = default_config_json();
  if (file) {
    std::ifstream is(*file);
    if (!is) throw ConfigError("cannot open config file " + file->string());
    json user = json::parse(is, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config file " + file->string() + " is not valid JSON");
    merge_known(doc, user, "");
  }
  for (const auto& o : overrides) apply_override(doc, o);
  if (seed) doc["seed"] = *seed;
  if (jobs) doc["jobs"] = *jobs;
  if (const char* cache = std::getenv("CIEM_CACHE_DIR"); cache != nullptr && *cache != '\0') {
    doc["paths"]["feature_cache"] = cache;
  }
  return ExperimentConfig::from_json(doc);
}

}  // namespace ciem
