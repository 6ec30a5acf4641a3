#pragma once

#include <atomic>
#include <exception>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include <nlohmann/json.hpp>

#include "ciem/config.hpp"

namespace ciem {

inline constexpr std::string_view kToolVersion = "0.1.0";

std::string sha256_hex(std::string_view bytes);
std::string file_sha256(const std::filesystem::path& path);

/// Provenance record of one stage, written atomically at completion.
struct RunManifest {
  std::string tool_version;
  std::string stage;
  std::string config_hash;
  std::map<std::string, std::string> input_hashes;
  std::vector<std::string> outputs;
  std::string started;
  std::string finished;
  std::string outcome;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static RunManifest from_json(const nlohmann::json& j);
};

struct ProbeRow {
  std::string factor;  // "env" or "snr"
  ProbeResult result;
  std::optional<ProbeResult> compare;
};

struct StageResult {
  std::string stage;
  bool skipped = false;
  std::vector<std::string> warnings;
  std::vector<std::filesystem::path> outputs;
  std::optional<double> eer;
  std::vector<ProbeRow> probes;
};

struct StageOptions {
  bool force = false;  // rerun even when the run manifest says up to date
};

std::filesystem::path feature_path(const ExperimentConfig& cfg, const std::string& utterance_id);
std::filesystem::path default_model_path(const ExperimentConfig& cfg, TrainMode mode);
std::filesystem::path enrollment_path(const ExperimentConfig& cfg,
                                      const std::filesystem::path& model);

/// Synthetic corpus: train / enroll / test manifests, trial list and
/// normalized feature files.
StageResult cmd_toy(const ExperimentConfig& cfg, const StageOptions& opts = {});

struct SimulateOptions {
  std::optional<std::filesystem::path> input;   // default paths.clean_manifest
  std::optional<std::filesystem::path> output;  // default paths.train_manifest
  bool force = false;
};
StageResult cmd_simulate(const ExperimentConfig& cfg, const SimulateOptions& opts = {});

/// fbank -> deltas -> splice -> CMVN for the train, enroll and test
/// manifests. Statistics are fitted on the training manifest only; with
/// `eval_only` they must already exist.
StageResult cmd_featurize(const ExperimentConfig& cfg, bool eval_only = false,
                          const StageOptions& opts = {});

struct TrainOptions {
  TrainMode mode = TrainMode::kBaseline;
  std::optional<std::filesystem::path> warm_start;
  std::optional<std::filesystem::path> output;
  bool force = false;
};
StageResult cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts);

StageResult cmd_enroll(const ExperimentConfig& cfg, const std::filesystem::path& model,
                       const StageOptions& opts = {});

StageResult cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& model,
                     const StageOptions& opts = {});

struct ProbeOptions {
  std::filesystem::path model;
  std::optional<std::filesystem::path> compare;
  std::optional<std::filesystem::path> manifest;  // default paths.test_manifest
  bool force = false;
};
StageResult cmd_probe(const ExperimentConfig& cfg, const ProbeOptions& opts);

/// Runs fn(i) for i in [0, n) on up to `jobs` threads. Callers write results
/// into index-addressed slots, so assembly order never depends on timing.
/// The exception from the lowest failing index is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
  if (jobs <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::mutex mu;
  std::size_t failed_at = n;
  std::exception_ptr failure;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(mu);
        if (i < failed_at) {
          failed_at = i;
          failure = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min(jobs, n); ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace ciem
