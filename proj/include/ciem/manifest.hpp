#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ciem {

/// One utterance: identity, condition labels and where its data lives.
/// Clean utterances carry env 0, clean = true and no SNR value.
struct UtteranceMeta {
  std::string id;
  std::string speaker;
  int env = 0;
  std::optional<double> snr_db;
  bool clean = false;
  std::string path;
  // Evaluation strata (e.g. "Music", "3m"); optional in the JSON record.
  std::vector<std::string> strata;

  /// SNR regression target; clean utterances map to `clean_ceiling_db`.
  double snr_target(double clean_ceiling_db = 40.0) const;
  void validate() const;
  friend bool operator==(const UtteranceMeta&, const UtteranceMeta&) = default;
};

/// JSON Lines, keys {id, speaker, env, snr_db, clean, path[, strata]}.
/// snr_db is null for clean utterances.
std::string to_jsonl_line(const UtteranceMeta& m);
UtteranceMeta from_jsonl_line(const std::string& line);

void write_manifest(std::ostream& os, const std::vector<UtteranceMeta>& metas);
std::vector<UtteranceMeta> read_manifest(std::istream& is);
void save_manifest(const std::filesystem::path& path, const std::vector<UtteranceMeta>& metas);
std::vector<UtteranceMeta> load_manifest(const std::filesystem::path& path);

/// Strata of a test utterance: explicit tags if present, otherwise one tag
/// derived from its environment ("clean" or "env<k>").
std::vector<std::string> strata_of(const UtteranceMeta& m);

}  // namespace ciem
