#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ciem/frontend.hpp"
#include "ciem/nncore.hpp"

namespace ciem {

/// Mean of trunk outputs over the frames of a speaker or an utterance.
struct Embedding {
  std::string id;
  std::vector<float> vector;
  std::size_t frames = 0;

  std::size_t dim() const noexcept { return vector.size(); }
};

template <typename T>
Embedding extract_embedding(const Network<T>& trunk, const Matrix<T>& frames,
                            std::string id = {});
Embedding extract_embedding(const Network<float>& trunk, const FeatureMatrix& frames,
                            std::string id = {});

enum class EnrollPooling {
  kFrames,          // average over every enrollment frame
  kUtteranceMeans,  // average of per-utterance embeddings
};

Embedding enroll_speaker(const Network<float>& trunk, std::span<const Matrix<float>> utterances,
                         EnrollPooling pooling = EnrollPooling::kFrames, std::string id = {});

/// a.b / (|a||b|), clamped to [-1, 1]. Zero-norm input is a DataError.
double cosine_score(std::span<const float> a, std::span<const float> b);
double cosine_score(const Embedding& a, const Embedding& b);

struct TrialRecord {
  std::string speaker;
  std::string utterance;
  bool is_target = false;
  std::optional<double> score;
};

struct EerResult {
  double eer = 0.0;
  double threshold = 0.0;
  std::size_t targets = 0;
  std::size_t impostors = 0;
};

/// Operating point at threshold t: accept when score >= t.
struct DetPoint {
  double threshold = 0.0;
  double far = 0.0;
  double frr = 0.0;
};

/// One point per distinct score plus the reject-all point at +inf.
std::vector<DetPoint> det_points(std::span<const TrialRecord> trials);

/// FAR = FRR crossing, linearly interpolated between adjacent operating
/// points; an exact crossing at several thresholds reports the lowest.
EerResult compute_eer(std::span<const TrialRecord> trials);

struct StratifiedResult {
  std::vector<std::pair<std::string, std::optional<EerResult>>> strata;
  EerResult total;
};

/// Per-stratum EER (trials grouped by the test utterance's strata) plus the
/// pooled total. Strata lacking targets or impostors are reported empty.
StratifiedResult stratified_eval(
    std::span<const TrialRecord> trials,
    const std::map<std::string, std::vector<std::string>>& strata_by_utterance,
    const std::vector<std::string>& preferred_order = {});

/// CSV: header "system,<strata...>,Total"; one row of EER percentages.
void write_eer_report(std::ostream& os, const std::string& system, const StratifiedResult& r);

/// Lines "<speaker> <utterance> target|nontarget".
std::vector<TrialRecord> read_trials(std::istream& is);
std::vector<TrialRecord> load_trials(const std::filesystem::path& path);
/// Same lines with the score appended using 6 decimals.
void write_scores(std::ostream& os, std::span<const TrialRecord> trials);
std::vector<TrialRecord> read_scores(std::istream& is);

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

/// "CIEV" | version u32 | dim u32 | count u32 | per entry: id length u16,
/// UTF-8 id, dim f32.
void write_embeddings(std::ostream& os, std::span<const Embedding> embeddings);
std::vector<Embedding> read_embeddings(std::istream& is);
void save_embeddings(const std::filesystem::path& path, std::span<const Embedding> embeddings);
std::vector<Embedding> load_embeddings(const std::filesystem::path& path);

}  // namespace ciem
