#include "ciem/verify.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <set>
#include <sstream>

#include "ciem/binary_io.hpp"

namespace ciem {

namespace {

template <typename T>
void accumulate_outputs(const Network<T>& trunk, const Matrix<T>& frames,
                        std::vector<double>& sum) {
  const auto pass = forward(trunk, frames);
  const auto& out = pass.output();
  if (sum.empty()) sum.assign(out.cols(), 0.0);
  for (std::size_t t = 0; t < out.rows(); ++t) {
    const auto r = out.row(t);
    for (std::size_t j = 0; j < r.size(); ++j) sum[j] += static_cast<double>(r[j]);
  }
}

Embedding finish_mean(std::vector<double> sum, std::size_t frames, std::string id) {
  Embedding e;
  e.id = std::move(id);
  e.frames = frames;
  e.vector.resize(sum.size());
  for (std::size_t j = 0; j < sum.size(); ++j) {
    e.vector[j] = static_cast<float>(sum[j] / static_cast<double>(frames));
  }
  return e;
}

}  // namespace

template <typename T>
Embedding extract_embedding(const Network<T>& trunk, const Matrix<T>& frames, std::string id) {
  if (frames.rows() == 0) throw DataError("cannot embed an utterance with no frames");
  std::vector<double> sum;
  accumulate_outputs(trunk, frames, sum);
  return finish_mean(std::move(sum), frames.rows(), std::move(id));
}

template Embedding extract_embedding<float>(const Network<float>&, const Matrix<float>&,
                                            std::string);
template Embedding extract_embedding<double>(const Network<double>&, const Matrix<double>&,
                                             std::string);

Embedding extract_embedding(const Network<float>& trunk, const FeatureMatrix& frames,
                            std::string id) {
  return extract_embedding(trunk, frames.values, std::move(id));
}

Embedding enroll_speaker(const Network<float>& trunk, std::span<const Matrix<float>> utterances,
                         EnrollPooling pooling, std::string id) {
  if (utterances.empty()) throw DataError("enrollment needs at least one utterance");
  if (pooling == EnrollPooling::kFrames) {
    std::vector<double> sum;
    std::size_t frames = 0;
    for (const auto& u : utterances) {
      if (u.rows() == 0) throw DataError("enrollment utterance with no frames");
      accumulate_outputs(trunk, u, sum);
      frames += u.rows();
    }
    return finish_mean(std::move(sum), frames, std::move(id));
  }
  std::vector<double> sum;
  std::size_t frames = 0;
  for (const auto& u : utterances) {
    const auto e = extract_embedding(trunk, u);
    if (sum.empty()) sum.assign(e.dim(), 0.0);
    for (std::size_t j = 0; j < e.dim(); ++j) sum[j] += e.vector[j];
    frames += e.frames;
  }
  Embedding e = finish_mean(std::move(sum), utterances.size(), std::move(id));
  e.frames = frames;
  return e;
}

double cosine_score(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    throw ShapeError("cosine_score: dims " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double x = a[i], y = b[i];
    dot += x * y;
    na += x * x;
    nb += y * y;
  }
  if (!(na > 0.0) || !(nb > 0.0)) {
    throw DataError("cosine_score: zero-norm embedding (degenerate model?)");
  }
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_score(const Embedding& a, const Embedding& b) {
  return cosine_score(a.vector, b.vector);
}

namespace {

struct SortedScores {
  std::vector<std::pair<double, bool>> items;  // ascending score
  std::size_t targets = 0;
  std::size_t impostors = 0;
};

SortedScores sort_scores(std::span<const TrialRecord> trials) {
  SortedScores s;
  s.items.reserve(trials.size());
  for (const auto& t : trials) {
    if (!t.score) {
      throw DataError("trial " + t.speaker + " " + t.utterance + " has no score");
    }
    if (!std::isfinite(*t.score)) throw DataError("non-finite trial score");
    s.items.emplace_back(*t.score, t.is_target);
    (t.is_target ? s.targets : s.impostors) += 1;
  }
  if (s.targets == 0 || s.impostors == 0) {
    throw DataError("EER needs at least one target and one impostor trial");
  }
  std::sort(s.items.begin(), s.items.end(),
            [](const auto& x, const auto& y) { return x.first < y.first; });
  return s;
}

}  // namespace

std::vector<DetPoint> det_points(std::span<const TrialRecord> trials) {
  const auto s = sort_scores(trials);
  const double nt = static_cast<double>(s.targets);
  const double ni = static_cast<double>(s.impostors);
  std::vector<DetPoint> pts;
  std::size_t targets_below = 0, impostors_below = 0;
  std::size_t i = 0;
  while (i < s.items.size()) {
    const double thr = s.items[i].first;
    pts.push_back({thr, static_cast<double>(s.impostors - impostors_below) / ni,
                   static_cast<double>(targets_below) / nt});
    for (; i < s.items.size() && s.items[i].first == thr; ++i) {
      (s.items[i].second ? targets_below : impostors_below) += 1;
    }
  }
  pts.push_back({std::numeric_limits<double>::infinity(), 0.0, 1.0});
  return pts;
}

EerResult compute_eer(std::span<const TrialRecord> trials) {
  const auto pts = det_points(trials);
  EerResult r;
  for (const auto& t : trials) (t.is_target ? r.targets : r.impostors) += 1;
  for (std::size_t k = 0; k < pts.size(); ++k) {
    const double d = pts[k].far - pts[k].frr;
    if (d > 0.0) continue;
    if (d == 0.0 || k == 0) {
      r.eer = pts[k].far;
      r.threshold = pts[k].threshold;
      return r;
    }
    const auto& a = pts[k - 1];
    const auto& b = pts[k];
    const double da = a.far - a.frr;
    const double alpha = da / (da - d);
    r.eer = a.far + alpha * (b.far - a.far);
    r.threshold = std::isinf(b.threshold) ? a.threshold
                                          : a.threshold + alpha * (b.threshold - a.threshold);
    return r;
  }
  // The +inf point always has FAR - FRR = -1, so the loop returns.
  throw DataError("EER sweep found no crossing");
}

StratifiedResult stratified_eval(
    std::span<const TrialRecord> trials,
    const std::map<std::string, std::vector<std::string>>& strata_by_utterance,
    const std::vector<std::string>& preferred_order) {
  std::map<std::string, std::vector<TrialRecord>> groups;
  for (const auto& t : trials) {
    const auto it = strata_by_utterance.find(t.utterance);
    if (it == strata_by_utterance.end()) {
      throw DataError("test utterance '" + t.utterance + "' has no condition labels");
    }
    for (const auto& s : it->second) groups[s].push_back(t);
  }
  StratifiedResult r;
  r.total = compute_eer(trials);
  std::vector<std::string> names;
  for (const auto& s : preferred_order) {
    if (groups.contains(s)) names.push_back(s);
  }
  for (const auto& [s, _] : groups) {
    if (std::find(names.begin(), names.end(), s) == names.end()) names.push_back(s);
  }
  for (const auto& name : names) {
    const auto& g = groups[name];
    const bool has_t = std::any_of(g.begin(), g.end(), [](const auto& t) { return t.is_target; });
    const bool has_i = std::any_of(g.begin(), g.end(), [](const auto& t) { return !t.is_target; });
    if (has_t && has_i) {
      r.strata.emplace_back(name, compute_eer(g));
    } else {
      r.strata.emplace_back(name, std::nullopt);
    }
  }
  return r;
}

void write_eer_report(std::ostream& os, const std::string& system, const StratifiedResult& r) {
  os << "system";
  for (const auto& [name, _] : r.strata) os << ',' << name;
  os << ",Total\n" << system;
  std::ostringstream v;
  v << std::fixed << std::setprecision(4);
  for (const auto& [_, e] : r.strata) {
    if (e) {
      v << ',' << 100.0 * e->eer;
    } else {
      v << ",NA";
    }
  }
  v << ',' << 100.0 * r.total.eer << '\n';
  os << v.str();
}

namespace {

TrialRecord parse_trial_fields(std::istringstream& ls, std::size_t lineno) {
  TrialRecord t;
  std::string kind;
  if (!(ls >> t.speaker >> t.utterance >> kind)) {
    throw DataError("trial line " + std::to_string(lineno) + " needs 3 fields");
  }
  if (kind == "target") {
    t.is_target = true;
  } else if (kind != "nontarget") {
    throw DataError("trial line " + std::to_string(lineno) +
                    ": expected target|nontarget, got '" + kind + "'");
  }
  return t;
}

}  // namespace

std::vector<TrialRecord> read_trials(std::istream& is) {
  std::vector<TrialRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    out.push_back(parse_trial_fields(ls, lineno));
  }
  return out;
}

std::vector<TrialRecord> load_trials(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open trial list " + path.string());
  return read_trials(is);
}

void write_scores(std::ostream& os, std::span<const TrialRecord> trials) {
  std::ostringstream line;
  line << std::fixed << std::setprecision(6);
  for (const auto& t : trials) {
    if (!t.score) throw DataError("cannot write an unscored trial");
    line.str("");
    line << t.speaker << ' ' << t.utterance << ' ' << (t.is_target ? "target" : "nontarget")
         << ' ' << *t.score << '\n';
    os << line.str();
  }
}

std::vector<TrialRecord> read_scores(std::istream& is) {
  std::vector<TrialRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::istringstream ls(line);
    auto t = parse_trial_fields(ls, lineno);
    double s = 0.0;
    if (!(ls >> s)) throw DataError("score line " + std::to_string(lineno) + " lacks a score");
    t.score = s;
    out.push_back(std::move(t));
  }
  return out;
}

namespace {
constexpr std::string_view kEmbeddingMagic = "CIEV";
}

void write_embeddings(std::ostream& os, std::span<const Embedding> embeddings) {
  const std::uint32_t dim = embeddings.empty() ? 0 : static_cast<std::uint32_t>(embeddings[0].dim());
  binio::put_magic(os, kEmbeddingMagic);
  binio::put<std::uint32_t>(os, kEmbeddingFormatVersion);
  binio::put<std::uint32_t>(os, dim);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(embeddings.size()));
  for (const auto& e : embeddings) {
    if (e.dim() != dim) throw ShapeError("embeddings in one file must share a dimension");
    if (e.id.size() > 0xffff) throw DataError("embedding id too long");
    binio::put<std::uint16_t>(os, static_cast<std::uint16_t>(e.id.size()));
    os.write(e.id.data(), static_cast<std::streamsize>(e.id.size()));
    binio::put_floats(os, e.vector);
  }
}

std::vector<Embedding> read_embeddings(std::istream& is) {
  binio::expect_magic(is, kEmbeddingMagic);
  const auto version = binio::get<std::uint32_t>(is);
  if (version != kEmbeddingFormatVersion) {
    throw DataError("unsupported embedding format version " + std::to_string(version));
  }
  const auto dim = binio::get<std::uint32_t>(is);
  const auto count = binio::get<std::uint32_t>(is);
  std::vector<Embedding> out(count);
  for (auto& e : out) {
    const auto len = binio::get<std::uint16_t>(is);
    e.id.resize(len);
    if (!is.read(e.id.data(), len)) throw DataError("truncated embedding id");
    e.vector.resize(dim);
    binio::get_floats(is, e.vector);
  }
  return out;
}

void save_embeddings(const std::filesystem::path& path, std::span<const Embedding> embeddings) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_embeddings(os, embeddings);
}

std::vector<Embedding> load_embeddings(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open embeddings " + path.string());
  return read_embeddings(is);
}

}  // namespace ciem
