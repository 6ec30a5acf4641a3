#include "ciem/frontend.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include <nlohmann/json.hpp>

#include "ciem/binary_io.hpp"

namespace ciem {

std::string_view to_string(FeatureStage s) {
  switch (s) {
    case FeatureStage::kFbank:
      return "fbank";
    case FeatureStage::kFbankDelta:
      return "fbank_delta";
    case FeatureStage::kSpliced:
      return "spliced";
    case FeatureStage::kNormalized:
      return "normalized";
  }
  return "unknown";
}

void FrontendOptions::validate() const {
  if (n_mels < 1) throw ConfigError("n_mels must be >= 1");
  if (!(win_ms > 0) || !(hop_ms > 0)) throw ConfigError("window and hop must be positive");
  if (delta_window < 1) throw ConfigError("delta window must be >= 1");
  if (splice_left < 0 || splice_right < 0) throw ConfigError("negative splice context");
  if (!(log_floor > 0) || !(var_floor > 0)) throw ConfigError("floors must be positive");
}

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

namespace {

std::vector<double> mel_points(int n_mels, int sample_rate) {
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> pts(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    pts[i] = top * static_cast<double>(i) / static_cast<double>(n_mels + 1);
  }
  return pts;
}

// Filter weights over FFT bins 0..fft_size/2, triangles in the mel domain.
Matrix<double> mel_filterbank(int n_mels, int sample_rate, std::size_t fft_size) {
  const auto pts = mel_points(n_mels, sample_rate);
  const std::size_t bins = fft_size / 2 + 1;
  Matrix<double> fb(static_cast<std::size_t>(n_mels), bins);
  for (std::size_t k = 0; k < bins; ++k) {
    const double mel =
        hz_to_mel(static_cast<double>(k) * sample_rate / static_cast<double>(fft_size));
    for (int m = 0; m < n_mels; ++m) {
      const double l = pts[m], c = pts[m + 1], r = pts[m + 2];
      double wgt = 0.0;
      if (mel > l && mel < c) {
        wgt = (mel - l) / (c - l);
      } else if (mel >= c && mel < r) {
        wgt = (r - mel) / (r - c);
      }
      fb(static_cast<std::size_t>(m), k) = wgt;
    }
  }
  return fb;
}

}  // namespace

std::vector<double> mel_center_frequencies(int n_mels, int sample_rate) {
  const auto pts = mel_points(n_mels, sample_rate);
  std::vector<double> out;
  for (int m = 0; m < n_mels; ++m) out.push_back(mel_to_hz(pts[m + 1]));
  return out;
}

void fft_radix2(std::span<double> re, std::span<double> im) {
  const std::size_t n = re.size();
  if (im.size() != n || !std::has_single_bit(n)) {
    throw ShapeError("fft size must be a power of two");
  }
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    const double wr = std::cos(ang), wi = std::sin(ang);
    for (std::size_t s = 0; s < n; s += len) {
      double cr = 1.0, ci = 0.0;
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::size_t a = s + k, b = s + k + len / 2;
        const double tr = re[b] * cr - im[b] * ci;
        const double ti = re[b] * ci + im[b] * cr;
        re[b] = re[a] - tr;
        im[b] = im[a] - ti;
        re[a] += tr;
        im[a] += ti;
        const double nr = cr * wr - ci * wi;
        ci = cr * wi + ci * wr;
        cr = nr;
      }
    }
  }
}

std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t hop) {
  if (n_samples < win) return 0;
  return 1 + (n_samples - win) / hop;
}

FeatureMatrix log_mel_fbank(const Waveform& w, const FrontendOptions& opts) {
  w.validate();
  opts.validate();
  const auto win = static_cast<std::size_t>(std::lround(w.sample_rate * opts.win_ms / 1000.0));
  const auto hop = static_cast<std::size_t>(std::lround(w.sample_rate * opts.hop_ms / 1000.0));
  if (win < 2 || hop < 1) throw ConfigError("window too small for sample rate");
  const std::size_t frames = frame_count(w.samples.size(), win, hop);
  if (frames == 0) {
    throw DataError("waveform of " + std::to_string(w.samples.size()) +
                    " samples is shorter than one window (" + std::to_string(win) + ")");
  }
  const std::size_t nfft = std::bit_ceil(win);
  const auto fb = mel_filterbank(opts.n_mels, w.sample_rate, nfft);
  std::vector<double> window(win);
  for (std::size_t i = 0; i < win; ++i) {
    window[i] = 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                       static_cast<double>(win - 1));
  }

  FeatureMatrix out{Matrix<float>(frames, fb.rows()), FeatureStage::kFbank};
  std::vector<double> re(nfft), im(nfft), power(nfft / 2 + 1);
  for (std::size_t t = 0; t < frames; ++t) {
    const float* src = w.samples.data() + t * hop;
    std::fill(re.begin(), re.end(), 0.0);
    std::fill(im.begin(), im.end(), 0.0);
    for (std::size_t i = 0; i < win; ++i) re[i] = src[i];
    for (std::size_t i = win - 1; i > 0; --i) re[i] -= opts.preemphasis * re[i - 1];
    re[0] -= opts.preemphasis * re[0];
    for (std::size_t i = 0; i < win; ++i) re[i] *= window[i];
    fft_radix2(re, im);
    for (std::size_t k = 0; k < power.size(); ++k) power[k] = re[k] * re[k] + im[k] * im[k];
    auto row = out.values.row(t);
    for (std::size_t m = 0; m < fb.rows(); ++m) {
      const auto wts = fb.row(m);
      double e = 0.0;
      for (std::size_t k = 0; k < power.size(); ++k) e += wts[k] * power[k];
      row[m] = static_cast<float>(std::log(std::max(e, opts.log_floor)));
    }
  }
  return out;
}

namespace {

// Regression deltas with edge frames replicated.
Matrix<float> delta_block(const Matrix<float>& c, int window) {
  const std::size_t n = c.rows(), d = c.cols();
  double denom = 0.0;
  for (int k = 1; k <= window; ++k) denom += 2.0 * k * k;
  Matrix<float> out(n, d);
  const auto clampi = [n](std::ptrdiff_t t) {
    return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(t, 0, static_cast<std::ptrdiff_t>(n) - 1));
  };
  for (std::size_t t = 0; t < n; ++t) {
    for (std::size_t j = 0; j < d; ++j) {
      double acc = 0.0;
      for (int k = 1; k <= window; ++k) {
        const auto ti = static_cast<std::ptrdiff_t>(t);
        acc += k * (static_cast<double>(c(clampi(ti + k), j)) -
                    static_cast<double>(c(clampi(ti - k), j)));
      }
      out(t, j) = static_cast<float>(acc / denom);
    }
  }
  return out;
}

}  // namespace

FeatureMatrix add_deltas(const FeatureMatrix& f, int window) {
  if (f.stage != FeatureStage::kFbank) {
    throw StateError("add_deltas expects fbank features, got " + std::string(to_string(f.stage)));
  }
  if (window < 1) throw ConfigError("delta window must be >= 1");
  if (f.frames() == 0) throw DataError("no frames");
  const auto d1 = delta_block(f.values, window);
  const auto d2 = delta_block(d1, window);
  const std::size_t d = f.dim();
  FeatureMatrix out{Matrix<float>(f.frames(), 3 * d), FeatureStage::kFbankDelta};
  for (std::size_t t = 0; t < f.frames(); ++t) {
    auto row = out.values.row(t);
    std::copy_n(f.values.row(t).begin(), d, row.begin());
    std::copy_n(d1.row(t).begin(), d, row.begin() + d);
    std::copy_n(d2.row(t).begin(), d, row.begin() + 2 * d);
  }
  return out;
}

FeatureMatrix splice(const FeatureMatrix& f, int left, int right) {
  if (f.stage != FeatureStage::kFbankDelta) {
    throw StateError("splice expects delta features, got " + std::string(to_string(f.stage)));
  }
  if (left < 0 || right < 0) throw ConfigError("negative splice context");
  if (f.frames() == 0) throw DataError("no frames");
  const std::size_t n = f.frames(), d = f.dim();
  const auto ctx = static_cast<std::size_t>(left + right + 1);
  FeatureMatrix out{Matrix<float>(n, ctx * d), FeatureStage::kSpliced};
  for (std::size_t t = 0; t < n; ++t) {
    auto row = out.values.row(t);
    for (std::size_t c = 0; c < ctx; ++c) {
      const auto src = std::clamp<std::ptrdiff_t>(
          static_cast<std::ptrdiff_t>(t) + static_cast<std::ptrdiff_t>(c) - left, 0,
          static_cast<std::ptrdiff_t>(n) - 1);
      std::copy_n(f.values.row(static_cast<std::size_t>(src)).begin(), d,
                  row.begin() + c * d);
    }
  }
  return out;
}

FeatureMatrix extract_features(const Waveform& w, const FrontendOptions& opts) {
  return splice(add_deltas(log_mel_fbank(w, opts), opts.delta_window), opts.splice_left,
                opts.splice_right);
}

void CmvnAccumulator::add(const FeatureMatrix& f) { add(f.values); }

void CmvnAccumulator::add(const Matrix<float>& m) {
  if (m.rows() == 0) return;
  if (sum_.empty()) {
    sum_.assign(m.cols(), 0.0);
    sum_sq_.assign(m.cols(), 0.0);
  } else if (sum_.size() != m.cols()) {
    throw ShapeError("CMVN corpus has inconsistent dims: " + std::to_string(sum_.size()) +
                     " vs " + std::to_string(m.cols()));
  }
  for (std::size_t t = 0; t < m.rows(); ++t) {
    const auto row = m.row(t);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const double x = row[j];
      sum_[j] += x;
      sum_sq_[j] += x * x;
    }
  }
  frames_ += m.rows();
}

CmvnStats CmvnAccumulator::finish() const {
  if (frames_ == 0) throw DataError("CMVN needs at least one frame");
  CmvnStats s;
  s.frames = frames_;
  const double n = static_cast<double>(frames_);
  s.mean.resize(sum_.size());
  s.var.resize(sum_.size());
  for (std::size_t j = 0; j < sum_.size(); ++j) {
    s.mean[j] = sum_[j] / n;
    s.var[j] = std::max(0.0, sum_sq_[j] / n - s.mean[j] * s.mean[j]);
  }
  return s;
}

CmvnStats fit_cmvn(std::span<const FeatureMatrix> corpus) {
  CmvnAccumulator acc;
  for (const auto& f : corpus) acc.add(f);
  return acc.finish();
}

FeatureMatrix apply_cmvn(const FeatureMatrix& f, const CmvnStats& stats, double var_floor) {
  if (f.dim() != stats.dim()) {
    throw ShapeError("CMVN stats have dim " + std::to_string(stats.dim()) +
                     ", features have " + std::to_string(f.dim()));
  }
  std::vector<double> inv_std(stats.dim());
  for (std::size_t j = 0; j < inv_std.size(); ++j) {
    inv_std[j] = 1.0 / std::sqrt(std::max(stats.var[j], var_floor));
  }
  FeatureMatrix out{Matrix<float>(f.frames(), f.dim()), FeatureStage::kNormalized};
  for (std::size_t t = 0; t < f.frames(); ++t) {
    const auto src = f.values.row(t);
    auto dst = out.values.row(t);
    for (std::size_t j = 0; j < src.size(); ++j) {
      dst[j] = static_cast<float>((static_cast<double>(src[j]) - stats.mean[j]) * inv_std[j]);
    }
  }
  return out;
}

void save_cmvn(const std::filesystem::path& path, const CmvnStats& stats) {
  nlohmann::json j;
  j["frames"] = stats.frames;
  j["mean"] = stats.mean;
  j["var"] = stats.var;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  os << j.dump() << '\n';
}

CmvnStats load_cmvn(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open CMVN stats " + path.string());
  try {
    const auto j = nlohmann::json::parse(is);
    CmvnStats s;
    s.frames = j.at("frames").get<std::uint64_t>();
    s.mean = j.at("mean").get<std::vector<double>>();
    s.var = j.at("var").get<std::vector<double>>();
    if (s.mean.size() != s.var.size() || s.frames == 0) throw DataError("inconsistent stats");
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad CMVN stats file " + path.string() + ": " + e.what());
  }
}

namespace {
constexpr std::string_view kFeatureMagic = "CIFE";
}

void write_features(std::ostream& os, const FeatureMatrix& f) {
  binio::put_magic(os, kFeatureMagic);
  binio::put<std::uint32_t>(os, kFeatureFormatVersion);
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.frames()));
  binio::put<std::uint32_t>(os, static_cast<std::uint32_t>(f.dim()));
  binio::put<std::uint8_t>(os, static_cast<std::uint8_t>(f.stage));
  binio::put_floats(os, f.values.values());
}

FeatureMatrix read_features(std::istream& is) {
  binio::expect_magic(is, kFeatureMagic);
  const auto version = binio::get<std::uint32_t>(is);
  if (version != kFeatureFormatVersion) {
    throw DataError("unsupported feature format version " + std::to_string(version));
  }
  const auto t = binio::get<std::uint32_t>(is);
  const auto d = binio::get<std::uint32_t>(is);
  const auto stage = binio::get<std::uint8_t>(is);
  if (stage > static_cast<std::uint8_t>(FeatureStage::kNormalized)) {
    throw DataError("unknown feature stage tag");
  }
  FeatureMatrix f{Matrix<float>(t, d), static_cast<FeatureStage>(stage)};
  binio::get_floats(is, f.values.values());
  return f;
}

void save_features(const std::filesystem::path& path, const FeatureMatrix& f) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot write " + path.string());
  write_features(os, f);
}

FeatureMatrix load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open features " + path.string());
  return read_features(is);
}

}  // namespace ciem
