#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "ciem/matrix.hpp"

namespace ciem {

/// Mono audio, samples nominally in [-1, 1].
struct Waveform {
  std::vector<float> samples;
  int sample_rate = 16000;

  void validate() const;
  double duration_seconds() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

/// PCM 16-bit mono RIFF/WAVE only; anything else is a DataError.
Waveform read_wav(const std::filesystem::path& path);
Waveform decode_wav(std::span<const std::uint8_t> bytes);
void write_wav(const std::filesystem::path& path, const Waveform& w);
std::vector<std::uint8_t> encode_wav(const Waveform& w);

enum class FeatureStage : std::uint8_t {
  kFbank = 0,       // log mel filterbank
  kFbankDelta = 1,  // [static | delta | delta-delta]
  kSpliced = 2,     // context window stacked
  kNormalized = 3,  // after global CMVN
};

std::string_view to_string(FeatureStage s);

struct FeatureMatrix {
  Matrix<float> values;
  FeatureStage stage = FeatureStage::kFbank;

  std::size_t frames() const noexcept { return values.rows(); }
  std::size_t dim() const noexcept { return values.cols(); }
};

struct FrontendOptions {
  int n_mels = 29;
  double win_ms = 25.0;
  double hop_ms = 10.0;
  double preemphasis = 0.97;
  double log_floor = 1e-10;
  int delta_window = 2;
  int splice_left = 25;
  int splice_right = 25;
  double var_floor = 1e-8;

  std::size_t fbank_dim() const { return static_cast<std::size_t>(n_mels); }
  std::size_t delta_dim() const { return 3 * fbank_dim(); }
  std::size_t spliced_dim() const {
    return static_cast<std::size_t>(splice_left + splice_right + 1) * delta_dim();
  }
  void validate() const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

/// Centre frequencies (Hz) of the triangular mel filters spanning 0..Nyquist.
std::vector<double> mel_center_frequencies(int n_mels, int sample_rate);

/// In-place iterative radix-2 FFT; size must be a power of two.
void fft_radix2(std::span<double> re, std::span<double> im);

std::size_t frame_count(std::size_t n_samples, std::size_t win, std::size_t hop);

FeatureMatrix log_mel_fbank(const Waveform& w, const FrontendOptions& opts = {});
FeatureMatrix add_deltas(const FeatureMatrix& f, int window = 2);
FeatureMatrix splice(const FeatureMatrix& f, int left = 25, int right = 25);

/// fbank -> deltas -> splice; the result still needs CMVN.
FeatureMatrix extract_features(const Waveform& w, const FrontendOptions& opts = {});

/// Global per-dimension statistics (population variance).
struct CmvnStats {
  std::vector<double> mean;
  std::vector<double> var;
  std::uint64_t frames = 0;

  std::size_t dim() const noexcept { return mean.size(); }
};

/// Streaming accumulator of sum and sum of squares in 64-bit.
class CmvnAccumulator {
 public:
  void add(const FeatureMatrix& f);
  void add(const Matrix<float>& m);
  std::uint64_t frames() const noexcept { return frames_; }
  CmvnStats finish() const;

 private:
  std::vector<double> sum_;
  std::vector<double> sum_sq_;
  std::uint64_t frames_ = 0;
};

CmvnStats fit_cmvn(std::span<const FeatureMatrix> corpus);
FeatureMatrix apply_cmvn(const FeatureMatrix& f, const CmvnStats& stats,
                         double var_floor = 1e-8);

void save_cmvn(const std::filesystem::path& path, const CmvnStats& stats);
CmvnStats load_cmvn(const std::filesystem::path& path);

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

/// "CIFE" | version u32 | T u32 | D u32 | stage u8 | T*D f32.
void write_features(std::ostream& os, const FeatureMatrix& f);
FeatureMatrix read_features(std::istream& is);
void save_features(const std::filesystem::path& path, const FeatureMatrix& f);
FeatureMatrix load_features(const std::filesystem::path& path);

}  // namespace ciem
