#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ciem/frontend.hpp"
#include "ciem/manifest.hpp"

namespace ciem {

double mean_power(std::span<const float> x);

/// Noise gain that puts `p_noise` at `snr_db` below `p_clean`.
double snr_gain(double p_clean, double p_noise, double snr_db);

/// `length` samples of `noise` starting at `offset`, looping as needed.
std::vector<float> noise_segment(const Waveform& noise, std::size_t offset,
                                 std::size_t length);

struct MixResult {
  Waveform mixed;
  double gain = 0.0;
  std::size_t offset = 0;
  std::size_t clipped = 0;  // samples hard-clipped to [-1, 1]

  double clip_fraction() const {
    return mixed.samples.empty()
               ? 0.0
               : static_cast<double>(clipped) / static_cast<double>(mixed.samples.size());
  }
};

/// clean + g * segment, where the segment offset is drawn from `seed` and g
/// realizes `snr_db` over the utterance's mean power.
MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                     std::uint64_t seed);

struct MixSpec {
  double snr_low_db = 0.0;
  double snr_high_db = 20.0;
  std::vector<int> environments{1, 2, 3, 4};
  std::size_t copies = 1;
  bool include_clean = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// One noisy utterance to render.
struct MixJob {
  UtteranceMeta output;
  std::string clean_path;
  std::string noise_path;
  std::uint64_t seed = 0;
};

struct SimulationPlan {
  std::vector<UtteranceMeta> manifest;  // clean (optional) + noisy, input order
  std::vector<MixJob> jobs;
};

/// Assigns environments in exactly balanced proportions (shuffled), noise
/// files uniformly within an environment and SNRs uniformly in range.
/// Noise records use `env` as their environment label.
SimulationPlan simulate_corpus(const std::vector<UtteranceMeta>& clean,
                               const std::vector<UtteranceMeta>& noise,
                               const MixSpec& spec, const std::string& output_dir);

struct ToySpec {
  std::size_t n_speakers = 16;
  std::size_t n_envs = 3;
  std::size_t dim = 20;
  std::size_t frames_per_utt = 20;
  std::size_t utts_per_speaker = 12;
  std::uint64_t seed = 0;
  double centroid_scale = 1.0;
  double env_offset_scale = 1.0;
  double noise_std = 0.5;

  void validate() const;
};

/// Synthetic corpus: frame = centroid[speaker] + s * offset[env] + noise,
/// with s ~ U(0, 1) per utterance and snr_db = 20 - 20 s.
struct ToyDataset {
  std::vector<FeatureMatrix> features;
  std::vector<UtteranceMeta> meta;
  Matrix<double> centroids;
  Matrix<double> env_offsets;
};

ToyDataset gen_toy_dataset(const ToySpec& spec);

}  // namespace ciem
