#include "ciem/noisemix.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <random>

#include "ciem/rng.hpp"

namespace ciem {

double mean_power(std::span<const float> x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (float v : x) acc += static_cast<double>(v) * static_cast<double>(v);
  return acc / static_cast<double>(x.size());
}

double snr_gain(double p_clean, double p_noise, double snr_db) {
  if (!(p_clean > 0)) throw DataError("clean signal is silent");
  if (!(p_noise > 0)) throw DataError("noise signal is silent");
  if (!std::isfinite(snr_db)) throw DataError("target SNR must be finite");
  return std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
}

std::vector<float> noise_segment(const Waveform& noise, std::size_t offset,
                                 std::size_t length) {
  noise.validate();
  std::vector<float> seg(length);
  const std::size_t n = noise.samples.size();
  std::size_t src = offset % n;
  for (std::size_t i = 0; i < length; ++i) {
    seg[i] = noise.samples[src];
    if (++src == n) src = 0;
  }
  return seg;
}

MixResult mix_at_snr(const Waveform& clean, const Waveform& noise, double snr_db,
                     std::uint64_t seed) {
  clean.validate();
  noise.validate();
  if (clean.sample_rate != noise.sample_rate) {
    throw DataError("sample-rate mismatch: clean " + std::to_string(clean.sample_rate) +
                    " Hz vs noise " + std::to_string(noise.sample_rate) + " Hz");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, noise.samples.size() - 1);
  MixResult res;
  res.offset = pick(rng);
  const auto seg = noise_segment(noise, res.offset, clean.samples.size());
  res.gain = snr_gain(mean_power(clean.samples), mean_power(seg), snr_db);
  res.mixed.sample_rate = clean.sample_rate;
  res.mixed.samples.resize(clean.samples.size());
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const double v = static_cast<double>(clean.samples[i]) + res.gain * seg[i];
    if (v > 1.0 || v < -1.0) ++res.clipped;
    res.mixed.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  return res;
}

void MixSpec::validate() const {
  if (!(snr_low_db <= snr_high_db)) throw ConfigError("SNR range has low > high");
  if (!std::isfinite(snr_low_db) || !std::isfinite(snr_high_db)) {
    throw ConfigError("SNR range must be finite");
  }
  if (environments.empty()) throw ConfigError("no noise environments requested");
  for (int e : environments) {
    if (e < 1) throw ConfigError("noise environment labels start at 1 (0 is clean)");
  }
  if (copies == 0) throw ConfigError("copies must be >= 1");
}

SimulationPlan simulate_corpus(const std::vector<UtteranceMeta>& clean,
                               const std::vector<UtteranceMeta>& noise,
                               const MixSpec& spec, const std::string& output_dir) {
  spec.validate();
  if (clean.empty()) throw DataError("clean manifest is empty");
  if (noise.empty()) throw DataError("noise manifest is empty");
  std::map<int, std::vector<const UtteranceMeta*>> by_env;
  for (const auto& n : noise) by_env[n.env].push_back(&n);
  for (int e : spec.environments) {
    if (by_env[e].empty()) {
      throw ConfigError("no noise files for environment " + std::to_string(e));
    }
  }

  const std::size_t total = clean.size() * spec.copies;
  std::vector<int> envs(total);
  for (std::size_t i = 0; i < total; ++i) {
    envs[i] = spec.environments[i % spec.environments.size()];
  }
  std::mt19937_64 rng(derive_seed(spec.seed, "simulate"));
  std::shuffle(envs.begin(), envs.end(), rng);

  std::uniform_real_distribution<double> snr(spec.snr_low_db, spec.snr_high_db);
  SimulationPlan plan;
  std::size_t k = 0;
  for (const auto& c : clean) {
    if (spec.include_clean) {
      UtteranceMeta m = c;
      m.env = 0;
      m.clean = true;
      m.snr_db.reset();
      plan.manifest.push_back(m);
    }
    for (std::size_t copy = 0; copy < spec.copies; ++copy, ++k) {
      const auto& pool = by_env[envs[k]];
      std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 1);
      const UtteranceMeta* src = pool[pick(rng)];
      double target = snr(rng);
      if (spec.snr_low_db == spec.snr_high_db) target = spec.snr_low_db;
      UtteranceMeta m = c;
      m.id = c.id + "_n" + std::to_string(copy);
      m.env = envs[k];
      m.clean = false;
      m.snr_db = target;
      m.path = (std::filesystem::path(output_dir) / (m.id + ".wav")).string();
      plan.manifest.push_back(m);
      plan.jobs.push_back({m, c.path, src->path, derive_seed(spec.seed, "mix", k)});
    }
  }
  return plan;
}

void ToySpec::validate() const {
  if (n_speakers < 1 || n_envs < 1 || dim < 1 || frames_per_utt < 1 || utts_per_speaker < 1) {
    throw ConfigError("toy dataset counts must all be >= 1");
  }
  if (!(noise_std >= 0) || !(centroid_scale >= 0) || !(env_offset_scale >= 0)) {
    throw ConfigError("toy dataset scales must be non-negative");
  }
}

ToyDataset gen_toy_dataset(const ToySpec& spec) {
  spec.validate();
  ToyDataset ds;
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ds.centroids = Matrix<double>(spec.n_speakers, spec.dim);
  for (auto& v : ds.centroids.values()) v = spec.centroid_scale * gauss(rng);
  ds.env_offsets = Matrix<double>(spec.n_envs, spec.dim);
  for (auto& v : ds.env_offsets.values()) v = spec.env_offset_scale * gauss(rng);

  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t s = 0; s < spec.n_speakers; ++s) {
    std::vector<std::size_t> envs(spec.utts_per_speaker);
    for (std::size_t j = 0; j < envs.size(); ++j) envs[j] = (j + s) % spec.n_envs;
    std::shuffle(envs.begin(), envs.end(), rng);
    for (std::size_t j = 0; j < spec.utts_per_speaker; ++j) {
      const std::size_t env = envs[j];
      const double scale = unit(rng);
      FeatureMatrix f{Matrix<float>(spec.frames_per_utt, spec.dim), FeatureStage::kNormalized};
      for (std::size_t t = 0; t < spec.frames_per_utt; ++t) {
        auto row = f.values.row(t);
        for (std::size_t d = 0; d < spec.dim; ++d) {
          row[d] = static_cast<float>(ds.centroids(s, d) + scale * ds.env_offsets(env, d) +
                                      spec.noise_std * gauss(rng));
        }
      }
      UtteranceMeta m;
      m.id = "spk" + std::to_string(s) + "_utt" + std::to_string(j);
      m.speaker = "spk" + std::to_string(s);
      m.env = static_cast<int>(env);
      m.snr_db = 20.0 - 20.0 * scale;
      m.clean = false;
      ds.features.push_back(std::move(f));
      ds.meta.push_back(std::move(m));
    }
  }
  return ds;
}

}  // namespace ciem
