#pragma once

#include <algorithm>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ciem/noisemix.hpp"
#include "ciem/rng.hpp"
#include "ciem/trainer.hpp"
#include "ciem/verify.hpp"

namespace ciem::study {

struct StudySetup {
  ToySpec toy{};
  std::size_t eval_speakers = 8;
  std::size_t enroll_utts = 3;
  std::vector<std::size_t> trunk_hidden{64, 64, 32};
  std::vector<std::size_t> head_hidden{32};
  std::size_t minibatch = 64;
  std::size_t pre_epochs = 20;  // baseline training shared by both systems
  std::size_t adv_epochs = 20;  // continuation: baseline vs adversarial
  double lr = 0.05;
  ProbeSpec probe{};
  std::size_t probe_repeats = 1;  // held-out splits averaged per measurement
};

struct Outcome {
  double eer = 0.0;
  double env_acc = 0.0;
  double env_chance = 0.0;
  double snr_mse = 0.0;
  double snr_var = 0.0;
  TrainReport report;
};

struct Split {
  LabeledCorpus<float> train;
  LabeledCorpus<float> eval;
  std::vector<UtteranceMeta> eval_meta;
  std::vector<FeatureMatrix> eval_features;
};

inline Split make_split(const StudySetup& s, std::uint64_t seed) {
  ToySpec spec = s.toy;
  spec.n_speakers = s.toy.n_speakers + s.eval_speakers;
  spec.seed = derive_seed(seed, "toy");
  auto ds = gen_toy_dataset(spec);
  const std::size_t n_train = s.toy.n_speakers * spec.utts_per_speaker;
  Split out;
  std::vector<UtteranceMeta> train_meta(ds.meta.begin(), ds.meta.begin() + n_train);
  std::vector<FeatureMatrix> train_feat(ds.features.begin(), ds.features.begin() + n_train);
  out.eval_meta.assign(ds.meta.begin() + n_train, ds.meta.end());
  out.eval_features.assign(ds.features.begin() + n_train, ds.features.end());
  out.train = make_corpus<float>(train_feat, train_meta, speaker_index(train_meta));
  out.eval = make_corpus<float>(out.eval_features, out.eval_meta, speaker_index(out.eval_meta));
  return out;
}

inline double toy_eer(const Network<float>& trunk, const Split& split, std::size_t enroll_utts) {
  std::map<std::string, std::vector<Matrix<float>>> enroll;
  std::vector<std::pair<std::string, Embedding>> tests;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < split.eval_meta.size(); ++i) {
    const auto& m = split.eval_meta[i];
    if (seen[m.speaker]++ < enroll_utts) {
      enroll[m.speaker].push_back(split.eval_features[i].values);
    } else {
      tests.emplace_back(m.speaker, extract_embedding(trunk, split.eval_features[i].values, m.id));
    }
  }
  std::vector<TrialRecord> trials;
  for (const auto& [spk, utts] : enroll) {
    const auto model = enroll_speaker(trunk, utts, EnrollPooling::kFrames, spk);
    for (const auto& [owner, e] : tests) {
      trials.push_back({spk, e.id, owner == spk, cosine_score(model, e)});
    }
  }
  return compute_eer(trials).eer;
}

inline TrainConfig base_config(const StudySetup& s, const Split& split, std::uint64_t seed) {
  TrainConfig tc;
  tc.input_dim = s.toy.dim;
  tc.trunk_hidden = s.trunk_hidden;
  tc.speaker_count = s.toy.n_speakers;
  tc.minibatch = s.minibatch;
  tc.lr = s.lr;
  tc.seed = seed;
  (void)split;
  return tc;
}

inline Outcome measure(const ModelBundle<float>& model, const Split& split, const StudySetup& s,
                       std::uint64_t seed, TrainReport report) {
  Outcome o;
  const double n = static_cast<double>(s.probe_repeats);
  for (std::size_t r = 0; r < s.probe_repeats; ++r) {
    ProbeSpec ps = s.probe;
    ps.seed = derive_seed(seed, "probe", r);
    const auto env = probe_condition(model.trunk, split.eval, ConditionKind::kCategorical, ps);
    const auto snr = probe_condition(model.trunk, split.eval, ConditionKind::kContinuous, ps);
    o.env_acc += env.metric / n;
    o.env_chance = env.chance;
    o.snr_mse += snr.metric / n;
    o.snr_var += snr.chance / n;
  }
  o.eer = toy_eer(model.trunk, split, s.enroll_utts);
  o.report = std::move(report);
  return o;
}

struct Paired {
  Outcome baseline;
  Outcome adversarial;
};

/// Baseline pretraining, then the same number of further epochs either
/// without heads (baseline) or with the given condition heads.
inline Paired run_paired(const StudySetup& s, std::uint64_t seed,
                         const std::vector<ConditionHeadSpec>& heads) {
  const auto split = make_split(s, seed);
  auto tc = base_config(s, split, derive_seed(seed, "pre"));
  std::optional<TrainResult<float>> pre;
  if (s.pre_epochs > 0) {
    tc.epochs = s.pre_epochs;
    pre = train<float>(split.train, tc);
  }
  const ModelBundle<float>* warm = pre ? &pre->model : nullptr;

  tc.epochs = s.adv_epochs;
  tc.seed = derive_seed(seed, "continue");
  auto base = train<float>(split.train, tc, warm);
  tc.heads = heads;
  auto adv = train<float>(split.train, tc, warm);
  return {measure(base.model, split, s, seed, std::move(base.report)),
          measure(adv.model, split, s, seed, std::move(adv.report))};
}

}  // namespace ciem::study
