#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "ciem/error.hpp"
#include "ciem/noisemix.hpp"
#include "ciem/rng.hpp"
#include "ciem/trainer.hpp"
#include "oracles.hpp"

using namespace ciem;

namespace {

TrainConfig small_config(std::size_t dim, std::size_t speakers) {
  TrainConfig tc;
  tc.input_dim = dim;
  tc.trunk_hidden = {16, 12};
  tc.speaker_count = speakers;
  tc.minibatch = 32;
  tc.epochs = 2;
  tc.lr = 0.05;
  tc.seed = 3;
  return tc;
}

template <typename T>
LabeledCorpus<T> toy_corpus(std::uint64_t seed, std::size_t speakers = 6) {
  ToySpec spec;
  spec.n_speakers = speakers;
  spec.dim = 8;
  spec.frames_per_utt = 6;
  spec.utts_per_speaker = 6;
  spec.seed = seed;
  const auto ds = gen_toy_dataset(spec);
  return make_corpus<T>(ds.features, ds.meta, speaker_index(ds.meta));
}

template <typename T>
Batch<T> first_batch(const LabeledCorpus<T>& c, std::size_t size, std::uint64_t seed) {
  Batch<T> out;
  bool got = false;
  for_each_batch<T>(c, size, seed, [&](const Batch<T>& b) {
    if (!got) out = b, got = true;
  });
  return out;
}

}  // namespace

TEST(Modes, HeadsForMode) {
  const std::vector<std::size_t> hidden{512, 512};
  EXPECT_TRUE(heads_for_mode(TrainMode::kBaseline, 5, 1.5, 0.002, hidden).empty());
  const auto env = heads_for_mode(TrainMode::kEnv, 5, 1.5, 0.002, hidden);
  ASSERT_EQ(env.size(), 1u);
  EXPECT_EQ(env[0].output_size, 5u);
  EXPECT_EQ(env[0].kind, ConditionKind::kCategorical);
  EXPECT_EQ(env[0].hidden, hidden);
  const auto snr = heads_for_mode(TrainMode::kSnr, 5, 1.5, 0.002, hidden);
  ASSERT_EQ(snr.size(), 1u);
  EXPECT_EQ(snr[0].output_size, 1u);
  EXPECT_EQ(snr[0].kind, ConditionKind::kContinuous);
  const auto multi = heads_for_mode(TrainMode::kMulti, 5, 1.5, 0.002, hidden);
  ASSERT_EQ(multi.size(), 2u);
  EXPECT_EQ(multi[0].lambda, 1.5);
  EXPECT_EQ(multi[1].lambda, 0.002);
  EXPECT_EQ(train_mode_from_string("multi"), TrainMode::kMulti);
  EXPECT_THROW(train_mode_from_string("both"), ConfigError);
}

TEST(Batches, PartitionFramesExactly) {
  const auto c = toy_corpus<float>(1);
  std::size_t frames = 0, batches = 0;
  std::vector<std::size_t> sizes;
  for_each_batch<float>(c, 50, 9, [&](const Batch<float>& b) {
    frames += b.x.rows();
    sizes.push_back(b.x.rows());
    EXPECT_EQ(b.speakers.size(), b.x.rows());
    EXPECT_EQ(b.envs.size(), b.x.rows());
    EXPECT_EQ(b.snr.rows(), b.x.rows());
    ++batches;
  });
  EXPECT_EQ(frames, c.total_frames());
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) EXPECT_EQ(sizes[i], 50u);
  EXPECT_EQ(batches, (c.total_frames() + 49) / 50);
}

TEST(Batches, BroadcastUtteranceLabels) {
  const auto c = toy_corpus<double>(2);
  const auto b = first_batch(c, 1000, 4);
  // Frames of one utterance stay contiguous and share every label.
  std::size_t row = 0;
  while (row < b.x.rows()) {
    std::size_t u = 0;
    for (; u < c.size(); ++u) {
      if (c.features[u].row(0)[0] == b.x(row, 0) && c.features[u].row(0)[1] == b.x(row, 1)) break;
    }
    ASSERT_LT(u, c.size());
    for (std::size_t t = 0; t < c.features[u].rows() && row < b.x.rows(); ++t, ++row) {
      EXPECT_EQ(b.speakers[row], c.speakers[u]);
      EXPECT_EQ(b.envs[row], c.envs[u]);
      EXPECT_EQ(b.snr(row, 0), c.snr[u]);
    }
  }
}

TEST(Corpus, CleanTargetCeiling) {
  std::vector<FeatureMatrix> f{{Matrix<float>(2, 3), FeatureStage::kNormalized},
                               {Matrix<float>(2, 3), FeatureStage::kNormalized}};
  std::vector<UtteranceMeta> m(2);
  m[0].id = "a";
  m[0].speaker = "x";
  m[0].clean = true;
  m[1].id = "b";
  m[1].speaker = "y";
  m[1].env = 2;
  m[1].snr_db = 7.5;
  const auto c = make_corpus<float>(f, m, speaker_index(m));
  EXPECT_EQ(c.snr[0], 40.0);
  EXPECT_EQ(c.snr[1], 7.5);
  EXPECT_EQ(c.env_classes(), 3u);
}

TEST(Step, DecompositionMatchesSeparateBackwardPasses) {
  const auto c = toy_corpus<double>(5);
  auto tc = small_config(c.dim(), 6);
  tc.heads = {environment_head(3, 1.0, {7}), snr_head(0.3, {5})};
  tc.numeric = NumericMode::kFloat64;
  for (int trial = 0; trial < 5; ++trial) {
    tc.seed = 10 + trial;
    const auto model = init_bundle<double>(tc);
    const auto b = first_batch(c, 40, 20 + trial);
    const auto step = adversarial_gradients(b, model);

    auto expected = speaker_loss(b.x, b.speakers, model.trunk, model.speaker).trunk;
    auto env = condition_loss_categorical(b.x, b.envs, model.trunk, model.heads[0].net);
    auto snr = condition_loss_continuous(b.x, b.snr, model.trunk, model.heads[1].net);
    EXPECT_EQ(env.head, step.grads.heads[0]);
    EXPECT_EQ(snr.head, step.grads.heads[1]);
    env.trunk.scale(-1.0);
    snr.trunk.scale(-0.3);
    expected.add(env.trunk);
    expected.add(snr.trunk);
    EXPECT_LT(oracle::max_rel_err(step.grads.trunk, expected, 1e-10), 1e-6);
  }
}

TEST(Step, SpeakerAndHeadGradientsMatchFiniteDifferences) {
  const auto c = toy_corpus<double>(6);
  auto tc = small_config(c.dim(), 6);
  tc.heads = {environment_head(3, 0.5, {6})};
  const auto model = init_bundle<double>(tc);
  const auto b = first_batch(c, 24, 1);
  const auto step = adversarial_gradients(b, model);
  const auto fd = oracle::finite_difference<double>(model.speaker, [&](const Network<double>& s) {
    return speaker_loss(b.x, b.speakers, model.trunk, s).loss;
  });
  EXPECT_LT(oracle::max_rel_err(step.grads.speaker, fd, 1e-7), 1e-4);
  const auto fd_trunk = oracle::finite_difference<double>(model.trunk, [&](const Network<double>& t) {
    return speaker_loss(b.x, b.speakers, t, model.speaker).loss -
           0.5 * condition_loss_categorical(b.x, b.envs, t, model.heads[0].net).loss;
  });
  EXPECT_LT(oracle::max_rel_err(step.grads.trunk, fd_trunk, 1e-7), 1e-4);
}

TEST(Step, ZeroLambdaIsBitIdenticalToBaseline) {
  const auto c = toy_corpus<float>(7);
  auto tc = small_config(c.dim(), 6);
  tc.epochs = 3;
  const auto base = train<float>(c, tc);
  tc.heads = {environment_head(3, 0.0, {8}), snr_head(0.0, {8})};
  const auto adv = train<float>(c, tc);
  EXPECT_EQ(adv.model.trunk, base.model.trunk);
  EXPECT_EQ(adv.model.speaker, base.model.speaker);
  EXPECT_NE(adv.model.heads[0].net, init_bundle<float>(tc).heads[0].net);
}

TEST(Train, DeterministicAndZeroEpochs) {
  const auto c = toy_corpus<float>(8);
  auto tc = small_config(c.dim(), 6);
  tc.heads = {environment_head(3, 1.0, {8})};
  EXPECT_EQ(train<float>(c, tc).model, train<float>(c, tc).model);
  tc.epochs = 0;
  const auto r = train<float>(c, tc);
  EXPECT_EQ(r.model, init_bundle<float>(tc));
  EXPECT_TRUE(r.report.epochs.empty());
}

TEST(Train, BaselineLearnsToySpeakers) {
  ToySpec spec;
  spec.seed = 4;
  const auto ds = gen_toy_dataset(spec);
  const auto c = make_corpus<float>(ds.features, ds.meta, speaker_index(ds.meta));
  auto tc = small_config(c.dim(), spec.n_speakers);
  tc.trunk_hidden = {64, 64, 32};
  tc.epochs = 15;
  tc.lr = 0.05;
  tc.minibatch = 64;
  const auto r = train<float>(c, tc);
  EXPECT_GT(r.report.epochs.back().speaker_accuracy, 0.95);
  EXPECT_LT(r.report.epochs.back().speaker_loss, r.report.epochs.front().speaker_loss);
}

TEST(Train, WarmStartCopiesTrunkAndRejectsMismatch) {
  const auto c = toy_corpus<float>(9);
  auto tc = small_config(c.dim(), 6);
  const auto base = train<float>(c, tc);
  auto adv_cfg = tc;
  adv_cfg.epochs = 0;
  adv_cfg.heads = {environment_head(3, 1.0, {8})};
  const auto warm = train<float>(c, adv_cfg, &base.model);
  EXPECT_EQ(warm.model.trunk, base.model.trunk);
  EXPECT_EQ(warm.model.speaker, base.model.speaker);
  ASSERT_EQ(warm.model.heads.size(), 1u);

  adv_cfg.trunk_hidden = {16, 10};
  EXPECT_THROW(train<float>(c, adv_cfg, &base.model), ConfigError);
}

TEST(Train, InconsistentLabelSpacesAreConfigErrors) {
  const auto c = toy_corpus<float>(10);
  auto tc = small_config(c.dim(), 4);
  EXPECT_THROW(train<float>(c, tc), ConfigError);
  tc.speaker_count = 6;
  tc.heads = {environment_head(2, 1.0, {8})};
  EXPECT_THROW(train<float>(c, tc), ConfigError);
  tc.heads.clear();
  tc.input_dim = 9;
  EXPECT_THROW(train<float>(c, tc), ConfigError);
  EXPECT_THROW(environment_head(1, 1.0), ConfigError);
  auto neg = environment_head(3, -1.0, {4});
  EXPECT_THROW(neg.validate(), ConfigError);
}

TEST(Train, LossMagnitudeGuardWarns) {
  const auto c = toy_corpus<float>(11);
  auto tc = small_config(c.dim(), 6);
  tc.epochs = 1;
  tc.heads = {snr_head(1.0, {8})};
  EXPECT_FALSE(train<float>(c, tc).report.warnings.empty());
  tc.heads = {snr_head(0.002, {8})};
  EXPECT_TRUE(train<float>(c, tc).report.warnings.empty());
}

TEST(Train, DivergenceIsNumericError) {
  const auto c = toy_corpus<float>(12);
  auto tc = small_config(c.dim(), 6);
  tc.lr = 1e6;
  tc.heads = {snr_head(1.0, {8})};
  EXPECT_THROW(train<float>(c, tc), NumericError);
}

TEST(Train, HeadsDescendWithFrozenTrunk) {
  const auto c = toy_corpus<float>(13);
  auto tc = small_config(c.dim(), 6);
  tc.heads = {environment_head(3, 1.0, {8}), snr_head(0.01, {8})};
  auto model = init_bundle<float>(tc);
  const auto b = first_batch(c, 1000, 1);
  const auto initial = adversarial_gradients(b, model).metrics;
  for (int i = 0; i < 200; ++i) {
    const auto g = adversarial_gradients(b, model);
    sgd_step(model.heads[0].net, g.grads.heads[0], 0.05f);
    sgd_step(model.heads[1].net, g.grads.heads[1], 0.002f);
  }
  const auto final_ = adversarial_gradients(b, model).metrics;
  EXPECT_LE(final_.head_losses[0], initial.head_losses[0]);
  EXPECT_LE(final_.head_losses[1], initial.head_losses[1]);
}

TEST(Report, CsvColumns) {
  const auto c = toy_corpus<float>(14);
  auto tc = small_config(c.dim(), 6);
  tc.heads = {environment_head(3, 1.5, {8}), snr_head(0.002, {8})};
  const auto r = train<float>(c, tc);
  ASSERT_EQ(r.report.epochs.size(), 2u);
  std::ostringstream os;
  r.report.write_csv(os);
  std::istringstream is(os.str());
  std::string header, row;
  std::getline(is, header);
  EXPECT_EQ(header, "epoch,speaker_loss,head0_loss,head1_loss,head0_metric,head1_metric,seconds");
  int rows = 0;
  while (std::getline(is, row)) ++rows;
  EXPECT_EQ(rows, 2);
  for (const auto& e : r.report.epochs) {
    EXPECT_EQ(e.head_losses.size(), 2u);
    EXPECT_TRUE(std::isfinite(e.head_losses[1]));
  }
}

TEST(Probe, RandomFeaturesGiveChance) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  LabeledCorpus<float> c;
  for (int u = 0; u < 900; ++u) {
    Matrix<float> f(2, 6);
    for (auto& v : f.values()) v = static_cast<float>(g(rng));
    c.features.push_back(f);
    c.speakers.push_back(0);
    c.envs.push_back(u % 3);
    c.snr.push_back(20.0 * std::uniform_real_distribution<double>()(rng));
  }
  std::shuffle(c.envs.begin(), c.envs.end(), rng);
  const auto trunk = init_network<float>(mlp_spec(6, std::vector<std::size_t>{16}, 16, Activation::kRelu), 4);
  ProbeSpec ps;
  ps.epochs = 20;
  const auto r = probe_condition(trunk, c, ConditionKind::kCategorical, ps);
  EXPECT_NEAR(r.chance, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(r.metric, r.chance, 0.05);
  EXPECT_EQ(r.classes, 3u);
  EXPECT_GT(r.test_frames, 0u);
  const auto s = probe_condition(trunk, c, ConditionKind::kContinuous, ps);
  EXPECT_GT(s.metric, 0.9 * s.chance);
}

TEST(Probe, StrongOffsetsAreDetectable) {
  ToySpec spec;
  spec.seed = 21;
  spec.env_offset_scale = 3.0;
  const auto ds = gen_toy_dataset(spec);
  const auto c = make_corpus<float>(ds.features, ds.meta, speaker_index(ds.meta));
  auto tc = small_config(c.dim(), spec.n_speakers);
  tc.trunk_hidden = {32, 32};
  tc.epochs = 5;
  const auto r = train<float>(c, tc);
  const auto p = probe_condition(r.model.trunk, c, ConditionKind::kCategorical);
  EXPECT_GT(p.metric, p.chance + 0.2);
}

TEST(Probe, NoOffsetsMeansNoSignalForEitherSystem) {
  ToySpec spec;
  spec.seed = 22;
  spec.env_offset_scale = 0.0;
  spec.utts_per_speaker = 24;
  const auto ds = gen_toy_dataset(spec);
  const auto c = make_corpus<float>(ds.features, ds.meta, speaker_index(ds.meta));
  auto tc = small_config(c.dim(), spec.n_speakers);
  tc.trunk_hidden = {32, 32};
  tc.epochs = 5;
  const auto base = train<float>(c, tc);
  tc.heads = {environment_head(3, 1.0, {16})};
  const auto adv = train<float>(c, tc);
  const auto pb = probe_condition(base.model.trunk, c, ConditionKind::kCategorical);
  const auto pa = probe_condition(adv.model.trunk, c, ConditionKind::kCategorical);
  // Environments are balanced within each speaker, so held-out utterances can
  // land below chance; only signal above chance would be a failure.
  EXPECT_LT(pb.metric, pb.chance + 0.1);
  EXPECT_LT(pa.metric, pa.chance + 0.1);
  EXPECT_GT(pb.metric, pb.chance - 0.15);
  EXPECT_NEAR(pa.metric, pb.metric, 0.05);
}
