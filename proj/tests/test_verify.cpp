#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <iomanip>
#include <set>
#include <random>
#include <sstream>

#include "ciem/error.hpp"
#include "ciem/verify.hpp"
#include "oracles.hpp"

using namespace ciem;

namespace {

std::vector<TrialRecord> make_trials(const std::vector<double>& targets,
                                     const std::vector<double>& impostors) {
  std::vector<TrialRecord> out;
  for (double s : targets) out.push_back({"spk", "t" + std::to_string(out.size()), true, s});
  for (double s : impostors) out.push_back({"spk", "i" + std::to_string(out.size()), false, s});
  return out;
}

std::vector<TrialRecord> random_trials(std::mt19937_64& rng, std::size_t n, bool coarse) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::uniform_int_distribution<int> level(-10, 10);
  std::vector<TrialRecord> out(n);
  const double shift = u(rng);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].speaker = "s";
    out[i].utterance = "u" + std::to_string(i);
    out[i].is_target = i == 0 || (i != 1 && rng() % 3 == 0);
    const double raw = coarse ? level(rng) / 10.0 : u(rng);
    out[i].score = std::clamp(raw + (out[i].is_target ? shift : 0.0), -1.0, 1.0);
  }
  return out;
}

Network<float> toy_trunk() {
  return init_network<float>(mlp_spec(4, std::vector<std::size_t>{6}, 5, Activation::kRelu), 3);
}

Matrix<float> frames(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> g;
  Matrix<float> m(n, 4);
  for (auto& v : m.values()) v = g(rng);
  return m;
}

}  // namespace

TEST(Cosine, BasicValues) {
  const std::vector<float> v{0.3f, -1.2f, 2.0f};
  std::vector<float> neg(v.size());
  std::transform(v.begin(), v.end(), neg.begin(), [](float x) { return -x; });
  EXPECT_DOUBLE_EQ(cosine_score(v, v), 1.0);
  EXPECT_DOUBLE_EQ(cosine_score(v, neg), -1.0);
  EXPECT_DOUBLE_EQ(cosine_score(std::vector<float>{1, 0}, std::vector<float>{0, 1}), 0.0);
  EXPECT_THROW(cosine_score(std::vector<float>{0, 0}, std::vector<float>{1, 0}), DataError);
  EXPECT_THROW(cosine_score(std::vector<float>{1, 0}, std::vector<float>{1, 0, 0}), ShapeError);
}

TEST(Cosine, SymmetryAndScaleInvariance) {
  std::mt19937_64 rng(1);
  std::normal_distribution<float> g;
  for (int i = 0; i < 100; ++i) {
    std::vector<float> a(16), b(16), a3(16);
    for (auto& x : a) x = g(rng);
    for (auto& x : b) x = g(rng);
    for (std::size_t k = 0; k < 16; ++k) a3[k] = 3.7f * a[k];
    EXPECT_EQ(cosine_score(a, b), cosine_score(b, a));
    EXPECT_NEAR(cosine_score(a3, b), cosine_score(a, b), 1e-6);
  }
}

TEST(Embedding, MeanLaws) {
  const auto trunk = toy_trunk();
  const auto one = frames(1, 2);
  const auto e1 = extract_embedding(trunk, one);
  const auto out = forward(trunk, one).output();
  for (std::size_t j = 0; j < 5; ++j) EXPECT_FLOAT_EQ(e1.vector[j], out(0, j));
  EXPECT_EQ(e1.frames, 1u);

  const auto f = frames(7, 3);
  Matrix<float> doubled(14, 4), permuted(7, 4);
  for (std::size_t t = 0; t < 7; ++t) {
    for (std::size_t j = 0; j < 4; ++j) {
      doubled(2 * t, j) = doubled(2 * t + 1, j) = f(t, j);
      permuted(6 - t, j) = f(t, j);
    }
  }
  const auto e = extract_embedding(trunk, f);
  const auto ed = extract_embedding(trunk, doubled);
  const auto ep = extract_embedding(trunk, permuted);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_NEAR(ed.vector[j], e.vector[j], 1e-6);
    EXPECT_NEAR(ep.vector[j], e.vector[j], 1e-6);
  }
  EXPECT_THROW(extract_embedding(trunk, Matrix<float>(0, 4)), DataError);
  EXPECT_THROW(extract_embedding(trunk, Matrix<float>(2, 3)), ShapeError);
}

TEST(Enroll, PoolingRules) {
  const auto trunk = toy_trunk();
  const auto a = frames(5, 4), b = frames(5, 5), c = frames(15, 6);
  const std::vector<Matrix<float>> single{a};
  EXPECT_EQ(enroll_speaker(trunk, single).vector, extract_embedding(trunk, a).vector);

  const std::vector<Matrix<float>> pair{a, b};
  const auto ea = extract_embedding(trunk, a), eb = extract_embedding(trunk, b);
  const auto ep = enroll_speaker(trunk, pair);
  for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(ep.vector[j], 0.5f * (ea.vector[j] + eb.vector[j]), 1e-6);

  // Unequal lengths: frame pooling weighs the 15-frame utterance 3x.
  const std::vector<Matrix<float>> uneven{a, c};
  const auto ec = extract_embedding(trunk, c);
  const auto fr = enroll_speaker(trunk, uneven, EnrollPooling::kFrames);
  const auto um = enroll_speaker(trunk, uneven, EnrollPooling::kUtteranceMeans);
  for (std::size_t j = 0; j < 5; ++j) {
    EXPECT_NEAR(fr.vector[j], 0.25f * ea.vector[j] + 0.75f * ec.vector[j], 1e-5);
    EXPECT_NEAR(um.vector[j], 0.5f * (ea.vector[j] + ec.vector[j]), 1e-5);
  }
  EXPECT_EQ(fr.frames, 20u);

  const std::vector<Matrix<float>> six{a, b, c, a, b, c};
  EXPECT_NO_THROW(enroll_speaker(trunk, six));
  EXPECT_THROW(enroll_speaker(trunk, std::vector<Matrix<float>>{}), DataError);
}

TEST(Eer, HandCases) {
  EXPECT_EQ(compute_eer(make_trials({0.9, 0.8}, {0.1, 0.2})).eer, 0.0);
  const auto r = compute_eer(make_trials({0.9, 0.1}, {0.8, 0.2}));
  EXPECT_DOUBLE_EQ(r.eer, 0.5);
  EXPECT_EQ(r.targets, 2u);
  EXPECT_EQ(r.impostors, 2u);
  EXPECT_EQ(compute_eer(make_trials({0.1}, {0.9})).eer, 1.0);
  EXPECT_THROW(compute_eer(make_trials({0.5}, {})), DataError);
  EXPECT_THROW(compute_eer(make_trials({}, {0.5})), DataError);
  std::vector<TrialRecord> unscored{{"a", "b", true, std::nullopt}, {"a", "c", false, 0.1}};
  EXPECT_THROW(compute_eer(unscored), DataError);
}

TEST(Eer, MatchesBruteForceSweep) {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 200; ++i) {
    const auto trials = random_trials(rng, 2 + rng() % 999, i % 2 == 0);
    EXPECT_NEAR(compute_eer(trials).eer, oracle::brute_force_eer(trials), 1e-9) << "set " << i;
  }
}

TEST(Eer, RandomLabelsGiveHalf) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<TrialRecord> t(10000);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = {"s", "u", rng() % 2 == 0, u(rng)};
  EXPECT_NEAR(compute_eer(t).eer, 0.5, 0.02);
}

TEST(Eer, NegationEqualsLabelFlip) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 50; ++i) {
    auto t = random_trials(rng, 50 + rng() % 200, i % 2 == 1);
    auto neg = t, flip = t;
    for (auto& x : neg) x.score = -*x.score;
    for (auto& x : flip) x.is_target = !x.is_target;
    const double a = compute_eer(neg).eer, b = compute_eer(flip).eer;
    EXPECT_GE(a, 0.0);
    EXPECT_LE(a, 1.0);
    EXPECT_NEAR(a, b, 1e-12);
  }
}

TEST(Det, StaircaseProperties) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 30; ++i) {
    const auto t = random_trials(rng, 20 + rng() % 300, i % 2 == 0);
    const auto pts = det_points(t);
    std::set<double> distinct;
    for (const auto& x : t) distinct.insert(*x.score);
    EXPECT_LE(pts.size(), distinct.size() + 1);
    EXPECT_EQ(pts.front().far, 1.0);
    EXPECT_EQ(pts.front().frr, 0.0);
    EXPECT_EQ(pts.back().far, 0.0);
    EXPECT_EQ(pts.back().frr, 1.0);
    for (std::size_t k = 1; k < pts.size(); ++k) {
      EXPECT_LE(pts[k].far, pts[k - 1].far);
      EXPECT_GE(pts[k].frr, pts[k - 1].frr);
    }
    // The EER lies on a segment between adjacent points.
    const double eer = compute_eer(t).eer;
    bool on_segment = false;
    for (std::size_t k = 1; k < pts.size(); ++k) {
      const double lo = std::min(pts[k].far, pts[k - 1].far), hi = std::max(pts[k].far, pts[k - 1].far);
      const double lo2 = std::min(pts[k].frr, pts[k - 1].frr), hi2 = std::max(pts[k].frr, pts[k - 1].frr);
      if (eer >= lo - 1e-12 && eer <= hi + 1e-12 && eer >= lo2 - 1e-12 && eer <= hi2 + 1e-12) on_segment = true;
    }
    EXPECT_TRUE(on_segment);
  }
}

TEST(Stratified, PooledAndPerStratum) {
  std::vector<TrialRecord> t;
  std::map<std::string, std::vector<std::string>> strata;
  // Stratum "Quiet" separable, "TV" random-ish at 0.5.
  for (int i = 0; i < 4; ++i) {
    const std::string q = "q" + std::to_string(i), v = "v" + std::to_string(i);
    strata[q] = {"Quiet"};
    strata[v] = {"TV"};
    t.push_back({"s", q, i % 2 == 0, i % 2 == 0 ? 0.9 - 0.01 * i : 0.1 + 0.01 * i});
  }
  t.push_back({"s", "v0", true, 0.9});
  t.push_back({"s", "v1", true, 0.1});
  t.push_back({"s", "v2", false, 0.8});
  t.push_back({"s", "v3", false, 0.2});
  const auto r = stratified_eval(t, strata, {"Quiet", "TV", "Music"});
  ASSERT_EQ(r.strata.size(), 2u);
  EXPECT_EQ(r.strata[0].first, "Quiet");
  EXPECT_EQ(r.strata[0].second->eer, 0.0);
  EXPECT_EQ(r.strata[1].second->eer, 0.5);
  EXPECT_GT(r.total.eer, 0.0);
  EXPECT_LT(r.total.eer, 0.5);
  EXPECT_EQ(r.total.eer, compute_eer(t).eer);

  std::map<std::string, std::vector<std::string>> one;
  for (const auto& [k, _] : strata) one[k] = {"All"};
  const auto single = stratified_eval(t, one, {});
  EXPECT_EQ(single.strata[0].second->eer, compute_eer(t).eer);
  EXPECT_EQ(single.total.eer, r.total.eer);

  std::ostringstream os;
  write_eer_report(os, "baseline", r);
  EXPECT_EQ(os.str(), "system,Quiet,TV,Total\nbaseline,0.0000,50.0000," +
                          [&] {
                            std::ostringstream v;
                            v << std::fixed << std::setprecision(4) << 100 * r.total.eer;
                            return v.str();
                          }() + "\n");
}

TEST(Stratified, OneClassStratumIsAbsentAndMissingLabelsError) {
  const auto t = make_trials({0.9, 0.3}, {0.2});
  std::map<std::string, std::vector<std::string>> strata{
      {"t0", {"Music"}}, {"t1", {"Music"}}, {"i2", {"Quiet"}}};
  const auto r = stratified_eval(t, strata, {"Quiet", "Music"});
  ASSERT_EQ(r.strata.size(), 2u);
  EXPECT_FALSE(r.strata[0].second.has_value());
  EXPECT_FALSE(r.strata[1].second.has_value());
  std::ostringstream os;
  write_eer_report(os, "x", r);
  EXPECT_NE(os.str().find("NA,NA"), std::string::npos);
  strata.erase("i2");
  EXPECT_THROW(stratified_eval(t, strata, {}), DataError);
}

TEST(TrialFiles, ParseAndScoreFormat) {
  std::istringstream is("spkA utt1 target\nspkB utt1 nontarget\n\n");
  auto t = read_trials(is);
  ASSERT_EQ(t.size(), 2u);
  EXPECT_TRUE(t[0].is_target);
  EXPECT_FALSE(t[1].is_target);
  EXPECT_FALSE(t[0].score.has_value());
  t[0].score = 0.5;
  t[1].score = -0.1234567;
  std::ostringstream os;
  write_scores(os, t);
  EXPECT_EQ(os.str(), "spkA utt1 target 0.500000\nspkB utt1 nontarget -0.123457\n");
  std::istringstream back(os.str());
  const auto s = read_scores(back);
  EXPECT_DOUBLE_EQ(*s[1].score, -0.123457);

  std::istringstream bad("spkA utt1 maybe\n");
  EXPECT_THROW(read_trials(bad), DataError);
}

TEST(EmbeddingFile, RoundTripAndLayout) {
  std::vector<Embedding> e{{"alice", {1.0f, 2.0f, 3.0f}, 4}, {"bob", {-1.0f, 0.5f, 0.0f}, 2}};
  std::stringstream ss;
  write_embeddings(ss, e);
  const auto bytes = ss.str();
  EXPECT_EQ(bytes.substr(0, 4), "CIEV");
  EXPECT_EQ(bytes.size(), 16u + (2 + 5 + 12) + (2 + 3 + 12));
  const auto back = read_embeddings(ss);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].id, "alice");
  EXPECT_EQ(back[1].vector, e[1].vector);

  std::vector<Embedding> mixed{{"a", {1.0f}, 1}, {"b", {1.0f, 2.0f}, 1}};
  std::stringstream s2;
  EXPECT_THROW(write_embeddings(s2, mixed), ShapeError);
}
