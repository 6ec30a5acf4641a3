#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ciem/error.hpp"
#include "ciem/nncore.hpp"
#include "oracles.hpp"

using namespace ciem;

namespace {

template <typename T>
Matrix<T> random_matrix(std::size_t r, std::size_t c, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, scale);
  Matrix<T> m(r, c);
  for (auto& v : m.values()) v = static_cast<T>(g(rng));
  return m;
}

Network<double> random_net(std::size_t in, std::vector<std::size_t> hidden, std::size_t out,
                           Activation last, std::uint64_t seed) {
  auto net = init_network<double>(mlp_spec(in, hidden, out, last), seed);
  // Non-zero biases so every code path is exercised.
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 0.3);
  for (auto& l : net.layers) {
    for (auto& b : l.bias) b = g(rng);
  }
  return net;
}

}  // namespace

TEST(Init, DeterministicAndBounded) {
  const auto spec = mlp_spec(2, std::vector<std::size_t>{}, 3, Activation::kLinear);
  EXPECT_EQ(init_network<float>(spec, 7), init_network<float>(spec, 7));
  EXPECT_NE(init_network<float>(spec, 7), init_network<float>(spec, 8));

  const auto big = init_network<float>(
      mlp_spec(4437, std::vector<std::size_t>{}, 2048, Activation::kRelu), 1);
  const double a = std::sqrt(6.0 / (4437 + 2048));
  EXPECT_NEAR(a, 0.03042, 1e-5);
  double max_abs = 0.0;
  for (float w : big.layers[0].weights.values()) max_abs = std::max(max_abs, std::abs(double(w)));
  EXPECT_LE(max_abs, a);
  EXPECT_GT(max_abs, 0.9 * a);
  for (float b : big.layers[0].bias) EXPECT_EQ(b, 0.0f);
}

TEST(Init, RejectsZeroSizedLayer) {
  NetworkSpec spec{4, {3, 0}, {Activation::kRelu, Activation::kLinear}};
  EXPECT_THROW(init_network<float>(spec, 0), ConfigError);
  NetworkSpec no_layers{4, {}, {}};
  EXPECT_THROW(init_network<float>(no_layers, 0), ConfigError);
}

TEST(Forward, ZeroLinearLayerGivesZero) {
  Network<float> net;
  net.layers.push_back({Matrix<float>(2, 3), {0.0f, 0.0f}, Activation::kLinear});
  const auto out = forward(net, random_matrix<float>(4, 3, 1)).output();
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, ReluAndUniformSoftmax) {
  Network<float> relu;
  relu.layers.push_back({Matrix<float>(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1}), {0, 0, 0},
                         Activation::kRelu});
  const auto r = forward(relu, Matrix<float>(1, 3, {-1.0f, 2.0f, -3.0f})).output();
  EXPECT_EQ(r, Matrix<float>(1, 3, {0.0f, 2.0f, 0.0f}));

  const auto p = softmax_rows(Matrix<double>(2, 8));
  for (double v : p.values()) EXPECT_DOUBLE_EQ(v, 1.0 / 8.0);
}

TEST(Forward, SoftmaxRowsSumToOne) {
  const auto p = softmax_rows(random_matrix<float>(50, 17, 3, 30.0));
  for (std::size_t r = 0; r < p.rows(); ++r) {
    double s = 0.0;
    for (float v : p.row(r)) s += v;
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Forward, ShapeMismatch) {
  const auto net = init_network<float>(mlp_spec(4, std::vector<std::size_t>{3}, 2, Activation::kLinear), 0);
  EXPECT_THROW(forward(net, Matrix<float>(2, 5)), ShapeError);
}

TEST(Loss, CrossEntropyValues) {
  const std::vector<std::size_t> labels{3};
  EXPECT_NEAR(softmax_ce_loss(Matrix<double>(1, 8), labels).loss, std::log(8.0), 1e-12);
  EXPECT_NEAR(2.0794, std::log(8.0), 1e-4);

  const auto sharp = softmax_ce_loss(Matrix<double>(1, 3, {0.0, 0.0, 60.0}), std::vector<std::size_t>{2});
  EXPECT_LT(sharp.loss, 1e-20);
  EXPECT_GE(sharp.loss, 0.0);

  EXPECT_THROW(softmax_ce_loss(Matrix<double>(1, 3), std::vector<std::size_t>{3}), DataError);
  EXPECT_THROW(softmax_ce_loss(Matrix<double>(2, 3), std::vector<std::size_t>{0}), ShapeError);
}

TEST(Loss, CrossEntropyGradientMatchesFiniteDifference) {
  const Matrix<double> logits(1, 3, {1.0, 2.0, 3.0});
  const std::vector<std::size_t> label{2};
  const auto res = softmax_ce_loss(logits, label);
  for (std::size_t j = 0; j < 3; ++j) {
    auto up = logits, down = logits;
    up(0, j) += 1e-6;
    down(0, j) -= 1e-6;
    const double fd = (softmax_ce_loss(up, label).loss - softmax_ce_loss(down, label).loss) / 2e-6;
    EXPECT_LT(oracle::rel_err(res.grad(0, j), fd), 1e-4);
  }
}

TEST(Loss, MeanSquaredError) {
  const auto same = random_matrix<double>(4, 2, 5);
  const auto zero = mse_loss(same, same);
  EXPECT_EQ(zero.loss, 0.0);
  for (double g : zero.grad.values()) EXPECT_EQ(g, 0.0);

  EXPECT_DOUBLE_EQ(mse_loss(Matrix<double>(2, 1, 1.0), Matrix<double>(2, 1)).loss, 1.0);

  const auto pred = random_matrix<double>(5, 1, 6);
  const auto target = random_matrix<double>(5, 1, 7);
  const auto res = mse_loss(pred, target);
  for (std::size_t i = 0; i < 5; ++i) {
    auto up = pred, down = pred;
    up(i, 0) += 1e-6;
    down(i, 0) -= 1e-6;
    const double fd = (mse_loss(up, target).loss - mse_loss(down, target).loss) / 2e-6;
    EXPECT_LT(oracle::rel_err(res.grad(i, 0), fd), 1e-4);
  }
  EXPECT_THROW(mse_loss(Matrix<double>(2, 1), Matrix<double>(3, 1)), ShapeError);
}

TEST(Grl, ScalesByNegativeLambda) {
  const auto g = random_matrix<float>(3, 4, 11);
  const auto r = grl_backward(g, 1.5f);
  for (std::size_t k = 0; k < g.size(); ++k) EXPECT_EQ(r.storage()[k], -1.5f * g.storage()[k]);

  const auto zero = grl_backward(g, 0.0f);
  for (float v : zero.values()) EXPECT_EQ(v, 0.0f);
  const auto small = grl_backward(Matrix<float>(2, 3, 1.0f), 0.002f);
  for (float v : small.values()) EXPECT_EQ(v, -0.002f);
  EXPECT_THROW(grl_backward(g, -0.1f), ConfigError);
}

TEST(Grl, Algebra) {
  const auto g = random_matrix<double>(5, 5, 12);
  EXPECT_EQ(grl_backward(grl_backward(g, 1.0), 1.0), g);
  EXPECT_EQ(&grl_forward(g), &g);
}

TEST(Backward, MatchesFiniteDifferences) {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t in = 2 + rng() % 6, out = 2 + rng() % 4;
    std::vector<std::size_t> hidden(1 + rng() % 2);
    for (auto& h : hidden) h = 2 + rng() % 8;
    const bool classify = trial % 2 == 0;
    const auto net = random_net(in, hidden, out, classify ? Activation::kSoftmax : Activation::kLinear,
                                100 + trial);
    const auto x = random_matrix<double>(6, in, 200 + trial);
    std::vector<std::size_t> labels(6);
    for (auto& l : labels) l = rng() % out;
    const auto target = random_matrix<double>(6, out, 300 + trial);

    auto loss_of = [&](const Network<double>& n) {
      const auto p = forward(n, x);
      return classify ? softmax_ce_loss(p.logits, labels).loss : mse_loss(p.output(), target).loss;
    };
    const auto p = forward(net, x);
    const auto l = classify ? softmax_ce_loss(p.logits, labels) : mse_loss(p.output(), target);
    const auto analytic = backward(net, p, l.grad).params;
    const auto numeric = oracle::finite_difference<double>(net, loss_of, 1e-5);
    EXPECT_LT(oracle::max_rel_err(analytic, numeric, 1e-6), 1e-4) << "trial " << trial;
  }
}

TEST(Backward, InputGradientMatchesFiniteDifferences) {
  const auto net = random_net(4, {5, 3}, 2, Activation::kLinear, 9);
  const auto x = random_matrix<double>(3, 4, 10);
  const auto target = random_matrix<double>(3, 2, 11);
  const auto p = forward(net, x);
  const auto bp = backward(net, p, mse_loss(p.output(), target).grad);
  for (std::size_t k = 0; k < x.size(); ++k) {
    auto up = x, down = x;
    up.storage()[k] += 1e-6;
    down.storage()[k] -= 1e-6;
    const double fd = (mse_loss(forward(net, up).output(), target).loss -
                       mse_loss(forward(net, down).output(), target).loss) / 2e-6;
    EXPECT_LT(oracle::rel_err(bp.input_grad.storage()[k], fd, 1e-6), 1e-4);
  }
}

TEST(Backward, LinearInLossGradient) {
  const auto net = random_net(3, {4}, 2, Activation::kLinear, 13);
  const auto p = forward(net, random_matrix<double>(5, 3, 14));
  const auto g = random_matrix<double>(5, 2, 15);
  auto g2 = g;
  for (auto& v : g2.values()) v *= 2.0;
  auto once = backward(net, p, g).params;
  once.scale(2.0);
  EXPECT_EQ(once, backward(net, p, g2).params);
}

TEST(Backward, ReluSubgradientAtZeroIsZero) {
  Network<double> net;
  net.layers.push_back({Matrix<double>(1, 1, 1.0), {0.0}, Activation::kRelu});
  const auto p = forward(net, Matrix<double>(1, 1, 0.0));
  const auto bp = backward(net, p, Matrix<double>(1, 1, 1.0));
  EXPECT_EQ(bp.params.weights[0](0, 0), 0.0);
  EXPECT_EQ(bp.params.biases[0][0], 0.0);
}

TEST(Backward, ConvergedNetworkHasZeroGradient) {
  Network<double> net;
  net.layers.push_back({Matrix<double>(1, 2, {1.0, -1.0}), {0.5}, Activation::kLinear});
  const auto x = Matrix<double>(2, 2, {1.0, 2.0, 3.0, 1.0});
  const auto p = forward(net, x);
  const auto bp = backward(net, p, mse_loss(p.output(), p.output()).grad);
  for (double v : bp.params.weights[0].values()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(bp.params.biases[0][0], 0.0);
}

TEST(Backward, RejectsStaleActivations) {
  const auto net = random_net(3, {4}, 2, Activation::kLinear, 16);
  const auto other = random_net(3, {5}, 2, Activation::kLinear, 17);
  const auto p = forward(other, random_matrix<double>(2, 3, 18));
  EXPECT_THROW(backward(net, p, Matrix<double>(2, 2)), ShapeError);
  const auto q = forward(net, random_matrix<double>(2, 3, 19));
  EXPECT_THROW(backward(net, q, Matrix<double>(3, 2)), ShapeError);
}

TEST(Sgd, UpdateRule) {
  Network<float> net;
  net.layers.push_back({Matrix<float>(1, 1, 1.0f), {0.0f}, Activation::kLinear});
  auto g = GradientSet<float>::zeros_like(net);
  const auto before = net;
  sgd_step(net, g, 0.1f);
  EXPECT_EQ(net, before);
  g.weights[0](0, 0) = 0.5f;
  sgd_step(net, g, 0.1f);
  EXPECT_FLOAT_EQ(net.layers[0].weights(0, 0), 0.95f);

  auto twin = before;
  sgd_step(twin, g, 0.1f);
  EXPECT_EQ(twin, net);
}

TEST(Sgd, RejectsBadInputs) {
  auto net = init_network<float>(mlp_spec(2, std::vector<std::size_t>{}, 1, Activation::kLinear), 0);
  auto g = GradientSet<float>::zeros_like(net);
  EXPECT_THROW(sgd_step(net, g, 0.0f), ConfigError);
  g.biases[0][0] = std::numeric_limits<float>::quiet_NaN();
  EXPECT_THROW(sgd_step(net, g, 0.1f), NumericError);
}

TEST(Spec, SoftmaxOnlyOnLastLayer) {
  NetworkSpec bad{3, {4, 2}, {Activation::kSoftmax, Activation::kLinear}};
  EXPECT_THROW(bad.validate(), ConfigError);
  const auto net = init_network<float>(mlp_spec(3, std::vector<std::size_t>{4, 5}, 2, Activation::kSoftmax), 1);
  const auto p = forward(net, random_matrix<float>(7, 3, 2));
  ASSERT_EQ(p.outputs.size(), 3u);
  EXPECT_EQ(p.outputs[0].cols(), 4u);
  EXPECT_EQ(p.outputs[1].cols(), 5u);
  EXPECT_EQ(p.output().cols(), 2u);
  EXPECT_EQ(p.output().rows(), 7u);
  EXPECT_EQ(net.parameter_count(), 3u * 4 + 4 + 4 * 5 + 5 + 5 * 2 + 2);
}
