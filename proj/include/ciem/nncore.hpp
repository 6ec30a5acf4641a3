#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "ciem/matrix.hpp"

namespace ciem {

enum class Activation : std::uint8_t { kRelu = 0, kSoftmax = 1, kLinear = 2 };

std::string_view to_string(Activation a);
Activation activation_from_string(std::string_view s);

/// Layer topology of a dense network. `layer_sizes[i]` is the output width of
/// layer i; softmax is only allowed on the final layer.
struct NetworkSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> layer_sizes;
  std::vector<Activation> activations;

  void validate() const;
  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Convenience: `hidden` relu layers followed by one `out` layer.
NetworkSpec mlp_spec(std::size_t input_dim, std::span<const std::size_t> hidden,
                     std::size_t output_dim, Activation output_activation);

template <typename T>
struct DenseLayer {
  Matrix<T> weights;  // out x in
  std::vector<T> bias;
  Activation activation = Activation::kLinear;

  std::size_t in_dim() const noexcept { return weights.cols(); }
  std::size_t out_dim() const noexcept { return weights.rows(); }
  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

template <typename T>
struct Network {
  std::vector<DenseLayer<T>> layers;

  std::size_t input_dim() const;
  std::size_t output_dim() const;
  NetworkSpec spec() const;
  std::size_t parameter_count() const;
  friend bool operator==(const Network&, const Network&) = default;
};

template <typename To, typename From>
Network<To> network_cast(const Network<From>& net) {
  Network<To> out;
  for (const auto& l : net.layers) {
    out.layers.push_back({matrix_cast<To>(l.weights),
                          std::vector<To>(l.bias.begin(), l.bias.end()),
                          l.activation});
  }
  return out;
}

/// Everything backward() needs: the input and each layer's post-activation
/// output. `logits` holds the final layer's pre-activation values.
template <typename T>
struct ForwardPass {
  Matrix<T> input;
  std::vector<Matrix<T>> outputs;
  Matrix<T> logits;

  const Matrix<T>& output() const { return outputs.back(); }
};

template <typename T>
struct GradientSet {
  std::vector<Matrix<T>> weights;
  std::vector<std::vector<T>> biases;

  static GradientSet zeros_like(const Network<T>& net);
  void add(const GradientSet& other);
  void scale(T factor);
  bool finite() const;
  friend bool operator==(const GradientSet&, const GradientSet&) = default;
};

template <typename T>
struct Backprop {
  GradientSet<T> params;
  Matrix<T> input_grad;
};

template <typename T>
struct LossResult {
  T loss{};
  Matrix<T> grad;
};

/// Weights ~ U(-a, a), a = sqrt(6 / (fan_in + fan_out)); biases zero.
template <typename T>
Network<T> init_network(const NetworkSpec& spec, std::uint64_t seed);

template <typename T>
ForwardPass<T> forward(const Network<T>& net, const Matrix<T>& x);

/// Row-wise softmax with max subtraction.
template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits);

/// Mean cross-entropy over rows; gradient is w.r.t. the logits.
template <typename T>
LossResult<T> softmax_ce_loss(const Matrix<T>& logits,
                              std::span<const std::size_t> labels);

/// Mean over rows of the squared error summed across columns.
template <typename T>
LossResult<T> mse_loss(const Matrix<T>& pred, const Matrix<T>& target);

/// Gradient reversal: identity on the way forward.
template <typename T>
const Matrix<T>& grl_forward(const Matrix<T>& x) noexcept {
  return x;
}

/// Gradient reversal: multiplies the upstream gradient by -lambda.
template <typename T>
Matrix<T> grl_backward(const Matrix<T>& upstream_grad, T lambda);

/// Reverse-mode gradients for every layer plus the gradient w.r.t. the input.
///
/// `loss_grad` is the gradient w.r.t. the network output, except when the
/// final layer is softmax: then it is the gradient w.r.t. the logits, as
/// returned by softmax_ce_loss. ReLU'(0) is taken as 0.
template <typename T>
Backprop<T> backward(const Network<T>& net, const ForwardPass<T>& pass,
                     const Matrix<T>& loss_grad);

/// theta <- theta - lr * grad. Throws NumericError on non-finite gradients.
template <typename T>
void sgd_step(Network<T>& net, const GradientSet<T>& grads, T lr);

}  // namespace ciem
