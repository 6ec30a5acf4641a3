#include "ciem/nncore.hpp"

#include <cmath>
#include <random>
#include <string>

namespace ciem {

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kRelu:
      return "relu";
    case Activation::kSoftmax:
      return "softmax";
    case Activation::kLinear:
      return "linear";
  }
  return "unknown";
}

Activation activation_from_string(std::string_view s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "softmax") return Activation::kSoftmax;
  if (s == "linear") return Activation::kLinear;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

void NetworkSpec::validate() const {
  if (layer_sizes.empty()) throw ConfigError("network needs at least one layer");
  if (layer_sizes.size() != activations.size()) {
    throw ConfigError("network spec has " + std::to_string(layer_sizes.size()) +
                      " layers but " + std::to_string(activations.size()) +
                      " activations");
  }
  if (input_dim == 0) throw ConfigError("zero-sized network input");
  for (std::size_t i = 0; i < layer_sizes.size(); ++i) {
    if (layer_sizes[i] == 0) {
      throw ConfigError("zero-sized layer at index " + std::to_string(i));
    }
    if (activations[i] == Activation::kSoftmax && i + 1 != layer_sizes.size()) {
      throw ConfigError("softmax is only supported on the final layer");
    }
  }
}

NetworkSpec mlp_spec(std::size_t input_dim, std::span<const std::size_t> hidden,
                     std::size_t output_dim, Activation output_activation) {
  NetworkSpec spec;
  spec.input_dim = input_dim;
  spec.layer_sizes.assign(hidden.begin(), hidden.end());
  spec.activations.assign(hidden.size(), Activation::kRelu);
  spec.layer_sizes.push_back(output_dim);
  spec.activations.push_back(output_activation);
  return spec;
}

template <typename T>
std::size_t Network<T>::input_dim() const {
  return layers.empty() ? 0 : layers.front().in_dim();
}

template <typename T>
std::size_t Network<T>::output_dim() const {
  return layers.empty() ? 0 : layers.back().out_dim();
}

template <typename T>
NetworkSpec Network<T>::spec() const {
  NetworkSpec s;
  s.input_dim = input_dim();
  for (const auto& l : layers) {
    s.layer_sizes.push_back(l.out_dim());
    s.activations.push_back(l.activation);
  }
  return s;
}

template <typename T>
std::size_t Network<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

template <typename T>
GradientSet<T> GradientSet<T>::zeros_like(const Network<T>& net) {
  GradientSet g;
  for (const auto& l : net.layers) {
    g.weights.emplace_back(l.weights.rows(), l.weights.cols());
    g.biases.emplace_back(l.bias.size(), T{0});
  }
  return g;
}

template <typename T>
void GradientSet<T>::add(const GradientSet& other) {
  if (other.weights.size() != weights.size()) {
    throw ShapeError("gradient sets have different layer counts");
  }
  for (std::size_t l = 0; l < weights.size(); ++l) {
    if (!weights[l].same_shape(other.weights[l]) ||
        biases[l].size() != other.biases[l].size()) {
      throw ShapeError("gradient shape mismatch at layer " + std::to_string(l));
    }
    auto dst = weights[l].values();
    auto src = other.weights[l].values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    for (std::size_t i = 0; i < biases[l].size(); ++i) {
      biases[l][i] += other.biases[l][i];
    }
  }
}

template <typename T>
void GradientSet<T>::scale(T factor) {
  for (auto& w : weights) {
    for (auto& v : w.values()) v *= factor;
  }
  for (auto& b : biases) {
    for (auto& v : b) v *= factor;
  }
}

template <typename T>
bool GradientSet<T>::finite() const {
  for (const auto& w : weights) {
    if (!all_finite(w.values())) return false;
  }
  for (const auto& b : biases) {
    if (!all_finite(std::span<const T>(b))) return false;
  }
  return true;
}

template <typename T>
Network<T> init_network(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::mt19937_64 rng(seed);
  Network<T> net;
  std::size_t fan_in = spec.input_dim;
  for (std::size_t i = 0; i < spec.layer_sizes.size(); ++i) {
    const std::size_t fan_out = spec.layer_sizes[i];
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-a, a);
    DenseLayer<T> layer;
    layer.weights = Matrix<T>(fan_out, fan_in);
    for (auto& w : layer.weights.values()) w = static_cast<T>(dist(rng));
    layer.bias.assign(fan_out, T{0});
    layer.activation = spec.activations[i];
    net.layers.push_back(std::move(layer));
    fan_in = fan_out;
  }
  return net;
}

namespace {

// out[i][o] = bias[o] + <x_i, w_o>
template <typename T>
Matrix<T> affine(const DenseLayer<T>& layer, const Matrix<T>& x) {
  const std::size_t n = x.rows();
  const std::size_t in = layer.in_dim();
  const std::size_t out = layer.out_dim();
  Matrix<T> z(n, out);
  for (std::size_t i = 0; i < n; ++i) {
    const T* xi = x.row(i).data();
    T* zi = z.row(i).data();
    for (std::size_t o = 0; o < out; ++o) {
      const T* wo = layer.weights.row(o).data();
      T acc = layer.bias[o];
      for (std::size_t k = 0; k < in; ++k) acc += xi[k] * wo[k];
      zi[o] = acc;
    }
  }
  return z;
}

template <typename T>
void softmax_inplace(Matrix<T>& m) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    const T mx = *std::max_element(r.begin(), r.end());
    T sum{0};
    for (auto& v : r) {
      v = std::exp(v - mx);
      sum += v;
    }
    for (auto& v : r) v /= sum;
  }
}

}  // namespace

template <typename T>
ForwardPass<T> forward(const Network<T>& net, const Matrix<T>& x) {
  if (net.layers.empty()) throw ShapeError("forward through an empty network");
  if (x.cols() != net.input_dim()) {
    throw ShapeError("forward: input has " + std::to_string(x.cols()) +
                     " columns, network expects " +
                     std::to_string(net.input_dim()));
  }
  ForwardPass<T> pass;
  pass.input = x;
  pass.outputs.reserve(net.layers.size());
  const Matrix<T>* prev = &pass.input;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    Matrix<T> z = affine(layer, *prev);
    const bool last = l + 1 == net.layers.size();
    if (last) pass.logits = z;
    switch (layer.activation) {
      case Activation::kRelu:
        for (auto& v : z.values()) v = v > T{0} ? v : T{0};
        break;
      case Activation::kSoftmax:
        softmax_inplace(z);
        break;
      case Activation::kLinear:
        break;
    }
    pass.outputs.push_back(std::move(z));
    prev = &pass.outputs.back();
  }
  return pass;
}

template <typename T>
Matrix<T> softmax_rows(const Matrix<T>& logits) {
  Matrix<T> p = logits;
  softmax_inplace(p);
  return p;
}

template <typename T>
LossResult<T> softmax_ce_loss(const Matrix<T>& logits,
                              std::span<const std::size_t> labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("softmax_ce_loss: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows()) + " rows");
  }
  if (logits.rows() == 0) throw ShapeError("softmax_ce_loss: empty batch");
  const std::size_t k = logits.cols();
  LossResult<T> res;
  res.grad = Matrix<T>(logits.rows(), k);
  const T inv_n = T{1} / static_cast<T>(logits.rows());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    if (labels[i] >= k) {
      throw DataError("label " + std::to_string(labels[i]) +
                      " out of range for " + std::to_string(k) + " classes");
    }
    auto z = logits.row(i);
    const T mx = *std::max_element(z.begin(), z.end());
    T sum{0};
    auto g = res.grad.row(i);
    for (std::size_t c = 0; c < k; ++c) {
      g[c] = std::exp(z[c] - mx);
      sum += g[c];
    }
    total += static_cast<double>(std::log(sum) + mx - z[labels[i]]);
    for (std::size_t c = 0; c < k; ++c) g[c] = g[c] / sum * inv_n;
    g[labels[i]] -= inv_n;
  }
  res.loss = static_cast<T>(total / static_cast<double>(logits.rows()));
  return res;
}

template <typename T>
LossResult<T> mse_loss(const Matrix<T>& pred, const Matrix<T>& target) {
  if (!pred.same_shape(target)) {
    throw ShapeError("mse_loss: prediction " + shape_str(pred) + " vs target " +
                     shape_str(target));
  }
  if (pred.rows() == 0) throw ShapeError("mse_loss: empty batch");
  LossResult<T> res;
  res.grad = Matrix<T>(pred.rows(), pred.cols());
  const T scale = T{2} / static_cast<T>(pred.rows());
  double total = 0.0;
  auto p = pred.values();
  auto t = target.values();
  auto g = res.grad.values();
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    total += static_cast<double>(d) * static_cast<double>(d);
    g[i] = scale * d;
  }
  res.loss = static_cast<T>(total / static_cast<double>(pred.rows()));
  return res;
}

template <typename T>
Matrix<T> grl_backward(const Matrix<T>& upstream_grad, T lambda) {
  if (!(lambda >= T{0})) throw ConfigError("gradient reversal needs lambda >= 0");
  Matrix<T> out = upstream_grad;
  const T factor = -lambda;
  for (auto& v : out.values()) v *= factor;
  return out;
}

template <typename T>
Backprop<T> backward(const Network<T>& net, const ForwardPass<T>& pass,
                     const Matrix<T>& loss_grad) {
  const std::size_t nl = net.layers.size();
  if (pass.outputs.size() != nl) {
    throw ShapeError("backward: activations from a different network");
  }
  const std::size_t n = pass.input.rows();
  if (pass.input.cols() != net.input_dim()) {
    throw ShapeError("backward: stale input activations");
  }
  for (std::size_t l = 0; l < nl; ++l) {
    if (pass.outputs[l].rows() != n ||
        pass.outputs[l].cols() != net.layers[l].out_dim()) {
      throw ShapeError("backward: activation shape mismatch at layer " +
                       std::to_string(l));
    }
  }
  if (loss_grad.rows() != n || loss_grad.cols() != net.output_dim()) {
    throw ShapeError("backward: loss gradient is " + shape_str(loss_grad) +
                     ", expected " + shape_str(n, net.output_dim()));
  }

  Backprop<T> bp;
  bp.params = GradientSet<T>::zeros_like(net);
  Matrix<T> upstream = loss_grad;
  for (std::size_t li = nl; li-- > 0;) {
    const auto& layer = net.layers[li];
    const Matrix<T>& out = pass.outputs[li];
    // Turn the gradient w.r.t. this layer's output into one w.r.t. its
    // pre-activation. Softmax only appears last and is pre-fused.
    if (layer.activation == Activation::kRelu) {
      auto u = upstream.values();
      auto a = out.values();
      for (std::size_t i = 0; i < u.size(); ++i) {
        if (!(a[i] > T{0})) u[i] = T{0};
      }
    }
    const Matrix<T>& in = li == 0 ? pass.input : pass.outputs[li - 1];
    const std::size_t in_dim = layer.in_dim();
    const std::size_t out_dim = layer.out_dim();
    Matrix<T>& dw = bp.params.weights[li];
    std::vector<T>& db = bp.params.biases[li];
    for (std::size_t i = 0; i < n; ++i) {
      const T* gi = upstream.row(i).data();
      const T* xi = in.row(i).data();
      for (std::size_t o = 0; o < out_dim; ++o) {
        const T g = gi[o];
        db[o] += g;
        if (g == T{0}) continue;
        T* dwo = dw.row(o).data();
        for (std::size_t k = 0; k < in_dim; ++k) dwo[k] += g * xi[k];
      }
    }
    Matrix<T> down(n, in_dim);
    for (std::size_t i = 0; i < n; ++i) {
      const T* gi = upstream.row(i).data();
      T* di = down.row(i).data();
      for (std::size_t o = 0; o < out_dim; ++o) {
        const T g = gi[o];
        if (g == T{0}) continue;
        const T* wo = layer.weights.row(o).data();
        for (std::size_t k = 0; k < in_dim; ++k) di[k] += g * wo[k];
      }
    }
    upstream = std::move(down);
  }
  bp.input_grad = std::move(upstream);
  return bp;
}

template <typename T>
void sgd_step(Network<T>& net, const GradientSet<T>& grads, T lr) {
  if (!(lr > T{0})) throw ConfigError("learning rate must be positive");
  if (grads.weights.size() != net.layers.size() ||
      grads.biases.size() != net.layers.size()) {
    throw ShapeError("sgd_step: gradient set does not match network");
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    if (!grads.weights[l].same_shape(net.layers[l].weights) ||
        grads.biases[l].size() != net.layers[l].bias.size()) {
      throw ShapeError("sgd_step: gradient shape mismatch at layer " +
                       std::to_string(l));
    }
  }
  if (!grads.finite()) {
    throw NumericError("non-finite gradient; training aborted");
  }
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    auto w = net.layers[l].weights.values();
    auto gw = grads.weights[l].values();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * gw[i];
    auto& b = net.layers[l].bias;
    const auto& gb = grads.biases[l];
    for (std::size_t i = 0; i < b.size(); ++i) b[i] -= lr * gb[i];
  }
}

#define CIEM_INSTANTIATE(T)                                                   \
  template struct Network<T>;                                                 \
  template struct GradientSet<T>;                                             \
  template Network<T> init_network<T>(const NetworkSpec&, std::uint64_t);     \
  template ForwardPass<T> forward<T>(const Network<T>&, const Matrix<T>&);    \
  template Matrix<T> softmax_rows<T>(const Matrix<T>&);                       \
  template LossResult<T> softmax_ce_loss<T>(const Matrix<T>&,                 \
                                            std::span<const std::size_t>);    \
  template LossResult<T> mse_loss<T>(const Matrix<T>&, const Matrix<T>&);     \
  template Matrix<T> grl_backward<T>(const Matrix<T>&, T);                    \
  template Backprop<T> backward<T>(const Network<T>&, const ForwardPass<T>&,  \
                                   const Matrix<T>&);                         \
  template void sgd_step<T>(Network<T>&, const GradientSet<T>&, T);

CIEM_INSTANTIATE(float)
CIEM_INSTANTIATE(double)

#undef CIEM_INSTANTIATE

}  // namespace ciem
