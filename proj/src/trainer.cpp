#include "ciem/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <set>
#include <sstream>

#include "ciem/rng.hpp"

namespace ciem {

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::kBaseline:
      return "baseline";
    case TrainMode::kEnv:
      return "env";
    case TrainMode::kSnr:
      return "snr";
    case TrainMode::kMulti:
      return "multi";
  }
  return "unknown";
}

TrainMode train_mode_from_string(std::string_view s) {
  if (s == "baseline") return TrainMode::kBaseline;
  if (s == "env") return TrainMode::kEnv;
  if (s == "snr") return TrainMode::kSnr;
  if (s == "multi") return TrainMode::kMulti;
  throw ConfigError("unknown training mode '" + std::string(s) +
                    "' (expected baseline, env, snr or multi)");
}

void ConditionHeadSpec::validate() const {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw ConfigError("condition head lambda must be finite and >= 0");
  }
  if (output_size == 0) throw ConfigError("condition head needs at least one output");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("zero-sized condition head layer");
  }
}

ConditionHeadSpec environment_head(std::size_t classes, double lambda,
                                   std::vector<std::size_t> hidden) {
  if (classes < 2) throw ConfigError("environment head needs at least 2 classes");
  return {ConditionKind::kCategorical, std::move(hidden), classes, lambda};
}

ConditionHeadSpec snr_head(double lambda, std::vector<std::size_t> hidden) {
  return {ConditionKind::kContinuous, std::move(hidden), 1, lambda};
}

void TrainConfig::validate() const {
  if (input_dim == 0) throw ConfigError("input_dim must be >= 1");
  if (trunk_hidden.empty()) throw ConfigError("trunk needs at least one layer");
  for (auto h : trunk_hidden) {
    if (h == 0) throw ConfigError("zero-sized trunk layer");
  }
  if (speaker_count == 0) throw ConfigError("speaker_count must be >= 1");
  if (minibatch == 0) throw ConfigError("minibatch must be >= 1");
  if (!(lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(lr_decay > 0.0) || lr_decay_every == 0) throw ConfigError("invalid lr decay");
  for (const auto& h : heads) h.validate();
}

double TrainConfig::lr_at(std::size_t epoch) const {
  return lr * std::pow(lr_decay, static_cast<double>(epoch / lr_decay_every));
}

std::vector<ConditionHeadSpec> heads_for_mode(TrainMode mode, std::size_t env_classes,
                                              double env_lambda, double snr_lambda,
                                              const std::vector<std::size_t>& hidden) {
  std::vector<ConditionHeadSpec> heads;
  if (mode == TrainMode::kEnv || mode == TrainMode::kMulti) {
    if (env_classes < 2) {
      throw ConfigError("environment head needs at least 2 classes, got " +
                        std::to_string(env_classes));
    }
    heads.push_back(environment_head(env_classes, env_lambda, hidden));
  }
  if (mode == TrainMode::kSnr || mode == TrainMode::kMulti) {
    heads.push_back(snr_head(snr_lambda, hidden));
  }
  return heads;
}

template <typename T>
std::size_t LabeledCorpus<T>::total_frames() const {
  std::size_t n = 0;
  for (const auto& f : features) n += f.rows();
  return n;
}

template <typename T>
std::size_t LabeledCorpus<T>::env_classes() const {
  if (envs.empty()) return 0;
  return *std::max_element(envs.begin(), envs.end()) + 1;
}

template <typename T>
void LabeledCorpus<T>::validate() const {
  if (features.empty()) throw DataError("empty training corpus");
  if (speakers.size() != features.size() || envs.size() != features.size() ||
      snr.size() != features.size()) {
    throw DataError("corpus label arrays are not aligned with utterances");
  }
  const std::size_t d = dim();
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (features[i].rows() == 0) {
      throw DataError("utterance " + std::to_string(i) + " has no frames");
    }
    if (features[i].cols() != d) throw ShapeError("corpus utterances have different dims");
    if (!std::isfinite(snr[i])) throw DataError("non-finite SNR target");
  }
}

std::map<std::string, std::size_t> speaker_index(std::span<const UtteranceMeta> metas) {
  std::set<std::string> ids;
  for (const auto& m : metas) ids.insert(m.speaker);
  std::map<std::string, std::size_t> index;
  for (const auto& id : ids) index.emplace(id, index.size());
  return index;
}

template <typename T>
LabeledCorpus<T> make_corpus(std::span<const FeatureMatrix> features,
                             std::span<const UtteranceMeta> metas,
                             const std::map<std::string, std::size_t>& speakers,
                             double clean_snr_target_db) {
  if (features.size() != metas.size()) {
    throw DataError("feature count does not match manifest size");
  }
  LabeledCorpus<T> c;
  for (std::size_t i = 0; i < metas.size(); ++i) {
    const auto it = speakers.find(metas[i].speaker);
    if (it == speakers.end()) {
      throw DataError("speaker '" + metas[i].speaker + "' not in label space");
    }
    c.features.push_back(matrix_cast<T>(features[i].values));
    c.speakers.push_back(it->second);
    c.envs.push_back(static_cast<std::size_t>(metas[i].env));
    c.snr.push_back(metas[i].snr_target(clean_snr_target_db));
  }
  c.validate();
  return c;
}

template <typename T>
void for_each_batch(const LabeledCorpus<T>& corpus, std::size_t minibatch,
                    std::uint64_t seed, const std::function<void(const Batch<T>&)>& fn) {
  if (minibatch == 0) throw ConfigError("minibatch must be >= 1");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  const std::size_t d = corpus.dim();
  std::size_t remaining = corpus.total_frames();
  std::size_t u = 0, t = 0;
  while (remaining > 0) {
    const std::size_t n = std::min(minibatch, remaining);
    Batch<T> b;
    b.x = Matrix<T>(n, d);
    b.snr = Matrix<T>(n, 1);
    b.speakers.resize(n);
    b.envs.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t utt = order[u];
      const auto& f = corpus.features[utt];
      std::copy_n(f.row(t).begin(), d, b.x.row(i).begin());
      b.speakers[i] = corpus.speakers[utt];
      b.envs[i] = corpus.envs[utt];
      b.snr(i, 0) = static_cast<T>(corpus.snr[utt]);
      if (++t == f.rows()) {
        t = 0;
        ++u;
      }
    }
    remaining -= n;
    fn(b);
  }
}

namespace {

template <typename T>
double argmax_accuracy(const Matrix<T>& posteriors, std::span<const std::size_t> labels) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < posteriors.rows(); ++i) {
    const auto r = posteriors.row(i);
    const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
    if (best == labels[i]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(posteriors.rows());
}

template <typename T>
PathGradients<T> through_trunk(const Matrix<T>& x, const Network<T>& trunk,
                               const Network<T>& head,
                               const std::function<LossResult<T>(const ForwardPass<T>&)>& loss,
                               const std::function<double(const ForwardPass<T>&)>& metric) {
  const auto tp = forward(trunk, x);
  const auto hp = forward(head, tp.output());
  auto l = loss(hp);
  auto hb = backward(head, hp, l.grad);
  auto tb = backward(trunk, tp, hb.input_grad);
  return {l.loss, metric(hp), std::move(tb.params), std::move(hb.params)};
}

template <typename T>
void check_finite_loss(T loss, std::string_view what) {
  if (!std::isfinite(loss)) {
    throw NumericError("non-finite " + std::string(what) + " loss; training aborted");
  }
}

}  // namespace

template <typename T>
PathGradients<T> speaker_loss(const Matrix<T>& x, std::span<const std::size_t> labels,
                              const Network<T>& trunk, const Network<T>& speaker) {
  return through_trunk<T>(
      x, trunk, speaker,
      [&](const ForwardPass<T>& p) { return softmax_ce_loss(p.logits, labels); },
      [&](const ForwardPass<T>& p) { return argmax_accuracy(p.output(), labels); });
}

template <typename T>
PathGradients<T> condition_loss_categorical(const Matrix<T>& x,
                                            std::span<const std::size_t> envs,
                                            const Network<T>& trunk, const Network<T>& head) {
  return through_trunk<T>(
      x, trunk, head,
      [&](const ForwardPass<T>& p) { return softmax_ce_loss(p.logits, envs); },
      [&](const ForwardPass<T>& p) { return argmax_accuracy(p.output(), envs); });
}

template <typename T>
PathGradients<T> condition_loss_continuous(const Matrix<T>& x, const Matrix<T>& targets,
                                           const Network<T>& trunk, const Network<T>& head) {
  if (!all_finite(targets.values())) throw DataError("non-finite regression target");
  return through_trunk<T>(
      x, trunk, head, [&](const ForwardPass<T>& p) { return mse_loss(p.output(), targets); },
      [&](const ForwardPass<T>& p) {
        return static_cast<double>(mse_loss(p.output(), targets).loss);
      });
}

template <typename T>
StepGradients<T> adversarial_gradients(const Batch<T>& batch, const ModelBundle<T>& model) {
  StepGradients<T> out;
  out.metrics.frames = batch.x.rows();

  const auto tp = forward(model.trunk, batch.x);
  const Matrix<T>& emb = tp.output();

  const auto sp = forward(model.speaker, emb);
  const auto ce = softmax_ce_loss(sp.logits, batch.speakers);
  check_finite_loss(ce.loss, "speaker");
  auto sb = backward(model.speaker, sp, ce.grad);
  out.metrics.speaker_loss = ce.loss;
  out.metrics.speaker_accuracy = argmax_accuracy(sp.output(), batch.speakers);
  out.grads.speaker = std::move(sb.params);

  Matrix<T> emb_grad = std::move(sb.input_grad);
  for (const auto& head : model.heads) {
    const auto hp = forward(head.net, grl_forward(emb));
    LossResult<T> l;
    double metric = 0.0;
    if (head.kind == ConditionKind::kCategorical) {
      l = softmax_ce_loss(hp.logits, batch.envs);
      metric = argmax_accuracy(hp.output(), batch.envs);
    } else {
      if (!all_finite(batch.snr.values())) throw DataError("non-finite regression target");
      l = mse_loss(hp.output(), batch.snr);
      metric = static_cast<double>(l.loss);
    }
    check_finite_loss(l.loss, "condition");
    auto hb = backward(head.net, hp, l.grad);
    const auto reversed = grl_backward(hb.input_grad, head.lambda);
    auto dst = emb_grad.values();
    auto src = reversed.values();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
    out.metrics.head_losses.push_back(l.loss);
    out.metrics.head_metrics.push_back(metric);
    out.grads.heads.push_back(std::move(hb.params));
  }

  out.grads.trunk = std::move(backward(model.trunk, tp, emb_grad).params);
  return out;
}

template <typename T>
StepMetrics<T> adversarial_step(const Batch<T>& batch, ModelBundle<T>& model, T lr) {
  auto step = adversarial_gradients(batch, model);
  sgd_step(model.trunk, step.grads.trunk, lr);
  sgd_step(model.speaker, step.grads.speaker, lr);
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    sgd_step(model.heads[i].net, step.grads.heads[i], lr);
  }
  return std::move(step.metrics);
}

void TrainReport::write_csv(std::ostream& os) const {
  os << "epoch,speaker_loss";
  for (std::size_t i = 0; i < head_kinds.size(); ++i) os << ",head" << i << "_loss";
  for (std::size_t i = 0; i < head_kinds.size(); ++i) os << ",head" << i << "_metric";
  os << ",seconds\n";
  std::ostringstream line;
  line.precision(9);
  for (const auto& e : epochs) {
    line.str("");
    line << e.epoch << ',' << e.speaker_loss;
    for (double v : e.head_losses) line << ',' << v;
    for (double v : e.head_metrics) line << ',' << v;
    line << ',' << e.seconds << '\n';
    os << line.str();
  }
}

namespace {

template <typename T>
ConditionHead<T> init_head(const ConditionHeadSpec& spec, std::size_t emb_dim,
                           std::uint64_t seed) {
  const Activation out = spec.kind == ConditionKind::kCategorical ? Activation::kSoftmax
                                                                   : Activation::kLinear;
  return {spec.kind, static_cast<T>(spec.lambda),
          init_network<T>(mlp_spec(emb_dim, spec.hidden, spec.output_size, out), seed)};
}

template <typename T>
void check_label_spaces(const LabeledCorpus<T>& corpus, const TrainConfig& config) {
  if (corpus.dim() != config.input_dim) {
    throw ConfigError("corpus dim " + std::to_string(corpus.dim()) + " != input_dim " +
                      std::to_string(config.input_dim));
  }
  const auto max_spk = *std::max_element(corpus.speakers.begin(), corpus.speakers.end());
  if (max_spk >= config.speaker_count) {
    throw ConfigError("speaker label " + std::to_string(max_spk) + " exceeds speaker_count " +
                      std::to_string(config.speaker_count));
  }
  for (const auto& h : config.heads) {
    if (h.kind == ConditionKind::kCategorical && corpus.env_classes() > h.output_size) {
      throw ConfigError("environment labels need " + std::to_string(corpus.env_classes()) +
                        " classes but the head has " + std::to_string(h.output_size));
    }
    if (h.kind == ConditionKind::kContinuous && h.output_size != 1) {
      throw ConfigError("SNR regression head must have exactly one output");
    }
  }
}

}  // namespace

template <typename T>
ModelBundle<T> init_bundle(const TrainConfig& config) {
  config.validate();
  NetworkSpec trunk;
  trunk.input_dim = config.input_dim;
  trunk.layer_sizes = config.trunk_hidden;
  trunk.activations.assign(config.trunk_hidden.size(), Activation::kRelu);
  const std::size_t emb = config.trunk_hidden.back();
  ModelBundle<T> b;
  b.trunk = init_network<T>(trunk, derive_seed(config.seed, "trunk"));
  b.speaker = init_network<T>(mlp_spec(emb, {}, config.speaker_count, Activation::kSoftmax),
                              derive_seed(config.seed, "speaker"));
  for (std::size_t i = 0; i < config.heads.size(); ++i) {
    b.heads.push_back(init_head<T>(config.heads[i], emb, derive_seed(config.seed, "head", i)));
  }
  return b;
}

template <typename T>
TrainResult<T> train(const LabeledCorpus<T>& corpus, const TrainConfig& config,
                     const ModelBundle<T>* warm_start) {
  config.validate();
  corpus.validate();
  check_label_spaces(corpus, config);

  TrainResult<T> res;
  res.model = init_bundle<T>(config);
  if (warm_start != nullptr) {
    if (warm_start->trunk.spec() != res.model.trunk.spec() ||
        warm_start->speaker.spec() != res.model.speaker.spec()) {
      throw ConfigError("warm-start model topology does not match the training config");
    }
    res.model.trunk = warm_start->trunk;
    res.model.speaker = warm_start->speaker;
  }
  double snr_sum = 0.0;
  for (std::size_t u = 0; u < corpus.size(); ++u) {
    snr_sum += corpus.snr[u] * static_cast<double>(corpus.features[u].rows());
  }
  const double snr_mean = snr_sum / static_cast<double>(std::max<std::size_t>(corpus.total_frames(), 1));
  for (auto& h : res.model.heads) {
    res.report.head_kinds.push_back(h.kind);
    // Regression heads start at the mean target so early steps don't kill their ReLUs.
    if (h.kind == ConditionKind::kContinuous) h.net.layers.back().bias.assign(1, static_cast<T>(snr_mean));
  }

  bool first_step = true;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const T lr = static_cast<T>(config.lr_at(epoch));
    EpochStats stats;
    stats.epoch = epoch;
    stats.head_losses.assign(res.model.heads.size(), 0.0);
    stats.head_metrics.assign(res.model.heads.size(), 0.0);
    std::size_t frames = 0;
    for_each_batch<T>(corpus, config.minibatch, derive_seed(config.seed, "shuffle", epoch),
                      [&](const Batch<T>& batch) {
                        const auto m = adversarial_step(batch, res.model, lr);
                        if (first_step) {
                          for (std::size_t i = 0; i < m.head_losses.size(); ++i) {
                            const double weighted =
                                static_cast<double>(res.model.heads[i].lambda) *
                                std::abs(static_cast<double>(m.head_losses[i]));
                            if (weighted > 10.0 * std::abs(static_cast<double>(m.speaker_loss))) {
                              std::ostringstream w;
                              w << "head " << i << ": lambda*L_condition = " << weighted
                                << " exceeds 10x the speaker loss " << m.speaker_loss
                                << " at step 0";
                              res.report.warnings.push_back(w.str());
                            }
                          }
                          first_step = false;
                        }
                        const double n = static_cast<double>(m.frames);
                        frames += m.frames;
                        stats.speaker_loss += n * static_cast<double>(m.speaker_loss);
                        stats.speaker_accuracy += n * m.speaker_accuracy;
                        for (std::size_t i = 0; i < m.head_losses.size(); ++i) {
                          stats.head_losses[i] += n * static_cast<double>(m.head_losses[i]);
                          stats.head_metrics[i] += n * m.head_metrics[i];
                        }
                      });
    const double n = static_cast<double>(frames);
    stats.speaker_loss /= n;
    stats.speaker_accuracy /= n;
    for (auto& v : stats.head_losses) v /= n;
    for (auto& v : stats.head_metrics) v /= n;
    stats.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    res.report.epochs.push_back(std::move(stats));
  }
  return res;
}

template <typename T>
ProbeResult probe_condition(const Network<T>& trunk, const LabeledCorpus<T>& corpus,
                            ConditionKind kind, const ProbeSpec& spec) {
  corpus.validate();
  if (corpus.size() < 2) throw DataError("probe needs at least two utterances");
  if (!(spec.holdout > 0.0 && spec.holdout < 1.0)) {
    throw ConfigError("probe holdout fraction must be in (0, 1)");
  }
  if (!(spec.lr > 0.0) || spec.minibatch == 0) throw ConfigError("invalid probe optimizer settings");

  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(derive_seed(spec.seed, "probe-split"));
  std::shuffle(order.begin(), order.end(), rng);
  auto n_test = static_cast<std::size_t>(std::lround(spec.holdout * static_cast<double>(order.size())));
  n_test = std::clamp<std::size_t>(n_test, 1, order.size() - 1);

  LabeledCorpus<T> train_set, test_set;
  for (std::size_t k = 0; k < order.size(); ++k) {
    const std::size_t u = order[k];
    auto& dst = k < n_test ? test_set : train_set;
    dst.features.push_back(forward(trunk, corpus.features[u]).output());
    dst.speakers.push_back(0);
    dst.envs.push_back(corpus.envs[u]);
    dst.snr.push_back(corpus.snr[u]);
  }

  const std::size_t d = train_set.dim();
  std::vector<double> mean(d, 0.0), sq(d, 0.0);
  double t_mean = 0.0, t_sq = 0.0;
  std::size_t n_train = 0;
  for (std::size_t u = 0; u < train_set.size(); ++u) {
    const auto& f = train_set.features[u];
    for (std::size_t t = 0; t < f.rows(); ++t) {
      for (std::size_t j = 0; j < d; ++j) {
        const double v = f(t, j);
        mean[j] += v;
        sq[j] += v * v;
      }
      t_mean += train_set.snr[u];
      t_sq += train_set.snr[u] * train_set.snr[u];
    }
    n_train += f.rows();
  }
  std::vector<double> var(d), inv_std(d, 0.0);
  double mean_var = 0.0;
  for (std::size_t j = 0; j < d; ++j) {
    mean[j] /= static_cast<double>(n_train);
    var[j] = std::max(0.0, sq[j] / static_cast<double>(n_train) - mean[j] * mean[j]);
    mean_var += var[j] / static_cast<double>(d);
  }
  // Units (nearly) constant on the training split, e.g. dead ReLUs, carry no
  // usable signal and would blow up under rescaling; they are zeroed.
  for (std::size_t j = 0; j < d; ++j) {
    if (var[j] > 1e-6 * mean_var + 1e-12) inv_std[j] = 1.0 / std::sqrt(var[j]);
  }
  t_mean /= static_cast<double>(n_train);
  const double t_var = std::max(0.0, t_sq / static_cast<double>(n_train) - t_mean * t_mean);
  const double t_std = t_var > 1e-12 ? std::sqrt(t_var) : 1.0;
  for (auto* set : {&train_set, &test_set}) {
    for (std::size_t u = 0; u < set->size(); ++u) {
      auto& f = set->features[u];
      for (std::size_t t = 0; t < f.rows(); ++t) {
        auto r = f.row(t);
        for (std::size_t j = 0; j < d; ++j) {
          r[j] = static_cast<T>((static_cast<double>(r[j]) - mean[j]) * inv_std[j]);
        }
      }
      set->snr[u] = (set->snr[u] - t_mean) / t_std;
    }
  }

  ProbeResult res;
  res.kind = kind;
  res.train_frames = n_train;
  res.test_frames = test_set.total_frames();
  const bool categorical = kind == ConditionKind::kCategorical;
  res.classes = categorical ? corpus.env_classes() : 1;
  const auto out_act = categorical ? Activation::kSoftmax : Activation::kLinear;
  auto net = init_network<T>(mlp_spec(d, spec.hidden, res.classes, out_act),
                             derive_seed(spec.seed, "probe-init"));
  const T lr = static_cast<T>(spec.lr);
  for (std::size_t epoch = 0; epoch < spec.epochs; ++epoch) {
    for_each_batch<T>(train_set, spec.minibatch, derive_seed(spec.seed, "probe-shuffle", epoch),
                      [&](const Batch<T>& b) {
                        const auto p = forward(net, b.x);
                        const auto l = categorical ? softmax_ce_loss(p.logits, b.envs)
                                                   : mse_loss(p.output(), b.snr);
                        check_finite_loss(l.loss, "probe");
                        sgd_step(net, backward(net, p, l.grad).params, lr);
                      });
  }

  double score = 0.0, target_sum = 0.0, target_sq = 0.0;
  for (std::size_t u = 0; u < test_set.size(); ++u) {
    const auto p = forward(net, test_set.features[u]);
    const auto& out = p.output();
    const double target_db = test_set.snr[u] * t_std + t_mean;
    for (std::size_t t = 0; t < out.rows(); ++t) {
      if (categorical) {
        const auto r = out.row(t);
        const auto best = static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
        score += best == test_set.envs[u] ? 1.0 : 0.0;
      } else {
        const double pred_db = static_cast<double>(out(t, 0)) * t_std + t_mean;
        score += (pred_db - target_db) * (pred_db - target_db);
        target_sum += target_db;
        target_sq += target_db * target_db;
      }
    }
  }
  const double n_test_frames = static_cast<double>(res.test_frames);
  res.metric = score / n_test_frames;
  if (categorical) {
    res.chance = 1.0 / static_cast<double>(res.classes);
  } else {
    const double m = target_sum / n_test_frames;
    res.chance = std::max(0.0, target_sq / n_test_frames - m * m);
  }
  return res;
}

#define CIEM_INSTANTIATE(T)                                                                  \
  template struct LabeledCorpus<T>;                                                          \
  template LabeledCorpus<T> make_corpus<T>(std::span<const FeatureMatrix>,                   \
                                           std::span<const UtteranceMeta>,                   \
                                           const std::map<std::string, std::size_t>&, double); \
  template void for_each_batch<T>(const LabeledCorpus<T>&, std::size_t, std::uint64_t,       \
                                  const std::function<void(const Batch<T>&)>&);              \
  template PathGradients<T> speaker_loss<T>(const Matrix<T>&, std::span<const std::size_t>,  \
                                            const Network<T>&, const Network<T>&);           \
  template PathGradients<T> condition_loss_categorical<T>(                                   \
      const Matrix<T>&, std::span<const std::size_t>, const Network<T>&, const Network<T>&); \
  template PathGradients<T> condition_loss_continuous<T>(const Matrix<T>&, const Matrix<T>&, \
                                                         const Network<T>&,                  \
                                                         const Network<T>&);                 \
  template StepGradients<T> adversarial_gradients<T>(const Batch<T>&, const ModelBundle<T>&); \
  template StepMetrics<T> adversarial_step<T>(const Batch<T>&, ModelBundle<T>&, T);          \
  template ModelBundle<T> init_bundle<T>(const TrainConfig&);                                \
  template TrainResult<T> train<T>(const LabeledCorpus<T>&, const TrainConfig&,              \
                                   const ModelBundle<T>*);                                   \
  template ProbeResult probe_condition<T>(const Network<T>&, const LabeledCorpus<T>&,        \
                                          ConditionKind, const ProbeSpec&);

CIEM_INSTANTIATE(float)
CIEM_INSTANTIATE(double)

#undef CIEM_INSTANTIATE

}  // namespace ciem
