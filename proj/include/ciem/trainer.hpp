#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ciem/frontend.hpp"
#include "ciem/manifest.hpp"
#include "ciem/model.hpp"

namespace ciem {

enum class NumericMode { kFloat32, kFloat64 };
enum class TrainMode { kBaseline, kEnv, kSnr, kMulti };

std::string_view to_string(TrainMode m);
TrainMode train_mode_from_string(std::string_view s);

struct ConditionHeadSpec {
  ConditionKind kind = ConditionKind::kCategorical;
  std::vector<std::size_t> hidden{512, 512};
  std::size_t output_size = 1;  // E + 1 classes, or 1 for regression
  double lambda = 0.0;

  void validate() const;
};

ConditionHeadSpec environment_head(std::size_t classes, double lambda = 1.5,
                                   std::vector<std::size_t> hidden = {512, 512});
ConditionHeadSpec snr_head(double lambda = 0.002,
                           std::vector<std::size_t> hidden = {512, 512});

struct TrainConfig {
  std::size_t input_dim = 4437;
  std::vector<std::size_t> trunk_hidden{2048, 1024, 1024, 512, 200};
  std::size_t speaker_count = 8398;
  std::vector<ConditionHeadSpec> heads;
  std::size_t minibatch = 256;  // frames
  std::size_t epochs = 10;
  double lr = 0.01;
  double lr_decay = 1.0;  // multiplied in every `lr_decay_every` epochs
  std::size_t lr_decay_every = 1;
  std::uint64_t seed = 0;
  NumericMode numeric = NumericMode::kFloat32;
  double clean_snr_target_db = 40.0;

  void validate() const;
  double lr_at(std::size_t epoch) const;
};

/// Heads attached for each training mode (none for baseline; env then SNR for
/// multi-factor).
std::vector<ConditionHeadSpec> heads_for_mode(TrainMode mode, std::size_t env_classes,
                                              double env_lambda, double snr_lambda,
                                              const std::vector<std::size_t>& hidden);

/// Frames plus per-utterance labels. Every frame of an utterance inherits its
/// speaker, environment and SNR target.
template <typename T>
struct LabeledCorpus {
  std::vector<Matrix<T>> features;
  std::vector<std::size_t> speakers;
  std::vector<std::size_t> envs;
  std::vector<double> snr;

  std::size_t size() const noexcept { return features.size(); }
  std::size_t dim() const { return features.empty() ? 0 : features.front().cols(); }
  std::size_t total_frames() const;
  std::size_t env_classes() const;
  void validate() const;
};

/// Sorted speaker ids -> contiguous class indices.
std::map<std::string, std::size_t> speaker_index(std::span<const UtteranceMeta> metas);

template <typename T>
LabeledCorpus<T> make_corpus(std::span<const FeatureMatrix> features,
                             std::span<const UtteranceMeta> metas,
                             const std::map<std::string, std::size_t>& speakers,
                             double clean_snr_target_db = 40.0);

template <typename T>
struct Batch {
  Matrix<T> x;
  std::vector<std::size_t> speakers;
  std::vector<std::size_t> envs;
  Matrix<T> snr;  // frames x 1
};

/// Shuffles utterance order with `seed`, then cuts the concatenated frame
/// stream into chunks of `minibatch` frames (last chunk may be short).
template <typename T>
void for_each_batch(const LabeledCorpus<T>& corpus, std::size_t minibatch,
                    std::uint64_t seed, const std::function<void(const Batch<T>&)>& fn);

/// Loss and gradients of one objective for the trunk and the head on top.
/// `trunk` gradients are the true dL/dtheta_f (no reversal applied).
template <typename T>
struct PathGradients {
  T loss{};
  double metric = 0.0;  // accuracy for classifiers, MSE for regressors
  GradientSet<T> trunk;
  GradientSet<T> head;
};

template <typename T>
PathGradients<T> speaker_loss(const Matrix<T>& x, std::span<const std::size_t> labels,
                              const Network<T>& trunk, const Network<T>& speaker);

template <typename T>
PathGradients<T> condition_loss_categorical(const Matrix<T>& x,
                                            std::span<const std::size_t> envs,
                                            const Network<T>& trunk, const Network<T>& head);

template <typename T>
PathGradients<T> condition_loss_continuous(const Matrix<T>& x, const Matrix<T>& targets,
                                           const Network<T>& trunk, const Network<T>& head);

template <typename T>
struct BundleGradients {
  GradientSet<T> trunk;
  GradientSet<T> speaker;
  std::vector<GradientSet<T>> heads;
};

template <typename T>
struct StepMetrics {
  T speaker_loss{};
  double speaker_accuracy = 0.0;
  std::vector<T> head_losses;
  std::vector<double> head_metrics;
  std::size_t frames = 0;
};

template <typename T>
struct StepGradients {
  BundleGradients<T> grads;
  StepMetrics<T> metrics;
};

/// Gradients of one simultaneous minimax step. The trunk receives
/// dL_speaker + sum_i grl_backward(dL_cond_i, lambda_i); each head receives
/// its own dL_cond_i.
template <typename T>
StepGradients<T> adversarial_gradients(const Batch<T>& batch, const ModelBundle<T>& model);

/// adversarial_gradients followed by one SGD update of every parameter group.
template <typename T>
StepMetrics<T> adversarial_step(const Batch<T>& batch, ModelBundle<T>& model, T lr);

struct EpochStats {
  std::size_t epoch = 0;
  double speaker_loss = 0.0;
  double speaker_accuracy = 0.0;
  std::vector<double> head_losses;
  std::vector<double> head_metrics;
  double seconds = 0.0;
};

struct TrainReport {
  std::vector<ConditionKind> head_kinds;
  std::vector<EpochStats> epochs;
  std::vector<std::string> warnings;

  /// Columns: epoch, speaker_loss, head<i>_loss..., head<i>_metric..., seconds.
  void write_csv(std::ostream& os) const;
};

template <typename T>
struct TrainResult {
  ModelBundle<T> model;
  TrainReport report;
};

template <typename T>
ModelBundle<T> init_bundle(const TrainConfig& config);

/// Epoch loop. With `warm_start`, trunk and speaker head are copied from it
/// and the condition heads are freshly initialized.
template <typename T>
TrainResult<T> train(const LabeledCorpus<T>& corpus, const TrainConfig& config,
                     const ModelBundle<T>* warm_start = nullptr);

struct ProbeSpec {
  std::vector<std::size_t> hidden{64};
  std::size_t epochs = 60;
  double lr = 0.02;
  std::size_t minibatch = 64;
  double holdout = 0.3;
  std::uint64_t seed = 0;
};

struct ProbeResult {
  ConditionKind kind = ConditionKind::kCategorical;
  double metric = 0.0;  // held-out accuracy, or held-out MSE in dB^2
  double chance = 0.0;  // 1/E, or held-out target variance
  std::size_t classes = 0;
  std::size_t train_frames = 0;
  std::size_t test_frames = 0;
};

/// Trains a fresh condition predictor on frozen trunk outputs and scores it
/// on held-out utterances.
template <typename T>
ProbeResult probe_condition(const Network<T>& trunk, const LabeledCorpus<T>& corpus,
                            ConditionKind kind, const ProbeSpec& spec = {});

}  // namespace ciem
