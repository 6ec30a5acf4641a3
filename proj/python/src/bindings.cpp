#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <optional>
#include <string>
#include <vector>

#include "ciem/error.hpp"
#include "ciem/frontend.hpp"
#include "ciem/model.hpp"
#include "ciem/noisemix.hpp"
#include "ciem/pipeline.hpp"
#include "ciem/trainer.hpp"
#include "ciem/verify.hpp"

namespace py = pybind11;
using namespace ciem;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

template <typename T, typename A>
Matrix<T> to_matrix(const A& a) {
  if (a.ndim() != 2) throw ShapeError("expected a 2-D array, got " + std::to_string(a.ndim()) + "-D");
  const auto* p = a.data();
  return Matrix<T>(a.shape(0), a.shape(1), std::vector<T>(p, p + a.size()));
}

template <typename T>
py::array_t<T> to_array(const Matrix<T>& m) {
  const auto rows = static_cast<py::ssize_t>(m.rows()), cols = static_cast<py::ssize_t>(m.cols());
  const auto item = static_cast<py::ssize_t>(sizeof(T));
  return py::array_t<T>(std::vector<py::ssize_t>{rows, cols}, std::vector<py::ssize_t>{cols * item, item},
                        m.storage().data());
}

py::array_t<float> to_array(const std::vector<float>& v) {
  return py::array_t<float>(std::vector<py::ssize_t>{static_cast<py::ssize_t>(v.size())},
                            std::vector<py::ssize_t>{sizeof(float)}, v.data());
}

Waveform to_wave(const FloatArray& samples, int sample_rate) {
  if (samples.ndim() != 1) throw ShapeError("waveform must be a 1-D array");
  Waveform w;
  w.samples.assign(samples.data(), samples.data() + samples.size());
  w.sample_rate = sample_rate;
  return w;
}

FeatureMatrix staged(const FloatArray& a, FeatureStage stage) {
  return {to_matrix<float>(a), stage};
}

// Utterance-level labels from Python lists; missing SNR means clean speech.
std::vector<UtteranceMeta> make_metas(std::size_t n, const std::vector<std::string>& speakers,
                                      const std::optional<std::vector<int>>& envs,
                                      const std::optional<std::vector<std::optional<double>>>& snr) {
  auto check = [n](std::size_t got, const char* what) {
    if (got != n) {
      throw ShapeError(std::string(what) + " has " + std::to_string(got) + " entries for " +
                       std::to_string(n) + " utterances");
    }
  };
  check(speakers.size(), "speakers");
  if (envs) check(envs->size(), "envs");
  if (snr) check(snr->size(), "snr_db");
  std::vector<UtteranceMeta> metas(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& m = metas[i];
    m.id = "utt" + std::to_string(i);
    m.speaker = speakers[i];
    m.env = envs ? (*envs)[i] : 0;
    if (snr) m.snr_db = (*snr)[i];
    m.clean = !m.snr_db.has_value();
  }
  return metas;
}

std::vector<FeatureMatrix> make_features(const std::vector<FloatArray>& feats) {
  std::vector<FeatureMatrix> out;
  out.reserve(feats.size());
  for (const auto& f : feats) out.push_back(staged(f, FeatureStage::kNormalized));
  return out;
}

py::dict epoch_dict(const EpochStats& e) {
  py::dict d;
  d["epoch"] = e.epoch;
  d["speaker_loss"] = e.speaker_loss;
  d["speaker_accuracy"] = e.speaker_accuracy;
  d["head_losses"] = e.head_losses;
  d["head_metrics"] = e.head_metrics;
  d["seconds"] = e.seconds;
  return d;
}

template <typename T>
ModelBundle<float> run_train(const std::vector<FeatureMatrix>& feats,
                             const std::vector<UtteranceMeta>& metas, const TrainConfig& tc,
                             const ModelBundle<float>* warm, TrainReport& report) {
  const auto corpus = make_corpus<T>(feats, metas, speaker_index(metas), tc.clean_snr_target_db);
  std::optional<ModelBundle<T>> warm_t;
  if (warm) warm_t = bundle_cast<T>(*warm);
  auto res = train<T>(corpus, tc, warm_t ? &*warm_t : nullptr);
  report = std::move(res.report);
  return bundle_cast<float>(res.model);
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Speaker embeddings with adversarial condition heads";
  m.attr("__version__") = std::string(kToolVersion);

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", base.ptr());
  py::register_exception<ShapeError>(m, "ShapeError", base.ptr());
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<StateError>(m, "StateError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  m.def(
      "log_mel_fbank",
      [](const FloatArray& samples, int sample_rate) {
        return to_array(log_mel_fbank(to_wave(samples, sample_rate)).values);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000);
  m.def(
      "add_deltas",
      [](const FloatArray& fbank, int window) {
        return to_array(add_deltas(staged(fbank, FeatureStage::kFbank), window).values);
      },
      py::arg("fbank"), py::arg("window") = 2);
  m.def(
      "splice",
      [](const FloatArray& deltas, int left, int right) {
        return to_array(splice(staged(deltas, FeatureStage::kFbankDelta), left, right).values);
      },
      py::arg("deltas"), py::arg("left") = 25, py::arg("right") = 25);
  m.def(
      "extract_features",
      [](const FloatArray& samples, int sample_rate) {
        return to_array(extract_features(to_wave(samples, sample_rate)).values);
      },
      py::arg("samples"), py::arg("sample_rate") = 16000,
      "Spliced fbank+delta features (frames x 4437), before CMVN.");
  m.def(
      "fit_cmvn",
      [](const std::vector<FloatArray>& corpus) {
        std::vector<FeatureMatrix> feats;
        for (const auto& f : corpus) feats.push_back(staged(f, FeatureStage::kSpliced));
        const auto st = fit_cmvn(feats);
        return py::make_tuple(st.mean, st.var);
      },
      py::arg("corpus"), "Returns (mean, var) over every frame of the corpus.");
  m.def(
      "apply_cmvn",
      [](const FloatArray& feats, std::vector<double> mean, std::vector<double> var) {
        CmvnStats st{std::move(mean), std::move(var), 0};
        return to_array(apply_cmvn(staged(feats, FeatureStage::kSpliced), st).values);
      },
      py::arg("features"), py::arg("mean"), py::arg("var"));

  m.def("snr_gain", &snr_gain, py::arg("p_clean"), py::arg("p_noise"), py::arg("snr_db"));
  m.def(
      "mix_at_snr",
      [](const FloatArray& clean, const FloatArray& noise, double snr_db, std::uint64_t seed,
         int sample_rate) {
        const auto r = mix_at_snr(to_wave(clean, sample_rate), to_wave(noise, sample_rate), snr_db, seed);
        py::dict d;
        d["mixed"] = to_array(r.mixed.samples);
        d["gain"] = r.gain;
        d["offset"] = r.offset;
        d["clipped"] = r.clipped;
        return d;
      },
      py::arg("clean"), py::arg("noise"), py::arg("snr_db"), py::arg("seed") = 0,
      py::arg("sample_rate") = 16000);

  m.def(
      "gen_toy_dataset",
      [](std::size_t n_speakers, std::size_t n_envs, std::size_t dim, std::size_t frames_per_utt,
         std::size_t utts_per_speaker, std::uint64_t seed, double centroid_scale,
         double env_offset_scale, double noise_std) {
        ToySpec spec{n_speakers, n_envs,         dim,           frames_per_utt, utts_per_speaker,
                     seed,       centroid_scale, env_offset_scale, noise_std};
        const auto ds = gen_toy_dataset(spec);
        py::list feats, speakers, envs, snr, ids;
        for (std::size_t i = 0; i < ds.features.size(); ++i) {
          feats.append(to_array(ds.features[i].values));
          speakers.append(ds.meta[i].speaker);
          envs.append(ds.meta[i].env);
          snr.append(*ds.meta[i].snr_db);
          ids.append(ds.meta[i].id);
        }
        py::dict d;
        d["features"] = feats;
        d["speakers"] = speakers;
        d["envs"] = envs;
        d["snr_db"] = snr;
        d["ids"] = ids;
        return d;
      },
      py::arg("n_speakers") = 16, py::arg("n_envs") = 3, py::arg("dim") = 20,
      py::arg("frames_per_utt") = 20, py::arg("utts_per_speaker") = 12, py::arg("seed") = 0,
      py::arg("centroid_scale") = 1.0, py::arg("env_offset_scale") = 1.0, py::arg("noise_std") = 0.5);

  m.def(
      "grl_backward",
      [](const DoubleArray& grad, double lambda) {
        return to_array(grl_backward(to_matrix<double>(grad), lambda));
      },
      py::arg("grad"), py::arg("lam"));

  py::class_<ModelBundle<float>>(m, "Model")
      .def_property_readonly("embedding_dim", &ModelBundle<float>::embedding_dim)
      .def_property_readonly("input_dim", [](const ModelBundle<float>& b) { return b.trunk.input_dim(); })
      .def_property_readonly("speaker_count",
                             [](const ModelBundle<float>& b) { return b.speaker.output_dim(); })
      .def_property_readonly("heads",
                             [](const ModelBundle<float>& b) {
                               py::list out;
                               for (const auto& h : b.heads) {
                                 out.append(py::make_tuple(std::string(to_string(h.kind)),
                                                           static_cast<double>(h.lambda),
                                                           h.net.output_dim()));
                               }
                               return out;
                             })
      .def(
          "embed",
          [](const ModelBundle<float>& b, const FloatArray& frames) {
            return to_array(extract_embedding(b.trunk, to_matrix<float>(frames)).vector);
          },
          py::arg("frames"), "Mean of last-hidden-layer activations over the frames.")
      .def(
          "activations",
          [](const ModelBundle<float>& b, const FloatArray& frames) {
            return to_array(forward(b.trunk, to_matrix<float>(frames)).output());
          },
          py::arg("frames"))
      .def("save", [](const ModelBundle<float>& b, const std::filesystem::path& p) { save_model(p, b); },
           py::arg("path"))
      .def("__eq__", [](const ModelBundle<float>& a, const ModelBundle<float>& b) { return a == b; });

  m.def("load_model", &load_model, py::arg("path"));

  m.def(
      "train",
      [](const std::vector<FloatArray>& features, const std::vector<std::string>& speakers,
         std::optional<std::vector<int>> envs, std::optional<std::vector<std::optional<double>>> snr_db,
         const std::string& mode, std::vector<std::size_t> trunk_hidden,
         std::vector<std::size_t> head_hidden, std::size_t epochs, double lr, std::size_t minibatch,
         std::uint64_t seed, double env_lambda, double snr_lambda, bool float64,
         const ModelBundle<float>* warm_start) {
        const auto feats = make_features(features);
        const auto metas = make_metas(feats.size(), speakers, envs, snr_db);
        TrainConfig tc;
        tc.input_dim = feats.empty() ? 0 : feats.front().dim();
        tc.trunk_hidden = std::move(trunk_hidden);
        tc.speaker_count = speaker_index(metas).size();
        tc.epochs = epochs;
        tc.lr = lr;
        tc.minibatch = minibatch;
        tc.seed = seed;
        tc.numeric = float64 ? NumericMode::kFloat64 : NumericMode::kFloat32;
        std::size_t env_classes = 0;
        for (const auto& mm : metas) env_classes = std::max<std::size_t>(env_classes, mm.env + 1);
        tc.heads = heads_for_mode(train_mode_from_string(mode), env_classes, env_lambda, snr_lambda,
                                  head_hidden);
        TrainReport report;
        ModelBundle<float> model;
        {
          py::gil_scoped_release release;
          model = float64 ? run_train<double>(feats, metas, tc, warm_start, report)
                          : run_train<float>(feats, metas, tc, warm_start, report);
        }
        py::list epochs_out;
        for (const auto& e : report.epochs) epochs_out.append(epoch_dict(e));
        py::dict rep;
        rep["epochs"] = epochs_out;
        rep["warnings"] = report.warnings;
        return py::make_tuple(model, rep);
      },
      py::arg("features"), py::arg("speakers"), py::arg("envs") = py::none(),
      py::arg("snr_db") = py::none(), py::arg("mode") = "baseline",
      py::arg("trunk_hidden") = std::vector<std::size_t>{64, 64, 32},
      py::arg("head_hidden") = std::vector<std::size_t>{32}, py::arg("epochs") = 10,
      py::arg("lr") = 0.05, py::arg("minibatch") = 64, py::arg("seed") = 0,
      py::arg("env_lambda") = 1.5, py::arg("snr_lambda") = 0.002, py::arg("float64") = false,
      py::arg("warm_start") = nullptr, "Returns (Model, report dict).");

  m.def(
      "probe",
      [](const ModelBundle<float>& model, const std::vector<FloatArray>& features,
         std::optional<std::vector<int>> envs, std::optional<std::vector<std::optional<double>>> snr_db,
         const std::string& factor, std::size_t epochs, std::vector<std::size_t> hidden, double lr,
         std::uint64_t seed) {
        const auto feats = make_features(features);
        const auto metas =
            make_metas(feats.size(), std::vector<std::string>(feats.size(), "spk"), envs, snr_db);
        const auto corpus = make_corpus<float>(feats, metas, speaker_index(metas));
        ProbeSpec ps;
        ps.epochs = epochs;
        ps.hidden = std::move(hidden);
        ps.lr = lr;
        ps.seed = seed;
        if (factor != "env" && factor != "snr") throw ConfigError("factor must be 'env' or 'snr'");
        const auto kind = factor == "env" ? ConditionKind::kCategorical : ConditionKind::kContinuous;
        const auto r = probe_condition(model.trunk, corpus, kind, ps);
        py::dict d;
        d["metric"] = r.metric;
        d["chance"] = r.chance;
        d["classes"] = r.classes;
        d["train_frames"] = r.train_frames;
        d["test_frames"] = r.test_frames;
        return d;
      },
      py::arg("model"), py::arg("features"), py::arg("envs") = py::none(),
      py::arg("snr_db") = py::none(), py::arg("factor") = "env", py::arg("epochs") = 60,
      py::arg("hidden") = std::vector<std::size_t>{64}, py::arg("lr") = 0.02, py::arg("seed") = 0,
      "Accuracy vs 1/E for 'env', held-out MSE vs target variance for 'snr'.");

  m.def(
      "cosine_score",
      [](const FloatArray& a, const FloatArray& b) {
        return cosine_score(std::span<const float>(a.data(), a.size()),
                            std::span<const float>(b.data(), b.size()));
      },
      py::arg("a"), py::arg("b"));
  m.def(
      "compute_eer",
      [](const std::vector<double>& scores, const std::vector<bool>& is_target) {
        if (scores.size() != is_target.size()) throw ShapeError("scores and labels differ in length");
        std::vector<TrialRecord> trials(scores.size());
        for (std::size_t i = 0; i < scores.size(); ++i) trials[i] = {"s", "u", is_target[i], scores[i]};
        const auto r = compute_eer(trials);
        py::dict d;
        d["eer"] = r.eer;
        d["threshold"] = r.threshold;
        d["targets"] = r.targets;
        d["impostors"] = r.impostors;
        return d;
      },
      py::arg("scores"), py::arg("is_target"));
}
