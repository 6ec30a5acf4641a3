#include "ciem/pipeline.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

#include "ciem/rng.hpp"

namespace ciem {

namespace fs = std::filesystem;
using nlohmann::json;

std::string sha256_hex(std::string_view bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 computation failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < len; ++i) os << std::setw(2) << static_cast<int>(digest[i]);
  return os.str();
}

std::string file_sha256(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  return sha256_hex(bytes);
}

json RunManifest::to_json() const {
  return json{{"tool_version", tool_version}, {"stage", stage},
              {"config_hash", config_hash}, {"input_hashes", input_hashes},
              {"outputs", outputs},         {"started", started},
              {"finished", finished},       {"outcome", outcome},
              {"warnings", warnings}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  m.tool_version = j.value("tool_version", "");
  m.stage = j.value("stage", "");
  m.config_hash = j.value("config_hash", "");
  m.input_hashes = j.value("input_hashes", std::map<std::string, std::string>{});
  m.outputs = j.value("outputs", std::vector<std::string>{});
  m.started = j.value("started", "");
  m.finished = j.value("finished", "");
  m.outcome = j.value("outcome", "");
  m.warnings = j.value("warnings", std::vector<std::string>{});
  return m;
}

namespace {

void log(const std::string& msg) { std::cerr << "[ciem] " << msg << '\n'; }

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw DataError("cannot write " + tmp.string());
    os << text;
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

// Tracks one stage: config + input hashes for skipping, run manifest on exit.
class Stage {
 public:
  Stage(const ExperimentConfig& cfg, std::string name, const json& config_part,
        const std::vector<fs::path>& inputs)
      : path_(fs::path(cfg.paths.report_dir) / (name + ".run.json")) {
    record_.tool_version = kToolVersion;
    record_.stage = std::move(name);
    record_.config_hash = sha256_hex(config_part.dump());
    for (const auto& in : inputs) record_.input_hashes[in.string()] = file_sha256(in);
    record_.started = now_iso8601();
  }

  bool up_to_date() const {
    std::ifstream is(path_);
    if (!is) return false;
    const json j = json::parse(is, nullptr, false);
    if (j.is_discarded()) return false;
    const auto prev = RunManifest::from_json(j);
    if (prev.outcome != "ok" || prev.config_hash != record_.config_hash ||
        prev.input_hashes != record_.input_hashes) {
      return false;
    }
    for (const auto& o : prev.outputs) {
      if (!fs::exists(o)) return false;
    }
    return true;
  }

  StageResult skip() const {
    log(record_.stage + ": inputs unchanged, skipping");
    StageResult r;
    r.stage = record_.stage;
    r.skipped = true;
    return r;
  }

  StageResult finish(std::vector<fs::path> outputs, std::vector<std::string> warnings) {
    record_.finished = now_iso8601();
    record_.outcome = "ok";
    for (const auto& o : outputs) record_.outputs.push_back(o.string());
    record_.warnings = warnings;
    write_text_atomic(path_, record_.to_json().dump(2) + "\n");
    StageResult r;
    r.stage = record_.stage;
    r.outputs = std::move(outputs);
    r.warnings = std::move(warnings);
    for (const auto& w : r.warnings) log(r.stage + ": warning: " + w);
    return r;
  }

 private:
  fs::path path_;
  RunManifest record_;
};

json sections(const ExperimentConfig& cfg, std::initializer_list<const char*> keys) {
  json j;
  for (const char* k : keys) j[k] = cfg.json.at(k);
  return j;
}

fs::path resolve_against(const fs::path& base_file, const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) return path;
  return base_file.parent_path() / path;
}

std::string relative_to(const fs::path& target, const fs::path& manifest) {
  const fs::path dir = manifest.has_parent_path() ? manifest.parent_path() : fs::path(".");
  return fs::proximate(target, dir).generic_string();
}

std::vector<UtteranceMeta> require_manifest(const std::string& path, const char* what) {
  if (path.empty()) throw ConfigError(std::string("paths.") + what + " is not set");
  if (!fs::exists(path)) throw ConfigError(std::string(what) + " not found: " + path);
  return load_manifest(path);
}

// Loads cached features in manifest order; utterances without a cache entry
// (e.g. skipped during featurize) are dropped with a warning.
struct LoadedSet {
  std::vector<UtteranceMeta> metas;
  std::vector<FeatureMatrix> features;
};

LoadedSet load_cached(const ExperimentConfig& cfg, const std::vector<UtteranceMeta>& metas,
                      std::vector<std::string>& warnings) {
  std::vector<std::optional<FeatureMatrix>> slots(metas.size());
  parallel_for(metas.size(), cfg.jobs, [&](std::size_t i) {
    const auto p = feature_path(cfg, metas[i].id);
    if (fs::exists(p)) slots[i] = load_features(p);
  });
  LoadedSet out;
  for (std::size_t i = 0; i < metas.size(); ++i) {
    if (!slots[i]) {
      warnings.push_back("no cached features for " + metas[i].id + "; skipped");
      continue;
    }
    out.metas.push_back(metas[i]);
    out.features.push_back(std::move(*slots[i]));
  }
  return out;
}

}  // namespace

fs::path feature_path(const ExperimentConfig& cfg, const std::string& utterance_id) {
  return fs::path(cfg.paths.feature_cache) / (utterance_id + ".cife");
}

fs::path default_model_path(const ExperimentConfig& cfg, TrainMode mode) {
  return fs::path(cfg.paths.model_dir) / (std::string(to_string(mode)) + ".ciem");
}

fs::path enrollment_path(const ExperimentConfig& cfg, const fs::path& model) {
  return fs::path(cfg.paths.model_dir) / (model.stem().string() + ".enroll.ciev");
}

StageResult cmd_toy(const ExperimentConfig& cfg, const StageOptions& opts) {
  Stage stage(cfg, "toy", sections(cfg, {"seed", "toy", "paths"}), {});
  if (!opts.force && stage.up_to_date()) return stage.skip();

  const auto& toy = cfg.toy;
  if (toy.eval_speakers < 1) throw ConfigError("toy.eval_speakers must be >= 1");
  if (toy.enroll_utts < 1 || toy.enroll_utts >= toy.spec.utts_per_speaker) {
    throw ConfigError("toy.enroll_utts must be in [1, utts_per_speaker)");
  }
  ToySpec spec = toy.spec;
  spec.n_speakers = toy.spec.n_speakers + toy.eval_speakers;
  const auto ds = gen_toy_dataset(spec);

  std::vector<UtteranceMeta> train, enroll, test;
  std::map<std::string, std::size_t> seen;
  for (std::size_t i = 0; i < ds.meta.size(); ++i) {
    UtteranceMeta m = ds.meta[i];
    const auto fp = feature_path(cfg, m.id);
    save_features(fp, ds.features[i]);
    const std::size_t spk = i / spec.utts_per_speaker;
    if (spk < toy.spec.n_speakers) {
      m.path = relative_to(fp, cfg.paths.train_manifest);
      train.push_back(std::move(m));
    } else if (seen[m.speaker]++ < toy.enroll_utts) {
      m.path = relative_to(fp, cfg.paths.enroll_manifest);
      enroll.push_back(std::move(m));
    } else {
      m.path = relative_to(fp, cfg.paths.test_manifest);
      test.push_back(std::move(m));
    }
  }
  save_manifest(cfg.paths.train_manifest, train);
  save_manifest(cfg.paths.enroll_manifest, enroll);
  save_manifest(cfg.paths.test_manifest, test);

  std::set<std::string> enrolled;
  for (const auto& m : enroll) enrolled.insert(m.speaker);
  std::ostringstream trials;
  for (const auto& spk : enrolled) {
    for (const auto& m : test) {
      trials << spk << ' ' << m.id << ' ' << (m.speaker == spk ? "target" : "nontarget") << '\n';
    }
  }
  write_text_atomic(cfg.paths.trials, trials.str());
  log("toy: " + std::to_string(train.size()) + " train, " + std::to_string(enroll.size()) +
      " enroll, " + std::to_string(test.size()) + " test utterances");
  return stage.finish({cfg.paths.train_manifest, cfg.paths.enroll_manifest,
                       cfg.paths.test_manifest, cfg.paths.trials},
                      {});
}

StageResult cmd_simulate(const ExperimentConfig& cfg, const SimulateOptions& opts) {
  const fs::path input = opts.input ? *opts.input : fs::path(cfg.paths.clean_manifest);
  const fs::path output = opts.output ? *opts.output : fs::path(cfg.paths.train_manifest);
  if (input.empty() || !fs::exists(input)) {
    throw ConfigError("clean manifest not found: '" + input.string() + "'");
  }
  if (cfg.paths.noise_manifest.empty() || !fs::exists(cfg.paths.noise_manifest)) {
    throw ConfigError("noise manifest not found: '" + cfg.paths.noise_manifest + "'");
  }
  json part = sections(cfg, {"seed", "mix", "paths"});
  part["output"] = output.string();
  Stage stage(cfg, "simulate-" + output.stem().string(), part,
              {input, cfg.paths.noise_manifest});
  if (!opts.force && stage.up_to_date()) return stage.skip();

  const auto clean = load_manifest(input);
  const auto noise = load_manifest(cfg.paths.noise_manifest);
  auto plan = simulate_corpus(clean, noise, cfg.mix, cfg.paths.audio_dir);

  std::map<std::string, Waveform> noise_audio;
  for (const auto& n : noise) {
    noise_audio.emplace(n.path, read_wav(resolve_against(cfg.paths.noise_manifest, n.path)));
  }
  std::vector<std::size_t> clipped(plan.jobs.size(), 0);
  parallel_for(plan.jobs.size(), cfg.jobs, [&](std::size_t i) {
    const auto& job = plan.jobs[i];
    const auto clean_wav = read_wav(resolve_against(input, job.clean_path));
    const auto mix = mix_at_snr(clean_wav, noise_audio.at(job.noise_path), *job.output.snr_db,
                                job.seed);
    write_wav(job.output.path, mix.mixed);
    clipped[i] = mix.clipped;
  });

  std::vector<std::string> warnings;
  for (std::size_t i = 0; i < plan.jobs.size(); ++i) {
    if (clipped[i] > 0) {
      warnings.push_back(plan.jobs[i].output.id + ": " + std::to_string(clipped[i]) +
                         " samples clipped");
    }
  }
  for (auto& m : plan.manifest) {
    const fs::path abs = m.clean ? resolve_against(input, m.path) : fs::path(m.path);
    m.path = relative_to(abs, output);
  }
  save_manifest(output, plan.manifest);
  log("simulate: " + std::to_string(plan.jobs.size()) + " noisy utterances -> " +
      output.string());
  return stage.finish({output}, std::move(warnings));
}

StageResult cmd_featurize(const ExperimentConfig& cfg, bool eval_only, const StageOptions& opts) {
  const fs::path cmvn_path = fs::path(cfg.paths.feature_cache) / "cmvn.json";
  std::vector<std::pair<fs::path, bool>> manifests;  // (path, is_train)
  if (!eval_only) {
    if (cfg.paths.train_manifest.empty() || !fs::exists(cfg.paths.train_manifest)) {
      throw ConfigError("train manifest not found: '" + cfg.paths.train_manifest + "'");
    }
    manifests.emplace_back(cfg.paths.train_manifest, true);
  } else if (!fs::exists(cmvn_path)) {
    throw ConfigError("CMVN statistics " + cmvn_path.string() +
                      " not found; featurize the training manifest first");
  }
  for (const auto& p : {cfg.paths.enroll_manifest, cfg.paths.test_manifest}) {
    if (!p.empty() && fs::exists(p)) manifests.emplace_back(p, false);
  }
  std::vector<fs::path> inputs;
  for (const auto& [p, _] : manifests) inputs.push_back(p);
  if (eval_only) inputs.push_back(cmvn_path);
  json part = sections(cfg, {"frontend", "paths"});
  part["eval_only"] = eval_only;
  Stage stage(cfg, eval_only ? "featurize-eval" : "featurize", part, inputs);
  if (!opts.force && stage.up_to_date()) return stage.skip();

  std::vector<std::string> warnings;
  std::vector<fs::path> outputs;
  std::optional<CmvnStats> stats;
  if (eval_only) stats = load_cmvn(cmvn_path);
  std::size_t written = 0;

  for (const auto& [manifest_path, is_train] : manifests) {
    const auto metas = load_manifest(manifest_path);
    std::vector<std::optional<FeatureMatrix>> deltas(metas.size());
    std::vector<std::string> errors(metas.size());
    parallel_for(metas.size(), cfg.jobs, [&](std::size_t i) {
      try {
        const auto w = read_wav(resolve_against(manifest_path, metas[i].path));
        deltas[i] = add_deltas(log_mel_fbank(w, cfg.frontend), cfg.frontend.delta_window);
      } catch (const DataError& e) {
        errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < metas.size(); ++i) {
      if (!deltas[i]) warnings.push_back(metas[i].id + ": " + errors[i] + "; skipped");
    }
    if (is_train) {
      CmvnAccumulator acc;
      for (const auto& d : deltas) {
        if (d) acc.add(splice(*d, cfg.frontend.splice_left, cfg.frontend.splice_right));
      }
      stats = acc.finish();
      save_cmvn(cmvn_path, *stats);
      outputs.push_back(cmvn_path);
    }
    parallel_for(metas.size(), cfg.jobs, [&](std::size_t i) {
      if (!deltas[i]) return;
      const auto spliced = splice(*deltas[i], cfg.frontend.splice_left, cfg.frontend.splice_right);
      save_features(feature_path(cfg, metas[i].id),
                    apply_cmvn(spliced, *stats, cfg.frontend.var_floor));
    });
    for (const auto& d : deltas) written += d ? 1 : 0;
  }
  log("featurize: wrote " + std::to_string(written) + " feature files (dim " +
      std::to_string(cfg.frontend.spliced_dim()) + ")");
  return stage.finish(std::move(outputs), std::move(warnings));
}

namespace {

template <typename T>
ModelBundle<float> run_training(const LoadedSet& data, const TrainConfig& tc,
                                const std::optional<ModelBundle<float>>& warm,
                                TrainReport& report) {
  const auto index = speaker_index(data.metas);
  const auto corpus = make_corpus<T>(data.features, data.metas, index, tc.clean_snr_target_db);
  std::optional<ModelBundle<T>> warm_t;
  if (warm) warm_t = bundle_cast<T>(*warm);
  auto res = train<T>(corpus, tc, warm_t ? &*warm_t : nullptr);
  report = std::move(res.report);
  return bundle_cast<float>(res.model);
}

}  // namespace

StageResult cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts) {
  const auto metas = require_manifest(cfg.paths.train_manifest, "train_manifest");
  const fs::path out = opts.output ? *opts.output : default_model_path(cfg, opts.mode);
  std::optional<fs::path> warm_path;
  if (opts.mode != TrainMode::kBaseline && cfg.train.warm_start) {
    warm_path = opts.warm_start ? *opts.warm_start : default_model_path(cfg, TrainMode::kBaseline);
    if (!fs::exists(*warm_path)) {
      throw ConfigError("warm-start model " + warm_path->string() +
                        " not found; train the baseline first or set train.warm_start=false");
    }
  } else if (opts.warm_start) {
    warm_path = opts.warm_start;
  }

  std::vector<fs::path> inputs{cfg.paths.train_manifest};
  if (warm_path) inputs.push_back(*warm_path);
  json part = sections(cfg, {"seed", "train", "paths"});
  part["mode"] = to_string(opts.mode);
  part["output"] = out.string();
  Stage stage(cfg, "train-" + out.stem().string(), part, inputs);
  if (!opts.force && stage.up_to_date()) return stage.skip();

  std::vector<std::string> warnings;
  const auto data = load_cached(cfg, metas, warnings);
  if (data.features.empty()) throw DataError("no training features available");
  const auto n_speakers = speaker_index(data.metas).size();
  std::size_t env_classes = cfg.train.env_classes;
  if (env_classes == 0) {
    for (const auto& m : data.metas) {
      env_classes = std::max(env_classes, static_cast<std::size_t>(m.env) + 1);
    }
  }

  TrainConfig tc;
  tc.input_dim = data.features.front().dim();
  tc.trunk_hidden = cfg.train.trunk_hidden;
  tc.speaker_count = n_speakers;
  tc.heads = heads_for_mode(opts.mode, env_classes, cfg.train.env_lambda, cfg.train.snr_lambda,
                            cfg.train.head_hidden);
  tc.minibatch = cfg.train.minibatch;
  tc.epochs = cfg.train.epochs;
  tc.lr = cfg.train.lr;
  tc.lr_decay = cfg.train.lr_decay;
  tc.lr_decay_every = cfg.train.lr_decay_every;
  tc.seed = derive_seed(cfg.seed, "train");
  tc.numeric = cfg.train.numeric;
  tc.clean_snr_target_db = cfg.train.clean_snr_target_db;

  std::optional<ModelBundle<float>> warm;
  if (warm_path) warm = load_model(*warm_path);

  TrainReport report;
  const auto model = tc.numeric == NumericMode::kFloat64
                         ? run_training<double>(data, tc, warm, report)
                         : run_training<float>(data, tc, warm, report);
  save_model(out, model);
  const fs::path report_path =
      fs::path(cfg.paths.report_dir) / ("train_" + out.stem().string() + ".csv");
  std::ostringstream csv;
  report.write_csv(csv);
  write_text_atomic(report_path, csv.str());
  for (auto& w : report.warnings) warnings.push_back(std::move(w));
  if (!report.epochs.empty()) {
    const auto& last = report.epochs.back();
    std::ostringstream msg;
    msg << "train[" << to_string(opts.mode) << "]: " << report.epochs.size()
        << " epochs, speaker loss " << last.speaker_loss << ", accuracy "
        << last.speaker_accuracy;
    for (std::size_t i = 0; i < last.head_losses.size(); ++i) {
      msg << ", head" << i << " loss " << last.head_losses[i];
    }
    log(msg.str());
  }
  return stage.finish({out, report_path}, std::move(warnings));
}

StageResult cmd_enroll(const ExperimentConfig& cfg, const fs::path& model_path,
                       const StageOptions& opts) {
  const auto metas = require_manifest(cfg.paths.enroll_manifest, "enroll_manifest");
  if (!fs::exists(model_path)) throw ConfigError("model not found: " + model_path.string());
  const fs::path out = enrollment_path(cfg, model_path);
  json part = sections(cfg, {"eval", "paths"});
  part["model"] = model_path.string();
  Stage stage(cfg, "enroll-" + model_path.stem().string(), part,
              {cfg.paths.enroll_manifest, model_path});
  if (!opts.force && stage.up_to_date()) return stage.skip();

  std::vector<std::string> warnings;
  const auto model = load_model(model_path);
  std::map<std::string, std::vector<std::size_t>> by_speaker;
  for (std::size_t i = 0; i < metas.size(); ++i) by_speaker[metas[i].speaker];
  const auto data = load_cached(cfg, metas, warnings);
  for (std::size_t i = 0; i < data.metas.size(); ++i) by_speaker[data.metas[i].speaker].push_back(i);
  for (const auto& [spk, idx] : by_speaker) {
    if (idx.empty()) throw DataError("enrollment speaker '" + spk + "' has no utterances");
  }

  if (!cfg.paths.train_manifest.empty() && fs::exists(cfg.paths.train_manifest)) {
    std::set<std::string> train_speakers;
    for (const auto& m : load_manifest(cfg.paths.train_manifest)) train_speakers.insert(m.speaker);
    for (const auto& [spk, _] : by_speaker) {
      if (train_speakers.contains(spk)) {
        warnings.push_back("enrollment speaker '" + spk + "' also appears in training data");
      }
    }
  }

  std::vector<std::string> speakers;
  for (const auto& [spk, _] : by_speaker) speakers.push_back(spk);
  std::vector<Embedding> embeddings(speakers.size());
  parallel_for(speakers.size(), cfg.jobs, [&](std::size_t s) {
    std::vector<Matrix<float>> utts;
    for (auto i : by_speaker.at(speakers[s])) utts.push_back(data.features[i].values);
    embeddings[s] = enroll_speaker(model.trunk, utts, cfg.eval.pooling, speakers[s]);
  });
  save_embeddings(out, embeddings);
  log("enroll: " + std::to_string(embeddings.size()) + " speakers -> " + out.string());
  return stage.finish({out}, std::move(warnings));
}

StageResult cmd_eval(const ExperimentConfig& cfg, const fs::path& model_path,
                     const StageOptions& opts) {
  const auto metas = require_manifest(cfg.paths.test_manifest, "test_manifest");
  if (!fs::exists(model_path)) throw ConfigError("model not found: " + model_path.string());
  const fs::path enroll_file = enrollment_path(cfg, model_path);
  if (!fs::exists(enroll_file)) {
    throw ConfigError("enrollment embeddings " + enroll_file.string() + " not found; run enroll");
  }
  if (cfg.paths.trials.empty() || !fs::exists(cfg.paths.trials)) {
    throw ConfigError("trial list not found: '" + cfg.paths.trials + "'");
  }
  const std::string stem = model_path.stem().string();
  const fs::path report_dir(cfg.paths.report_dir);
  const fs::path scores_path = report_dir / (stem + ".scores.txt");
  const fs::path eer_path = report_dir / (stem + ".eer.csv");
  const fs::path det_path = report_dir / (stem + ".det.csv");
  const fs::path summary_path = report_dir / (stem + ".summary.txt");
  json part = sections(cfg, {"eval", "paths"});
  part["model"] = model_path.string();
  Stage stage(cfg, "eval-" + stem, part,
              {cfg.paths.test_manifest, model_path, enroll_file, cfg.paths.trials});
  if (!opts.force && stage.up_to_date()) return stage.skip();

  std::vector<std::string> warnings;
  const auto model = load_model(model_path);
  std::map<std::string, Embedding> enrolled;
  for (auto& e : load_embeddings(enroll_file)) enrolled.emplace(e.id, std::move(e));
  auto trials = load_trials(cfg.paths.trials);
  if (trials.empty()) throw DataError("trial list is empty");

  std::map<std::string, std::size_t> meta_by_id;
  for (std::size_t i = 0; i < metas.size(); ++i) meta_by_id.emplace(metas[i].id, i);
  std::vector<std::string> offenders;
  std::map<std::string, std::size_t> needed;  // utterance id -> slot
  for (const auto& t : trials) {
    if (!enrolled.contains(t.speaker)) offenders.push_back("speaker " + t.speaker);
    if (!meta_by_id.contains(t.utterance) || !fs::exists(feature_path(cfg, t.utterance))) {
      offenders.push_back("utterance " + t.utterance);
    } else {
      needed.emplace(t.utterance, 0);
    }
  }
  if (!offenders.empty()) {
    std::sort(offenders.begin(), offenders.end());
    offenders.erase(std::unique(offenders.begin(), offenders.end()), offenders.end());
    std::string list;
    for (std::size_t i = 0; i < offenders.size() && i < 20; ++i) list += "\n  " + offenders[i];
    if (offenders.size() > 20) list += "\n  ...";
    throw DataError("trial list references " + std::to_string(offenders.size()) +
                    " unknown id(s):" + list);
  }

  std::vector<std::string> ids;
  for (auto& [id, slot] : needed) {
    slot = ids.size();
    ids.push_back(id);
  }
  std::vector<Embedding> test_emb(ids.size());
  parallel_for(ids.size(), cfg.jobs, [&](std::size_t i) {
    test_emb[i] = extract_embedding(model.trunk, load_features(feature_path(cfg, ids[i])), ids[i]);
  });
  for (auto& t : trials) {
    t.score = cosine_score(enrolled.at(t.speaker), test_emb[needed.at(t.utterance)]);
  }

  std::map<std::string, std::vector<std::string>> strata;
  for (const auto& m : metas) strata.emplace(m.id, strata_of(m));
  const auto result = stratified_eval(trials, strata, cfg.eval.strata_order);
  for (const auto& [name, e] : result.strata) {
    if (!e) warnings.push_back("stratum '" + name + "' lacks targets or impostors");
  }

  std::ostringstream scores, eer, det, summary;
  write_scores(scores, trials);
  write_eer_report(eer, stem, result);
  det << "threshold,far,frr\n" << std::setprecision(9);
  for (const auto& p : det_points(trials)) det << p.threshold << ',' << p.far << ',' << p.frr << '\n';
  summary << std::fixed << std::setprecision(4) << "model: " << stem << '\n'
          << "trials: " << trials.size() << " (" << result.total.targets << " target, "
          << result.total.impostors << " impostor)\n"
          << "EER: " << 100.0 * result.total.eer << "% at threshold " << result.total.threshold
          << '\n';
  for (const auto& [name, e] : result.strata) {
    summary << "  " << name << ": ";
    if (e) {
      summary << 100.0 * e->eer << "% (" << e->targets << "/" << e->impostors << ")\n";
    } else {
      summary << "n/a\n";
    }
  }
  write_text_atomic(scores_path, scores.str());
  write_text_atomic(eer_path, eer.str());
  write_text_atomic(det_path, det.str());
  write_text_atomic(summary_path, summary.str());

  std::ostringstream msg;
  msg << std::fixed << std::setprecision(4) << "eval[" << stem << "]: EER "
      << 100.0 * result.total.eer << "% over " << trials.size() << " trials";
  log(msg.str());
  auto r = stage.finish({scores_path, eer_path, det_path, summary_path}, std::move(warnings));
  r.eer = result.total.eer;
  return r;
}

namespace {

std::vector<std::pair<std::string, ProbeResult>> probe_model(const ModelBundle<float>& model,
                                                             const LabeledCorpus<float>& corpus,
                                                             const ProbeSpec& spec) {
  std::vector<std::pair<std::string, ProbeResult>> out;
  if (corpus.env_classes() >= 2) {
    out.emplace_back("env", probe_condition(model.trunk, corpus, ConditionKind::kCategorical, spec));
  }
  const auto [lo, hi] = std::minmax_element(corpus.snr.begin(), corpus.snr.end());
  if (*hi > *lo) {
    out.emplace_back("snr", probe_condition(model.trunk, corpus, ConditionKind::kContinuous, spec));
  }
  return out;
}

}  // namespace

StageResult cmd_probe(const ExperimentConfig& cfg, const ProbeOptions& opts) {
  const fs::path manifest = opts.manifest ? *opts.manifest : fs::path(cfg.paths.test_manifest);
  const auto metas = require_manifest(manifest.string(), "test_manifest");
  if (!fs::exists(opts.model)) throw ConfigError("model not found: " + opts.model.string());
  if (opts.compare && !fs::exists(*opts.compare)) {
    throw ConfigError("comparison model not found: " + opts.compare->string());
  }
  const std::string stem = opts.model.stem().string();
  const fs::path out = fs::path(cfg.paths.report_dir) / (stem + ".probe.csv");
  std::vector<fs::path> inputs{manifest, opts.model};
  if (opts.compare) inputs.push_back(*opts.compare);
  json part = sections(cfg, {"seed", "probe", "train", "paths"});
  part["model"] = opts.model.string();
  part["compare"] = opts.compare ? opts.compare->string() : "";
  Stage stage(cfg, "probe-" + stem, part, inputs);
  if (!opts.force && stage.up_to_date()) return stage.skip();

  std::vector<std::string> warnings;
  const auto data = load_cached(cfg, metas, warnings);
  if (data.features.size() < 2) throw DataError("probe needs at least two utterances");
  const auto corpus = make_corpus<float>(data.features, data.metas, speaker_index(data.metas),
                                         cfg.train.clean_snr_target_db);
  const auto rows = probe_model(load_model(opts.model), corpus, cfg.probe);
  std::vector<std::pair<std::string, ProbeResult>> cmp;
  if (opts.compare) cmp = probe_model(load_model(*opts.compare), corpus, cfg.probe);

  StageResult tmp;
  std::ostringstream csv;
  csv << std::setprecision(6) << "factor,kind,metric,chance";
  if (opts.compare) csv << ",compare_metric,delta";
  csv << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    ProbeRow row{rows[i].first, rows[i].second, std::nullopt};
    csv << row.factor << ',' << to_string(row.result.kind) << ',' << row.result.metric << ','
        << row.result.chance;
    if (opts.compare && i < cmp.size()) {
      row.compare = cmp[i].second;
      const double delta = row.result.metric - row.compare->metric;
      csv << ',' << row.compare->metric << ',' << std::showpos << delta << std::noshowpos;
    }
    csv << '\n';
    std::ostringstream msg;
    msg << "probe[" << stem << "] " << row.factor << ": "
        << (row.result.kind == ConditionKind::kCategorical ? "accuracy " : "MSE ")
        << row.result.metric << " (chance " << row.result.chance << ")";
    log(msg.str());
    tmp.probes.push_back(std::move(row));
  }
  write_text_atomic(out, csv.str());
  auto r = stage.finish({out}, std::move(warnings));
  r.probes = std::move(tmp.probes);
  return r;
}

}  // namespace ciem
