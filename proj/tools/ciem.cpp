#include <CLI11.hpp>

#include <iostream>

#include "ciem/error.hpp"
#include "ciem/pipeline.hpp"

namespace {

struct Globals {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;
  std::vector<std::string> overrides;
  bool force = false;
};

int report(const ciem::StageResult& r) {
  if (!r.warnings.empty()) {
    std::cerr << "[ciem] " << r.stage << ": " << r.warnings.size() << " warning(s)\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Condition-invariant speaker embedding toolkit"};
  app.set_version_flag("--version", std::string(ciem::kToolVersion));
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  app.add_option("--config", g.config, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Global seed");
  app.add_option("--set", g.overrides, "Override a config value: dotted.key=value");
  app.add_option("--jobs", g.jobs, "Worker threads")->check(CLI::PositiveNumber);
  app.add_flag("--force", g.force, "Rerun stages even when up to date");

  auto* toy = app.add_subcommand("toy", "Generate the synthetic toy corpus");

  std::optional<std::filesystem::path> sim_in, sim_out;
  auto* simulate = app.add_subcommand("simulate", "Mix clean speech with noise");
  simulate->add_option("--input", sim_in, "Clean manifest (default paths.clean_manifest)");
  simulate->add_option("--output", sim_out, "Noisy manifest (default paths.train_manifest)");

  bool eval_only = false;
  auto* featurize = app.add_subcommand("featurize", "Extract normalized spliced features");
  featurize->add_flag("--eval-only", eval_only, "Only enrollment/test with existing CMVN stats");

  std::string mode = "baseline";
  std::optional<std::filesystem::path> warm, train_out;
  auto* train = app.add_subcommand("train", "Train a speaker embedding model");
  train->add_option("--mode", mode, "baseline, env, snr or multi")
      ->check(CLI::IsMember({"baseline", "env", "snr", "multi"}));
  train->add_option("--warm-start", warm, "Initialize trunk and speaker head from a model");
  train->add_option("--output", train_out, "Model path (default model_dir/<mode>.ciem)");

  std::filesystem::path model;
  auto* enroll = app.add_subcommand("enroll", "Build speaker embeddings for enrollment");
  enroll->add_option("--model", model, "Model file")->required();

  auto* eval = app.add_subcommand("eval", "Score trials and report EER");
  eval->add_option("--model", model, "Model file")->required();

  std::optional<std::filesystem::path> compare, probe_manifest;
  auto* probe = app.add_subcommand("probe", "Measure condition information left in embeddings");
  probe->add_option("--model", model, "Model file")->required();
  probe->add_option("--compare", compare, "Second model for a paired comparison");
  probe->add_option("--manifest", probe_manifest, "Labeled manifest (default paths.test_manifest)");

  CLI11_PARSE(app, argc, argv);

  try {
    const auto cfg = ciem::load_config(g.config, g.overrides, g.seed, g.jobs);
    const ciem::StageOptions opts{g.force};
    if (toy->parsed()) return report(ciem::cmd_toy(cfg, opts));
    if (simulate->parsed()) return report(ciem::cmd_simulate(cfg, {sim_in, sim_out, g.force}));
    if (featurize->parsed()) return report(ciem::cmd_featurize(cfg, eval_only, opts));
    if (train->parsed()) {
      return report(ciem::cmd_train(
          cfg, {ciem::train_mode_from_string(mode), warm, train_out, g.force}));
    }
    if (enroll->parsed()) return report(ciem::cmd_enroll(cfg, model, opts));
    if (eval->parsed()) return report(ciem::cmd_eval(cfg, model, opts));
    if (probe->parsed()) {
      return report(ciem::cmd_probe(cfg, {model, compare, probe_manifest, g.force}));
    }
  } catch (const ciem::NumericError& e) {
    std::cerr << "ciem: numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "ciem: error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
