#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "pvs/pipeline.hpp"

namespace fs = std::filesystem;
using namespace pvs::pipeline;

namespace {

PipelineConfig config_or_default(const std::string& path) {
  return path.empty() ? PipelineConfig{} : load_config(path);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Perivascular space segmentation pipeline"};
  app.require_subcommand(1);

  std::string manifest, config, out, folds, checkpoint, csv;
  std::vector<std::string> manifests;
  int k = 5, fold = 0;
  std::uint64_t seed = 0;
  std::optional<int> n;
  std::optional<std::uint64_t> phantom_seed;
  bool force = false;

  auto* pre = app.add_subcommand("preprocess", "Apply spacing policy and enhancement");
  pre->add_option("--manifest", manifest)->required();
  pre->add_option("--config", config);
  pre->add_option("--out", out)->required();

  auto* split = app.add_subcommand("cv-split", "Stratified k-fold assignment");
  split->add_option("--manifest", manifest)->required();
  split->add_option("--k", k);
  split->add_option("--seed", seed);
  split->add_option("--out", out)->required();

  auto* tr = app.add_subcommand("train", "Train one fold");
  tr->add_option("--manifest", manifest)->required();
  tr->add_option("--folds", folds)->required();
  tr->add_option("--fold", fold)->required();
  tr->add_option("--config", config);
  tr->add_option("--out", out)->required();
  tr->add_option("--checkpoint", checkpoint, "Resume from this checkpoint");

  auto* inf = app.add_subcommand("infer", "Predict labels for a manifest");
  inf->add_option("--checkpoint", checkpoint)->required();
  inf->add_option("--manifest", manifest)->required();
  inf->add_option("--out", out)->required();

  auto* ev = app.add_subcommand("evaluate", "Compare predicted and reference labels");
  ev->add_option("--manifest", manifests, "Prediction manifest, then reference manifest")
      ->required()
      ->expected(2);
  ev->add_option("--config", config);
  ev->add_option("--out", out)->required();
  ev->add_option("--csv", csv);
  ev->add_flag("--force-fingerprint-mismatch", force);

  auto* ph = app.add_subcommand("phantom", "Generate a synthetic cohort");
  ph->add_option("--config", config);
  ph->add_option("--n", n);
  ph->add_option("--seed", phantom_seed);
  ph->add_option("--out", out)->required();

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  Logger log(std::cerr, name);
  try {
    if (*pre) return cmd_preprocess(manifest, config_or_default(config), out, log);
    if (*split) return cmd_cv_split(manifest, k, seed, out, log);
    if (*tr) {
      std::optional<fs::path> resume;
      if (!checkpoint.empty()) resume = checkpoint;
      return cmd_train(manifest, folds, fold, config_or_default(config), out, resume, log);
    }
    if (*inf) return cmd_infer(checkpoint, manifest, out, log);
    if (*ev) {
      std::optional<fs::path> csv_file;
      if (!csv.empty()) csv_file = csv;
      return cmd_evaluate(manifests[0], manifests[1], config_or_default(config), out, csv_file,
                          force, log);
    }
    if (*ph) return cmd_phantom(config_or_default(config), n, phantom_seed, out, log);
  } catch (const std::exception& e) {
    log.error("failed", {{"message", e.what()}});
    return kValidationFailure;
  }
  return kValidationFailure;
}
