#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>

#include <json.hpp>

#include "pvs/annotation.hpp"
#include "pvs/enhance.hpp"
#include "pvs/manifest.hpp"
#include "pvs/net.hpp"
#include "pvs/phantom.hpp"
#include "pvs/preprocess.hpp"
#include "pvs/train.hpp"

namespace pvs::pipeline {

enum ExitCode : int { kOk = 0, kValidationFailure = 1, kPartialFailure = 2 };

struct RoiConfig {
  std::set<int> keep_ids;
  int dilate_iters = 1;
};

struct EvalConfig {
  int connectivity = 26;
  int k_folds = 5;
  std::uint64_t bootstrap_seed = 0;
  int bootstrap_resamples = 2000;
  bool by_dataset = true;
  bool by_class = true;
  bool pooled = false;
};

struct PhantomSection {
  phantom::PhantomConfig config;
  int n_cases = 30;
  std::vector<std::string> datasets{"phantom"};
};

struct PipelineConfig {
  SpacingPolicy spacing_policy = Agnostic{};
  EnhanceConfig enhance;
  std::optional<RoiConfig> roi;
  bool merge_wmh = false;
  double wmh_threshold = 0.5;
  LabelScheme label_scheme;
  nn::NetConfig net;
  train::TrainConfig train;
  train::AugmentConfig augment;
  EvalConfig eval;
  PhantomSection phantom;

  void validate() const;
};

/// Missing keys keep their defaults; unknown keys are rejected.
PipelineConfig config_from_json(const nlohmann::json& j);
/// Every field, so the canonical text determines the configuration.
nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig load_config(const std::filesystem::path& path);

/// SHA-256 of the canonical JSON of the whole configuration.
std::string fingerprint(const PipelineConfig& cfg);
/// SHA-256 of the sections that change preprocessed images and labels.
std::string preprocess_fingerprint(const PipelineConfig& cfg);

/// JSON-lines logger (one object per line).
class Logger {
 public:
  Logger(std::ostream& os, std::string command);
  void info(const std::string& event, nlohmann::json fields = nlohmann::json::object());
  void error(const std::string& event, nlohmann::json fields = nlohmann::json::object());

 private:
  void emit(const char* level, const std::string& event, nlohmann::json fields);
  std::ostream& os_;
  std::string command_;
};

/// Images (one or two channels) and labels of a manifest case, with any
/// annotated_slices list turned into ignore outside those slices.
train::TrainingCase load_training_case(const ManifestCase& c);

// Commands return an ExitCode.
int cmd_preprocess(const std::filesystem::path& manifest, const PipelineConfig& cfg,
                   const std::filesystem::path& out_dir, Logger& log);
int cmd_cv_split(const std::filesystem::path& manifest, int k, std::uint64_t seed,
                 const std::filesystem::path& out_file, Logger& log);
int cmd_train(const std::filesystem::path& manifest, const std::filesystem::path& folds,
              int fold, const PipelineConfig& cfg, const std::filesystem::path& out_dir,
              const std::optional<std::filesystem::path>& resume, Logger& log);
int cmd_infer(const std::filesystem::path& checkpoint, const std::filesystem::path& manifest,
              const std::filesystem::path& out_dir, Logger& log);
int cmd_evaluate(const std::filesystem::path& pred_manifest,
                 const std::filesystem::path& ref_manifest, const PipelineConfig& cfg,
                 const std::filesystem::path& out_file,
                 const std::optional<std::filesystem::path>& csv_file, bool force_fingerprint,
                 Logger& log);
int cmd_phantom(const PipelineConfig& cfg, std::optional<int> n_cases,
                std::optional<std::uint64_t> seed, const std::filesystem::path& out_dir,
                Logger& log);

}  // namespace pvs::pipeline
