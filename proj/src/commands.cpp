#include <fstream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "pvs/checkpoint.hpp"
#include "pvs/eval.hpp"
#include "pvs/nifti.hpp"
#include "pvs/pipeline.hpp"
#include "pvs/pseudo.hpp"

namespace pvs::pipeline {
namespace fs = std::filesystem;
using nlohmann::json;

Logger::Logger(std::ostream& os, std::string command) : os_(os), command_(std::move(command)) {}

void Logger::info(const std::string& event, json fields) { emit("info", event, std::move(fields)); }
void Logger::error(const std::string& event, json fields) {
  emit("error", event, std::move(fields));
}

void Logger::emit(const char* level, const std::string& event, json fields) {
  fields["level"] = level;
  fields["cmd"] = command_;
  fields["event"] = event;
  os_ << fields.dump() << '\n' << std::flush;
}

train::TrainingCase load_training_case(const ManifestCase& c) {
  if (!c.labels) throw std::invalid_argument("case " + c.id + " has no labels");
  std::vector<Volume> channels{nifti::read_volume(c.image)};
  if (c.image2) channels.push_back(nifti::read_volume(*c.image2));
  LabelMap labels = nifti::read_labels(*c.labels);
  if (c.annotated_slices) {
    SparseAnnotation ann;
    ann.annotated_slices.insert(c.annotated_slices->begin(), c.annotated_slices->end());
    labels = apply_sparse_ignore(labels, ann);
  }
  return train::TrainingCase(c.id, std::move(channels), std::move(labels));
}

namespace {

// Otsu, rescale, optional filters, optional ROI retention.
Volume preprocess_image(const fs::path& path, const ManifestCase& c, const PipelineConfig& cfg) {
  Volume img = resample(nifti::read_volume(path), cfg.spacing_policy);
  img = enhance_pipeline(img, cfg.enhance).image;
  if (cfg.roi && c.parcellation) {
    const Parcellation parc = resample(nifti::read_parcellation(*c.parcellation), cfg.spacing_policy);
    img = roi_retain(img, parc, cfg.roi->keep_ids, cfg.roi->dilate_iters);
  }
  return img;
}

}  // namespace

int cmd_preprocess(const fs::path& manifest_path, const PipelineConfig& cfg,
                   const fs::path& out_dir, Logger& log) {
  Manifest in;
  try {
    in = load_manifest(manifest_path);
    in.validate(true);
  } catch (const std::exception& e) {
    log.error("invalid_manifest", {{"message", e.what()}});
    return kValidationFailure;
  }
  Manifest out;
  out.fingerprint = fingerprint(cfg);
  out.preprocess_fingerprint = preprocess_fingerprint(cfg);
  fs::create_directories(out_dir);
  int failed = 0;
  for (const auto& c : in.cases) {
    try {
      ManifestCase o = c;
      o.image = fs::absolute(out_dir / (c.id + "_image.nii.gz"));
      nifti::write(preprocess_image(c.image, c, cfg), o.image);
      if (c.image2) {
        o.image2 = fs::absolute(out_dir / (c.id + "_image2.nii.gz"));
        nifti::write(preprocess_image(*c.image2, c, cfg), *o.image2);
      }
      if (c.labels) {
        LabelMap labels = nifti::read_labels(*c.labels);
        if (c.annotated_slices) {
          SparseAnnotation ann;
          ann.annotated_slices.insert(c.annotated_slices->begin(), c.annotated_slices->end());
          labels = apply_sparse_ignore(labels, ann);
        }
        labels = resample(labels, cfg.spacing_policy);
        if (cfg.merge_wmh && c.wmh) {
          const Volume prob = resample(nifti::read_volume(*c.wmh), cfg.spacing_policy);
          labels = merge_wmh(labels, prob, cfg.wmh_threshold);
        }
        o.labels = fs::absolute(out_dir / (c.id + "_labels.nii.gz"));
        nifti::write(labels, *o.labels);
      }
      // Applied above; parcellation and WMH maps stay on the input grid.
      o.annotated_slices.reset();
      o.parcellation.reset();
      o.wmh.reset();
      out.cases.push_back(std::move(o));
      log.info("case_done", {{"id", c.id}});
    } catch (const std::exception& e) {
      ++failed;
      log.error("case_failed", {{"id", c.id}, {"message", e.what()}});
    }
  }
  save_manifest(out, out_dir / "manifest.json");
  log.info("done", {{"cases", out.cases.size()}, {"failed", failed},
                    {"fingerprint", out.fingerprint}});
  return failed > 0 ? kPartialFailure : kOk;
}

int cmd_cv_split(const fs::path& manifest_path, int k, std::uint64_t seed,
                 const fs::path& out_file, Logger& log) {
  Manifest m;
  try {
    m = load_manifest(manifest_path);
    if (k < 2) throw std::invalid_argument("--k must be at least 2");
  } catch (const std::exception& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  }
  // Burden from the manifest; cases without it get a median split of their
  // label foreground, per dataset.
  std::vector<eval::StratifiedCase> cases;
  std::vector<std::string> ids, datasets;
  std::vector<std::uint64_t> fg;
  for (const auto& c : m.cases) {
    if (c.provenance != Provenance::kGold) continue;
    cases.push_back({c.id, c.dataset, c.burden});
    if (!c.burden && c.labels) {
      const LabelMap l = nifti::read_labels(*c.labels);
      std::uint64_t n = 0;
      for (auto v : l.data) n += label::is_foreground(v) ? 1 : 0;
      ids.push_back(c.id);
      datasets.push_back(c.dataset);
      fg.push_back(n);
    }
  }
  if (!ids.empty()) {
    const auto b = eval::median_split_burden(ids, datasets, fg);
    for (auto& c : cases) {
      if (!c.burden && b.contains(c.id)) c.burden = b.at(c.id);
    }
  }
  eval::FoldAssignment fa;
  try {
    fa = eval::stratified_kfold(cases, k, seed);
  } catch (const std::exception& e) {
    log.error("split_failed", {{"message", e.what()}});
    return kValidationFailure;
  }
  json folds{{"k", k},
             {"seed", seed},
             {"fold_of", fa.fold_of},
             {"stratum_of", fa.stratum_of},
             {"manifest_fingerprint", m.fingerprint},
             {"preprocess_fingerprint", m.preprocess_fingerprint}};
  write_json_file(folds, out_file);
  log.info("done", {{"cases", cases.size()}, {"k", k}});
  return kOk;
}

int cmd_train(const fs::path& manifest_path, const fs::path& folds_path, int fold,
              const PipelineConfig& cfg, const fs::path& out_dir,
              const std::optional<fs::path>& resume, Logger& log) {
  Manifest m;
  json folds;
  try {
    m = load_manifest(manifest_path);
    m.validate(true);
    folds = read_json_file(folds_path);
    const int k = folds.at("k").get<int>();
    if (fold < 0 || fold >= k) {
      throw std::invalid_argument("--fold " + std::to_string(fold) + " outside [0, " +
                                  std::to_string(k) + ")");
    }
    const int channels = m.has_second_channel() ? 2 : 1;
    if (!m.cases.empty() && channels != cfg.net.in_channels) {
      throw std::invalid_argument("net.in_channels is " + std::to_string(cfg.net.in_channels) +
                                  " but the manifest has " + std::to_string(channels) +
                                  " image channel(s)");
    }
  } catch (const std::exception& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  }
  const auto fold_of = folds.at("fold_of").get<std::map<std::string, int>>();
  Manifest gold, pseudo;
  std::set<std::string> validation;
  gold.fingerprint = pseudo.fingerprint = fingerprint(cfg);
  gold.preprocess_fingerprint = pseudo.preprocess_fingerprint = m.preprocess_fingerprint;
  for (const auto& c : m.cases) {
    if (c.provenance == Provenance::kPseudo) {
      pseudo.cases.push_back(c);
      continue;
    }
    auto it = fold_of.find(c.id);
    if (it == fold_of.end()) {
      log.error("invalid_input", {{"message", "gold case " + c.id + " is not in the folds file"}});
      return kValidationFailure;
    }
    if (it->second == fold) {
      validation.insert(c.id);
    } else {
      gold.cases.push_back(c);
    }
  }
  Manifest training;
  try {
    training = train::merge_training_set(gold, pseudo, validation);
  } catch (const std::exception& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  }
  std::vector<train::TrainingCase> cases;
  try {
    for (const auto& c : training.cases) cases.push_back(load_training_case(c));
  } catch (const std::exception& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  }
  fs::create_directories(out_dir);
  save_manifest(training, out_dir / "training_set.json");
  Manifest val;
  val.fingerprint = training.fingerprint;
  val.preprocess_fingerprint = training.preprocess_fingerprint;
  for (const auto& c : m.cases) {
    if (validation.contains(c.id)) val.cases.push_back(c);
  }
  save_manifest(val, out_dir / "validation_set.json");
  log.info("start", {{"fold", fold},
                     {"training_cases", training.cases.size()},
                     {"validation_cases", val.cases.size()},
                     {"pseudo_cases", pseudo.cases.size()}});

  train::TrainOptions opts;
  opts.out_dir = out_dir;
  std::ostringstream epoch_log;
  try {
    if (resume) opts.resume = nn::load_checkpoint(*resume);
    std::vector<int> fg(cfg.label_scheme.foreground_ids.begin(),
                        cfg.label_scheme.foreground_ids.end());
    const auto res = train::train(cases, cfg.net, cfg.train, cfg.augment, fg, opts);
    for (const auto& r : res.log) {
      log.info("epoch", {{"epoch", r.epoch}, {"mean_loss", r.mean_loss}, {"ema", r.ema},
                         {"lr", r.lr}});
    }
    log.info("done", {{"epochs", res.epochs_done},
                      {"checkpoint", (out_dir / "final.ckpt").string()}});
  } catch (const std::invalid_argument& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  } catch (const std::exception& e) {
    log.error("train_failed", {{"message", e.what()}});
    return kValidationFailure;
  }
  return kOk;
}

int cmd_infer(const fs::path& checkpoint, const fs::path& manifest_path, const fs::path& out_dir,
              Logger& log) {
  nn::Checkpoint ck;
  Manifest m;
  try {
    ck = nn::load_checkpoint(checkpoint);
    m = load_manifest(manifest_path);
    m.validate(true);
    const int channels = m.has_second_channel() ? 2 : 1;
    if (!m.cases.empty() && channels != ck.model.config.in_channels) {
      throw std::invalid_argument("checkpoint expects " +
                                  std::to_string(ck.model.config.in_channels) +
                                  " image channel(s), manifest has " + std::to_string(channels));
    }
  } catch (const std::exception& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  }
  if (m.cases.empty()) {
    log.info("done", {{"cases", 0}});
    return kOk;
  }
  auto res = train::pseudo_label_round(ck.model, m, out_dir);
  std::ifstream is(checkpoint, std::ios::binary);
  std::ostringstream bytes;
  bytes << is.rdbuf();
  res.additions.fingerprint = sha256_hex(bytes.str() + m.fingerprint);
  res.additions.preprocess_fingerprint = m.preprocess_fingerprint;
  save_manifest(res.additions, out_dir / "manifest.json");
  for (const auto& [id, msg] : res.failures) {
    log.error("case_failed", {{"id", id}, {"message", msg}});
  }
  log.info("done", {{"cases", res.additions.cases.size()}, {"failed", res.failures.size()}});
  return res.failures.empty() ? kOk : kPartialFailure;
}

int cmd_evaluate(const fs::path& pred_path, const fs::path& ref_path, const PipelineConfig& cfg,
                 const fs::path& out_file, const std::optional<fs::path>& csv_file,
                 bool force_fingerprint, Logger& log) {
  Manifest pred, ref;
  try {
    pred = load_manifest(pred_path);
    ref = load_manifest(ref_path);
    if (pred.cases.empty()) throw std::invalid_argument("prediction manifest is empty");
  } catch (const std::exception& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  }
  if (pred.preprocess_fingerprint != ref.preprocess_fingerprint) {
    if (!force_fingerprint) {
      log.error("fingerprint_mismatch", {{"pred", pred.preprocess_fingerprint},
                                         {"ref", ref.preprocess_fingerprint}});
      return kValidationFailure;
    }
    log.info("fingerprint_mismatch_forced", {{"pred", pred.preprocess_fingerprint},
                                             {"ref", ref.preprocess_fingerprint}});
  }
  std::map<std::string, std::uint8_t> classes;
  for (const auto& [name, id] : cfg.label_scheme.class_ids) {
    for (auto f : cfg.label_scheme.foreground_ids) {
      if (f == id) classes[name] = id;
    }
  }
  std::vector<eval::CaseMetrics> metrics;
  int failed = 0;
  for (const auto& p : pred.cases) {
    try {
      const ManifestCase* r = ref.find(p.id);
      if (r == nullptr || !r->labels) {
        throw std::invalid_argument("no reference labels for " + p.id);
      }
      if (!p.labels) throw std::invalid_argument("no predicted labels for " + p.id);
      const LabelMap pl = nifti::read_labels(*p.labels);
      const LabelMap rl = nifti::read_labels(*r->labels);
      metrics.push_back(eval::evaluate_case(p.id, r->dataset, pl, rl, classes,
                                            cfg.eval.connectivity));
    } catch (const std::exception& e) {
      ++failed;
      log.error("case_failed", {{"id", p.id}, {"message", e.what()}});
    }
  }
  if (metrics.empty()) {
    log.error("no_cases", {{"message", "no case could be evaluated"}});
    return kValidationFailure;
  }
  eval::ReportOptions ro;
  ro.by_dataset = cfg.eval.by_dataset;
  ro.by_class = cfg.eval.by_class;
  ro.pooled = cfg.eval.pooled;
  ro.connectivity = cfg.eval.connectivity;
  ro.bootstrap.n_resamples = cfg.eval.bootstrap_resamples;
  ro.bootstrap.seed = cfg.eval.bootstrap_seed;
  eval::MetricsReport report;
  try {
    report = eval::aggregate_report(metrics, ro);
  } catch (const std::exception& e) {
    log.error("report_failed", {{"message", e.what()}});
    return kValidationFailure;
  }
  report.fingerprint = fingerprint(cfg);
  write_json_file(eval::to_json(report), out_file);
  if (csv_file) {
    if (csv_file->has_parent_path()) fs::create_directories(csv_file->parent_path());
    std::ofstream os(*csv_file, std::ios::binary | std::ios::trunc);
    os << eval::to_csv(report);
  }
  log.info("done", {{"cases", metrics.size()}, {"failed", failed}});
  return failed > 0 ? kPartialFailure : kOk;
}

int cmd_phantom(const PipelineConfig& cfg, std::optional<int> n_cases,
                std::optional<std::uint64_t> seed, const fs::path& out_dir, Logger& log) {
  phantom::CohortOptions opts;
  opts.n_cases = n_cases.value_or(cfg.phantom.n_cases);
  opts.seed = seed.value_or(cfg.phantom.config.seed);
  opts.out_dir = out_dir;
  opts.datasets = cfg.phantom.datasets;
  try {
    Manifest m = phantom::phantom_cohort(cfg.phantom.config, opts);
    m.fingerprint = fingerprint(cfg);
    save_manifest(m, out_dir / "manifest.json");
    log.info("done", {{"cases", m.cases.size()},
                      {"manifest", (out_dir / "manifest.json").string()}});
  } catch (const std::invalid_argument& e) {
    log.error("invalid_input", {{"message", e.what()}});
    return kValidationFailure;
  } catch (const std::exception& e) {
    log.error("phantom_failed", {{"message", e.what()}});
    return kValidationFailure;
  }
  return kOk;
}

}  // namespace pvs::pipeline
