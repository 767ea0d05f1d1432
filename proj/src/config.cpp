#include <set>
#include <stdexcept>

#include "pvs/pipeline.hpp"

namespace pvs::pipeline {
namespace {

using nlohmann::json;

// Reads known keys of one object and rejects anything else.
class Section {
 public:
  Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
    if (!j_.is_object()) throw std::invalid_argument("config: " + name_ + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: " + name_ + "." + key + ": " + e.what());
    }
  }

  template <typename T>
  void get_opt(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    get(key, v);
    out = v;
  }

  const json* sub(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.contains(key)) {
        throw std::invalid_argument("config: unknown key " + name_ + "." + key);
      }
    }
  }

 private:
  const json& j_;
  std::string name_;
  std::set<std::string> seen_;
};

json spacing_json(const SpacingPolicy& p) {
  if (const auto* t = std::get_if<TargetSpacing>(&p)) {
    return {{"mode", "target"}, {"spacing", t->spacing}};
  }
  return {{"mode", "agnostic"}};
}

SpacingPolicy spacing_from(const json& j) {
  Section s(j, "spacing_policy");
  std::string mode = "agnostic";
  Spacing sp{1.0, 1.0, 1.0};
  s.get("mode", mode);
  s.get("spacing", sp);
  s.finish();
  if (mode == "agnostic") return Agnostic{};
  if (mode == "target") return TargetSpacing{sp};
  throw std::invalid_argument("config: spacing_policy.mode must be agnostic or target");
}

}  // namespace

void PipelineConfig::validate() const {
  if (const auto* t = std::get_if<TargetSpacing>(&spacing_policy)) {
    for (double v : t->spacing) {
      if (!(v > 0.0)) throw std::invalid_argument("config: target spacing must be positive");
    }
  }
  enhance.validate();
  label_scheme.validate();
  net.validate();
  train.validate();
  augment.validate();
  phantom.config.validate();
  if (!(wmh_threshold > 0.0 && wmh_threshold < 1.0)) {
    throw std::invalid_argument("config: wmh_threshold must lie in (0, 1)");
  }
  if (roi && roi->keep_ids.empty()) throw std::invalid_argument("config: roi.keep_ids is empty");
  if (roi && roi->dilate_iters < 0) throw std::invalid_argument("config: negative roi.dilate_iters");
  for (auto id : label_scheme.foreground_ids) {
    if (id >= net.num_classes) {
      throw std::invalid_argument("config: foreground class " + std::to_string(id) +
                                  " needs net.num_classes > " + std::to_string(id));
    }
  }
  if (eval.k_folds < 2) throw std::invalid_argument("config: eval.k_folds must be >= 2");
  connectivity_from_int(eval.connectivity);
  if (eval.bootstrap_resamples < 0) throw std::invalid_argument("config: negative bootstrap");
  if (phantom.n_cases < 1) throw std::invalid_argument("config: phantom.n_cases must be >= 1");
  if (phantom.datasets.empty()) throw std::invalid_argument("config: phantom.datasets empty");
}

PipelineConfig config_from_json(const json& j) {
  PipelineConfig c;
  Section top(j, "config");
  if (const json* s = top.sub("spacing_policy")) c.spacing_policy = spacing_from(*s);
  if (const json* s = top.sub("enhance")) {
    Section e(*s, "enhance");
    e.get("nlmf", c.enhance.nlmf);
    e.get("ahe", c.enhance.ahe);
    e.get("nlm_patch_radius", c.enhance.nlm_patch_radius);
    e.get("nlm_block_radius", c.enhance.nlm_block_radius);
    e.get_opt("nlm_sigma", c.enhance.nlm_sigma);
    e.get_opt("ahe_kernel", c.enhance.ahe_kernel);
    e.get("ahe_clip_limit", c.enhance.ahe_clip_limit);
    e.finish();
  }
  if (const json* s = top.sub("roi"); s != nullptr && !s->is_null()) {
    Section r(*s, "roi");
    RoiConfig roi;
    r.get("keep_ids", roi.keep_ids);
    r.get("dilate_iters", roi.dilate_iters);
    r.finish();
    c.roi = roi;
  }
  top.get("merge_wmh", c.merge_wmh);
  top.get("wmh_threshold", c.wmh_threshold);
  if (const json* s = top.sub("label_scheme")) {
    Section l(*s, "label_scheme");
    l.get("classes", c.label_scheme.class_ids);
    l.get("foreground", c.label_scheme.foreground_ids);
    l.finish();
  }
  if (const json* s = top.sub("net")) {
    Section n(*s, "net");
    n.get("in_channels", c.net.in_channels);
    n.get("num_classes", c.net.num_classes);
    n.get("stages", c.net.stages);
    n.get("base_channels", c.net.base_channels);
    n.get("max_channels", c.net.max_channels);
    n.get("patch_size", c.net.patch_size);
    n.get("blocks_per_stage", c.net.blocks_per_stage);
    n.get("zscore_input", c.net.zscore_input);
    n.finish();
  }
  if (const json* s = top.sub("train")) {
    Section t(*s, "train");
    auto& x = c.train;
    t.get("initial_lr", x.initial_lr);
    t.get("batch_size", x.batch_size);
    t.get("batches_per_epoch", x.batches_per_epoch);
    t.get("epochs", x.epochs);
    t.get("lr_decay_factor", x.lr_decay_factor);
    t.get("lr_patience_epochs", x.lr_patience_epochs);
    t.get("lr_min_improvement", x.lr_min_improvement);
    t.get("ema_alpha", x.ema_alpha);
    t.get("fg_oversample", x.fg_oversample);
    t.get("adam_beta1", x.adam_beta1);
    t.get("adam_beta2", x.adam_beta2);
    t.get("adam_eps", x.adam_eps);
    t.get("seed", x.seed);
    t.finish();
  }
  if (const json* s = top.sub("augment")) {
    Section a(*s, "augment");
    auto& x = c.augment;
    a.get("mirror", x.mirror);
    a.get("mirror_prob", x.mirror_prob);
    a.get("rotation", x.rotation);
    a.get("rotation_prob", x.rotation_prob);
    a.get("rotation_max_deg", x.rotation_max_deg);
    a.get("scale", x.scale);
    a.get("scale_prob", x.scale_prob);
    a.get("scale_min", x.scale_min);
    a.get("scale_max", x.scale_max);
    a.get("elastic", x.elastic);
    a.get("elastic_prob", x.elastic_prob);
    a.get("elastic_amplitude", x.elastic_amplitude);
    a.get("elastic_grid", x.elastic_grid);
    a.get("noise", x.noise);
    a.get("noise_prob", x.noise_prob);
    a.get("noise_max_sigma", x.noise_max_sigma);
    a.finish();
  }
  if (const json* s = top.sub("eval")) {
    Section e(*s, "eval");
    auto& x = c.eval;
    e.get("connectivity", x.connectivity);
    e.get("k_folds", x.k_folds);
    e.get("bootstrap_seed", x.bootstrap_seed);
    e.get("bootstrap_resamples", x.bootstrap_resamples);
    e.get("by_dataset", x.by_dataset);
    e.get("by_class", x.by_class);
    e.get("pooled", x.pooled);
    e.finish();
  }
  if (const json* s = top.sub("phantom")) {
    Section p(*s, "phantom");
    auto& x = c.phantom.config;
    p.get("dims", x.dims);
    p.get("spacing", x.spacing);
    p.get("n_tubes_wm", x.n_tubes_wm);
    p.get("n_tubes_bg", x.n_tubes_bg);
    p.get("radius_range", x.radius_range);
    p.get("length_range", x.length_range);
    p.get("tube_contrast", x.tube_contrast);
    p.get("background_level", x.background_level);
    p.get("noise_sigma", x.noise_sigma);
    p.get("brain_extent", x.brain_extent);
    p.get("bg_fraction", x.bg_fraction);
    p.get("n_wmh_blobs", x.n_wmh_blobs);
    p.get("seed", x.seed);
    p.get("max_retries", x.max_retries);
    p.get("n_cases", c.phantom.n_cases);
    p.get("datasets", c.phantom.datasets);
    p.finish();
  }
  top.finish();
  c.validate();
  return c;
}

json to_json(const PipelineConfig& c) {
  const auto& e = c.enhance;
  json enhance{{"nlmf", e.nlmf},
               {"ahe", e.ahe},
               {"nlm_patch_radius", e.nlm_patch_radius},
               {"nlm_block_radius", e.nlm_block_radius},
               {"nlm_sigma", e.nlm_sigma ? json(*e.nlm_sigma) : json(nullptr)},
               {"ahe_kernel", e.ahe_kernel ? json(*e.ahe_kernel) : json(nullptr)},
               {"ahe_clip_limit", e.ahe_clip_limit}};
  json roi = nullptr;
  if (c.roi) roi = {{"keep_ids", c.roi->keep_ids}, {"dilate_iters", c.roi->dilate_iters}};
  const auto& t = c.train;
  const auto& a = c.augment;
  const auto& p = c.phantom.config;
  return {
      {"spacing_policy", spacing_json(c.spacing_policy)},
      {"enhance", enhance},
      {"roi", roi},
      {"merge_wmh", c.merge_wmh},
      {"wmh_threshold", c.wmh_threshold},
      {"label_scheme",
       {{"classes", c.label_scheme.class_ids}, {"foreground", c.label_scheme.foreground_ids}}},
      {"net",
       {{"in_channels", c.net.in_channels},
        {"num_classes", c.net.num_classes},
        {"stages", c.net.stages},
        {"base_channels", c.net.base_channels},
        {"max_channels", c.net.max_channels},
        {"patch_size", c.net.patch_size},
        {"blocks_per_stage", c.net.blocks_per_stage},
        {"zscore_input", c.net.zscore_input}}},
      {"train",
       {{"initial_lr", t.initial_lr},
        {"batch_size", t.batch_size},
        {"batches_per_epoch", t.batches_per_epoch},
        {"epochs", t.epochs},
        {"lr_decay_factor", t.lr_decay_factor},
        {"lr_patience_epochs", t.lr_patience_epochs},
        {"lr_min_improvement", t.lr_min_improvement},
        {"ema_alpha", t.ema_alpha},
        {"fg_oversample", t.fg_oversample},
        {"adam_beta1", t.adam_beta1},
        {"adam_beta2", t.adam_beta2},
        {"adam_eps", t.adam_eps},
        {"seed", t.seed}}},
      {"augment",
       {{"mirror", a.mirror},
        {"mirror_prob", a.mirror_prob},
        {"rotation", a.rotation},
        {"rotation_prob", a.rotation_prob},
        {"rotation_max_deg", a.rotation_max_deg},
        {"scale", a.scale},
        {"scale_prob", a.scale_prob},
        {"scale_min", a.scale_min},
        {"scale_max", a.scale_max},
        {"elastic", a.elastic},
        {"elastic_prob", a.elastic_prob},
        {"elastic_amplitude", a.elastic_amplitude},
        {"elastic_grid", a.elastic_grid},
        {"noise", a.noise},
        {"noise_prob", a.noise_prob},
        {"noise_max_sigma", a.noise_max_sigma}}},
      {"eval",
       {{"connectivity", c.eval.connectivity},
        {"k_folds", c.eval.k_folds},
        {"bootstrap_seed", c.eval.bootstrap_seed},
        {"bootstrap_resamples", c.eval.bootstrap_resamples},
        {"by_dataset", c.eval.by_dataset},
        {"by_class", c.eval.by_class},
        {"pooled", c.eval.pooled}}},
      {"phantom",
       {{"dims", p.dims},
        {"spacing", p.spacing},
        {"n_tubes_wm", p.n_tubes_wm},
        {"n_tubes_bg", p.n_tubes_bg},
        {"radius_range", p.radius_range},
        {"length_range", p.length_range},
        {"tube_contrast", p.tube_contrast},
        {"background_level", p.background_level},
        {"noise_sigma", p.noise_sigma},
        {"brain_extent", p.brain_extent},
        {"bg_fraction", p.bg_fraction},
        {"n_wmh_blobs", p.n_wmh_blobs},
        {"seed", p.seed},
        {"max_retries", p.max_retries},
        {"n_cases", c.phantom.n_cases},
        {"datasets", c.phantom.datasets}}},
  };
}

PipelineConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path));
}

std::string fingerprint(const PipelineConfig& cfg) {
  return sha256_hex(canonical_dump(to_json(cfg)));
}

std::string preprocess_fingerprint(const PipelineConfig& cfg) {
  const json full = to_json(cfg);
  const json part{{"spacing_policy", full.at("spacing_policy")},
                  {"enhance", full.at("enhance")},
                  {"roi", full.at("roi")},
                  {"merge_wmh", full.at("merge_wmh")},
                  {"wmh_threshold", full.at("wmh_threshold")}};
  return sha256_hex(canonical_dump(part));
}

}  // namespace pvs::pipeline
