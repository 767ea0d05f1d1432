#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "pvs/checkpoint.hpp"
#include "pvs/net.hpp"
#include "pvs/volume.hpp"

namespace pvs::train {

struct TrainConfig {
  double initial_lr = 3e-4;
  int batch_size = 2;
  int batches_per_epoch = 250;
  int epochs = 1000;
  double lr_decay_factor = 5.0;
  int lr_patience_epochs = 30;
  double lr_min_improvement = 5e-3;
  double ema_alpha = 0.9;
  double fg_oversample = 0.33;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  void validate() const;
};

struct LRState {
  double current_lr = 0.0;
  std::vector<double> ema;
  double best_ema = 0.0;
  int epochs_since_improvement = 0;

  static LRState initial(const TrainConfig& cfg);
};

/// Appends the EMA of epoch_loss and applies the plateau decay rule.
LRState lr_update(LRState state, double epoch_loss, const TrainConfig& cfg);

using AdamState = nn::AdamMoments;

/// One bias-corrected Adam update. Throws on a non-finite gradient.
void adam_step(std::span<float> params, std::span<const double> grads,
               AdamState& state, double lr, const TrainConfig& cfg);

// ---- data ----

/// A labeled case ready for sampling; all channels share the label grid.
struct TrainingCase {
  std::string id;
  std::vector<Volume> channels;
  LabelMap labels;
  /// Flat indices of foreground (non-background, non-ignore) voxels.
  std::vector<std::size_t> foreground;

  TrainingCase() = default;
  TrainingCase(std::string id, std::vector<Volume> channels, LabelMap labels);
  bool has_supervision() const;
};

struct Patch {
  nn::Tensor<float> image;
  std::vector<std::uint8_t> labels;
  std::array<std::int64_t, 3> center{};
};

/// Crops a patch centred on a foreground voxel (probability fg_oversample,
/// when the case has any) or on a uniform voxel. Outside the volume the
/// image is 0 and labels are ignore.
Patch sample_patch(const TrainingCase& c, const std::array<int, 3>& patch_size,
                   double fg_oversample, std::mt19937_64& rng);

/// Crop with explicit start corner (may be negative / overhang).
Patch crop_patch(const TrainingCase& c, const std::array<int, 3>& patch_size,
                 const std::array<std::int64_t, 3>& start);

struct AugmentConfig {
  bool mirror = true;
  double mirror_prob = 0.5;  // per axis
  bool rotation = true;
  double rotation_prob = 0.2;
  double rotation_max_deg = 15.0;  // per axis, uniform in +-max
  bool scale = true;
  double scale_prob = 0.2;
  double scale_min = 0.9;
  double scale_max = 1.1;
  bool elastic = true;
  double elastic_prob = 0.2;
  double elastic_amplitude = 2.0;  // voxels, sd of control-point displacement
  int elastic_grid = 4;            // control points per axis
  bool noise = true;
  double noise_prob = 0.15;
  double noise_max_sigma = 0.05;  // fraction of the patch intensity range

  void validate() const;
};

/// Concrete draw of the augmentation parameters.
struct SpatialTransform {
  std::array<double, 3> angles_rad{0, 0, 0};  // about x, y, z
  double scale = 1.0;
  /// Control-point displacements, [component][grid^3], empty = none.
  std::vector<std::vector<double>> elastic;
  int elastic_grid = 0;
  std::array<bool, 3> flip{false, false, false};
  double noise_sigma = 0.0;  // absolute

  bool is_resampling() const;
};

SpatialTransform draw_transform(const Patch& p, const AugmentConfig& cfg,
                                std::mt19937_64& rng);

/// Applies t to both members of the patch (trilinear image, nearest labels,
/// ignore outside), then mirroring, then image-only noise from rng.
Patch apply_transform(const Patch& p, const SpatialTransform& t, std::mt19937_64& rng);

Patch augment(const Patch& p, const AugmentConfig& cfg, std::mt19937_64& rng);

// ---- training loop ----

struct EpochRecord {
  int epoch = 0;
  double mean_loss = 0.0;
  double ema = 0.0;
  double lr = 0.0;
};

struct TrainOptions {
  /// When set, final.ckpt, best.ckpt and train_log.jsonl are written here.
  std::optional<std::filesystem::path> out_dir;
  /// Extra sink for the JSON-lines epoch log.
  std::ostream* log = nullptr;
  /// Continue from this checkpoint (epoch numbering and optimizer state).
  std::optional<nn::Checkpoint> resume;
};

struct TrainResult {
  nn::NetModel<float> model;
  std::vector<EpochRecord> log;
  LRState lr;
  AdamState adam;
  int epochs_done = 0;
  std::optional<int> best_epoch;
};

TrainResult train(const std::vector<TrainingCase>& cases, const nn::NetConfig& net,
                  const TrainConfig& cfg, const AugmentConfig& aug,
                  std::span<const int> foreground, const TrainOptions& opts = {});

/// Unclipped z-score over the whole volume, so the zeroed background stays
/// below the brain. Constant volumes pass through.
Volume normalize_input(const Volume& vol);

/// Channels as the network of `net` expects them.
std::vector<Volume> network_input(const std::vector<Volume>& channels, const nn::NetConfig& net);

// ---- inference ----

/// Window start positions along one axis: evenly spaced, half-patch overlap.
std::vector<std::int64_t> window_starts(std::int64_t dim, int patch);

/// Gaussian importance map (sigma = patch/8) over one window.
std::vector<double> gaussian_importance(const std::array<int, 3>& patch);

/// Fused class scores [class][voxel] over the given window starts (on the
/// padded grid). Each voxel's scores are a weighted mean of window softmax
/// values.
std::vector<std::vector<double>> infer_scores(
    const nn::NetModel<float>& model, const std::vector<Volume>& channels,
    const std::vector<std::array<std::int64_t, 3>>& windows);

/// All windows in raster order for the padded grid.
std::vector<std::array<std::int64_t, 3>> sliding_windows(const Dims& dims,
                                                         const std::array<int, 3>& patch);

LabelMap infer(const nn::NetModel<float>& model, const std::vector<Volume>& channels);

}  // namespace pvs::train
