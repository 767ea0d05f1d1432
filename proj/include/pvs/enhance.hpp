#pragma once

#include <optional>

#include "pvs/volume.hpp"

namespace pvs {

struct EnhanceConfig {
  int nlm_patch_radius = 1;
  int nlm_block_radius = 2;
  /// Noise level; estimated from the background when unset.
  std::optional<double> nlm_sigma;
  /// Tile size in voxels; dims/8 (floor, at least 4, at most dims) when unset.
  std::optional<std::array<int, 3>> ahe_kernel;
  /// Fraction of a tile's voxel count a histogram bin may hold; 1 disables
  /// clipping.
  double ahe_clip_limit = 0.01;
  bool nlmf = false;
  bool ahe = false;

  void validate() const;
};

/// Population standard deviation over the background mask (>= 27 voxels).
double estimate_sigma(const Volume& vol, const Mask& background);

/// Non-local means. Each output voxel is the normalized weighted mean of the
/// voxels q in the search block around it, with
///   w = exp(-max(d2 - 2 sigma^2 n, 0) / (sigma^2 n))
/// where d2 is the summed squared difference of the patches around p and q
/// and n the number of patch offsets valid for both (blocks and patches are
/// clipped at the border, never padded).
Volume nlm_filter(const Volume& vol, int patch_radius, int block_radius,
                  double sigma);

/// Uses cfg.nlm_sigma; throws if it is unset.
Volume nlm_filter(const Volume& vol, const EnhanceConfig& cfg);

/// Contrast-limited adaptive histogram equalization on a 3D tile grid.
/// Input must lie in [0, 1]. Per tile: 256-bin histogram, bins clipped at
/// clip_limit * tile voxels with the excess spread evenly, cumulative mapping
/// normalized to [0, 1]. Voxels blend the mappings of the surrounding tile
/// centers trilinearly.
Volume adaptive_hist_eq(const Volume& vol, const std::array<int, 3>& kernel,
                        double clip_limit);
Volume adaptive_hist_eq(const Volume& vol, const EnhanceConfig& cfg);

std::array<int, 3> default_ahe_kernel(const Dims& dims);

struct EnhanceResult {
  Volume image;
  /// Foreground from Otsu thresholding of the raw input.
  Mask foreground;
  /// Noise level used by NLMF (in rescaled units), if it ran.
  std::optional<double> sigma;
};

/// Otsu foreground -> rescale to [0, 1] on the foreground -> NLMF -> AHE,
/// the last two only when flagged. Background stays exactly 0.
EnhanceResult enhance_pipeline(const Volume& vol, const EnhanceConfig& cfg);

}  // namespace pvs
