#pragma once

#include <optional>
#include <variant>

#include "pvs/volume.hpp"

namespace pvs {

/// Keep the native grid: no resampling at all.
struct Agnostic {
  friend bool operator==(const Agnostic&, const Agnostic&) = default;
};

/// Resample to a fixed spacing in millimetres.
struct TargetSpacing {
  Spacing spacing{1.0, 1.0, 1.0};
  friend bool operator==(const TargetSpacing&, const TargetSpacing&) = default;
};

using SpacingPolicy = std::variant<Agnostic, TargetSpacing>;

enum class Interpolation { kTrilinear, kNearest };

/// Output dims are round(dims * spacing / target); output voxel o samples the
/// input at index o * target / spacing (voxel 0 maps onto voxel 0), clamped
/// to the input extent. Agnostic returns the input unchanged.
Volume resample(const Volume& vol, const SpacingPolicy& policy,
                Interpolation interp = Interpolation::kTrilinear);

/// Labels only support nearest-neighbour sampling.
LabelMap resample(const LabelMap& labels, const SpacingPolicy& policy);
Parcellation resample(const Parcellation& parc, const SpacingPolicy& policy);

/// Grid a volume would be resampled onto.
Grid resampled_grid(const Grid& grid, const SpacingPolicy& policy);

struct OtsuResult {
  double threshold = 0.0;
  Mask mask;
};

/// Otsu threshold over a 256-bin histogram spanning [min, max]. Bin b holds
/// values in (min + b*w, min + (b+1)*w] (bin 0 also takes min). The threshold
/// is the upper edge of the last background bin; the mask is value > threshold.
/// Ties go to the lowest threshold.
OtsuResult otsu_foreground(const Volume& vol);

/// Affine rescale so the region minimum maps to 0 and the maximum to 1.
/// Voxels outside the mask are set to 0.
Volume rescale_unit(const Volume& vol);
Volume rescale_unit(const Volume& vol, const Mask& mask);

/// Linear-interpolated percentile (0..100) of a sample; the input is copied.
double percentile(std::vector<double> values, double pct);

/// Clip to the [0.5, 99.5] percentiles of the region, then subtract the mean
/// and divide by the population standard deviation of the clipped region.
/// With a mask, voxels outside it are set to 0.
Volume clip_zscore(const Volume& vol);
Volume clip_zscore(const Volume& vol, const Mask& mask);

}  // namespace pvs
