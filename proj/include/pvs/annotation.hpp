#pragma once

#include <map>
#include <set>
#include <string>

#include "pvs/volume.hpp"

namespace pvs {

/// Class ids and the subset averaged by the dice loss.
struct LabelScheme {
  std::map<std::string, std::uint8_t> class_ids{{"background", 0},
                                                {"wm_pvs", 1},
                                                {"bg_pvs", 2},
                                                {"wmh", 3},
                                                {"ignore", 255}};
  std::vector<std::uint8_t> foreground_ids{1, 2};

  // ids distinct; background and ignore never in foreground_ids.
  void validate() const;
};

/// Axial slices that carry manual labels; everything else becomes ignore.
struct SparseAnnotation {
  std::set<std::int64_t> annotated_slices;
  int axis = 2;
};

LabelMap apply_sparse_ignore(const LabelMap& labels,
                             const SparseAnnotation& ann);

/// One dilation step with the full 3x3x3 structuring element.
Mask dilate(const Mask& mask);

/// Mask of voxels whose parcellation id is in keep_ids, dilated
/// dilate_iters times. Throws if the selection is empty.
Mask roi_mask(const Parcellation& parcellation, const std::set<int>& keep_ids,
              int dilate_iters);

/// Zeroes every voxel of vol outside roi_mask(...).
Volume roi_retain(const Volume& vol, const Parcellation& parcellation,
                  const std::set<int>& keep_ids, int dilate_iters);

/// Voxels with wmh_probability > threshold become WMH (3) unless they are
/// ignore (255); everything else keeps its label.
LabelMap merge_wmh(const LabelMap& pvs, const Volume& wmh_probability,
                   double threshold = 0.5);

}  // namespace pvs
