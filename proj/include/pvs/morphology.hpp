#pragma once

#include <utility>

#include "pvs/volume.hpp"

namespace pvs {

enum class Connectivity { k6 = 6, k18 = 18, k26 = 26 };

Connectivity connectivity_from_int(int c);

/// Cluster summary for one class.
struct ClusterStats {
  std::size_t cluster_count = 0;
  std::size_t voxel_count = 0;
  /// Sorted ascending.
  std::vector<std::size_t> cluster_sizes;

  friend bool operator==(const ClusterStats&, const ClusterStats&) = default;
};

/// Component ids (1..n, 0 = outside) for a binary mask. Ids follow the raster
/// order of each component's first voxel, so they do not depend on how
/// equivalences were merged.
std::vector<std::uint32_t> label_components(const Mask& mask,
                                            Connectivity conn,
                                            std::size_t* count = nullptr);

ClusterStats cluster_stats(const Mask& mask, Connectivity conn);

/// Components of (labels == class_id). class_id 255 (ignore) is rejected.
ClusterStats connected_components(const LabelMap& labels,
                                  std::uint8_t class_id,
                                  Connectivity conn = Connectivity::k26);

struct CountVectors {
  std::vector<double> predicted;
  std::vector<double> reference;
};

/// Per-case cluster counts for paired (prediction, reference) maps.
CountVectors cluster_count_vector(
    const std::vector<std::pair<LabelMap, LabelMap>>& cases,
    std::uint8_t class_id, Connectivity conn = Connectivity::k26);

}  // namespace pvs
