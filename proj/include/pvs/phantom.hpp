#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pvs/manifest.hpp"
#include "pvs/morphology.hpp"
#include "pvs/volume.hpp"

namespace pvs::phantom {

struct PhantomConfig {
  Dims dims{64, 64, 64};
  Spacing spacing{1.0, 1.0, 1.0};
  int n_tubes_wm = 20;
  int n_tubes_bg = 10;
  std::array<double, 2> radius_range{1.0, 1.8};
  std::array<double, 2> length_range{8.0, 18.0};
  /// Negative: dark tubes as on T1w.
  double tube_contrast = -0.35;
  double background_level = 1.0;
  double noise_sigma = 0.05;
  /// Brain ellipsoid semi-axes as a fraction of dims.
  double brain_extent = 0.45;
  /// Volume fraction of the brain given to the inner (BG) compartment.
  double bg_fraction = 0.3;
  /// Optional WMH-like blobs (probability map only).
  int n_wmh_blobs = 0;
  std::uint64_t seed = 0;
  int max_retries = 2000;

  void validate() const;
};

struct Tube {
  std::array<double, 3> a{};
  std::array<double, 3> b{};
  double radius = 1.0;
  std::uint8_t cls = 1;
};

struct Phantom {
  Volume image;
  LabelMap labels;
  Mask brain;
  Mask bg_compartment;
  std::vector<Tube> tubes;
  /// Ground truth per foreground class (26-connectivity).
  std::map<std::uint8_t, ClusterStats> clusters;
  std::optional<Volume> wmh_probability;
};

/// Voxels whose centre lies within radius of segment [a, b].
std::vector<std::size_t> voxelize(const Tube& t, const Grid& grid);

Phantom generate_phantom(const PhantomConfig& cfg);

struct CohortOptions {
  int n_cases = 30;
  std::uint64_t seed = 0;
  std::filesystem::path out_dir;
  /// Dataset tags assigned round-robin.
  std::vector<std::string> datasets{"phantom"};
  std::string id_prefix = "phantom";
  bool write_labels = true;
  /// Per-case tube counts drawn from [ceil(n/2), n] when set.
  bool vary_counts = true;
};

/// Writes images (and labels) under out_dir and returns the manifest, which
/// is also saved as out_dir/manifest.json.
Manifest phantom_cohort(const PhantomConfig& tmpl, const CohortOptions& opts);

}  // namespace pvs::phantom
