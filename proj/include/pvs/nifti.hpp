#pragma once

#include <filesystem>
#include <variant>

#include "pvs/volume.hpp"

namespace pvs::nifti {

/// NIfTI-1 datatype codes accepted on read.
enum class DataType : std::int16_t {
  kUint8 = 2,
  kInt16 = 4,
  kInt32 = 8,
  kFloat32 = 16,
  kFloat64 = 64,
};

/// Raised for malformed or unsupported files.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Decoded header fields that the pipeline honors.
struct Header {
  Grid grid;
  DataType datatype = DataType::kFloat32;
  std::int16_t bitpix = 32;
  double vox_offset = 352.0;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  bool swapped = false;
};

using AnyImage = std::variant<Volume, LabelMap>;

/// Reads a single-file NIfTI-1 image (.nii or .nii.gz, detected by content).
/// Unscaled uint8 files whose voxels are all valid label ids come back as a
/// LabelMap; everything else is converted to a float Volume with
/// scl_slope/scl_inter applied when the slope is non-zero.
AnyImage read(const std::filesystem::path& path);

/// Always returns a Volume, converting label files to float.
Volume read_volume(const std::filesystem::path& path);

/// Requires an integer datatype whose values are valid label ids.
LabelMap read_labels(const std::filesystem::path& path);

/// Requires an integer datatype; values are kept as-is.
Parcellation read_parcellation(const std::filesystem::path& path);

Header read_header(const std::filesystem::path& path);

/// Volumes are written as float32, label maps as uint8. A ".gz" suffix selects
/// gzip compression. pixdim[1..3] carries the grid spacing and the stored
/// affine goes to the sform rows.
void write(const Volume& vol, const std::filesystem::path& path);
void write(const LabelMap& labels, const std::filesystem::path& path);
void write(const Parcellation& parc, const std::filesystem::path& path);

}  // namespace pvs::nifti
