#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace pvs {

using Dims = std::array<std::int64_t, 3>;
using Spacing = std::array<double, 3>;
using Affine = std::array<double, 16>;

// Voxel (i, j, k) lives at i + dims[0] * (j + dims[1] * k): the first header
// axis varies fastest. The affine is carried along verbatim and never used to
// reorient data.
struct Grid {
  Dims dims{1, 1, 1};
  Spacing spacing{1.0, 1.0, 1.0};
  Affine affine{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1};

  std::size_t voxels() const {
    return static_cast<std::size_t>(dims[0] * dims[1] * dims[2]);
  }
  std::size_t index(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return static_cast<std::size_t>(i + dims[0] * (j + dims[1] * k));
  }
  bool contains(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return i >= 0 && j >= 0 && k >= 0 && i < dims[0] && j < dims[1] &&
           k < dims[2];
  }
  // Throws std::invalid_argument when dims or spacing are not positive.
  void validate() const;

  // Identity-style affine scaled by the spacing.
  static Affine diagonal_affine(const Spacing& spacing);
  static Grid make(const Dims& dims, const Spacing& spacing = {1.0, 1.0, 1.0});

  friend bool operator==(const Grid&, const Grid&) = default;
};

bool same_grid(const Grid& a, const Grid& b);
void require_same_grid(const Grid& a, const Grid& b, const std::string& what);

template <typename T>
struct Image {
  using value_type = T;

  Grid grid;
  std::vector<T> data;

  Image() = default;
  explicit Image(const Grid& g, T fill = T{}) : grid(g), data(g.voxels(), fill) {
    grid.validate();
  }

  const Dims& dims() const { return grid.dims; }
  std::size_t size() const { return data.size(); }

  T& operator()(std::int64_t i, std::int64_t j, std::int64_t k) {
    return data[grid.index(i, j, k)];
  }
  const T& operator()(std::int64_t i, std::int64_t j, std::int64_t k) const {
    return data[grid.index(i, j, k)];
  }
  T& operator[](std::size_t n) { return data[n]; }
  const T& operator[](std::size_t n) const { return data[n]; }

  friend bool operator==(const Image&, const Image&) = default;
};

/// Scalar image. Storage is 32-bit float; statistics accumulate in double.
using Volume = Image<float>;

/// Segmentation labels: 0 background, 1 WM-PVS, 2 BG-PVS, 3 WMH, 255 ignore.
using LabelMap = Image<std::uint8_t>;

/// Binary mask (0/1) on a volume grid.
using Mask = Image<std::uint8_t>;

/// Atlas parcellation with arbitrary integer region ids.
using Parcellation = Image<std::int32_t>;

namespace label {
inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kWmPvs = 1;
inline constexpr std::uint8_t kBgPvs = 2;
inline constexpr std::uint8_t kWmh = 3;
inline constexpr std::uint8_t kIgnore = 255;

inline bool is_valid(std::uint8_t v) { return v <= kWmh || v == kIgnore; }
inline bool is_foreground(std::uint8_t v) {
  return v != kBackground && v != kIgnore;
}
}  // namespace label

// Throws std::invalid_argument if any voxel holds a value outside
// {0, 1, 2, 3, 255}.
void validate_labels(const LabelMap& labels);

// Throws std::invalid_argument on NaN/Inf or a data/grid size mismatch.
void validate_volume(const Volume& vol);

std::size_t count_nonzero(const Mask& mask);

}  // namespace pvs
