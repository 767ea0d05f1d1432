#include "pvs/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pvs {

void Grid::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) {
      throw std::invalid_argument("grid dimension " + std::to_string(a) +
                                  " must be >= 1");
    }
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a])) {
      throw std::invalid_argument("grid spacing " + std::to_string(a) +
                                  " must be positive and finite");
    }
  }
}

Affine Grid::diagonal_affine(const Spacing& spacing) {
  Affine a{};
  a[0] = spacing[0];
  a[5] = spacing[1];
  a[10] = spacing[2];
  a[15] = 1.0;
  return a;
}

Grid Grid::make(const Dims& dims, const Spacing& spacing) {
  Grid g;
  g.dims = dims;
  g.spacing = spacing;
  g.affine = diagonal_affine(spacing);
  g.validate();
  return g;
}

bool same_grid(const Grid& a, const Grid& b) {
  return a.dims == b.dims && a.spacing == b.spacing;
}

void require_same_grid(const Grid& a, const Grid& b, const std::string& what) {
  if (a.dims != b.dims) {
    std::ostringstream os;
    os << what << ": grid mismatch (" << a.dims[0] << "x" << a.dims[1] << "x"
       << a.dims[2] << " vs " << b.dims[0] << "x" << b.dims[1] << "x"
       << b.dims[2] << ")";
    throw std::invalid_argument(os.str());
  }
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a.spacing[i] - b.spacing[i]) > 1e-6 * a.spacing[i]) {
      throw std::invalid_argument(what + ": spacing mismatch");
    }
  }
}

void validate_labels(const LabelMap& labels) {
  if (labels.data.size() != labels.grid.voxels()) {
    throw std::invalid_argument("label data size does not match grid");
  }
  auto bad = std::find_if_not(labels.data.begin(), labels.data.end(),
                              label::is_valid);
  if (bad != labels.data.end()) {
    throw std::invalid_argument("invalid label value " + std::to_string(*bad));
  }
}

void validate_volume(const Volume& vol) {
  if (vol.data.size() != vol.grid.voxels()) {
    throw std::invalid_argument("volume data size does not match grid");
  }
  for (float v : vol.data) {
    if (!std::isfinite(v)) {
      throw std::invalid_argument("volume contains non-finite values");
    }
  }
}

std::size_t count_nonzero(const Mask& mask) {
  return static_cast<std::size_t>(
      std::count_if(mask.data.begin(), mask.data.end(),
                    [](std::uint8_t v) { return v != 0; }));
}

}  // namespace pvs
