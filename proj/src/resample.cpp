#include <algorithm>
#include <cmath>

#include "pvs/preprocess.hpp"

namespace pvs {
namespace {

struct AxisSample {
  std::int64_t lo = 0;
  std::int64_t hi = 0;
  double frac = 0.0;
};

// Source positions for every output index along one axis.
std::vector<AxisSample> axis_samples(std::int64_t out_n, std::int64_t in_n,
                                     double ratio) {
  std::vector<AxisSample> s(static_cast<std::size_t>(out_n));
  const double last = static_cast<double>(in_n - 1);
  for (std::int64_t o = 0; o < out_n; ++o) {
    double x = std::clamp(static_cast<double>(o) * ratio, 0.0, last);
    auto lo = static_cast<std::int64_t>(std::floor(x));
    auto& a = s[static_cast<std::size_t>(o)];
    a.lo = lo;
    a.hi = std::min(lo + 1, in_n - 1);
    a.frac = x - static_cast<double>(lo);
  }
  return s;
}

std::int64_t nearest_index(const AxisSample& a) {
  return a.frac < 0.5 ? a.lo : a.hi;
}

template <typename T>
Image<T> resample_nearest(const Image<T>& in, const Grid& out_grid) {
  Image<T> out(out_grid);
  std::array<std::vector<AxisSample>, 3> ax;
  for (int a = 0; a < 3; ++a) {
    ax[a] = axis_samples(out_grid.dims[a], in.grid.dims[a],
                         out_grid.spacing[a] / in.grid.spacing[a]);
  }
  std::size_t n = 0;
  for (std::int64_t k = 0; k < out_grid.dims[2]; ++k) {
    const auto sk = nearest_index(ax[2][static_cast<std::size_t>(k)]);
    for (std::int64_t j = 0; j < out_grid.dims[1]; ++j) {
      const auto sj = nearest_index(ax[1][static_cast<std::size_t>(j)]);
      for (std::int64_t i = 0; i < out_grid.dims[0]; ++i, ++n) {
        const auto si = nearest_index(ax[0][static_cast<std::size_t>(i)]);
        out.data[n] = in(si, sj, sk);
      }
    }
  }
  return out;
}

Volume resample_trilinear(const Volume& in, const Grid& out_grid) {
  Volume out(out_grid);
  std::array<std::vector<AxisSample>, 3> ax;
  for (int a = 0; a < 3; ++a) {
    ax[a] = axis_samples(out_grid.dims[a], in.grid.dims[a],
                         out_grid.spacing[a] / in.grid.spacing[a]);
  }
  std::size_t n = 0;
  for (std::int64_t k = 0; k < out_grid.dims[2]; ++k) {
    const auto& z = ax[2][static_cast<std::size_t>(k)];
    for (std::int64_t j = 0; j < out_grid.dims[1]; ++j) {
      const auto& y = ax[1][static_cast<std::size_t>(j)];
      for (std::int64_t i = 0; i < out_grid.dims[0]; ++i, ++n) {
        const auto& x = ax[0][static_cast<std::size_t>(i)];
        auto lerp_x = [&](std::int64_t jj, std::int64_t kk) {
          double a = in(x.lo, jj, kk);
          double b = in(x.hi, jj, kk);
          return a + x.frac * (b - a);
        };
        double c00 = lerp_x(y.lo, z.lo);
        double c10 = lerp_x(y.hi, z.lo);
        double c01 = lerp_x(y.lo, z.hi);
        double c11 = lerp_x(y.hi, z.hi);
        double c0 = c00 + y.frac * (c10 - c00);
        double c1 = c01 + y.frac * (c11 - c01);
        out.data[n] = static_cast<float>(c0 + z.frac * (c1 - c0));
      }
    }
  }
  return out;
}

}  // namespace

Grid resampled_grid(const Grid& grid, const SpacingPolicy& policy) {
  if (std::holds_alternative<Agnostic>(policy)) return grid;
  const auto& target = std::get<TargetSpacing>(policy).spacing;
  Grid out = grid;
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0)) {
      throw std::invalid_argument("target spacing must be positive");
    }
    auto n = static_cast<std::int64_t>(std::llround(
        static_cast<double>(grid.dims[a]) * grid.spacing[a] / target[a]));
    if (n < 1) {
      throw std::invalid_argument(
          "target spacing too coarse: output dimension would be 0");
    }
    out.dims[a] = n;
    out.spacing[a] = target[a];
    // Column a of the affine scales with the voxel size.
    for (int r = 0; r < 3; ++r) {
      out.affine[4 * r + a] = grid.affine[4 * r + a] * target[a] / grid.spacing[a];
    }
  }
  return out;
}

Volume resample(const Volume& vol, const SpacingPolicy& policy,
                Interpolation interp) {
  if (std::holds_alternative<Agnostic>(policy)) return vol;
  Grid out = resampled_grid(vol.grid, policy);
  return interp == Interpolation::kTrilinear ? resample_trilinear(vol, out)
                                             : resample_nearest(vol, out);
}

LabelMap resample(const LabelMap& labels, const SpacingPolicy& policy) {
  if (std::holds_alternative<Agnostic>(policy)) return labels;
  return resample_nearest(labels, resampled_grid(labels.grid, policy));
}

Parcellation resample(const Parcellation& parc, const SpacingPolicy& policy) {
  if (std::holds_alternative<Agnostic>(policy)) return parc;
  return resample_nearest(parc, resampled_grid(parc.grid, policy));
}

}  // namespace pvs
