#include "pvs/enhance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "pvs/preprocess.hpp"

namespace pvs {
namespace {

constexpr int kAheBins = 256;

// In-place box sum of radius r along one axis; out-of-range samples count as 0.
void box_sum_axis(std::vector<double>& f, const Dims& d, int axis, int r,
                  std::vector<double>& line, std::vector<double>& prefix) {
  const std::int64_t n = d[axis];
  const std::array<std::int64_t, 3> stride{1, d[0], d[0] * d[1]};
  const std::int64_t s = stride[axis];
  line.resize(static_cast<std::size_t>(n));
  prefix.resize(static_cast<std::size_t>(n + 1));
  const std::int64_t total = d[0] * d[1] * d[2];
  for (std::int64_t base = 0; base < total; ++base) {
    // Only start lines at positions whose coordinate along `axis` is 0.
    if ((base / s) % n != 0) continue;
    prefix[0] = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
      prefix[static_cast<std::size_t>(i + 1)] =
          prefix[static_cast<std::size_t>(i)] +
          f[static_cast<std::size_t>(base + i * s)];
    }
    for (std::int64_t i = 0; i < n; ++i) {
      std::int64_t lo = std::max<std::int64_t>(i - r, 0);
      std::int64_t hi = std::min<std::int64_t>(i + r + 1, n);
      line[static_cast<std::size_t>(i)] =
          prefix[static_cast<std::size_t>(hi)] -
          prefix[static_cast<std::size_t>(lo)];
    }
    for (std::int64_t i = 0; i < n; ++i) {
      f[static_cast<std::size_t>(base + i * s)] =
          line[static_cast<std::size_t>(i)];
    }
  }
}

void box_sum(std::vector<double>& f, const Dims& d, int r,
             std::vector<double>& line, std::vector<double>& prefix) {
  for (int axis = 0; axis < 3; ++axis) box_sum_axis(f, d, axis, r, line, prefix);
}

int ahe_bin(double v) {
  return std::min(static_cast<int>(v * kAheBins), kAheBins - 1);
}

struct TileAxis {
  std::int64_t count = 0;
  std::vector<double> centers;
};

TileAxis tile_axis(std::int64_t n, int k) {
  TileAxis t;
  t.count = (n + k - 1) / k;
  for (std::int64_t i = 0; i < t.count; ++i) {
    std::int64_t lo = i * k;
    std::int64_t hi = std::min<std::int64_t>(lo + k, n);
    t.centers.push_back(0.5 * static_cast<double>(lo + hi - 1));
  }
  return t;
}

struct Blend {
  std::int64_t t0 = 0;
  std::int64_t t1 = 0;
  double f = 0.0;
};

Blend blend_at(const TileAxis& ax, std::int64_t x) {
  const auto xd = static_cast<double>(x);
  const auto& c = ax.centers;
  if (xd <= c.front()) return {0, 0, 0.0};
  if (xd >= c.back()) return {ax.count - 1, ax.count - 1, 0.0};
  auto it = std::upper_bound(c.begin(), c.end(), xd);
  auto t1 = static_cast<std::int64_t>(it - c.begin());
  auto t0 = t1 - 1;
  double f = (xd - c[static_cast<std::size_t>(t0)]) /
             (c[static_cast<std::size_t>(t1)] - c[static_cast<std::size_t>(t0)]);
  return {t0, t1, f};
}

}  // namespace

void EnhanceConfig::validate() const {
  if (nlm_patch_radius < 0) {
    throw std::invalid_argument("nlm_patch_radius must be >= 0");
  }
  if (nlm_block_radius < 1 || nlm_block_radius < nlm_patch_radius) {
    throw std::invalid_argument(
        "nlm_block_radius must be >= 1 and >= nlm_patch_radius");
  }
  if (nlm_sigma && !(*nlm_sigma > 0.0)) {
    throw std::invalid_argument("nlm_sigma must be positive");
  }
  if (!(ahe_clip_limit > 0.0 && ahe_clip_limit <= 1.0)) {
    throw std::invalid_argument("ahe_clip_limit must lie in (0, 1]");
  }
  if (ahe_kernel) {
    for (int k : *ahe_kernel) {
      if (k < 1) throw std::invalid_argument("ahe_kernel must be positive");
    }
  }
}

double estimate_sigma(const Volume& vol, const Mask& background) {
  require_same_grid(vol.grid, background.grid, "estimate_sigma");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (background[i] == 0) continue;
    sum += vol[i];
    ++n;
  }
  if (n < 27) {
    throw std::invalid_argument("estimate_sigma: background has < 27 voxels");
  }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (background[i] == 0) continue;
    ss += (vol[i] - mean) * (vol[i] - mean);
  }
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd > 0.0)) {
    throw std::invalid_argument("estimate_sigma: background has zero variance");
  }
  return sd;
}

Volume nlm_filter(const Volume& vol, int patch_radius, int block_radius,
                  double sigma) {
  validate_volume(vol);
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("nlm_filter: sigma must be positive");
  }
  if (patch_radius < 0 || block_radius < 1) {
    throw std::invalid_argument("nlm_filter: bad radii");
  }
  const Dims& d = vol.grid.dims;
  const std::size_t total = vol.size();
  const double s2 = sigma * sigma;

  std::vector<double> num(total, 0.0);
  std::vector<double> den(total, 0.0);
  std::vector<double> dist(total);
  std::vector<double> valid(total);
  std::vector<double> line;
  std::vector<double> prefix;

  // One pass per search offset: patch distances for every voxel at once come
  // from box-summing the squared difference image.
  for (int dz = -block_radius; dz <= block_radius; ++dz) {
    for (int dy = -block_radius; dy <= block_radius; ++dy) {
      for (int dx = -block_radius; dx <= block_radius; ++dx) {
        std::fill(dist.begin(), dist.end(), 0.0);
        std::fill(valid.begin(), valid.end(), 0.0);
        for (std::int64_t k = 0; k < d[2]; ++k) {
          for (std::int64_t j = 0; j < d[1]; ++j) {
            for (std::int64_t i = 0; i < d[0]; ++i) {
              if (!vol.grid.contains(i + dx, j + dy, k + dz)) continue;
              const std::size_t p = vol.grid.index(i, j, k);
              const double diff =
                  static_cast<double>(vol[p]) - vol(i + dx, j + dy, k + dz);
              dist[p] = diff * diff;
              valid[p] = 1.0;
            }
          }
        }
        std::vector<double> self = valid;
        box_sum(dist, d, patch_radius, line, prefix);
        box_sum(valid, d, patch_radius, line, prefix);
        for (std::int64_t k = 0; k < d[2]; ++k) {
          for (std::int64_t j = 0; j < d[1]; ++j) {
            for (std::int64_t i = 0; i < d[0]; ++i) {
              const std::size_t p = vol.grid.index(i, j, k);
              if (self[p] == 0.0) continue;
              const double n = valid[p];
              const double excess = std::max(dist[p] - 2.0 * s2 * n, 0.0);
              const double w = std::exp(-excess / (s2 * n));
              num[p] += w * vol(i + dx, j + dy, k + dz);
              den[p] += w;
            }
          }
        }
      }
    }
  }

  Volume out(vol.grid);
  for (std::size_t p = 0; p < total; ++p) {
    out[p] = static_cast<float>(num[p] / den[p]);
  }
  return out;
}

Volume nlm_filter(const Volume& vol, const EnhanceConfig& cfg) {
  cfg.validate();
  if (!cfg.nlm_sigma) {
    throw std::invalid_argument("nlm_filter: sigma not resolved");
  }
  return nlm_filter(vol, cfg.nlm_patch_radius, cfg.nlm_block_radius,
                    *cfg.nlm_sigma);
}

std::array<int, 3> default_ahe_kernel(const Dims& dims) {
  std::array<int, 3> k{};
  for (int a = 0; a < 3; ++a) {
    auto v = std::max<std::int64_t>(dims[a] / 8, 4);
    k[a] = static_cast<int>(std::min<std::int64_t>(v, dims[a]));
  }
  return k;
}

Volume adaptive_hist_eq(const Volume& vol, const std::array<int, 3>& kernel,
                        double clip_limit) {
  validate_volume(vol);
  const Dims& d = vol.grid.dims;
  for (int a = 0; a < 3; ++a) {
    if (kernel[a] < 1) throw std::invalid_argument("AHE kernel must be >= 1");
    if (kernel[a] > d[a]) {
      throw std::invalid_argument("AHE kernel larger than the volume");
    }
  }
  if (!(clip_limit > 0.0 && clip_limit <= 1.0)) {
    throw std::invalid_argument("AHE clip limit must lie in (0, 1]");
  }
  for (float v : vol.data) {
    if (v < 0.0f || v > 1.0f) {
      throw std::invalid_argument("AHE input must lie in [0, 1]");
    }
  }

  std::array<TileAxis, 3> ax{tile_axis(d[0], kernel[0]),
                             tile_axis(d[1], kernel[1]),
                             tile_axis(d[2], kernel[2])};
  const std::int64_t nt = ax[0].count * ax[1].count * ax[2].count;
  auto tile_id = [&](std::int64_t a, std::int64_t b, std::int64_t c) {
    return static_cast<std::size_t>(a + ax[0].count * (b + ax[1].count * c));
  };

  std::vector<std::array<double, kAheBins>> hist(
      static_cast<std::size_t>(nt), std::array<double, kAheBins>{});
  std::vector<double> tile_n(static_cast<std::size_t>(nt), 0.0);
  for (std::int64_t k = 0; k < d[2]; ++k) {
    for (std::int64_t j = 0; j < d[1]; ++j) {
      for (std::int64_t i = 0; i < d[0]; ++i) {
        auto t = tile_id(i / kernel[0], j / kernel[1], k / kernel[2]);
        hist[t][static_cast<std::size_t>(ahe_bin(vol(i, j, k)))] += 1.0;
        tile_n[t] += 1.0;
      }
    }
  }

  // Clip, redistribute, and turn every histogram into its mapping.
  for (std::size_t t = 0; t < hist.size(); ++t) {
    auto& h = hist[t];
    if (clip_limit < 1.0) {
      const double limit = std::max(clip_limit * tile_n[t], 1.0);
      double excess = 0.0;
      for (double& c : h) {
        if (c > limit) {
          excess += c - limit;
          c = limit;
        }
      }
      const double share = excess / kAheBins;
      for (double& c : h) c += share;
    }
    double acc = 0.0;
    for (double& c : h) {
      acc += c;
      c = std::min(acc / tile_n[t], 1.0);
    }
  }

  Volume out(vol.grid);
  for (std::int64_t k = 0; k < d[2]; ++k) {
    const Blend bz = blend_at(ax[2], k);
    for (std::int64_t j = 0; j < d[1]; ++j) {
      const Blend by = blend_at(ax[1], j);
      for (std::int64_t i = 0; i < d[0]; ++i) {
        const Blend bx = blend_at(ax[0], i);
        const auto b = static_cast<std::size_t>(ahe_bin(vol(i, j, k)));
        auto map = [&](std::int64_t a, std::int64_t bb, std::int64_t c) {
          return hist[tile_id(a, bb, c)][b];
        };
        auto lx = [&](std::int64_t y, std::int64_t z) {
          return (1.0 - bx.f) * map(bx.t0, y, z) + bx.f * map(bx.t1, y, z);
        };
        double c0 = (1.0 - by.f) * lx(by.t0, bz.t0) + by.f * lx(by.t1, bz.t0);
        double c1 = (1.0 - by.f) * lx(by.t0, bz.t1) + by.f * lx(by.t1, bz.t1);
        double v = (1.0 - bz.f) * c0 + bz.f * c1;
        out(i, j, k) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return out;
}

Volume adaptive_hist_eq(const Volume& vol, const EnhanceConfig& cfg) {
  cfg.validate();
  return adaptive_hist_eq(
      vol, cfg.ahe_kernel.value_or(default_ahe_kernel(vol.grid.dims)),
      cfg.ahe_clip_limit);
}

EnhanceResult enhance_pipeline(const Volume& vol, const EnhanceConfig& cfg) {
  cfg.validate();
  validate_volume(vol);
  EnhanceResult r;
  r.foreground = otsu_foreground(vol).mask;
  r.image = rescale_unit(vol, r.foreground);

  auto zero_background = [&](Volume& v) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (r.foreground[i] == 0) v[i] = 0.0f;
    }
  };

  if (cfg.nlmf) {
    double sigma = 0.0;
    if (cfg.nlm_sigma) {
      sigma = *cfg.nlm_sigma;
    } else {
      // Background noise of the raw image, expressed in rescaled units.
      Mask background(vol.grid);
      double lo = std::numeric_limits<double>::infinity();
      double hi = -lo;
      for (std::size_t i = 0; i < vol.size(); ++i) {
        background[i] = r.foreground[i] == 0 ? 1 : 0;
        if (r.foreground[i] != 0) {
          lo = std::min<double>(lo, vol[i]);
          hi = std::max<double>(hi, vol[i]);
        }
      }
      sigma = estimate_sigma(vol, background) / (hi - lo);
    }
    r.sigma = sigma;
    r.image = nlm_filter(r.image, cfg.nlm_patch_radius, cfg.nlm_block_radius,
                         sigma);
    zero_background(r.image);
  }
  if (cfg.ahe) {
    r.image = adaptive_hist_eq(r.image, cfg);
    zero_background(r.image);
  }
  return r;
}

}  // namespace pvs
