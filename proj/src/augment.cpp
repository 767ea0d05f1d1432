#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "pvs/train.hpp"

namespace pvs::train {

TrainingCase::TrainingCase(std::string case_id, std::vector<Volume> chans, LabelMap lab)
    : id(std::move(case_id)), channels(std::move(chans)), labels(std::move(lab)) {
  if (channels.empty()) throw std::invalid_argument("training case " + id + " has no image");
  for (const auto& c : channels) require_same_grid(c.grid, labels.grid, "training case " + id);
  validate_labels(labels);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (label::is_foreground(labels[i])) foreground.push_back(i);
  }
}

bool TrainingCase::has_supervision() const {
  return std::any_of(labels.data.begin(), labels.data.end(),
                     [](std::uint8_t v) { return v != label::kIgnore; });
}

Patch crop_patch(const TrainingCase& c, const std::array<int, 3>& ps,
                 const std::array<std::int64_t, 3>& start) {
  Patch p;
  p.image = nn::Tensor<float>(static_cast<int>(c.channels.size()), ps);
  p.labels.assign(p.image.voxels(), label::kIgnore);
  const Grid& g = c.labels.grid;
  for (int z = 0; z < ps[2]; ++z) {
    const std::int64_t k = start[2] + z;
    for (int y = 0; y < ps[1]; ++y) {
      const std::int64_t j = start[1] + y;
      for (int x = 0; x < ps[0]; ++x) {
        const std::int64_t i = start[0] + x;
        if (!g.contains(i, j, k)) continue;
        const std::size_t src = g.index(i, j, k);
        const std::size_t dst = (static_cast<std::size_t>(z) * ps[1] + y) * ps[0] + x;
        p.labels[dst] = c.labels[src];
        for (std::size_t ch = 0; ch < c.channels.size(); ++ch) {
          p.image.channel(static_cast<int>(ch))[dst] = c.channels[ch][src];
        }
      }
    }
  }
  for (int a = 0; a < 3; ++a) p.center[a] = start[a] + ps[a] / 2;
  return p;
}

Patch sample_patch(const TrainingCase& c, const std::array<int, 3>& ps,
                   double fg_oversample, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> coin(0.0, 1.0);
  const bool want_fg = coin(rng) < fg_oversample;
  std::size_t flat = 0;
  if (want_fg && !c.foreground.empty()) {
    std::uniform_int_distribution<std::size_t> pick(0, c.foreground.size() - 1);
    flat = c.foreground[pick(rng)];
  } else {
    std::uniform_int_distribution<std::size_t> pick(0, c.labels.size() - 1);
    flat = pick(rng);
  }
  const Dims& d = c.labels.dims();
  const std::array<std::int64_t, 3> center{
      static_cast<std::int64_t>(flat) % d[0],
      (static_cast<std::int64_t>(flat) / d[0]) % d[1],
      static_cast<std::int64_t>(flat) / (d[0] * d[1])};
  std::array<std::int64_t, 3> start{};
  for (int a = 0; a < 3; ++a) start[a] = center[a] - ps[a] / 2;
  Patch p = crop_patch(c, ps, start);
  p.center = center;
  return p;
}

// ---- augmentation ----

void AugmentConfig::validate() const {
  auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!prob(mirror_prob) || !prob(rotation_prob) || !prob(scale_prob) ||
      !prob(elastic_prob) || !prob(noise_prob) || rotation_max_deg < 0.0 ||
      !(scale_min > 0.0) || scale_min > scale_max || elastic_amplitude < 0.0 ||
      elastic_grid < 2 || noise_max_sigma < 0.0) {
    throw std::invalid_argument("invalid augmentation configuration");
  }
}

bool SpatialTransform::is_resampling() const {
  return angles_rad != std::array<double, 3>{0, 0, 0} || scale != 1.0 || !elastic.empty();
}

SpatialTransform draw_transform(const Patch& p, const AugmentConfig& cfg,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  SpatialTransform t;
  if (cfg.rotation && u01(rng) < cfg.rotation_prob) {
    const double m = cfg.rotation_max_deg * std::numbers::pi / 180.0;
    std::uniform_real_distribution<double> ang(-m, m);
    for (auto& a : t.angles_rad) a = ang(rng);
  }
  if (cfg.scale && u01(rng) < cfg.scale_prob) {
    std::uniform_real_distribution<double> s(cfg.scale_min, cfg.scale_max);
    t.scale = s(rng);
  }
  if (cfg.elastic && u01(rng) < cfg.elastic_prob && cfg.elastic_amplitude > 0.0) {
    std::normal_distribution<double> n(0.0, cfg.elastic_amplitude);
    const int g = cfg.elastic_grid;
    t.elastic_grid = g;
    t.elastic.assign(3, std::vector<double>(static_cast<std::size_t>(g * g * g)));
    for (auto& comp : t.elastic) {
      for (auto& v : comp) v = n(rng);
    }
  }
  if (cfg.mirror) {
    for (auto& f : t.flip) f = u01(rng) < cfg.mirror_prob;
  }
  if (cfg.noise && u01(rng) < cfg.noise_prob) {
    const auto [lo, hi] = std::minmax_element(p.image.data.begin(), p.image.data.end());
    std::uniform_real_distribution<double> s(0.0, cfg.noise_max_sigma);
    t.noise_sigma = s(rng) * static_cast<double>(*hi - *lo);
  }
  return t;
}

namespace {

using Mat3 = std::array<std::array<double, 3>, 3>;

Mat3 mul(const Mat3& a, const Mat3& b) {
  Mat3 r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) r[i][j] += a[i][k] * b[k][j];
  return r;
}

Mat3 rotation(const std::array<double, 3>& ang) {
  const double cx = std::cos(ang[0]), sx = std::sin(ang[0]);
  const double cy = std::cos(ang[1]), sy = std::sin(ang[1]);
  const double cz = std::cos(ang[2]), sz = std::sin(ang[2]);
  const Mat3 rx{{{1, 0, 0}, {0, cx, -sx}, {0, sx, cx}}};
  const Mat3 ry{{{cy, 0, sy}, {0, 1, 0}, {-sy, 0, cy}}};
  const Mat3 rz{{{cz, -sz, 0}, {sz, cz, 0}, {0, 0, 1}}};
  return mul(rz, mul(ry, rx));
}

// Trilinear sample of a control grid spanning the patch corners.
double grid_sample(const std::vector<double>& v, int g, const std::array<double, 3>& f) {
  std::array<int, 3> i0{};
  std::array<double, 3> w{};
  for (int a = 0; a < 3; ++a) {
    const double c = std::clamp(f[a], 0.0, static_cast<double>(g - 1));
    i0[a] = std::min(static_cast<int>(c), g - 2);
    w[a] = c - i0[a];
  }
  double s = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wt = (dx ? w[0] : 1 - w[0]) * (dy ? w[1] : 1 - w[1]) * (dz ? w[2] : 1 - w[2]);
        s += wt * v[static_cast<std::size_t>(((i0[2] + dz) * g + i0[1] + dy) * g + i0[0] + dx)];
      }
  return s;
}

float trilinear_zero(const float* img, const std::array<int, 3>& d, double x, double y,
                     double z) {
  const double fx = std::floor(x), fy = std::floor(y), fz = std::floor(z);
  const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy), z0 = static_cast<int>(fz);
  const double wx = x - fx, wy = y - fy, wz = z - fz;
  double s = 0.0;
  for (int dz = 0; dz < 2; ++dz) {
    const int zz = z0 + dz;
    if (zz < 0 || zz >= d[2]) continue;
    for (int dy = 0; dy < 2; ++dy) {
      const int yy = y0 + dy;
      if (yy < 0 || yy >= d[1]) continue;
      for (int dx = 0; dx < 2; ++dx) {
        const int xx = x0 + dx;
        if (xx < 0 || xx >= d[0]) continue;
        const double wt = (dx ? wx : 1 - wx) * (dy ? wy : 1 - wy) * (dz ? wz : 1 - wz);
        s += wt * img[(static_cast<std::size_t>(zz) * d[1] + yy) * d[0] + xx];
      }
    }
  }
  return static_cast<float>(s);
}

}  // namespace

Patch apply_transform(const Patch& in, const SpatialTransform& t, std::mt19937_64& rng) {
  Patch out = in;
  const auto& d = in.image.dims;
  if (t.is_resampling()) {
    const Mat3 r = rotation(t.angles_rad);
    const std::array<double, 3> c{(d[0] - 1) / 2.0, (d[1] - 1) / 2.0, (d[2] - 1) / 2.0};
    for (int z = 0; z < d[2]; ++z) {
      for (int y = 0; y < d[1]; ++y) {
        for (int x = 0; x < d[0]; ++x) {
          const std::array<double, 3> q{(x - c[0]) / t.scale, (y - c[1]) / t.scale,
                                        (z - c[2]) / t.scale};
          std::array<double, 3> s{};
          for (int a = 0; a < 3; ++a) {
            s[a] = c[a] + r[a][0] * q[0] + r[a][1] * q[1] + r[a][2] * q[2];
          }
          if (!t.elastic.empty()) {
            const int g = t.elastic_grid;
            const std::array<double, 3> f{
                d[0] > 1 ? x * (g - 1.0) / (d[0] - 1) : 0.0,
                d[1] > 1 ? y * (g - 1.0) / (d[1] - 1) : 0.0,
                d[2] > 1 ? z * (g - 1.0) / (d[2] - 1) : 0.0};
            for (int a = 0; a < 3; ++a) s[a] += grid_sample(t.elastic[static_cast<std::size_t>(a)], g, f);
          }
          const std::size_t dst = (static_cast<std::size_t>(z) * d[1] + y) * d[0] + x;
          for (int ch = 0; ch < in.image.channels; ++ch) {
            out.image.channel(ch)[dst] = trilinear_zero(in.image.channel(ch), d, s[0], s[1], s[2]);
          }
          const auto ix = std::llround(s[0]), iy = std::llround(s[1]), iz = std::llround(s[2]);
          out.labels[dst] =
              (ix < 0 || iy < 0 || iz < 0 || ix >= d[0] || iy >= d[1] || iz >= d[2])
                  ? label::kIgnore
                  : in.labels[(static_cast<std::size_t>(iz) * d[1] + iy) * d[0] + ix];
        }
      }
    }
  }
  for (int a = 0; a < 3; ++a) {
    if (!t.flip[static_cast<std::size_t>(a)]) continue;
    const Patch src = out;
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x) {
          std::array<int, 3> s{x, y, z};
          s[a] = d[a] - 1 - s[a];
          const std::size_t to = (static_cast<std::size_t>(z) * d[1] + y) * d[0] + x;
          const std::size_t from = (static_cast<std::size_t>(s[2]) * d[1] + s[1]) * d[0] + s[0];
          out.labels[to] = src.labels[from];
          for (int ch = 0; ch < in.image.channels; ++ch) {
            out.image.channel(ch)[to] = src.image.channel(ch)[from];
          }
        }
  }
  if (t.noise_sigma > 0.0) {
    std::normal_distribution<double> n(0.0, t.noise_sigma);
    for (auto& v : out.image.data) v = static_cast<float>(v + n(rng));
  }
  return out;
}

Patch augment(const Patch& p, const AugmentConfig& cfg, std::mt19937_64& rng) {
  const SpatialTransform t = draw_transform(p, cfg, rng);
  return apply_transform(p, t, rng);
}

}  // namespace pvs::train
