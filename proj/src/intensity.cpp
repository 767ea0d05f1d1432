#include <algorithm>
#include <cmath>
#include <limits>

#include "pvs/preprocess.hpp"

namespace pvs {
namespace {

constexpr int kOtsuBins = 256;

std::vector<double> region_values(const Volume& vol, const Mask* mask) {
  std::vector<double> v;
  v.reserve(vol.size());
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (mask == nullptr || (*mask)[i] != 0) v.push_back(vol[i]);
  }
  return v;
}

void check_mask(const Volume& vol, const Mask* mask) {
  if (mask != nullptr) require_same_grid(vol.grid, mask->grid, "mask");
}

Volume rescale_impl(const Volume& vol, const Mask* mask) {
  check_mask(vol, mask);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0) continue;
    lo = std::min<double>(lo, vol[i]);
    hi = std::max<double>(hi, vol[i]);
  }
  if (!(hi > lo)) {
    throw std::invalid_argument("rescale_unit: region is constant or empty");
  }
  Volume out(vol.grid);
  const double scale = 1.0 / (hi - lo);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0) continue;
    double v = vol[i];
    // Pin the extremes so the bounds hold exactly after rounding to float.
    out[i] = v == lo ? 0.0f
                     : v == hi ? 1.0f
                               : static_cast<float>((v - lo) * scale);
  }
  return out;
}

Volume zscore_impl(const Volume& vol, const Mask* mask) {
  check_mask(vol, mask);
  std::vector<double> values = region_values(vol, mask);
  if (values.size() < 2) {
    throw std::invalid_argument("clip_zscore: region has fewer than 2 voxels");
  }
  const double p_lo = percentile(values, 0.5);
  const double p_hi = percentile(values, 99.5);
  double sum = 0.0;
  for (double& v : values) {
    v = std::clamp(v, p_lo, p_hi);
    sum += v;
  }
  const double n = static_cast<double>(values.size());
  const double mean = sum / n;
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / n);
  if (!(sd > 0.0)) {
    throw std::invalid_argument("clip_zscore: zero standard deviation");
  }
  Volume out(vol.grid);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    if (mask != nullptr && (*mask)[i] == 0) continue;
    double v = std::clamp<double>(vol[i], p_lo, p_hi);
    out[i] = static_cast<float>((v - mean) / sd);
  }
  return out;
}

}  // namespace

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile of empty set");
  const double pos = pct / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<long>(lo),
                   values.end());
  const double a = values[lo];
  double b = a;
  if (hi != lo) {
    b = *std::min_element(values.begin() + static_cast<long>(lo) + 1,
                          values.end());
  }
  return a + (pos - static_cast<double>(lo)) * (b - a);
}

OtsuResult otsu_foreground(const Volume& vol) {
  if (vol.data.empty()) throw std::invalid_argument("otsu: empty volume");
  auto [mn_it, mx_it] = std::minmax_element(vol.data.begin(), vol.data.end());
  const double lo = *mn_it;
  const double hi = *mx_it;
  if (!(hi > lo)) {
    throw std::invalid_argument("otsu: constant volume has no threshold");
  }
  const double width = (hi - lo) / kOtsuBins;
  auto bin_of = [&](double v) {
    auto b = static_cast<long>(std::ceil((v - lo) / width)) - 1;
    return static_cast<int>(std::clamp<long>(b, 0, kOtsuBins - 1));
  };

  std::array<double, kOtsuBins> count{};
  std::array<double, kOtsuBins> sum{};
  for (float f : vol.data) {
    int b = bin_of(f);
    count[b] += 1.0;
    sum[b] += f;
  }
  const double total_n = static_cast<double>(vol.size());
  double total_s = 0.0;
  for (double s : sum) total_s += s;

  double best = -1.0;
  int best_t = 0;
  double c0 = 0.0;
  double s0 = 0.0;
  for (int t = 0; t < kOtsuBins - 1; ++t) {
    c0 += count[t];
    s0 += sum[t];
    const double c1 = total_n - c0;
    if (c0 == 0.0 || c1 == 0.0) continue;
    const double m0 = s0 / c0;
    const double m1 = (total_s - s0) / c1;
    const double var = c0 * c1 * (m0 - m1) * (m0 - m1) / (total_n * total_n);
    if (var > best * (1.0 + 1e-12)) {
      best = var;
      best_t = t;
    }
  }

  OtsuResult r;
  r.threshold = lo + (best_t + 1) * width;
  r.mask = Mask(vol.grid);
  for (std::size_t i = 0; i < vol.size(); ++i) {
    r.mask[i] = bin_of(vol[i]) > best_t ? 1 : 0;
  }
  return r;
}

Volume rescale_unit(const Volume& vol) { return rescale_impl(vol, nullptr); }
Volume rescale_unit(const Volume& vol, const Mask& mask) {
  return rescale_impl(vol, &mask);
}

Volume clip_zscore(const Volume& vol) { return zscore_impl(vol, nullptr); }
Volume clip_zscore(const Volume& vol, const Mask& mask) {
  return zscore_impl(vol, &mask);
}

}  // namespace pvs
