#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "pvs/enhance.hpp"
#include "pvs/preprocess.hpp"

using namespace pvs;

namespace {

double variance(const Volume& v) {
  double s = 0.0, s2 = 0.0;
  for (float x : v.data) s += x;
  const double m = s / v.size();
  for (float x : v.data) s2 += (x - m) * (x - m);
  return s2 / v.size();
}

// Direct evaluation of the NLM weight rule, border-clipped.
double nlm_reference(const Volume& v, std::int64_t i, std::int64_t j, std::int64_t k, int pr,
                     int br, double sigma) {
  const Grid& g = v.grid;
  const double s2 = sigma * sigma;
  double wsum = 0.0, acc = 0.0;
  for (int bz = -br; bz <= br; ++bz)
    for (int by = -br; by <= br; ++by)
      for (int bx = -br; bx <= br; ++bx) {
        const std::int64_t qi = i + bx, qj = j + by, qk = k + bz;
        if (!g.contains(qi, qj, qk)) continue;
        double d2 = 0.0;
        int n = 0;
        for (int pz = -pr; pz <= pr; ++pz)
          for (int py = -pr; py <= pr; ++py)
            for (int px = -pr; px <= pr; ++px) {
              if (!g.contains(i + px, j + py, k + pz) || !g.contains(qi + px, qj + py, qk + pz)) {
                continue;
              }
              const double d = v(i + px, j + py, k + pz) - v(qi + px, qj + py, qk + pz);
              d2 += d * d;
              ++n;
            }
        const double w = std::exp(-std::max(d2 - 2.0 * s2 * n, 0.0) / (s2 * n));
        wsum += w;
        acc += w * v(qi, qj, qk);
      }
  return acc / wsum;
}

}  // namespace

TEST_CASE("nlm on a constant volume is the identity") {
  const Volume v(Grid::make({12, 10, 8}), 0.37f);
  const Volume f = nlm_filter(v, 1, 2, 0.1);
  CHECK(f == v);
}

TEST_CASE("nlm on constant plus noise reduces variance and matches the direct rule") {
  Volume v(Grid::make({32, 32, 32}));
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.5, 0.1);
  for (auto& x : v.data) x = static_cast<float>(n(rng));
  const Volume f = nlm_filter(v, 1, 2, 0.1);
  CHECK(variance(f) < variance(v));
  double worst = 0.0;
  for (std::int64_t k = 0; k < 32; ++k)
    for (std::int64_t j = 0; j < 32; ++j)
      for (std::int64_t i = 0; i < 32; ++i) {
        worst = std::max(worst, std::abs(f(i, j, k) - nlm_reference(v, i, j, k, 1, 2, 0.1)));
      }
  CHECK(worst <= 1e-6);
}

TEST_CASE("nlm argument checks") {
  const Volume v(Grid::make({4, 4, 4}), 1.0f);
  CHECK_THROWS_AS(nlm_filter(v, 1, 2, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(nlm_filter(v, -1, 2, 0.1), std::invalid_argument);
  EnhanceConfig cfg;
  CHECK_THROWS(nlm_filter(v, cfg));
}

TEST_CASE("estimate_sigma is the background population sd") {
  Volume v(Grid::make({6, 6, 6}), 0.0f);
  Mask bg(v.grid, 1);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = (i % 2) ? 1.0f : -1.0f;
  CHECK(estimate_sigma(v, bg) == doctest::Approx(1.0).epsilon(1e-3));
  Mask small(v.grid, 0);
  small[0] = 1;
  CHECK_THROWS(estimate_sigma(v, small));
}

TEST_CASE("ahe output lies in [0, 1]") {
  Volume v(Grid::make({24, 20, 16}));
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (auto& x : v.data) x = static_cast<float>(u(rng) * u(rng));
  for (double clip : {0.01, 0.1, 1.0}) {
    const Volume a = adaptive_hist_eq(v, {8, 8, 8}, clip);
    const auto [lo, hi] = std::minmax_element(a.data.begin(), a.data.end());
    CHECK(*lo >= 0.0f);
    CHECK(*hi <= 1.0f);
  }
  Volume bad = v;
  bad[0] = 1.5f;
  CHECK_THROWS(adaptive_hist_eq(bad, {8, 8, 8}, 0.01));
}

TEST_CASE("single tile without clipping is the rank transform") {
  const Dims dims{8, 8, 8};
  Volume v(Grid::make(dims));
  const std::size_t n = v.size();
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(13));
  // Strictly increasing distinct values v_1 < ... < v_n at shuffled positions.
  for (std::size_t r = 0; r < n; ++r) v[order[r]] = static_cast<float>(r) / (n - 1);
  const Volume a = adaptive_hist_eq(v, {8, 8, 8}, 1.0);
  for (std::size_t r = 0; r < n; ++r) {
    const double rank = static_cast<double>(r + 1) / n;
    CHECK(std::abs(a[order[r]] - rank) <= 1.0 / 256 + 1e-6);
  }
  // Monotone non-decreasing in the input.
  for (std::size_t r = 1; r < n; ++r) CHECK(a[order[r]] >= a[order[r - 1]]);
}

TEST_CASE("default ahe kernel") {
  CHECK(default_ahe_kernel({64, 64, 64}) == std::array<int, 3>{8, 8, 8});
  CHECK(default_ahe_kernel({16, 40, 3}) == std::array<int, 3>{4, 5, 3});
}

TEST_CASE("enhance pipeline keeps the background at zero") {
  Volume v(Grid::make({20, 20, 20}));
  std::mt19937_64 rng(14);
  std::normal_distribution<double> noise(0.0, 0.02);
  for (std::int64_t k = 0; k < 20; ++k)
    for (std::int64_t j = 0; j < 20; ++j)
      for (std::int64_t i = 0; i < 20; ++i) {
        const bool inside = (i - 10) * (i - 10) + (j - 10) * (j - 10) + (k - 10) * (k - 10) < 49;
        v(i, j, k) = static_cast<float>((inside ? 1.0 : 0.1) + noise(rng));
      }
  EnhanceConfig plain;
  const EnhanceResult p = enhance_pipeline(v, plain);
  // No flags: Otsu foreground then rescale on it.
  CHECK(p.image == rescale_unit(v, otsu_foreground(v).mask));
  CHECK_FALSE(p.sigma.has_value());

  EnhanceConfig all;
  all.nlmf = true;
  all.ahe = true;
  const EnhanceResult e = enhance_pipeline(v, all);
  REQUIRE(e.sigma.has_value());
  CHECK(*e.sigma > 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!e.foreground[i]) CHECK(e.image[i] == 0.0f);
    CHECK(e.image[i] >= 0.0f);
    CHECK(e.image[i] <= 1.0f);
  }
}

TEST_CASE("enhance config validation") {
  EnhanceConfig c;
  c.ahe_clip_limit = 0.0;
  CHECK_THROWS(c.validate());
  c.ahe_clip_limit = 1.0;
  c.nlm_sigma = -1.0;
  CHECK_THROWS(c.validate());
  c.nlm_sigma = 0.2;
  c.ahe_kernel = std::array<int, 3>{4, 0, 4};
  CHECK_THROWS(c.validate());
}
