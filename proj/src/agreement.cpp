#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <boost/math/distributions/students_t.hpp>

#include "pvs/eval.hpp"
#include "pvs/preprocess.hpp"

namespace pvs::eval {
namespace {

void require_pairs(std::span<const double> x, std::span<const double> y,
                   std::size_t min_n, const char* what) {
  if (x.size() != y.size()) {
    throw std::invalid_argument(std::string(what) + ": length mismatch");
  }
  if (x.size() < min_n) {
    throw std::invalid_argument(std::string(what) + ": need at least " +
                                std::to_string(min_n) + " pairs");
  }
}

double mean(std::span<const double> v) {
  return std::accumulate(v.begin(), v.end(), 0.0) /
         static_cast<double>(v.size());
}

// Population moments (divide by n).
struct Moments {
  double mx, my, sxx, syy, sxy;
};

Moments moments(std::span<const double> x, std::span<const double> y) {
  Moments m{mean(x), mean(y), 0.0, 0.0, 0.0};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - m.mx;
    const double dy = y[i] - m.my;
    m.sxx += dx * dx;
    m.syy += dy * dy;
    m.sxy += dx * dy;
  }
  const auto n = static_cast<double>(x.size());
  m.sxx /= n;
  m.syy /= n;
  m.sxy /= n;
  return m;
}

double ccc_from(const Moments& m) {
  const double gap = m.mx - m.my;
  const double den = m.sxx + m.syy + gap * gap;
  if (!(den > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  return 2.0 * m.sxy / den;
}

}  // namespace

double lin_ccc_value(std::span<const double> x, std::span<const double> y) {
  require_pairs(x, y, 1, "lin_ccc");
  double c = ccc_from(moments(x, y));
  if (std::isnan(c)) {
    throw std::invalid_argument(
        "lin_ccc: undefined for identical constant vectors");
  }
  return c;
}

CccResult lin_ccc(std::span<const double> x, std::span<const double> y,
                  const BootstrapConfig& boot) {
  require_pairs(x, y, 3, "lin_ccc");
  CccResult r;
  r.ccc = lin_ccc_value(x, y);
  r.ci_low = r.ccc;
  r.ci_high = r.ccc;
  if (boot.n_resamples <= 0) return r;

  std::mt19937_64 rng(boot.seed);
  std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
  std::vector<double> bx(x.size());
  std::vector<double> by(y.size());
  std::vector<double> stats;
  stats.reserve(static_cast<std::size_t>(boot.n_resamples));
  for (int b = 0; b < boot.n_resamples; ++b) {
    for (std::size_t i = 0; i < x.size(); ++i) {
      const std::size_t j = pick(rng);
      bx[i] = x[j];
      by[i] = y[j];
    }
    const double c = ccc_from(moments(bx, by));
    if (!std::isnan(c)) stats.push_back(c);
  }
  if (!stats.empty()) {
    r.ci_low = percentile(stats, 2.5);
    r.ci_high = percentile(stats, 97.5);
  }
  return r;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  require_pairs(x, y, 2, "pearson");
  const Moments m = moments(x, y);
  if (!(m.sxx > 0.0) || !(m.syy > 0.0)) {
    throw std::invalid_argument("pearson: constant vector");
  }
  return std::clamp(m.sxy / std::sqrt(m.sxx * m.syy), -1.0, 1.0);
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    // Positions i..j (0-based) share rank mean(i+1 .. j+1).
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = r;
    i = j + 1;
  }
  return ranks;
}

SpearmanResult spearman(std::span<const double> x, std::span<const double> y) {
  require_pairs(x, y, 3, "spearman");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  SpearmanResult s;
  s.rho = pearson(rx, ry);
  const double n = static_cast<double>(x.size());
  if (std::abs(s.rho) >= 1.0) {
    s.p_value = 0.0;
    return s;
  }
  const double t = s.rho * std::sqrt((n - 2.0) / (1.0 - s.rho * s.rho));
  boost::math::students_t dist(n - 2.0);
  s.p_value = std::clamp(2.0 * boost::math::cdf(boost::math::complement(
                                   dist, std::abs(t))),
                         0.0, 1.0);
  return s;
}

BlandAltmanResult bland_altman(std::span<const double> x,
                               std::span<const double> y) {
  require_pairs(x, y, 2, "bland_altman");
  std::vector<double> d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = x[i] - y[i];
  BlandAltmanResult r;
  r.bias = mean(d);
  double ss = 0.0;
  for (double v : d) ss += (v - r.bias) * (v - r.bias);
  const double sd = std::sqrt(ss / static_cast<double>(d.size() - 1));
  r.loa_low = r.bias - 1.96 * sd;
  r.loa_high = r.bias + 1.96 * sd;
  return r;
}

AgreementStats agreement(std::span<const double> x, std::span<const double> y,
                         const BootstrapConfig& boot) {
  AgreementStats a;
  const CccResult c = lin_ccc(x, y, boot);
  a.lin_ccc = c.ccc;
  a.ccc_ci_low = c.ci_low;
  a.ccc_ci_high = c.ci_high;
  const SpearmanResult s = spearman(x, y);
  a.spearman_rho = s.rho;
  a.spearman_p = s.p_value;
  const BlandAltmanResult b = bland_altman(x, y);
  a.bland_altman_bias = b.bias;
  a.loa_low = b.loa_low;
  a.loa_high = b.loa_high;
  return a;
}

}  // namespace pvs::eval
