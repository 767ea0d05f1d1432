#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include "pvs/annotation.hpp"
#include "pvs/enhance.hpp"
#include "pvs/eval.hpp"
#include "pvs/loss.hpp"
#include "pvs/morphology.hpp"
#include "pvs/nifti.hpp"
#include "pvs/phantom.hpp"
#include "pvs/pipeline.hpp"
#include "pvs/preprocess.hpp"
#include "pvs/pseudo.hpp"
#include "pvs/train.hpp"

using namespace pvs;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

fs::path work_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / "pvs_acceptance" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// ---- 1. metric oracle ----

LabelMap random_pair_labels(std::mt19937_64& rng, bool ignore_region) {
  LabelMap l(Grid::make({16, 16, 16}));
  std::uniform_int_distribution<int> pick(0, 2);
  for (auto& v : l.data) v = static_cast<std::uint8_t>(pick(rng));
  if (ignore_region) {
    std::uniform_int_distribution<int> corner(0, 11);
    const int x = corner(rng), y = corner(rng), z = corner(rng);
    for (int k = z; k < z + 4; ++k)
      for (int j = y; j < y + 4; ++j)
        for (int i = x; i < x + 4; ++i) l(i, j, k) = label::kIgnore;
  }
  return l;
}

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(1);
  int mismatches = 0;
  for (int t = 0; t < 200; ++t) {
    const LabelMap ref = random_pair_labels(rng, true);
    const LabelMap pred = random_pair_labels(rng, t % 2 == 0);
    for (std::uint8_t c : {1, 2}) {
      eval::ConfusionCounts n;
      for (std::int64_t k = 0; k < 16; ++k)
        for (std::int64_t j = 0; j < 16; ++j)
          for (std::int64_t i = 0; i < 16; ++i) {
            if (ref(i, j, k) == label::kIgnore) continue;
            const bool p = pred(i, j, k) == c, r = ref(i, j, k) == c;
            n.tp += p && r;
            n.fp += p && !r;
            n.fn += !p && r;
            n.tn += !p && !r;
          }
      const auto got = eval::confusion(pred, ref, c);
      const auto a = eval::dsc_sen_ppv(got), b = eval::dsc_sen_ppv(n);
      mismatches += !(got == n) || a.dsc != b.dsc || a.sen != b.sen || a.ppv != b.ppv;
    }
  }
  const auto anchor = eval::dsc_sen_ppv({4, 2, 1, 0});
  const bool anchor_ok = anchor.dsc && *anchor.dsc == 8.0 / 11.0;
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << mismatches << " mismatches over 400 class comparisons, anchor DSC "
    << (anchor.dsc ? *anchor.dsc : -1.0) << ", " << secs << " s";
  return {mismatches == 0 && anchor_ok && secs < 10.0, d.str()};
}

// ---- 2. loss anchors and bounds ----

nn::LossInputs loss_inputs(int classes, std::vector<double> u, std::vector<std::uint8_t> labels,
                           std::vector<int> fg) {
  nn::LossInputs li;
  li.batch = 1;
  li.classes = classes;
  li.voxels = labels.size();
  li.u = std::move(u);
  li.labels = std::move(labels);
  li.foreground = std::move(fg);
  return li;
}

Outcome loss_correctness() {
  const std::vector<std::uint8_t> l{0, 1, 2, 1};
  std::vector<double> onehot(12, 0.0);
  for (std::size_t i = 0; i < 4; ++i) onehot[l[i] * 4 + i] = 1.0;
  const auto perfect = loss_inputs(3, onehot, l, {1, 2});
  const auto uniform = loss_inputs(2, std::vector<double>(20, 0.5),
                                   std::vector<std::uint8_t>(10, 1), {1});
  const double e1 = std::abs(nn::dice_loss(perfect) + 1.0);
  const double e2 = std::abs(nn::cross_entropy_loss(perfect));
  const double e3 = std::abs(nn::dice_loss(uniform) + 2.0 / 3.0);
  const double e4 = std::abs(nn::cross_entropy_loss(uniform) - std::log(2.0));
  const double worst_anchor = std::max({e1, e2, e3, e4});

  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_int_distribution<int> size(1, 40), cls(0, 2);
  int violations = 0;
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = static_cast<std::size_t>(size(rng));
    std::vector<std::uint8_t> labels(n);
    std::vector<double> u(3 * n);
    for (std::size_t i = 0; i < n; ++i) {
      double a = u01(rng), b = u01(rng), c = u01(rng);
      const double s = a + b + c + 1e-12;
      u[i] = a / s;
      u[n + i] = b / s;
      u[2 * n + i] = c / s;
      labels[i] = static_cast<std::uint8_t>(cls(rng));
    }
    labels[0] = static_cast<std::uint8_t>(cls(rng));
    if (n > 1 && t % 3 == 0) labels[n - 1] = label::kIgnore;
    const double dl = nn::dice_loss(loss_inputs(3, u, labels, {1, 2}));
    violations += !(dl >= -1.0 && dl <= 0.0);
  }
  std::ostringstream d;
  d << "worst anchor error " << worst_anchor << ", " << violations
    << " bound violations over 1e4 inputs";
  return {worst_anchor <= 1e-12 && violations == 0, d.str()};
}

// ---- 3. gradient check ----

Outcome gradient_check() {
  const auto t0 = Clock::now();
  nn::NetConfig c;
  c.stages = 1;
  c.base_channels = 2;
  c.patch_size = {8, 8, 8};
  c.num_classes = 3;
  auto m = nn::build_model<double>(c, 21);
  std::mt19937_64 rng(22);
  std::normal_distribution<double> jitter(0.0, 0.2);
  for (const auto& s : m.layout.segments) {
    if (s.name.ends_with(".norm.b") || s.name.ends_with(".norm.g") || s.name == "head.b") {
      for (auto& v : m.segment(s.name)) v += jitter(rng);
    }
  }
  nn::Tensor<double> x(c.in_channels, c.patch_size);
  std::normal_distribution<double> g(0.0, 1.0);
  for (auto& v : x.data) v = g(rng);
  std::vector<std::uint8_t> y(x.voxels());
  std::uniform_int_distribution<int> pick(0, 2);
  for (auto& v : y) v = static_cast<std::uint8_t>(pick(rng));
  for (std::size_t i = 0; i < y.size() / 4; ++i) y[i] = label::kIgnore;
  const std::vector<nn::Tensor<double>> xs{x};
  const std::vector<std::vector<std::uint8_t>> ys{y};
  const std::vector<int> fg{1, 2};
  const auto grad = nn::gradients(m, xs, ys, fg);

  std::uniform_int_distribution<std::size_t> param(0, m.params.size() - 1);
  const int n = 120;
  auto worst_at = [&](double h, int& passed) {
    std::mt19937_64 prng(23);
    double worst = 0.0;
    passed = 0;
    for (int t = 0; t < n; ++t) {
      const std::size_t i = param(prng);
      auto mp = m, mm = m;
      mp.params[i] += h;
      mm.params[i] -= h;
      const double fd =
          (nn::batch_loss(mp, xs, ys, fg) - nn::batch_loss(mm, xs, ys, fg)) / (2 * h);
      const double a = grad.grad[i];
      const double rel = std::abs(a - fd) / std::max({std::abs(a), std::abs(fd), 1e-8});
      worst = std::max(worst, rel);
      passed += rel < 1e-5;
    }
    return worst;
  };
  int passed = 0, passed_small = 0;
  const double worst = worst_at(1e-3, passed);
  const double worst_small = worst_at(1e-5, passed_small);
  const double secs = seconds_since(t0);
  std::ostringstream d;
  d << "h=1e-3: " << passed << "/" << n << " within 1e-5, worst " << worst << "; h=1e-5: "
    << passed_small << "/" << n << ", worst " << worst_small << "; " << secs << " s";
  return {passed == n && secs < 120.0, d.str()};
}

// ---- 4. LR schedule trace ----

Outcome lr_trace() {
  const train::TrainConfig cfg;
  std::vector<double> losses;
  double x = 2.0;
  for (int e = 0; e < 30; ++e) losses.push_back(x -= 0.05);
  for (int e = 0; e < 30; ++e) losses.push_back(x);
  for (int e = 0; e < 30; ++e) losses.push_back(x -= 4e-3);

  // Reference simulation of the plateau rule.
  std::vector<double> ref;
  double lr = cfg.initial_lr, ema = 0.0, best = 0.0;
  int stale = 0;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    if (e == 0) {
      ema = best = losses[0];
    } else {
      ema = cfg.ema_alpha * ema + (1.0 - cfg.ema_alpha) * losses[e];
      if (ema < best - cfg.lr_min_improvement) {
        best = ema;
        stale = 0;
      } else if (++stale >= cfg.lr_patience_epochs) {
        lr /= cfg.lr_decay_factor;
        stale = 0;
      }
    }
    ref.push_back(lr);
  }
  train::LRState s = train::LRState::initial(cfg);
  int mismatches = 0;
  for (std::size_t e = 0; e < losses.size(); ++e) {
    s = train::lr_update(s, losses[e], cfg);
    mismatches += s.current_lr != ref[e];
  }
  std::ostringstream d;
  d << mismatches << " mismatching epochs of 90, final lr " << s.current_lr;
  return {mismatches == 0, d.str()};
}

// ---- 5. spacing policy ----

Outcome spacing_policy() {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  Volume v(Grid::make({9, 8, 7}, {0.4, 0.9, 3.0}));
  for (auto& x : v.data) x = static_cast<float>(g(rng));
  const bool agnostic = resample(v, Agnostic{}) == v;
  const Volume same = resample(v, TargetSpacing{{0.4, 0.9, 3.0}});
  double native_err = same.dims() == v.dims() ? 0.0 : INFINITY;
  if (same.dims() == v.dims()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      native_err = std::max(native_err, static_cast<double>(std::abs(same[i] - v[i])));
    }
  }
  Volume ramp(Grid::make({10, 12, 8}, {1.0, 1.0, 2.0}));
  auto f = [](double x, double y, double z) { return 0.3 * x - 0.2 * y + 0.05 * z + 1.0; };
  for (std::int64_t k = 0; k < 8; ++k)
    for (std::int64_t j = 0; j < 12; ++j)
      for (std::int64_t i = 0; i < 10; ++i) ramp(i, j, k) = static_cast<float>(f(i, j, k));
  const Volume r = resample(ramp, TargetSpacing{{0.5, 0.75, 1.0}});
  double ramp_err = 0.0;
  for (std::int64_t k = 0; k < r.dims()[2]; ++k)
    for (std::int64_t j = 0; j < r.dims()[1]; ++j)
      for (std::int64_t i = 0; i < r.dims()[0]; ++i) {
        const double e = f(std::min(i * 0.5, 9.0), std::min(j * 0.75, 11.0),
                           std::min(k * 0.5, 7.0));
        ramp_err = std::max(ramp_err, std::abs(r(i, j, k) - e));
      }
  std::ostringstream d;
  d << "agnostic bit-identical " << (agnostic ? "yes" : "no") << ", native max error "
    << native_err << ", ramp max error " << ramp_err;
  return {agnostic && native_err <= 1e-6 && ramp_err <= 1e-6, d.str()};
}

// ---- 6. filters ----

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

double variance(const Volume& v) {
  double s = 0.0, s2 = 0.0;
  for (float x : v.data) s += x;
  const double m = s / static_cast<double>(v.size());
  for (float x : v.data) s2 += (x - m) * (x - m);
  return s2 / static_cast<double>(v.size());
}

Outcome filter_properties() {
  const Volume flat(Grid::make({12, 10, 8}), 0.37f);
  const bool identity = nlm_filter(flat, 1, 2, 0.1) == flat;

  Volume v(Grid::make({32, 32, 32}));
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n(0.5, 0.1);
  for (auto& x : v.data) x = static_cast<float>(n(rng));
  const Volume f = nlm_filter(v, 1, 2, 0.1);
  const bool reduces = variance(f) < variance(v);
  double nlm_err = 0.0;
  for (std::int64_t k = 0; k < 32; ++k)
    for (std::int64_t j = 0; j < 32; ++j)
      for (std::int64_t i = 0; i < 32; ++i) {
        nlm_err = std::max(nlm_err, std::abs(f(i, j, k) - nlm_reference(v, i, j, k, 1, 2, 0.1)));
      }

  std::uniform_real_distribution<double> u(0.0, 1.0);
  Volume w(Grid::make({24, 20, 16}));
  for (auto& x : w.data) x = static_cast<float>(u(rng) * u(rng));
  bool in_range = true;
  for (double clip : {0.01, 0.1, 1.0}) {
    const Volume a = adaptive_hist_eq(w, {8, 8, 8}, clip);
    const auto [lo, hi] = std::minmax_element(a.data.begin(), a.data.end());
    in_range = in_range && *lo >= 0.0f && *hi <= 1.0f;
  }
  Volume r(Grid::make({8, 8, 8}));
  const std::size_t nv = r.size();
  std::vector<std::size_t> order(nv);
  for (std::size_t i = 0; i < nv; ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), std::mt19937_64(13));
  for (std::size_t k = 0; k < nv; ++k) r[order[k]] = static_cast<float>(k) / (nv - 1);
  const Volume a = adaptive_hist_eq(r, {8, 8, 8}, 1.0);
  double rank_err = 0.0;
  for (std::size_t k = 0; k < nv; ++k) {
    rank_err = std::max(rank_err, std::abs(a[order[k]] - static_cast<double>(k + 1) / nv));
  }
  std::ostringstream d;
  d << "identity " << (identity ? "yes" : "no") << ", variance " << variance(v) << " -> "
    << variance(f) << ", NLM max error " << nlm_err << ", AHE in [0,1] "
    << (in_range ? "yes" : "no") << ", rank error " << rank_err << " (bin width "
    << 1.0 / 256 << ")";
  return {identity && reduces && nlm_err <= 1e-6 && in_range && rank_err <= 1.0 / 256 + 1e-6,
          d.str()};
}

// ---- 7. statistics ----

Outcome statistics() {
  const std::vector<double> x{1, 2, 3}, y{2, 3, 4};
  const double ccc = eval::lin_ccc_value(x, y);
  const double self = eval::lin_ccc_value(x, x);
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 1.0);
  int violations = 0;
  for (int t = 0; t < 10000; ++t) {
    std::vector<double> a(8), b(8);
    for (auto& v : a) v = g(rng);
    for (std::size_t i = 0; i < 8; ++i) b[i] = g(rng) + 0.5 * a[i];
    violations += std::abs(eval::lin_ccc_value(a, b)) > std::abs(eval::pearson(a, b)) + 1e-12;
  }
  const double rho = eval::spearman(std::vector<double>{1, 2, 3, 4, 5},
                                    std::vector<double>{9, 7, 5, 3, 1})
                         .rho;
  const auto ba = eval::bland_altman(std::vector<double>{3, 5}, std::vector<double>{1, 1});
  const bool ba_ok = ba.bias == 3.0 && ba.loa_low == 3.0 - 1.96 * std::sqrt(2.0) &&
                     ba.loa_high == 3.0 + 1.96 * std::sqrt(2.0);
  std::ostringstream d;
  d.precision(15);
  d << "CCC " << ccc << ", identity " << self << ", " << violations
    << " |CCC|>|r| cases, Spearman reversal " << rho << ", Bland-Altman exact "
    << (ba_ok ? "yes" : "no");
  return {std::abs(ccc - 4.0 / 7.0) <= 1e-12 && std::abs(self - 1.0) <= 1e-12 &&
              violations == 0 && std::abs(rho + 1.0) <= 1e-12 && ba_ok,
          d.str()};
}

// ---- 8. cluster counting ----

std::size_t flood_count(const Mask& m, int conn) {
  const Grid& g = m.grid;
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::size_t count = 0;
  for (std::int64_t k = 0; k < g.dims[2]; ++k)
    for (std::int64_t j = 0; j < g.dims[1]; ++j)
      for (std::int64_t i = 0; i < g.dims[0]; ++i) {
        if (!m(i, j, k) || seen[g.index(i, j, k)]) continue;
        ++count;
        std::vector<std::array<std::int64_t, 3>> stack{{i, j, k}};
        seen[g.index(i, j, k)] = 1;
        while (!stack.empty()) {
          const auto p = stack.back();
          stack.pop_back();
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0 || (conn == 6 && manhattan > 1)) continue;
                const std::int64_t a = p[0] + dx, b = p[1] + dy, c = p[2] + dz;
                if (!g.contains(a, b, c) || !m(a, b, c) || seen[g.index(a, b, c)]) continue;
                seen[g.index(a, b, c)] = 1;
                stack.push_back({a, b, c});
              }
        }
      }
  return count;
}

Outcome cluster_counting() {
  int mismatches = 0;
  for (int t = 0; t < 100; ++t) {
    Mask m(Grid::make({16, 16, 16}));
    std::mt19937_64 rng(100 + t);
    std::bernoulli_distribution b(0.1 + 0.004 * t);
    for (auto& v : m.data) v = b(rng) ? 1 : 0;
    for (int conn : {6, 26}) {
      mismatches += cluster_stats(m, connectivity_from_int(conn)).cluster_count !=
                    flood_count(m, conn);
    }
  }
  Mask corner(Grid::make({4, 4, 4}), 0);
  corner(1, 1, 1) = 1;
  corner(2, 2, 2) = 1;
  const auto c6 = cluster_stats(corner, Connectivity::k6).cluster_count;
  const auto c26 = cluster_stats(corner, Connectivity::k26).cluster_count;
  std::ostringstream d;
  d << mismatches << " mismatches over 200 counts, corner pair " << c6 << " at 6 and " << c26
    << " at 26";
  return {mismatches == 0 && c6 == 2 && c26 == 1, d.str()};
}

// ---- 9. CV stratification ----

Outcome cv_stratification() {
  const fs::path d = work_dir("cv");
  phantom::PhantomConfig pc;
  pc.dims = {32, 32, 32};
  pc.length_range = {4.0, 10.0};
  phantom::CohortOptions co;
  co.n_cases = 30;
  co.seed = 9;
  co.out_dir = d / "cohort";
  co.datasets = {"ds_a", "ds_b", "ds_c"};
  const Manifest m = phantom::phantom_cohort(pc, co);
  std::ostringstream sink;
  pipeline::Logger log(sink, "cv-split");
  if (pipeline::cmd_cv_split(d / "cohort" / "manifest.json", 5, 42, d / "folds.json", log) != 0) {
    return {false, "cv-split failed: " + sink.str()};
  }
  const auto fold_of = read_json_file(d / "folds.json").at("fold_of").get<std::map<std::string, int>>();
  int bad = 0;
  for (int f = 0; f < 5; ++f) {
    std::map<std::string, std::pair<int, int>> per;  // dataset -> (high, low)
    for (const auto& c : m.cases) {
      if (fold_of.at(c.id) != f) continue;
      auto& hl = per[c.dataset];
      (*c.burden == eval::Burden::kHigh ? hl.first : hl.second)++;
    }
    for (const auto& ds : co.datasets) {
      const auto [h, l] = per[ds];
      bad += h + l != 2 || std::abs(h - l) > 1;
    }
  }
  std::ostringstream det;
  det << bad << " (fold, dataset) cells off target across 5 folds x 3 datasets";
  return {bad == 0 && fold_of.size() == 30, det.str()};
}

// ---- 10. end-to-end smoke ----

struct SmokeRun {
  std::vector<float> params;
  std::vector<double> dsc;
  double seconds = 0.0;
};

SmokeRun smoke_once(const std::vector<train::TrainingCase>& tr,
                    const std::vector<train::TrainingCase>& va, const pipeline::PipelineConfig& cfg) {
  const auto t0 = Clock::now();
  std::vector<int> fg(cfg.label_scheme.foreground_ids.begin(),
                      cfg.label_scheme.foreground_ids.end());
  const auto res = train::train(tr, cfg.net, cfg.train, cfg.augment, fg);
  SmokeRun r;
  r.params = res.model.params;
  for (const auto& c : va) {
    const LabelMap pred = train::infer(res.model, c.channels);
    r.dsc.push_back(eval::dsc_sen_ppv(eval::confusion(pred, c.labels, 1)).dsc.value_or(0.0));
  }
  r.seconds = seconds_since(t0);
  return r;
}

Outcome end_to_end_smoke() {
  const fs::path d = work_dir("smoke");
  pipeline::PipelineConfig cfg;
  cfg.net.patch_size = {32, 32, 32};
  cfg.train.epochs = 20;
  cfg.train.batches_per_epoch = 50;
  cfg.train.batch_size = 2;
  cfg.train.initial_lr = 3e-4;
  cfg.train.seed = 1;
  std::ostringstream sink;
  pipeline::Logger log(sink, "smoke");
  if (pipeline::cmd_phantom(cfg, 30, 7, d / "cohort", log) != 0 ||
      pipeline::cmd_preprocess(d / "cohort" / "manifest.json", cfg, d / "pre", log) != 0) {
    return {false, "cohort generation failed: " + sink.str()};
  }
  const Manifest m = load_manifest(d / "pre" / "manifest.json");
  std::vector<train::TrainingCase> tr, va;
  for (std::size_t i = 0; i < m.cases.size(); ++i) {
    (i < 24 ? tr : va).push_back(pipeline::load_training_case(m.cases[i]));
  }
  const SmokeRun a = smoke_once(tr, va, cfg);
  const SmokeRun b = smoke_once(tr, va, cfg);
  double mean = 0.0;
  for (double x : a.dsc) mean += x / static_cast<double>(a.dsc.size());
  // All-background prediction scores 0 on every case that has class-1 voxels.
  double baseline = 0.0;
  for (const auto& c : va) {
    const LabelMap bg(c.labels.grid, 0);
    baseline += eval::dsc_sen_ppv(eval::confusion(bg, c.labels, 1)).dsc.value_or(0.0) /
                static_cast<double>(va.size());
  }
  const bool deterministic = a.params == b.params && a.dsc == b.dsc;
  std::ostringstream det;
  det << "held-out mean DSC(class 1) " << mean << " vs baseline " << baseline << ", per case [";
  for (std::size_t i = 0; i < a.dsc.size(); ++i) det << (i ? " " : "") << a.dsc[i];
  det << "], same-seed rerun identical " << (deterministic ? "yes" : "no") << ", "
      << a.seconds << " s and " << b.seconds << " s";
  return {mean > 0.5 && mean > baseline && deterministic &&
              std::max(a.seconds, b.seconds) < 1800.0,
          det.str()};
}

// ---- 11. pseudo-label loop ----

Outcome pseudo_label_loop() {
  const fs::path d = work_dir("pseudo");
  pipeline::PipelineConfig cfg;
  cfg.phantom.config.dims = {24, 24, 24};
  cfg.phantom.config.length_range = {4.0, 8.0};
  cfg.phantom.config.n_tubes_wm = 4;
  cfg.phantom.config.n_tubes_bg = 2;
  cfg.phantom.datasets = {"ds_a", "ds_b", "ds_c"};
  cfg.net.stages = 2;
  cfg.net.base_channels = 2;
  cfg.net.max_channels = 4;
  cfg.net.blocks_per_stage = 1;
  cfg.net.patch_size = {16, 16, 16};
  cfg.train.epochs = 1;
  cfg.train.batches_per_epoch = 1;
  std::ostringstream sink;
  pipeline::Logger log(sink, "pseudo");
  auto fail = [&](const std::string& what) { return Outcome{false, what + ": " + sink.str()}; };

  if (pipeline::cmd_phantom(cfg, 30, 3, d / "gold", log) != 0) return fail("phantom");
  phantom::CohortOptions uo;
  uo.n_cases = 10;
  uo.seed = 4;
  uo.out_dir = d / "unlabeled";
  uo.id_prefix = "unlabeled";
  uo.write_labels = false;
  phantom::phantom_cohort(cfg.phantom.config, uo);
  if (pipeline::cmd_preprocess(d / "gold" / "manifest.json", cfg, d / "gold_pre", log) != 0 ||
      pipeline::cmd_preprocess(d / "unlabeled" / "manifest.json", cfg, d / "unl_pre", log) != 0) {
    return fail("preprocess");
  }
  if (pipeline::cmd_cv_split(d / "gold_pre" / "manifest.json", 5, 1, d / "folds.json", log) != 0) {
    return fail("cv-split");
  }
  if (pipeline::cmd_train(d / "gold_pre" / "manifest.json", d / "folds.json", 0, cfg,
                          d / "round0", std::nullopt, log) != 0) {
    return fail("initial training");
  }
  if (pipeline::cmd_infer(d / "round0" / "final.ckpt", d / "unl_pre" / "manifest.json",
                          d / "pseudo", log) != 0) {
    return fail("infer");
  }
  Manifest all = load_manifest(d / "gold_pre" / "manifest.json");
  const Manifest pseudo = load_manifest(d / "pseudo" / "manifest.json");
  std::set<std::string> pseudo_ids;
  for (const auto& c : pseudo.cases) {
    pseudo_ids.insert(c.id);
    all.cases.push_back(c);
  }
  save_manifest(all, d / "all.json");
  const auto fold_of =
      read_json_file(d / "folds.json").at("fold_of").get<std::map<std::string, int>>();
  int bad_folds = 0;
  std::ostringstream det;
  det << pseudo.cases.size() << " pseudo cases;";
  for (int f = 0; f < 5; ++f) {
    const fs::path out = d / ("fold" + std::to_string(f));
    if (pipeline::cmd_train(d / "all.json", d / "folds.json", f, cfg, out, std::nullopt, log) != 0) {
      return fail("fold training");
    }
    const Manifest ts = load_manifest(out / "training_set.json");
    int n_pseudo = 0, n_gold = 0, leaked = 0;
    for (const auto& c : ts.cases) {
      if (pseudo_ids.contains(c.id)) {
        n_pseudo += c.provenance == Provenance::kPseudo;
      } else {
        ++n_gold;
        leaked += fold_of.at(c.id) == f;
      }
    }
    int expected_gold = 0;
    for (const auto& [id, fo] : fold_of) expected_gold += fo != f;
    bad_folds += n_pseudo != 10 || n_gold != expected_gold || leaked != 0;
    det << " fold " << f << ": " << n_gold << " gold + " << n_pseudo << " pseudo, " << leaked
        << " leaked;";
  }
  return {bad_folds == 0 && pseudo.cases.size() == 10, det.str()};
}

// ---- 12. sparse annotation ----

Outcome sparse_annotation() {
  phantom::PhantomConfig pc;
  pc.dims = {32, 32, 50};
  pc.length_range = {4.0, 10.0};
  pc.seed = 12;
  const phantom::Phantom p = phantom::generate_phantom(pc);
  SparseAnnotation ann;
  for (std::int64_t z = 0; z < 50; z += 5) ann.annotated_slices.insert(z);
  const LabelMap s = apply_sparse_ignore(p.labels, ann);
  int ignore_slices = 0;
  for (std::int64_t k = 0; k < 50; ++k) {
    bool all = true;
    for (std::int64_t j = 0; j < 32; ++j)
      for (std::int64_t i = 0; i < 32; ++i) all = all && s(i, j, k) == label::kIgnore;
    ignore_slices += all;
  }

  // Training on the sparse labels runs.
  nn::NetConfig net;
  net.stages = 2;
  net.base_channels = 2;
  net.max_channels = 4;
  net.blocks_per_stage = 1;
  net.patch_size = {16, 16, 16};
  train::TrainConfig tc;
  tc.epochs = 2;
  tc.batches_per_epoch = 3;
  const train::TrainingCase tcase("sparse", {enhance_pipeline(p.image, EnhanceConfig{}).image}, s);
  const std::vector<int> fg{1, 2};
  const auto res = train::train({tcase}, net, tc, train::AugmentConfig{}, fg);
  bool finite = true;
  for (const auto& e : res.log) finite = finite && std::isfinite(e.mean_loss);

  // Ignored voxels: zero upstream gradient, and their softmax does not move the loss.
  std::mt19937_64 rng(5);
  train::Patch patch = train::sample_patch(tcase, net.patch_size, 1.0, rng);
  nn::UNet<float> unet(res.model);
  const auto u = nn::softmax(unet.forward(patch.image));
  nn::LossInputs li;
  li.batch = 1;
  li.classes = net.num_classes;
  li.voxels = patch.labels.size();
  li.labels = patch.labels;
  li.u.assign(u.data.begin(), u.data.end());
  const auto du = nn::loss_grad_u(li);
  const auto dz = nn::softmax_backward(li.u, du, li.classes, li.voxels);
  double max_ignored_grad = 0.0;
  std::size_t n_ignored = 0;
  nn::LossInputs scrambled = li;
  std::uniform_real_distribution<double> u01(0.01, 1.0);
  for (std::size_t v = 0; v < li.voxels; ++v) {
    if (li.labels[v] != label::kIgnore) continue;
    ++n_ignored;
    double sum = 0.0;
    for (int k = 0; k < li.classes; ++k) {
      max_ignored_grad = std::max(max_ignored_grad, std::abs(dz[k * li.voxels + v]));
      sum += scrambled.u[k * li.voxels + v] = u01(rng);
    }
    for (int k = 0; k < li.classes; ++k) scrambled.u[k * li.voxels + v] /= sum;
  }
  const bool unchanged = nn::total_loss(scrambled) == nn::total_loss(li);
  std::ostringstream d;
  d << ignore_slices << " all-ignore slices, training losses finite " << (finite ? "yes" : "no")
    << ", " << n_ignored << " ignored patch voxels with max |dL/dz| " << max_ignored_grad
    << ", loss unchanged under scrambled ignored softmax " << (unchanged ? "yes" : "no");
  return {ignore_slices == 40 && finite && n_ignored > 0 && max_ignored_grad == 0.0 && unchanged,
          d.str()};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracle},
      {"loss correctness", loss_correctness},
      {"gradient check", gradient_check},
      {"lr schedule trace", lr_trace},
      {"spacing policy contract", spacing_policy},
      {"filter properties", filter_properties},
      {"statistics oracles", statistics},
      {"cluster counting", cluster_counting},
      {"cv stratification", cv_stratification},
      {"end-to-end smoke", end_to_end_smoke},
      {"pseudo-label loop", pseudo_label_loop},
      {"sparse annotation", sparse_annotation},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << i + 1 << " " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << criteria.size() - failed << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return 0;
}
