#include "pvs/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "pvs/eval.hpp"
#include "pvs/nifti.hpp"

namespace pvs::phantom {
namespace {

double seg_dist2(const std::array<double, 3>& p, const Tube& t) {
  std::array<double, 3> ab{}, ap{};
  double len2 = 0.0, dot = 0.0;
  for (int a = 0; a < 3; ++a) {
    ab[a] = t.b[a] - t.a[a];
    ap[a] = p[a] - t.a[a];
    len2 += ab[a] * ab[a];
    dot += ab[a] * ap[a];
  }
  const double s = len2 > 0.0 ? std::clamp(dot / len2, 0.0, 1.0) : 0.0;
  double d2 = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double q = ap[a] - s * ab[a];
    d2 += q * q;
  }
  return d2;
}

bool in_ellipsoid(std::int64_t i, std::int64_t j, std::int64_t k,
                  const std::array<double, 3>& c, const std::array<double, 3>& r) {
  const double x = (i - c[0]) / r[0], y = (j - c[1]) / r[1], z = (k - c[2]) / r[2];
  return x * x + y * y + z * z <= 1.0;
}

}  // namespace

void PhantomConfig::validate() const {
  Grid::make(dims, spacing).validate();
  if (n_tubes_wm < 0 || n_tubes_bg < 0 || n_wmh_blobs < 0) {
    throw std::invalid_argument("phantom: negative object count");
  }
  if (radius_range[0] < 0.5 || radius_range[1] < radius_range[0]) {
    throw std::invalid_argument("phantom: radius range must satisfy 0.5 <= min <= max");
  }
  if (length_range[0] < 0.0 || length_range[1] < length_range[0]) {
    throw std::invalid_argument("phantom: bad length range");
  }
  if (tube_contrast == 0.0) throw std::invalid_argument("phantom: tube contrast must be nonzero");
  if (!(noise_sigma >= 0.0)) throw std::invalid_argument("phantom: negative noise");
  if (!(brain_extent > 0.0 && brain_extent <= 0.5)) {
    throw std::invalid_argument("phantom: brain extent must lie in (0, 0.5]");
  }
  if (!(bg_fraction > 0.0 && bg_fraction < 1.0)) {
    throw std::invalid_argument("phantom: bg_fraction must lie in (0, 1)");
  }
  if (max_retries < 1) throw std::invalid_argument("phantom: max_retries must be positive");
}

std::vector<std::size_t> voxelize(const Tube& t, const Grid& g) {
  std::array<std::int64_t, 3> lo{}, hi{};
  for (int a = 0; a < 3; ++a) {
    lo[a] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(std::min(t.a[a], t.b[a]) - t.radius)));
    hi[a] = std::min<std::int64_t>(g.dims[a] - 1, static_cast<std::int64_t>(std::ceil(std::max(t.a[a], t.b[a]) + t.radius)));
  }
  std::vector<std::size_t> out;
  const double r2 = t.radius * t.radius;
  for (std::int64_t k = lo[2]; k <= hi[2]; ++k)
    for (std::int64_t j = lo[1]; j <= hi[1]; ++j)
      for (std::int64_t i = lo[0]; i <= hi[0]; ++i) {
        const std::array<double, 3> p{static_cast<double>(i), static_cast<double>(j),
                                      static_cast<double>(k)};
        if (seg_dist2(p, t) <= r2) out.push_back(g.index(i, j, k));
      }
  return out;
}

Phantom generate_phantom(const PhantomConfig& cfg) {
  cfg.validate();
  const Grid g = Grid::make(cfg.dims, cfg.spacing);
  Phantom ph;
  ph.image = Volume(g, 0.0f);
  ph.labels = LabelMap(g, label::kBackground);
  ph.brain = Mask(g, 0);
  ph.bg_compartment = Mask(g, 0);

  std::array<double, 3> c{}, r_brain{}, r_inner{};
  const double shrink = std::cbrt(cfg.bg_fraction);
  for (int a = 0; a < 3; ++a) {
    c[a] = (cfg.dims[a] - 1) / 2.0;
    r_brain[a] = cfg.brain_extent * static_cast<double>(cfg.dims[a]);
    r_inner[a] = r_brain[a] * shrink;
  }
  for (std::int64_t k = 0; k < cfg.dims[2]; ++k)
    for (std::int64_t j = 0; j < cfg.dims[1]; ++j)
      for (std::int64_t i = 0; i < cfg.dims[0]; ++i) {
        const std::size_t n = g.index(i, j, k);
        if (!in_ellipsoid(i, j, k, c, r_brain)) continue;
        ph.brain[n] = 1;
        ph.image[n] = static_cast<float>(cfg.background_level);
        if (in_ellipsoid(i, j, k, c, r_inner)) ph.bg_compartment[n] = 1;
      }

  std::mt19937_64 rng(cfg.seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::uniform_real_distribution<double> radius(cfg.radius_range[0], cfg.radius_range[1]);
  std::uniform_real_distribution<double> length(cfg.length_range[0], cfg.length_range[1]);
  const float tube_value = static_cast<float>(cfg.background_level + cfg.tube_contrast);

  auto place = [&](std::uint8_t cls) {
    const bool inner = cls == label::kBgPvs;
    const auto& box = inner ? r_inner : r_brain;
    for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
      std::array<double, 3> centre{};
      for (int a = 0; a < 3; ++a) centre[a] = c[a] + (2.0 * u01(rng) - 1.0) * box[a];
      // uniform direction
      const double z = 2.0 * u01(rng) - 1.0;
      const double phi = 2.0 * std::numbers::pi * u01(rng);
      const double s = std::sqrt(1.0 - z * z);
      const std::array<double, 3> dir{s * std::cos(phi), s * std::sin(phi), z};
      Tube t;
      t.radius = radius(rng);
      const double half = length(rng) / 2.0;
      t.cls = cls;
      for (int a = 0; a < 3; ++a) {
        t.a[a] = centre[a] - half * dir[a];
        t.b[a] = centre[a] + half * dir[a];
      }
      const auto vox = voxelize(t, g);
      if (vox.empty()) continue;
      const bool ok = std::all_of(vox.begin(), vox.end(), [&](std::size_t n) {
        return ph.brain[n] != 0 && (ph.bg_compartment[n] != 0) == inner;
      });
      if (!ok) continue;
      for (std::size_t n : vox) {
        ph.labels[n] = cls;
        ph.image[n] = tube_value;
      }
      ph.tubes.push_back(t);
      return;
    }
    throw std::runtime_error("phantom: could not place a tube after " +
                             std::to_string(cfg.max_retries) + " attempts (volume too crowded)");
  };
  for (int t = 0; t < cfg.n_tubes_wm; ++t) place(label::kWmPvs);
  for (int t = 0; t < cfg.n_tubes_bg; ++t) place(label::kBgPvs);

  if (cfg.n_wmh_blobs > 0) {
    Volume prob(g, 0.0f);
    for (int b = 0; b < cfg.n_wmh_blobs; ++b) {
      std::array<double, 3> centre{};
      bool found = false;
      for (int attempt = 0; attempt < cfg.max_retries && !found; ++attempt) {
        for (int a = 0; a < 3; ++a) centre[a] = c[a] + (2.0 * u01(rng) - 1.0) * r_brain[a];
        const auto i = std::llround(centre[0]), j = std::llround(centre[1]),
                   k = std::llround(centre[2]);
        found = g.contains(i, j, k) && ph.brain[g.index(i, j, k)] != 0 &&
                ph.bg_compartment[g.index(i, j, k)] == 0;
      }
      if (!found) throw std::runtime_error("phantom: could not place a WMH blob");
      const double rad = 2.0 + 2.0 * u01(rng);
      for (std::int64_t k = 0; k < cfg.dims[2]; ++k)
        for (std::int64_t j = 0; j < cfg.dims[1]; ++j)
          for (std::int64_t i = 0; i < cfg.dims[0]; ++i) {
            const double d2 = (i - centre[0]) * (i - centre[0]) +
                              (j - centre[1]) * (j - centre[1]) +
                              (k - centre[2]) * (k - centre[2]);
            if (d2 > 4.0 * rad * rad) continue;
            const std::size_t n = g.index(i, j, k);
            if (ph.brain[n] == 0) continue;
            const float p = static_cast<float>(std::exp(-d2 / (2.0 * rad * rad / 4.0)));
            prob[n] = std::max(prob[n], p);
          }
    }
    ph.wmh_probability = std::move(prob);
  }

  if (cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : ph.image.data) v = static_cast<float>(v + noise(rng));
  }
  for (std::uint8_t cls : {label::kWmPvs, label::kBgPvs}) {
    ph.clusters[cls] = connected_components(ph.labels, cls, Connectivity::k26);
  }
  return ph;
}

Manifest phantom_cohort(const PhantomConfig& tmpl, const CohortOptions& opts) {
  if (opts.n_cases < 1) throw std::invalid_argument("phantom cohort needs at least one case");
  if (opts.datasets.empty()) throw std::invalid_argument("phantom cohort needs a dataset tag");
  if (opts.out_dir.empty()) throw std::invalid_argument("phantom cohort needs an output directory");
  tmpl.validate();
  std::filesystem::create_directories(opts.out_dir);
  std::mt19937_64 seeds(opts.seed);
  Manifest m;
  std::vector<std::string> ids, datasets;
  std::vector<std::uint64_t> fg;
  for (int n = 0; n < opts.n_cases; ++n) {
    PhantomConfig cfg = tmpl;
    cfg.seed = seeds();
    if (opts.vary_counts) {
      std::mt19937_64 local(cfg.seed ^ 0x9e3779b97f4a7c15ull);
      auto draw = [&](int hi) {
        if (hi <= 0) return hi;
        std::uniform_int_distribution<int> d((hi + 1) / 2, hi);
        return d(local);
      };
      cfg.n_tubes_wm = draw(tmpl.n_tubes_wm);
      cfg.n_tubes_bg = draw(tmpl.n_tubes_bg);
    }
    const Phantom ph = generate_phantom(cfg);
    std::ostringstream id;
    id << opts.id_prefix << '_' << std::setw(3) << std::setfill('0') << n;
    ManifestCase c;
    c.id = id.str();
    c.dataset = opts.datasets[static_cast<std::size_t>(n) % opts.datasets.size()];
    c.image = std::filesystem::absolute(opts.out_dir / (c.id + "_image.nii.gz"));
    nifti::write(ph.image, c.image);
    if (opts.write_labels) {
      c.labels = std::filesystem::absolute(opts.out_dir / (c.id + "_labels.nii.gz"));
      nifti::write(ph.labels, *c.labels);
    }
    if (ph.wmh_probability) {
      c.wmh = std::filesystem::absolute(opts.out_dir / (c.id + "_wmh.nii.gz"));
      nifti::write(*ph.wmh_probability, *c.wmh);
    }
    std::uint64_t count = 0;
    for (auto v : ph.labels.data) count += label::is_foreground(v) ? 1 : 0;
    ids.push_back(c.id);
    datasets.push_back(c.dataset);
    fg.push_back(count);
    m.cases.push_back(std::move(c));
  }
  if (opts.write_labels) {
    const auto burden = eval::median_split_burden(ids, datasets, fg);
    for (auto& c : m.cases) c.burden = burden.at(c.id);
  }
  save_manifest(m, opts.out_dir / "manifest.json");
  return m;
}

}  // namespace pvs::phantom
