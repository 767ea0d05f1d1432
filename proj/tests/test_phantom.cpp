#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <set>

#include "pvs/nifti.hpp"
#include "pvs/phantom.hpp"

using namespace pvs;
using namespace pvs::phantom;
namespace fs = std::filesystem;

namespace {

PhantomConfig quiet(int wm, int bg, std::uint64_t seed) {
  PhantomConfig c;
  c.dims = {40, 40, 40};
  c.n_tubes_wm = wm;
  c.n_tubes_bg = bg;
  c.noise_sigma = 0.0;
  c.seed = seed;
  return c;
}

// Distance from a voxel centre to a segment, computed from scratch.
double segment_distance(const Tube& t, double x, double y, double z) {
  const double p[3] = {x, y, z};
  double d[3], w[3], dd = 0.0, wd = 0.0;
  for (int i = 0; i < 3; ++i) {
    d[i] = t.b[i] - t.a[i];
    w[i] = p[i] - t.a[i];
    dd += d[i] * d[i];
    wd += w[i] * d[i];
  }
  const double s = dd > 0.0 ? std::clamp(wd / dd, 0.0, 1.0) : 0.0;
  double r2 = 0.0;
  for (int i = 0; i < 3; ++i) r2 += (p[i] - t.a[i] - s * d[i]) * (p[i] - t.a[i] - s * d[i]);
  return std::sqrt(r2);
}

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("pvs_test_phantom_" + name);
  fs::remove_all(d);
  return d;
}

}  // namespace

TEST_CASE("no tubes gives no foreground") {
  const Phantom p = generate_phantom(quiet(0, 0, 1));
  for (auto v : p.labels.data) CHECK(v == 0);
  for (const auto& [cls, s] : p.clusters) {
    CHECK(s.cluster_count == 0);
    CHECK(s.voxel_count == 0);
  }
}

TEST_CASE("one tube matches a direct voxelization") {
  const Phantom p = generate_phantom(quiet(1, 0, 2));
  REQUIRE(p.tubes.size() == 1);
  const Tube& t = p.tubes[0];
  std::size_t oracle = 0;
  const auto d = p.labels.dims();
  for (std::int64_t k = 0; k < d[2]; ++k)
    for (std::int64_t j = 0; j < d[1]; ++j)
      for (std::int64_t i = 0; i < d[0]; ++i) {
        const bool inside = segment_distance(t, i, j, k) <= t.radius;
        oracle += inside;
        CHECK((p.labels(i, j, k) == 1) == inside);
      }
  CHECK(voxelize(t, p.labels.grid).size() == oracle);
  CHECK(p.clusters.at(1).cluster_count == 1);
  CHECK(p.clusters.at(1).voxel_count == oracle);
}

TEST_CASE("same seed is bit-identical") {
  PhantomConfig c = quiet(6, 3, 3);
  c.noise_sigma = 0.05;
  const Phantom a = generate_phantom(c), b = generate_phantom(c);
  CHECK(a.image == b.image);
  CHECK(a.labels == b.labels);
  c.seed = 4;
  CHECK_FALSE(generate_phantom(c).labels == a.labels);
}

TEST_CASE("noise-free foreground is exactly the changed brain voxels") {
  const PhantomConfig c = quiet(10, 5, 5);
  const Phantom p = generate_phantom(c);
  for (std::size_t i = 0; i < p.image.size(); ++i) {
    const bool changed = p.brain[i] && p.image[i] != static_cast<float>(c.background_level);
    CHECK(changed == (p.labels[i] != 0));
    if (!p.brain[i]) CHECK(p.image[i] == 0.0f);
  }
}

TEST_CASE("labels stay inside their compartments") {
  const Phantom p = generate_phantom(quiet(10, 5, 6));
  std::set<std::uint8_t> seen;
  for (std::size_t i = 0; i < p.labels.size(); ++i) {
    CHECK((p.bg_compartment[i] == 0 || p.brain[i] != 0));
    if (p.labels[i] == 0) continue;
    seen.insert(p.labels[i]);
    CHECK(p.brain[i]);
    CHECK(p.labels[i] == (p.bg_compartment[i] ? 2 : 1));
  }
  CHECK(seen == std::set<std::uint8_t>{1, 2});
}

TEST_CASE("ground truth clusters equal connected components of the labels") {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const Phantom p = generate_phantom(quiet(12, 6, seed));
    for (std::uint8_t cls : {1, 2}) {
      const ClusterStats s = connected_components(p.labels, cls, Connectivity::k26);
      CHECK(p.clusters.at(cls).cluster_count == s.cluster_count);
      CHECK(p.clusters.at(cls).voxel_count == s.voxel_count);
      CHECK(p.clusters.at(cls).cluster_sizes == s.cluster_sizes);
    }
  }
}

TEST_CASE("config validation") {
  PhantomConfig c;
  CHECK_NOTHROW(c.validate());
  c.radius_range = {0.2, 1.0};
  CHECK_THROWS(c.validate());
  c = PhantomConfig{};
  c.n_tubes_wm = -1;
  CHECK_THROWS(c.validate());
  c = PhantomConfig{};
  c.noise_sigma = -0.1;
  CHECK_THROWS(c.validate());
  c = PhantomConfig{};
  c.dims = {12, 12, 12};
  c.n_tubes_wm = 400;
  c.max_retries = 5;
  CHECK_THROWS(generate_phantom(c));
}

TEST_CASE("cohort rows, burden split and regeneration") {
  const fs::path d = temp_dir("cohort");
  PhantomConfig c = quiet(4, 2, 0);
  c.dims = {24, 24, 24};
  c.length_range = {4.0, 8.0};
  c.noise_sigma = 0.05;
  CohortOptions o;
  o.n_cases = 7;
  o.seed = 11;
  o.out_dir = d / "a";
  const Manifest a = phantom_cohort(c, o);
  REQUIRE(a.cases.size() == 7);
  int high = 0;
  for (const auto& e : a.cases) {
    CHECK(e.dataset == "phantom");
    REQUIRE(e.labels.has_value());
    REQUIRE(e.burden.has_value());
    high += *e.burden == eval::Burden::kHigh;
    const LabelMap l = nifti::read_labels(*e.labels);
    for (auto v : l.data) CHECK(v <= 2);
  }
  CHECK(high == 4);
  CHECK(load_manifest(d / "a" / "manifest.json").cases.size() == 7);

  o.out_dir = d / "b";
  const Manifest b = phantom_cohort(c, o);
  for (std::size_t i = 0; i < a.cases.size(); ++i) {
    CHECK(a.cases[i].id == b.cases[i].id);
    CHECK(a.cases[i].burden == b.cases[i].burden);
    CHECK(nifti::read_volume(a.cases[i].image) == nifti::read_volume(b.cases[i].image));
  }
  CHECK(to_json(a, d / "a") == to_json(b, d / "b"));
}

TEST_CASE("thirty-case cohort") {
  const fs::path d = temp_dir("thirty");
  PhantomConfig c;
  c.dims = {32, 32, 32};
  c.length_range = {4.0, 10.0};
  CohortOptions o;
  o.n_cases = 30;
  o.seed = 3;
  o.out_dir = d;
  o.datasets = {"a", "b", "c"};
  const Manifest m = phantom_cohort(c, o);
  CHECK(m.cases.size() == 30);
  std::map<std::string, int> per;
  int high = 0;
  for (const auto& e : m.cases) {
    ++per[e.dataset];
    high += *e.burden == eval::Burden::kHigh;
  }
  CHECK(per == std::map<std::string, int>{{"a", 10}, {"b", 10}, {"c", 10}});
  CHECK(high == 15);
  CHECK_NOTHROW(m.validate(true));
}
