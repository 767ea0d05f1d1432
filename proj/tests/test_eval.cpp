#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

#include "pvs/eval.hpp"

using namespace pvs;
using namespace pvs::eval;

namespace {

LabelMap random_labels(std::mt19937_64& rng, bool ignore_region) {
  LabelMap l(Grid::make({16, 16, 16}));
  std::uniform_int_distribution<int> pick(0, 2);
  for (auto& v : l.data) v = static_cast<std::uint8_t>(pick(rng));
  if (ignore_region) {
    std::uniform_int_distribution<int> corner(0, 11);
    const int x = corner(rng), y = corner(rng), z = corner(rng);
    for (int k = z; k < z + 4; ++k)
      for (int j = y; j < y + 4; ++j)
        for (int i = x; i < x + 4; ++i) l(i, j, k) = 255;
  }
  return l;
}

ConfusionCounts brute(const LabelMap& pred, const LabelMap& ref, std::uint8_t c) {
  ConfusionCounts n;
  const auto d = ref.dims();
  for (std::int64_t k = 0; k < d[2]; ++k)
    for (std::int64_t j = 0; j < d[1]; ++j)
      for (std::int64_t i = 0; i < d[0]; ++i) {
        if (ref(i, j, k) == 255) continue;
        const bool p = pred(i, j, k) == c, r = ref(i, j, k) == c;
        n.tp += p && r;
        n.fp += p && !r;
        n.fn += !p && r;
        n.tn += !p && !r;
      }
  return n;
}

std::vector<double> random_vec(std::mt19937_64& rng, int n) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(n));
  for (auto& x : v) x = g(rng);
  return v;
}

}  // namespace

TEST_CASE("hand-counted overlap anchor") {
  const ConfusionCounts c{4, 2, 1, 0};
  const Overlap o = dsc_sen_ppv(c);
  CHECK(*o.dsc == 8.0 / 11.0);
  CHECK(*o.sen == 4.0 / 5.0);
  CHECK(*o.ppv == 4.0 / 6.0);

  LabelMap ref(Grid::make({10, 1, 1}), 0), pred(ref.grid, 0);
  ref.data = {1, 1, 1, 1, 1, 0, 0, 0, 255, 0};
  pred.data = {1, 1, 1, 1, 0, 1, 1, 0, 1, 0};
  CHECK(confusion(pred, ref, 1) == ConfusionCounts{4, 2, 1, 2});
}

TEST_CASE("undefined overlap is not zero") {
  const Overlap empty = dsc_sen_ppv({0, 0, 0, 10});
  CHECK_FALSE(empty.dsc.has_value());
  CHECK_FALSE(empty.sen.has_value());
  CHECK_FALSE(empty.ppv.has_value());
  const Overlap miss = dsc_sen_ppv({0, 0, 3, 10});
  CHECK(*miss.dsc == 0.0);
  CHECK(*miss.sen == 0.0);
  CHECK_FALSE(miss.ppv.has_value());
}

TEST_CASE("confusion matches a triple loop") {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 200; ++t) {
    const LabelMap ref = random_labels(rng, true);
    const LabelMap pred = random_labels(rng, t % 2 == 0);
    for (std::uint8_t c : {1, 2}) CHECK(confusion(pred, ref, c) == brute(pred, ref, c));
    const std::vector<std::uint8_t> both{1, 2};
    ConfusionCounts merged;
    const auto d = ref.dims();
    for (std::int64_t k = 0; k < d[2]; ++k)
      for (std::int64_t j = 0; j < d[1]; ++j)
        for (std::int64_t i = 0; i < d[0]; ++i) {
          if (ref(i, j, k) == 255) continue;
          const bool p = pred(i, j, k) == 1 || pred(i, j, k) == 2;
          const bool r = ref(i, j, k) == 1 || ref(i, j, k) == 2;
          merged.tp += p && r;
          merged.fp += p && !r;
          merged.fn += !p && r;
          merged.tn += !p && !r;
        }
    CHECK(confusion(pred, ref, both) == merged);
  }
}

TEST_CASE("lin ccc anchors") {
  const std::vector<double> x{1, 2, 3}, y{2, 3, 4};
  CHECK(std::abs(lin_ccc_value(x, y) - 4.0 / 7.0) < 1e-12);
  CHECK(lin_ccc_value(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> neg{-1, -2, -3};
  CHECK(lin_ccc_value(x, neg) < 0.0);
  CHECK_THROWS(lin_ccc_value(x, std::vector<double>{1, 2}));
}

TEST_CASE("ccc is bounded by pearson") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 10000; ++t) {
    const auto x = random_vec(rng, 8);
    auto y = random_vec(rng, 8);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += 0.5 * x[i];
    CHECK(std::abs(lin_ccc_value(x, y)) <= std::abs(pearson(x, y)) + 1e-12);
  }
}

TEST_CASE("ccc bootstrap is seeded and brackets the point estimate") {
  std::mt19937_64 rng(3);
  const auto x = random_vec(rng, 30);
  auto y = x;
  for (auto& v : y) v += 0.3 * random_vec(rng, 1)[0];
  const CccResult a = lin_ccc(x, y, {500, 9});
  const CccResult b = lin_ccc(x, y, {500, 9});
  CHECK(a.ci_low == b.ci_low);
  CHECK(a.ci_high == b.ci_high);
  CHECK(a.ci_low <= a.ccc);
  CHECK(a.ccc <= a.ci_high);
}

TEST_CASE("spearman and ranks") {
  CHECK(average_ranks(std::vector<double>{10, 20, 20, 5}) == std::vector<double>{2, 3.5, 3.5, 1});
  const std::vector<double> x{1, 2, 3, 4, 5}, rev{9, 7, 5, 3, 1};
  const SpearmanResult r = spearman(x, rev);
  CHECK(r.rho == doctest::Approx(-1.0));
  CHECK(r.p_value == 0.0);
  const std::vector<double> mono{1, 4, 9, 16, 25};
  CHECK(spearman(x, mono).rho == doctest::Approx(1.0));
  const std::vector<double> a{1, 2, 3, 4, 5, 6}, b{2, 1, 4, 3, 6, 5};
  const SpearmanResult m = spearman(a, b);
  CHECK(m.rho == doctest::Approx(1.0 - 6.0 * 6 / (6.0 * 35)));
  CHECK(m.p_value > 0.0);
  CHECK(m.p_value < 0.1);
}

TEST_CASE("bland altman two-point closed form") {
  const std::vector<double> x{3, 5}, y{1, 1};
  // d = {2, 4}: bias 3, sample sd sqrt(2).
  const BlandAltmanResult r = bland_altman(x, y);
  CHECK(r.bias == 3.0);
  CHECK(r.loa_low == 3.0 - 1.96 * std::sqrt(2.0));
  CHECK(r.loa_high == 3.0 + 1.96 * std::sqrt(2.0));
}

TEST_CASE("stratified folds balance datasets and burden") {
  std::vector<StratifiedCase> cases;
  for (int d = 0; d < 3; ++d)
    for (int i = 0; i < 10; ++i) {
      cases.push_back({"d" + std::to_string(d) + "_" + std::to_string(i), "ds" + std::to_string(d),
                       i < 5 ? Burden::kHigh : Burden::kLow});
    }
  const FoldAssignment fa = stratified_kfold(cases, 5, 42);
  CHECK(fa.fold_of.size() == 30);
  for (int f = 0; f < 5; ++f) {
    const auto val = fa.validation(f);
    CHECK(val.size() == 6);
    CHECK(fa.training(f).size() == 24);
    for (int d = 0; d < 3; ++d) {
      int n = 0, high = 0;
      for (const auto& id : val) {
        if (id.rfind("d" + std::to_string(d) + "_", 0) != 0) continue;
        ++n;
        high += std::stoi(id.substr(3)) < 5;
      }
      CHECK(n == 2);
      CHECK(std::abs(high - (n - high)) <= 1);
    }
  }
  const FoldAssignment again = stratified_kfold(cases, 5, 42);
  CHECK(again.fold_of == fa.fold_of);
  const FoldAssignment other = stratified_kfold(cases, 5, 43);
  CHECK(other.fold_of != fa.fold_of);
  CHECK_THROWS(stratified_kfold(cases, 1, 0));
  CHECK_THROWS(stratified_kfold(cases, 31, 0));
  cases.push_back(cases.front());
  CHECK_THROWS(stratified_kfold(cases, 5, 0));
}

TEST_CASE("median split burden per dataset") {
  const auto b = median_split_burden({"a", "b", "c", "d", "e"}, {"x", "x", "x", "y", "y"},
                                     {10, 30, 20, 5, 5});
  CHECK(b.at("b") == Burden::kHigh);
  CHECK(b.at("c") == Burden::kHigh);
  CHECK(b.at("a") == Burden::kLow);
  // Tie in dataset y goes by id.
  CHECK(b.at("d") != b.at("e"));
  CHECK(burden_from_string(to_string(Burden::kHigh)) == Burden::kHigh);
  CHECK_THROWS(burden_from_string("medium"));
}

TEST_CASE("report on identical pred and ref") {
  std::mt19937_64 rng(4);
  std::vector<CaseMetrics> cases;
  const std::map<std::string, std::uint8_t> classes{{"wm_pvs", 1}, {"bg_pvs", 2}};
  for (int i = 0; i < 5; ++i) {
    LabelMap l(Grid::make({12, 12, 12}), 0);
    std::uniform_int_distribution<int> pos(0, 11);
    for (int n = 0; n < 3 + 2 * i; ++n) l(pos(rng), pos(rng), pos(rng)) = 1 + (n % 2);
    cases.push_back(evaluate_case("c" + std::to_string(i), i % 2 ? "a" : "b", l, l, classes, 26));
  }
  ReportOptions opts;
  opts.bootstrap.n_resamples = 200;
  const MetricsReport r = aggregate_report(cases, opts);
  std::set<std::string> names;
  for (const auto& g : r.groups) {
    names.insert(g.name);
    REQUIRE(g.dsc.has_value());
    CHECK(g.dsc->mean == 1.0);
    CHECK(g.dsc->sd == 0.0);
  }
  CHECK(names == std::set<std::string>{"overall", "dataset:a", "dataset:b", "class:bg_pvs",
                                       "class:wm_pvs"});
  REQUIRE(r.agreement.has_value());
  CHECK(r.agreement->lin_ccc == doctest::Approx(1.0));
  CHECK(r.agreement->bland_altman_bias == 0.0);
  const auto j = to_json(r);
  CHECK(j.at("groups").size() == 5);
  const std::string csv = to_csv(r);
  CHECK(csv.rfind("group,n,dsc_mean", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
}

TEST_CASE("report excludes undefined scores") {
  LabelMap empty(Grid::make({4, 4, 4}), 0), one(empty.grid, 0);
  one(1, 1, 1) = 1;
  const std::map<std::string, std::uint8_t> classes{{"wm_pvs", 1}};
  std::vector<CaseMetrics> cases{evaluate_case("e", "x", empty, empty, classes, 26),
                                 evaluate_case("o", "x", one, one, classes, 26)};
  ReportOptions opts;
  opts.by_dataset = false;
  opts.by_class = false;
  const MetricsReport r = aggregate_report(cases, opts);
  REQUIRE(r.groups.size() == 1);
  CHECK(r.groups[0].dsc->n == 1);
  CHECK(r.groups[0].dsc->excluded == 1);
  CHECK(r.groups[0].dsc->single);
  CHECK_FALSE(r.agreement.has_value());
}
