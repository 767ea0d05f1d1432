#include <functional>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "pvs/eval.hpp"

namespace pvs::eval {
namespace {

using Selector = std::function<bool(const CaseMetrics&)>;

GroupSummary summarize_group(const std::string& name,
                             const std::vector<CaseMetrics>& cases,
                             const std::string& class_key,
                             const Selector& keep, bool pooled) {
  GroupSummary g;
  g.name = name;
  std::vector<std::optional<double>> dsc, sen, ppv;
  ConfusionCounts total;
  for (const auto& c : cases) {
    if (!keep(c)) continue;
    auto it = c.classes.find(class_key);
    if (it == c.classes.end()) continue;
    ++g.n;
    const ClassMetrics& m = it->second;
    total += m.counts;
    dsc.push_back(m.overlap.dsc);
    sen.push_back(m.overlap.sen);
    ppv.push_back(m.overlap.ppv);
    g.pred_clusters.push_back(static_cast<double>(m.pred_clusters));
    g.ref_clusters.push_back(static_cast<double>(m.ref_clusters));
  }
  if (pooled) {
    const Overlap o = dsc_sen_ppv(total);
    auto pooled_cell = [&](const std::optional<double>& v) -> std::optional<Cell> {
      if (!v) return std::nullopt;
      Cell c;
      c.mean = *v;
      c.n = g.n;
      return c;
    };
    g.dsc = pooled_cell(o.dsc);
    g.sen = pooled_cell(o.sen);
    g.ppv = pooled_cell(o.ppv);
    return g;
  }
  auto try_cell = [](const std::vector<std::optional<double>>& v)
      -> std::optional<Cell> {
    for (const auto& x : v) {
      if (x) return summarize(v);
    }
    return std::nullopt;
  };
  g.dsc = try_cell(dsc);
  g.sen = try_cell(sen);
  g.ppv = try_cell(ppv);
  return g;
}

nlohmann::json cell_json(const std::optional<Cell>& c, std::size_t group_n) {
  if (!c) {
    return {{"mean", nullptr}, {"sd", nullptr}, {"excluded", group_n}};
  }
  nlohmann::json j{{"mean", c->mean},
                   {"sd", c->sd},
                   {"n", c->n},
                   {"excluded", c->excluded}};
  if (c->single) j["single"] = true;
  return j;
}

}  // namespace

Cell summarize(std::span<const std::optional<double>> values) {
  Cell c;
  double sum = 0.0;
  for (const auto& v : values) {
    if (v) {
      sum += *v;
      ++c.n;
    } else {
      ++c.excluded;
    }
  }
  if (c.n == 0) throw std::invalid_argument("summarize: empty cell");
  c.mean = sum / static_cast<double>(c.n);
  if (c.n == 1) {
    c.single = true;
    return c;
  }
  double ss = 0.0;
  for (const auto& v : values) {
    if (v) ss += (*v - c.mean) * (*v - c.mean);
  }
  c.sd = std::sqrt(ss / static_cast<double>(c.n - 1));
  return c;
}

MetricsReport aggregate_report(const std::vector<CaseMetrics>& cases,
                               const ReportOptions& opts) {
  if (cases.empty()) throw std::invalid_argument("aggregate_report: no cases");
  MetricsReport r;
  r.connectivity = opts.connectivity;
  r.pooled = opts.pooled;
  auto all = [](const CaseMetrics&) { return true; };
  r.groups.push_back(
      summarize_group("overall", cases, "overall", all, opts.pooled));
  if (!r.groups.front().dsc) {
    throw std::invalid_argument(
        "aggregate_report: overall DSC undefined for every case");
  }
  if (opts.by_dataset) {
    std::set<std::string> datasets;
    for (const auto& c : cases) datasets.insert(c.dataset);
    for (const auto& ds : datasets) {
      r.groups.push_back(summarize_group(
          "dataset:" + ds, cases, "overall",
          [&](const CaseMetrics& c) { return c.dataset == ds; }, opts.pooled));
    }
  }
  if (opts.by_class) {
    std::set<std::string> names;
    for (const auto& c : cases) {
      for (const auto& [name, m] : c.classes) {
        if (name != "overall") names.insert(name);
      }
    }
    for (const auto& name : names) {
      r.groups.push_back(
          summarize_group("class:" + name, cases, name, all, opts.pooled));
    }
  }
  const auto& overall = r.groups.front();
  if (overall.pred_clusters.size() >= 3) {
    try {
      r.agreement = agreement(overall.pred_clusters, overall.ref_clusters,
                              opts.bootstrap);
    } catch (const std::invalid_argument&) {
      // Degenerate count vectors (e.g. all equal); no agreement statistics.
    }
  }
  return r;
}

nlohmann::json to_json(const MetricsReport& report) {
  nlohmann::json groups = nlohmann::json::array();
  for (const auto& g : report.groups) {
    groups.push_back({{"name", g.name},
                      {"n", g.n},
                      {"dsc", cell_json(g.dsc, g.n)},
                      {"sen", cell_json(g.sen, g.n)},
                      {"ppv", cell_json(g.ppv, g.n)},
                      {"clusters",
                       {{"pred", g.pred_clusters}, {"ref", g.ref_clusters}}}});
  }
  nlohmann::json j{{"groups", groups},
                   {"connectivity", report.connectivity},
                   {"pooled", report.pooled},
                   {"fingerprint", report.fingerprint}};
  if (report.agreement) {
    const auto& a = *report.agreement;
    j["agreement"] = {{"lin_ccc", a.lin_ccc},
                      {"ccc_ci_low", a.ccc_ci_low},
                      {"ccc_ci_high", a.ccc_ci_high},
                      {"spearman_rho", a.spearman_rho},
                      {"spearman_p", a.spearman_p},
                      {"bland_altman_bias", a.bland_altman_bias},
                      {"loa_low", a.loa_low},
                      {"loa_high", a.loa_high}};
  } else {
    j["agreement"] = nullptr;
  }
  return j;
}

std::string to_csv(const MetricsReport& report) {
  std::ostringstream os;
  os << "group,n,dsc_mean,dsc_sd,sen_mean,sen_sd,ppv_mean,ppv_sd\n";
  auto put = [&](const std::optional<Cell>& c) {
    if (c) {
      os << ',' << std::setprecision(6) << c->mean << ',' << c->sd;
    } else {
      os << ",,";
    }
  };
  for (const auto& g : report.groups) {
    os << g.name << ',' << g.n;
    put(g.dsc);
    put(g.sen);
    put(g.ppv);
    os << '\n';
  }
  return os.str();
}

}  // namespace pvs::eval
