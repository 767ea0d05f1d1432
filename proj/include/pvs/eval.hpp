#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>

#include <json.hpp>

#include "pvs/volume.hpp"

namespace pvs::eval {

// ---- voxel-wise overlap ----------------------------------------------------

struct ConfusionCounts {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    tn += o.tn;
    return *this;
  }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) =
      default;
};

/// Counts over voxels whose reference label is not ignore (255).
ConfusionCounts confusion(const LabelMap& pred, const LabelMap& ref,
                          std::uint8_t class_id);

/// Same, treating any label in `classes` as positive.
ConfusionCounts confusion(const LabelMap& pred, const LabelMap& ref,
                          std::span<const std::uint8_t> classes);

/// nullopt marks an undefined value (zero denominator), which is not the same
/// as a score of 0.
struct Overlap {
  std::optional<double> dsc;
  std::optional<double> sen;
  std::optional<double> ppv;
};

Overlap dsc_sen_ppv(const ConfusionCounts& c);

// ---- agreement statistics --------------------------------------------------

struct BootstrapConfig {
  int n_resamples = 2000;
  std::uint64_t seed = 0;
};

struct CccResult {
  double ccc = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
};

/// 2 s_xy / (s_x^2 + s_y^2 + (mean_x - mean_y)^2), population moments.
double lin_ccc_value(std::span<const double> x, std::span<const double> y);

/// Point estimate plus a seeded percentile bootstrap (2.5 / 97.5) CI.
CccResult lin_ccc(std::span<const double> x, std::span<const double> y,
                  const BootstrapConfig& boot = {});

double pearson(std::span<const double> x, std::span<const double> y);

/// 1-based ranks; ties share their average rank.
std::vector<double> average_ranks(std::span<const double> v);

struct SpearmanResult {
  double rho = 0.0;
  double p_value = 1.0;
};

/// Pearson correlation of average ranks; two-sided p from the t approximation
/// with n - 2 degrees of freedom (p = 0 when |rho| = 1).
SpearmanResult spearman(std::span<const double> x, std::span<const double> y);

struct BlandAltmanResult {
  double bias = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
};

/// d = x - y; bias = mean(d); limits = bias -/+ 1.96 sample-sd(d).
BlandAltmanResult bland_altman(std::span<const double> x,
                               std::span<const double> y);

struct AgreementStats {
  double lin_ccc = 0.0;
  double ccc_ci_low = 0.0;
  double ccc_ci_high = 0.0;
  double spearman_rho = 0.0;
  double spearman_p = 1.0;
  double bland_altman_bias = 0.0;
  double loa_low = 0.0;
  double loa_high = 0.0;
};

/// All three analyses on one pair of vectors (predicted x, reference y).
AgreementStats agreement(std::span<const double> x, std::span<const double> y,
                         const BootstrapConfig& boot = {});

// ---- cross-validation ------------------------------------------------------

enum class Burden { kLow, kHigh };

std::string to_string(Burden b);
Burden burden_from_string(const std::string& s);

struct StratifiedCase {
  std::string id;
  std::string dataset;
  std::optional<Burden> burden;
};

struct FoldAssignment {
  int k = 0;
  std::map<std::string, int> fold_of;
  std::map<std::string, std::string> stratum_of;

  std::vector<std::string> validation(int fold) const;
  std::vector<std::string> training(int fold) const;
};

/// Cases are grouped by (dataset, burden), shuffled within each group by the
/// seed, and dealt round-robin with a single cursor that carries over between
/// groups, so per-dataset and per-stratum fold sizes differ by at most one.
FoldAssignment stratified_kfold(const std::vector<StratifiedCase>& cases,
                                int k, std::uint64_t seed);

/// Median split on foreground voxel count inside each dataset: the top
/// ceil(n/2) cases are high burden. Ties are broken by id.
std::map<std::string, Burden> median_split_burden(
    const std::vector<std::string>& ids,
    const std::vector<std::string>& datasets,
    const std::vector<std::uint64_t>& foreground_voxels);

// ---- reporting -------------------------------------------------------------

struct ClassMetrics {
  ConfusionCounts counts;
  Overlap overlap;
  std::size_t pred_clusters = 0;
  std::size_t ref_clusters = 0;
};

struct CaseMetrics {
  std::string id;
  std::string dataset;
  /// Keyed by class name; "overall" holds the merged foreground.
  std::map<std::string, ClassMetrics> classes;
};

/// Evaluate one prediction/reference pair for the named classes plus the
/// merged foreground ("overall").
CaseMetrics evaluate_case(const std::string& id, const std::string& dataset,
                          const LabelMap& pred, const LabelMap& ref,
                          const std::map<std::string, std::uint8_t>& classes,
                          int connectivity);

struct Cell {
  double mean = 0.0;
  double sd = 0.0;
  std::size_t n = 0;
  std::size_t excluded = 0;
  /// Set when only one value was available (sd reported as 0).
  bool single = false;
};

/// Mean and sample SD of the defined values; undefined values are counted in
/// `excluded`. Throws if nothing is defined.
Cell summarize(std::span<const std::optional<double>> values);

struct GroupSummary {
  std::string name;
  std::size_t n = 0;
  std::optional<Cell> dsc;
  std::optional<Cell> sen;
  std::optional<Cell> ppv;
  std::vector<double> pred_clusters;
  std::vector<double> ref_clusters;
};

struct MetricsReport {
  std::vector<GroupSummary> groups;
  std::optional<AgreementStats> agreement;
  int connectivity = 26;
  bool pooled = false;
  std::string fingerprint;
};

struct ReportOptions {
  bool by_dataset = true;
  bool by_class = true;
  /// Sum confusion counts over the cases of a group instead of averaging
  /// per-case scores.
  bool pooled = false;
  int connectivity = 26;
  BootstrapConfig bootstrap;
};

/// Groups: "overall", "dataset:<tag>" and "class:<name>". Agreement
/// statistics use the overall per-case cluster counts and need >= 3 cases.
MetricsReport aggregate_report(const std::vector<CaseMetrics>& cases,
                               const ReportOptions& opts);

nlohmann::json to_json(const MetricsReport& report);

/// One row per group: group,n,dsc_mean,dsc_sd,sen_mean,sen_sd,ppv_mean,ppv_sd
std::string to_csv(const MetricsReport& report);

}  // namespace pvs::eval
