#include <algorithm>

#include "pvs/eval.hpp"
#include "pvs/morphology.hpp"

namespace pvs::eval {

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& ref,
                          std::span<const std::uint8_t> classes) {
  require_same_grid(pred.grid, ref.grid, "confusion");
  std::array<bool, 256> positive{};
  for (auto c : classes) {
    if (c == label::kIgnore) {
      throw std::invalid_argument("confusion: ignore is not a class");
    }
    positive[c] = true;
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    if (ref[i] == label::kIgnore) continue;
    const bool p = positive[pred[i]];
    const bool r = positive[ref[i]];
    if (p && r) {
      ++c.tp;
    } else if (p) {
      ++c.fp;
    } else if (r) {
      ++c.fn;
    } else {
      ++c.tn;
    }
  }
  return c;
}

ConfusionCounts confusion(const LabelMap& pred, const LabelMap& ref,
                          std::uint8_t class_id) {
  return confusion(pred, ref, std::span<const std::uint8_t>(&class_id, 1));
}

Overlap dsc_sen_ppv(const ConfusionCounts& c) {
  Overlap o;
  const auto tp = static_cast<double>(c.tp);
  const auto fp = static_cast<double>(c.fp);
  const auto fn = static_cast<double>(c.fn);
  if (c.tp + c.fp + c.tp + c.fn > 0) o.dsc = 2.0 * tp / ((tp + fp) + (tp + fn));
  if (c.tp + c.fn > 0) o.sen = tp / (tp + fn);
  if (c.tp + c.fp > 0) o.ppv = tp / (tp + fp);
  return o;
}

CaseMetrics evaluate_case(const std::string& id, const std::string& dataset,
                          const LabelMap& pred, const LabelMap& ref,
                          const std::map<std::string, std::uint8_t>& classes,
                          int connectivity) {
  const Connectivity conn = connectivity_from_int(connectivity);
  CaseMetrics m;
  m.id = id;
  m.dataset = dataset;
  std::vector<std::uint8_t> all;
  auto merged_mask = [&](const LabelMap& lm) {
    Mask mask(lm.grid);
    for (std::size_t i = 0; i < lm.size(); ++i) {
      mask[i] = std::find(all.begin(), all.end(), lm[i]) != all.end() ? 1 : 0;
    }
    return mask;
  };
  for (const auto& [name, id_value] : classes) {
    ClassMetrics cm;
    cm.counts = confusion(pred, ref, id_value);
    cm.overlap = dsc_sen_ppv(cm.counts);
    cm.pred_clusters = connected_components(pred, id_value, conn).cluster_count;
    cm.ref_clusters = connected_components(ref, id_value, conn).cluster_count;
    m.classes[name] = cm;
    all.push_back(id_value);
  }
  ClassMetrics overall;
  overall.counts = confusion(pred, ref, all);
  overall.overlap = dsc_sen_ppv(overall.counts);
  overall.pred_clusters = cluster_stats(merged_mask(pred), conn).cluster_count;
  overall.ref_clusters = cluster_stats(merged_mask(ref), conn).cluster_count;
  m.classes["overall"] = overall;
  return m;
}

}  // namespace pvs::eval
