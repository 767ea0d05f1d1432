#include <algorithm>
#include <random>
#include <set>

#include "pvs/eval.hpp"

namespace pvs::eval {

std::string to_string(Burden b) { return b == Burden::kHigh ? "high" : "low"; }

Burden burden_from_string(const std::string& s) {
  if (s == "high") return Burden::kHigh;
  if (s == "low") return Burden::kLow;
  throw std::invalid_argument("burden must be \"high\" or \"low\", got " + s);
}

std::vector<std::string> FoldAssignment::validation(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of) {
    if (f == fold) out.push_back(id);
  }
  return out;
}

std::vector<std::string> FoldAssignment::training(int fold) const {
  std::vector<std::string> out;
  for (const auto& [id, f] : fold_of) {
    if (f != fold) out.push_back(id);
  }
  return out;
}

FoldAssignment stratified_kfold(const std::vector<StratifiedCase>& cases,
                                int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("k-fold needs k >= 2");
  if (cases.empty()) throw std::invalid_argument("k-fold of an empty manifest");
  if (static_cast<std::size_t>(k) > cases.size()) {
    throw std::invalid_argument("k-fold with more folds than cases");
  }

  // Ordered by (dataset, burden) so each dataset's cases form one contiguous
  // run of the round-robin deal.
  std::map<std::pair<std::string, std::string>, std::vector<std::string>>
      strata;
  std::set<std::string> seen;
  for (const auto& c : cases) {
    if (!seen.insert(c.id).second) {
      throw std::invalid_argument("duplicate case id " + c.id);
    }
    strata[{c.dataset, c.burden ? to_string(*c.burden) : "none"}].push_back(
        c.id);
  }

  FoldAssignment fa;
  fa.k = k;
  std::mt19937_64 rng(seed);
  int cursor = 0;
  for (auto& [key, ids] : strata) {
    std::sort(ids.begin(), ids.end());
    std::shuffle(ids.begin(), ids.end(), rng);
    for (const auto& id : ids) {
      fa.fold_of[id] = cursor;
      fa.stratum_of[id] = key.first + "/" + key.second;
      cursor = (cursor + 1) % k;
    }
  }
  return fa;
}

std::map<std::string, Burden> median_split_burden(
    const std::vector<std::string>& ids,
    const std::vector<std::string>& datasets,
    const std::vector<std::uint64_t>& foreground_voxels) {
  if (ids.size() != datasets.size() || ids.size() != foreground_voxels.size()) {
    throw std::invalid_argument("median_split_burden: length mismatch");
  }
  std::map<std::string, std::vector<std::size_t>> by_dataset;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    by_dataset[datasets[i]].push_back(i);
  }
  std::map<std::string, Burden> out;
  for (auto& [ds, idx] : by_dataset) {
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (foreground_voxels[a] != foreground_voxels[b]) {
        return foreground_voxels[a] > foreground_voxels[b];
      }
      return ids[a] < ids[b];
    });
    const std::size_t high = (idx.size() + 1) / 2;
    for (std::size_t r = 0; r < idx.size(); ++r) {
      out[ids[idx[r]]] = r < high ? Burden::kHigh : Burden::kLow;
    }
  }
  return out;
}

}  // namespace pvs::eval
