#include "pvs/annotation.hpp"

#include <algorithm>

namespace pvs {

void LabelScheme::validate() const {
  std::set<std::uint8_t> seen;
  for (const auto& [name, id] : class_ids) {
    if (!seen.insert(id).second) {
      throw std::invalid_argument("label scheme: duplicate id for " + name);
    }
  }
  for (auto id : foreground_ids) {
    if (id == label::kIgnore || id == label::kBackground) {
      throw std::invalid_argument(
          "label scheme: background/ignore cannot be foreground");
    }
    if (!seen.contains(id)) {
      throw std::invalid_argument("label scheme: unknown foreground id " +
                                  std::to_string(id));
    }
  }
}

LabelMap apply_sparse_ignore(const LabelMap& labels,
                             const SparseAnnotation& ann) {
  if (ann.axis < 0 || ann.axis > 2) {
    throw std::invalid_argument("sparse annotation axis must be 0, 1 or 2");
  }
  const Dims& d = labels.grid.dims;
  for (auto s : ann.annotated_slices) {
    if (s < 0 || s >= d[ann.axis]) {
      throw std::out_of_range("annotated slice " + std::to_string(s) +
                              " outside [0, " + std::to_string(d[ann.axis]) +
                              ")");
    }
  }
  LabelMap out = labels;
  for (std::int64_t k = 0; k < d[2]; ++k) {
    for (std::int64_t j = 0; j < d[1]; ++j) {
      for (std::int64_t i = 0; i < d[0]; ++i) {
        const std::array<std::int64_t, 3> c{i, j, k};
        if (!ann.annotated_slices.contains(c[ann.axis])) {
          out(i, j, k) = label::kIgnore;
        }
      }
    }
  }
  return out;
}

Mask dilate(const Mask& mask) {
  const Dims& d = mask.grid.dims;
  Mask out(mask.grid);
  for (std::int64_t k = 0; k < d[2]; ++k) {
    for (std::int64_t j = 0; j < d[1]; ++j) {
      for (std::int64_t i = 0; i < d[0]; ++i) {
        if (mask(i, j, k) == 0) continue;
        for (std::int64_t c = std::max<std::int64_t>(k - 1, 0);
             c <= std::min(k + 1, d[2] - 1); ++c) {
          for (std::int64_t b = std::max<std::int64_t>(j - 1, 0);
               b <= std::min(j + 1, d[1] - 1); ++b) {
            for (std::int64_t a = std::max<std::int64_t>(i - 1, 0);
                 a <= std::min(i + 1, d[0] - 1); ++a) {
              out(a, b, c) = 1;
            }
          }
        }
      }
    }
  }
  return out;
}

Mask roi_mask(const Parcellation& parcellation, const std::set<int>& keep_ids,
              int dilate_iters) {
  if (dilate_iters < 0) {
    throw std::invalid_argument("dilate_iters must be >= 0");
  }
  Mask m(parcellation.grid);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = keep_ids.contains(parcellation[i]) ? 1 : 0;
  }
  if (count_nonzero(m) == 0) {
    throw std::invalid_argument("roi_retain: no voxel matches keep_ids");
  }
  for (int it = 0; it < dilate_iters; ++it) m = dilate(m);
  return m;
}

Volume roi_retain(const Volume& vol, const Parcellation& parcellation,
                  const std::set<int>& keep_ids, int dilate_iters) {
  require_same_grid(vol.grid, parcellation.grid, "roi_retain");
  Mask m = roi_mask(parcellation, keep_ids, dilate_iters);
  Volume out = vol;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (m[i] == 0) out[i] = 0.0f;
  }
  return out;
}

LabelMap merge_wmh(const LabelMap& pvs, const Volume& wmh_probability,
                   double threshold) {
  require_same_grid(pvs.grid, wmh_probability.grid, "merge_wmh");
  if (!(threshold > 0.0 && threshold < 1.0)) {
    throw std::invalid_argument("merge_wmh: threshold must lie in (0, 1)");
  }
  LabelMap out = pvs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (out[i] != label::kIgnore && wmh_probability[i] > threshold) {
      out[i] = label::kWmh;
    }
  }
  return out;
}

}  // namespace pvs
