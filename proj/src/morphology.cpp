#include "pvs/morphology.hpp"

#include <algorithm>
#include <numeric>

namespace pvs {
namespace {

class DisjointSets {
 public:
  std::uint32_t make() {
    parent_.push_back(static_cast<std::uint32_t>(parent_.size()));
    return parent_.back();
  }
  std::uint32_t find(std::uint32_t x) {
    std::uint32_t root = x;
    while (parent_[root] != root) root = parent_[root];
    while (parent_[x] != root) {
      std::uint32_t next = parent_[x];
      parent_[x] = root;
      x = next;
    }
    return root;
  }
  void unite(std::uint32_t a, std::uint32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    // Smaller root wins so the representative is the earliest provisional id.
    if (a < b) {
      parent_[b] = a;
    } else {
      parent_[a] = b;
    }
  }

 private:
  std::vector<std::uint32_t> parent_;
};

struct Offset {
  int dx, dy, dz;
};

// Neighbours already visited in a raster scan (the "backward" half).
std::vector<Offset> backward_neighbours(Connectivity conn) {
  std::vector<Offset> out;
  for (int dz = -1; dz <= 0; ++dz) {
    for (int dy = -1; dy <= 1; ++dy) {
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        int nonzero = (dx != 0) + (dy != 0) + (dz != 0);
        if (conn == Connectivity::k6 && nonzero > 1) continue;
        if (conn == Connectivity::k18 && nonzero > 2) continue;
        out.push_back({dx, dy, dz});
      }
    }
  }
  return out;
}

}  // namespace

Connectivity connectivity_from_int(int c) {
  switch (c) {
    case 6:
      return Connectivity::k6;
    case 18:
      return Connectivity::k18;
    case 26:
      return Connectivity::k26;
    default:
      throw std::invalid_argument("connectivity must be 6, 18 or 26");
  }
}

std::vector<std::uint32_t> label_components(const Mask& mask,
                                            Connectivity conn,
                                            std::size_t* count) {
  const Grid& g = mask.grid;
  const Dims& d = g.dims;
  std::vector<std::uint32_t> provisional(mask.size(), 0);
  DisjointSets sets;
  sets.make();  // id 0 stays background
  const auto nbrs = backward_neighbours(conn);

  for (std::int64_t k = 0; k < d[2]; ++k) {
    for (std::int64_t j = 0; j < d[1]; ++j) {
      for (std::int64_t i = 0; i < d[0]; ++i) {
        const std::size_t p = g.index(i, j, k);
        if (mask[p] == 0) continue;
        std::uint32_t id = 0;
        for (const auto& o : nbrs) {
          if (!g.contains(i + o.dx, j + o.dy, k + o.dz)) continue;
          std::uint32_t n = provisional[g.index(i + o.dx, j + o.dy, k + o.dz)];
          if (n == 0) continue;
          if (id == 0) {
            id = n;
          } else if (n != id) {
            sets.unite(id, n);
          }
        }
        provisional[p] = id != 0 ? id : sets.make();
      }
    }
  }

  // Final ids in order of first appearance in the raster scan.
  std::vector<std::uint32_t> remap;
  std::uint32_t next = 0;
  for (auto& v : provisional) {
    if (v == 0) continue;
    std::uint32_t root = sets.find(v);
    if (root >= remap.size()) remap.resize(root + 1, 0);
    if (remap[root] == 0) remap[root] = ++next;
    v = remap[root];
  }
  if (count != nullptr) *count = next;
  return provisional;
}

ClusterStats cluster_stats(const Mask& mask, Connectivity conn) {
  std::size_t n = 0;
  auto ids = label_components(mask, conn, &n);
  std::vector<std::size_t> sizes(n, 0);
  for (auto id : ids) {
    if (id != 0) ++sizes[id - 1];
  }
  std::sort(sizes.begin(), sizes.end());
  ClusterStats s;
  s.cluster_count = n;
  s.voxel_count = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  s.cluster_sizes = std::move(sizes);
  return s;
}

ClusterStats connected_components(const LabelMap& labels,
                                  std::uint8_t class_id, Connectivity conn) {
  if (class_id == label::kIgnore) {
    throw std::invalid_argument("cannot count clusters of the ignore label");
  }
  Mask m(labels.grid);
  for (std::size_t i = 0; i < m.size(); ++i) {
    m[i] = labels[i] == class_id ? 1 : 0;
  }
  return cluster_stats(m, conn);
}

CountVectors cluster_count_vector(
    const std::vector<std::pair<LabelMap, LabelMap>>& cases,
    std::uint8_t class_id, Connectivity conn) {
  if (cases.empty()) {
    throw std::invalid_argument("cluster_count_vector: no cases");
  }
  CountVectors v;
  for (const auto& [pred, ref] : cases) {
    require_same_grid(pred.grid, ref.grid, "cluster_count_vector");
    v.predicted.push_back(static_cast<double>(
        connected_components(pred, class_id, conn).cluster_count));
    v.reference.push_back(static_cast<double>(
        connected_components(ref, class_id, conn).cluster_count));
  }
  return v;
}

}  // namespace pvs
