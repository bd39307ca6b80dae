#ifndef POSTHOC_CLUSTERS_HPP
#define POSTHOC_CLUSTERS_HPP

// Supra-threshold connected components of a Z map, per-cluster TDP bounds and
// the Holm step-down set.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "posthoc/data_model.hpp"
#include "posthoc/tdp.hpp"
#include "posthoc/templates.hpp"

namespace posthoc {

inline void check_connectivity(int connectivity) {
  if (connectivity != 6 && connectivity != 18 && connectivity != 26)
    throw ParamError("connectivity must be 6, 18 or 26");
}

struct Cluster {
  std::size_t id = 0;
  std::vector<std::size_t> voxels; // masked indices, ascending
  std::size_t peak_voxel = 0;
  Vec3 peak_world{};
  double peak_stat = 0.0;
  double size_mm3 = 0.0;
  double z_threshold = 0.0;

  std::size_t size() const noexcept { return voxels.size(); }
};

namespace detail {

/// Offsets (dx, dy, dz) that precede the origin in x-fastest order, within the neighborhood.
inline std::vector<std::array<int, 3>> backward_offsets(int connectivity) {
  std::vector<std::array<int, 3>> out;
  for (int dz = -1; dz <= 0; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        if (dz == 0 && (dy > 0 || (dy == 0 && dx >= 0))) continue;
        const int order = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (order == 1 || (order == 2 && connectivity >= 18) || (order == 3 && connectivity == 26))
          out.push_back({dx, dy, dz});
      }
  return out;
}

class DisjointSets {
public:
  explicit DisjointSets(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), std::size_t{0}); }

  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }

  void unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a != b) parent_[std::max(a, b)] = std::min(a, b);
  }

private:
  std::vector<std::size_t> parent_;
};

/// Components of the voxels flagged in `active` (masked indexing).
inline std::vector<Cluster> label_components(const StatMap& zmap, std::span<const std::uint8_t> active, double z,
                                             int connectivity) {
  check_connectivity(connectivity);
  const Mask& mask = *zmap.mask;
  const Grid3& grid = mask.grid();
  const auto dims = grid.dims();
  const auto offsets = backward_offsets(connectivity);
  const std::size_t m = zmap.m();

  DisjointSets sets(m);
  for (std::size_t v = 0; v < m; ++v) {
    if (!active[v]) continue;
    const auto c = mask.coords(v);
    for (const auto& o : offsets) {
      const long long x = static_cast<long long>(c[0]) + o[0];
      const long long y = static_cast<long long>(c[1]) + o[1];
      const long long w = static_cast<long long>(c[2]) + o[2];
      if (x < 0 || y < 0 || w < 0 || x >= dims[0] || y >= dims[1] || w >= dims[2]) continue;
      const auto u = mask.masked_index(grid.flat_index(static_cast<std::uint32_t>(x), static_cast<std::uint32_t>(y),
                                                       static_cast<std::uint32_t>(w)));
      if (u >= 0 && active[static_cast<std::size_t>(u)]) sets.unite(v, static_cast<std::size_t>(u));
    }
  }

  std::map<std::size_t, Cluster> by_root;
  for (std::size_t v = 0; v < m; ++v) {
    if (!active[v]) continue;
    Cluster& c = by_root[sets.find(v)];
    if (c.voxels.empty() || zmap.z[v] > c.peak_stat) {
      c.peak_stat = zmap.z[v];
      c.peak_voxel = v;
    }
    c.voxels.push_back(v);
  }

  std::vector<Cluster> clusters;
  clusters.reserve(by_root.size());
  for (auto& [root, c] : by_root) {
    c.z_threshold = z;
    c.peak_world = voxel_to_world(mask, c.peak_voxel);
    c.size_mm3 = static_cast<double>(c.voxels.size()) * grid.voxel_volume();
    clusters.push_back(std::move(c));
  }
  std::sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
    if (a.peak_stat != b.peak_stat) return a.peak_stat > b.peak_stat;
    return a.peak_voxel < b.peak_voxel;
  });
  for (std::size_t i = 0; i < clusters.size(); ++i) clusters[i].id = i + 1;
  return clusters;
}

} // namespace detail

/// Connected components of {v : Z_v >= z}, ids from 1 by descending peak (ties: lower peak index first).
inline std::vector<Cluster> extract_clusters(const StatMap& zmap, double z, int connectivity = 26) {
  if (!std::isfinite(z)) throw ParamError("cluster-forming threshold must be finite");
  std::vector<std::uint8_t> active(zmap.m());
  for (std::size_t v = 0; v < active.size(); ++v) active[v] = zmap.z[v] >= z ? 1 : 0;
  return detail::label_components(zmap, active, z, connectivity);
}

/// Re-threshold inside `parent` at z_new; children are disjoint subsets of the parent.
inline std::vector<Cluster> drill_down(const Cluster& parent, const StatMap& zmap, double z_new, int connectivity = 26) {
  if (!std::isfinite(z_new)) throw ParamError("drill-down threshold must be finite");
  if (!(z_new > parent.z_threshold)) throw ParamError("drill-down threshold must exceed the parent threshold");
  std::vector<std::uint8_t> active(zmap.m(), 0);
  for (auto v : parent.voxels) {
    if (v >= zmap.m()) throw IndexError("cluster voxel outside the map");
    active[v] = zmap.z[v] >= z_new ? 1 : 0;
  }
  return detail::label_components(zmap, active, z_new, connectivity);
}

struct ClusterTable {
  double z_threshold = 0.0;
  int connectivity = 26;
  std::vector<Cluster> clusters;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> bounds; // bounds[cluster][method]
  std::vector<bool> reportable;            // some method detects signal
  std::vector<std::vector<bool>> best;     // row maximum, ties share

  std::size_t reportable_count() const { return static_cast<std::size_t>(std::count(reportable.begin(), reportable.end(), true)); }
};

inline ClusterTable cluster_table(std::vector<Cluster> clusters, std::span<const double> p,
                                  const std::map<std::string, Template>& templates, double z_threshold,
                                  int connectivity) {
  ClusterTable table;
  table.z_threshold = z_threshold;
  table.connectivity = connectivity;
  for (const auto& [name, t] : templates) table.methods.push_back(name);
  for (const auto& c : clusters) {
    std::vector<double> sub;
    sub.reserve(c.voxels.size());
    for (auto v : c.voxels) {
      if (v >= p.size()) throw IndexError("cluster voxel outside the p-value vector");
      sub.push_back(p[v]);
    }
    std::sort(sub.begin(), sub.end());
    std::vector<double> row;
    for (const auto& [name, t] : templates) row.push_back(tdp_bound_linear(sub, t.thresholds));
    const double top = row.empty() ? 0.0 : *std::max_element(row.begin(), row.end());
    std::vector<bool> flags;
    for (double b : row) flags.push_back(b == top);
    table.reportable.push_back(top > 0.0);
    table.best.push_back(std::move(flags));
    table.bounds.push_back(std::move(row));
  }
  table.clusters = std::move(clusters);
  return table;
}

/// Holm step-down rejections at level alpha: walk the sorted p-values while
/// p_(i) < alpha / (m - i + 1). Returned indices are ascending.
inline std::vector<std::size_t> holm_fwer_set(std::span<const double> p, double alpha) {
  detail::check_alpha(alpha);
  const std::size_t m = p.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return p[a] < p[b]; });
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < m; ++i) {
    if (!(p[order[i]] < alpha / static_cast<double>(m - i))) break;
    out.push_back(order[i]);
  }
  std::sort(out.begin(), out.end());
  return out;
}

} // namespace posthoc

#endif
