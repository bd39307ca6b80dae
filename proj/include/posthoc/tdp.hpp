#ifndef POSTHOC_TDP_HPP
#define POSTHOC_TDP_HPP

// Interpolation lower bound on the true discovery proportion of a voxel set S:
//   max(0, max_{k in [K]} 1 - k + #{i in S : p_i < t_k}) / |S|.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "posthoc/data_model.hpp"
#include "posthoc/templates.hpp"

namespace posthoc {

/// Explicit double loop over k and S. Reference implementation.
inline double tdp_bound_bruteforce(std::span<const double> p_S, std::span<const double> thresholds) {
  if (p_S.empty()) throw ParamError("TDP bound of an empty set");
  long long best = 0;
  for (std::size_t k = 1; k <= thresholds.size(); ++k) {
    long long count = 0;
    for (double p : p_S)
      if (p < thresholds[k - 1]) ++count;
    best = std::max(best, 1 - static_cast<long long>(k) + count);
  }
  return static_cast<double>(best) / static_cast<double>(p_S.size());
}

namespace detail {
/// Numerator of the bound for ascending p-values: one merged sweep over p and t.
/// Terms with k > |S| are <= 0, so the sweep stops at min(K, |S|).
inline std::size_t discovery_count_sorted(std::span<const double> sorted, std::span<const double> thresholds) {
  const std::size_t n = sorted.size();
  const std::size_t last = std::min(thresholds.size(), n);
  std::size_t below = 0;
  std::size_t best = 0;
  for (std::size_t k = 1; k <= last; ++k) {
    const double t = thresholds[k - 1];
    while (below < n && sorted[below] < t) ++below;
    if (below + 1 > k) best = std::max(best, below + 1 - k);
  }
  return best;
}
} // namespace detail

/// Same value as tdp_bound_bruteforce in O(|S| + K) for ascending p-values.
inline double tdp_bound_linear(std::span<const double> sorted_p_S, std::span<const double> thresholds) {
  if (sorted_p_S.empty()) throw ParamError("TDP bound of an empty set");
  for (std::size_t i = 1; i < sorted_p_S.size(); ++i)
    if (sorted_p_S[i] < sorted_p_S[i - 1]) throw ContractError("tdp_bound_linear expects ascending p-values");
  const auto best = detail::discovery_count_sorted(sorted_p_S, thresholds);
  return static_cast<double>(best) / static_cast<double>(sorted_p_S.size());
}

inline double tdp_bound_linear(std::span<const double> sorted_p_S, const Template& t) {
  return tdp_bound_linear(sorted_p_S, t.thresholds);
}

/// Unique masked voxel indices.
class Selection {
public:
  Selection(std::vector<std::size_t> indices, std::size_t m) : indices_(std::move(indices)) {
    if (indices_.empty()) throw ParamError("selection must not be empty");
    std::sort(indices_.begin(), indices_.end());
    if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end())
      throw ParamError("selection contains duplicate voxels");
    if (indices_.back() >= m) throw IndexError("selection index out of range");
  }

  std::span<const std::size_t> indices() const noexcept { return indices_; }
  std::size_t size() const noexcept { return indices_.size(); }

private:
  std::vector<std::size_t> indices_;
};

/// Bound of an arbitrary set of voxels given the full p-value vector.
inline double tdp_bound(std::span<const double> p, std::span<const std::size_t> selection,
                        std::span<const double> thresholds) {
  std::vector<double> sub;
  sub.reserve(selection.size());
  for (auto i : selection) {
    if (i >= p.size()) throw IndexError("selection index out of range");
    sub.push_back(p[i]);
  }
  std::sort(sub.begin(), sub.end());
  return tdp_bound_linear(sub, thresholds);
}

/// 1 - |S n H0| / |S| given the ground-truth null indicator (1 = null voxel).
inline double true_tdp(std::span<const std::size_t> selection, std::span<const std::uint8_t> h0) {
  if (selection.empty()) throw ParamError("true TDP of an empty set");
  std::size_t nulls = 0;
  for (auto i : selection) {
    if (i >= h0.size()) throw IndexError("selection index out of range");
    nulls += h0[i] ? 1 : 0;
  }
  return static_cast<double>(selection.size() - nulls) / static_cast<double>(selection.size());
}

/// Voxel indices by decreasing |Z|, ties by ascending index. S_k is the first k entries.
inline std::vector<std::size_t> top_k_order(std::span<const double> z) {
  std::vector<std::size_t> order(z.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return std::fabs(z[a]) > std::fabs(z[b]); });
  return order;
}

namespace detail {
/// Max over positions with suffix range increments; backs the incremental curve sweep.
class SuffixAddMaxTree {
public:
  explicit SuffixAddMaxTree(std::span<const long long> init) : n_(init.size()), max_(4 * n_ + 4), lazy_(4 * n_ + 4, 0) {
    if (n_ > 0) build(1, 0, n_ - 1, init);
  }

  void add_suffix(std::size_t from) {
    if (from < n_) add(1, 0, n_ - 1, from, n_ - 1);
  }

  long long max() const { return n_ == 0 ? 0 : max_[1]; }

private:
  void build(std::size_t node, std::size_t lo, std::size_t hi, std::span<const long long> init) {
    if (lo == hi) {
      max_[node] = init[lo];
      return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    build(2 * node, lo, mid, init);
    build(2 * node + 1, mid + 1, hi, init);
    max_[node] = std::max(max_[2 * node], max_[2 * node + 1]);
  }

  void add(std::size_t node, std::size_t lo, std::size_t hi, std::size_t from, std::size_t to) {
    if (to < lo || hi < from) return;
    if (from <= lo && hi <= to) {
      ++max_[node];
      ++lazy_[node];
      return;
    }
    const std::size_t mid = lo + (hi - lo) / 2;
    add(2 * node, lo, mid, from, to);
    add(2 * node + 1, mid + 1, hi, from, to);
    max_[node] = std::max(max_[2 * node], max_[2 * node + 1]) + lazy_[node];
  }

  std::size_t n_;
  std::vector<long long> max_;
  std::vector<long long> lazy_;
};
} // namespace detail

struct ConfidenceCurve {
  std::vector<std::size_t> ks;
  std::vector<double> z_at_k;
  std::vector<std::string> methods;
  std::vector<std::vector<double>> bounds; // bounds[method][i] for ks[i]
};

/// Bounds on S_k (the k largest |Z|) for every requested k, all methods.
/// Voxels are added one at a time; each addition raises 1 - j + c_j for all j
/// with t_j > p, so a suffix-add / max tree gives every prefix bound exactly.
inline ConfidenceCurve confidence_curve(const StatMap& zmap, std::span<const double> p,
                                        const std::map<std::string, Template>& templates,
                                        std::vector<std::size_t> ks = {}) {
  const std::size_t m = zmap.m();
  if (p.size() != m) throw ParamError("p-value and Z vectors differ in length");
  if (ks.empty()) {
    ks.resize(m);
    std::iota(ks.begin(), ks.end(), std::size_t{1});
  }
  for (std::size_t i = 0; i < ks.size(); ++i) {
    if (ks[i] < 1 || ks[i] > m) throw ParamError("curve k outside [1, m]");
    if (i > 0 && ks[i] <= ks[i - 1]) throw ParamError("curve ks must be strictly increasing");
  }
  const auto order = top_k_order(zmap.z);

  ConfidenceCurve curve;
  curve.ks = ks;
  for (auto k : ks) curve.z_at_k.push_back(std::fabs(zmap.z[order[k - 1]]));
  for (const auto& [name, tmpl] : templates) {
    const auto& t = tmpl.thresholds;
    std::vector<long long> init(t.size());
    for (std::size_t j = 0; j < t.size(); ++j) init[j] = -static_cast<long long>(j); // 1 - k with k = j + 1
    detail::SuffixAddMaxTree tree(init);
    std::vector<double> values;
    values.reserve(ks.size());
    std::size_t added = 0;
    for (auto k : ks) {
      for (; added < k; ++added) {
        const double pv = p[order[added]];
        tree.add_suffix(static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), pv) - t.begin()));
      }
      values.push_back(static_cast<double>(std::max(0LL, tree.max())) / static_cast<double>(k));
    }
    curve.methods.push_back(name);
    curve.bounds.push_back(std::move(values));
  }
  return curve;
}

/// Number of voxels with |Z| >= z, i.e. the k at which the curve crosses z.
inline std::size_t k_at_z(std::span<const double> z, double threshold) {
  return static_cast<std::size_t>(std::count_if(z.begin(), z.end(), [&](double v) { return std::fabs(v) >= threshold; }));
}

} // namespace posthoc

#endif
