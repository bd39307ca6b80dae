#ifndef POSTHOC_TEMPLATES_HPP
#define POSTHOC_TEMPLATES_HPP

// JER-controlling threshold families ("templates") and their calibration on
// null p-value matrices. All comparisons against thresholds are strict
// (p < t_k counts as a discovery, p == t_k does not).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posthoc/error.hpp"
#include "posthoc/stats.hpp"

namespace posthoc {

/// Largest double below 1; caps thresholds so that templates stay in [0, 1).
inline constexpr double kBelowOne = 1.0 - 0x1.0p-53;

enum class TemplateKind { simes, ari, pari, notip };

inline std::string to_string(TemplateKind kind) {
  switch (kind) {
  case TemplateKind::simes: return "Simes";
  case TemplateKind::ari: return "ARI";
  case TemplateKind::pari: return "pARI";
  case TemplateKind::notip: return "Notip";
  }
  return "?";
}

inline TemplateKind template_kind_from_string(const std::string& s) {
  if (s == "Simes") return TemplateKind::simes;
  if (s == "ARI") return TemplateKind::ari;
  if (s == "pARI") return TemplateKind::pari;
  if (s == "Notip") return TemplateKind::notip;
  throw FormatError("unknown template kind '" + s + "'");
}

struct Template {
  TemplateKind kind = TemplateKind::simes;
  double alpha = 0.05;
  std::vector<double> thresholds;
  std::optional<std::size_t> hommel;   // ARI
  std::optional<std::size_t> delta;    // pARI
  std::optional<double> lambda_star;   // pARI (level) and Notip (curve index / B_train)

  std::size_t K() const noexcept { return thresholds.size(); }
  std::string name() const { return to_string(kind); }
};

/// Throws ContractError unless the thresholds are non-decreasing and in [0, 1).
inline void validate(const Template& t) {
  if (t.thresholds.empty()) throw ContractError("template must have K >= 1");
  for (std::size_t k = 0; k < t.thresholds.size(); ++k) {
    const double v = t.thresholds[k];
    if (!(v >= 0.0 && v < 1.0)) throw ContractError("template thresholds must lie in [0, 1)");
    if (k > 0 && v < t.thresholds[k - 1]) throw ContractError("template thresholds must be non-decreasing");
  }
}

namespace detail {
inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ParamError("alpha must lie in (0, 1)");
}
inline Template make_template(TemplateKind kind, double alpha, std::vector<double> thresholds) {
  Template t;
  t.kind = kind;
  t.alpha = alpha;
  t.thresholds = std::move(thresholds);
  return t;
}
inline void check_k(std::size_t K, std::size_t m) {
  if (K == 0) throw ParamError("template size K must be at least 1");
  if (K > m) throw ParamError("template size K exceeds the number of voxels m");
}
} // namespace detail

/// t_k = alpha k / m.
inline Template simes_template(std::size_t m, double alpha, std::size_t K) {
  detail::check_alpha(alpha);
  detail::check_k(K, m);
  Template t = detail::make_template(TemplateKind::simes, alpha, std::vector<double>(K));
  for (std::size_t k = 1; k <= K; ++k) t.thresholds[k - 1] = alpha * static_cast<double>(k) / static_cast<double>(m);
  return t;
}

namespace detail {
/// p_(m-i+j) > j alpha / i for all j in [i]; `sorted` ascending, 1-based i.
// p > j alpha / i, cross-multiplied in extended precision so that ties such as
// p = alpha are not decided by the rounding of j alpha / i.
inline bool hommel_qualifies(std::span<const double> sorted, std::size_t i, double alpha) {
  const std::size_t m = sorted.size();
  const long double li = static_cast<long double>(i);
  for (std::size_t j = 1; j <= i; ++j)
    if (!(static_cast<long double>(sorted[m - i + j - 1]) * li > static_cast<long double>(j) * alpha)) return false;
  return true;
}
} // namespace detail

/// Hommel value h(alpha) = max{ i in [m] : p_(m-i+j) > j alpha / i for all j in [i] }, 0 if none.
///
/// Rewriting the condition per order statistic r = m - i + j shows that each
/// p_(r) < alpha forbids every i >= max(alpha (m - r) / (alpha - p_(r)), m - r + 1),
/// so the admissible set is {1, ..., h} and one pass over the sorted p-values
/// finds h. The result is then confirmed with the defining inequalities.
inline std::size_t hommel_value(std::span<const double> p, double alpha) {
  detail::check_alpha(alpha);
  std::vector<double> sorted(p.begin(), p.end());
  std::sort(sorted.begin(), sorted.end());
  const std::size_t m = sorted.size();
  if (m == 0) return 0;

  double first_forbidden = static_cast<double>(m) + 1.0;
  for (std::size_t r = 1; r <= m; ++r) {
    const double pr = sorted[r - 1];
    if (pr < alpha) {
      const double bound = alpha * static_cast<double>(m - r) / (alpha - pr);
      const double forbidden = std::max(std::ceil(bound), static_cast<double>(m - r + 1));
      first_forbidden = std::min(first_forbidden, forbidden);
    } else if (pr == alpha) {
      first_forbidden = std::min(first_forbidden, static_cast<double>(m - r + 1));
    }
  }
  std::size_t h = static_cast<std::size_t>(std::clamp(first_forbidden - 1.0, 0.0, static_cast<double>(m)));
  while (h < m && detail::hommel_qualifies(sorted, h + 1, alpha)) ++h;
  while (h > 0 && !detail::hommel_qualifies(sorted, h, alpha)) --h;
  return h;
}

/// Simes thresholds with m replaced by the Hommel value: t_k = min(alpha k / h, 1-).
/// h = 0 (everything rejected by closed testing) gives the all-signal family.
inline Template ari_template(std::span<const double> p, double alpha, std::size_t K) {
  detail::check_alpha(alpha);
  detail::check_k(K, p.size());
  const std::size_t h = hommel_value(p, alpha);
  Template t = detail::make_template(TemplateKind::ari, alpha, std::vector<double>(K, kBelowOne));
  t.hommel = h;
  if (h > 0)
    for (std::size_t k = 1; k <= K; ++k)
      t.thresholds[k - 1] = std::min(alpha * static_cast<double>(k) / static_cast<double>(h), kBelowOne);
  return t;
}

/// Largest lambda for which the sorted row stays above t^delta(lambda):
/// min over k in (delta, m] of p_(k) (m - delta) / (k - delta).
inline double pari_pivotal(std::span<const double> sorted_row, std::size_t delta, std::size_t m) {
  if (delta >= m) throw ParamError("pARI requires delta < m");
  if (sorted_row.size() != m) throw ParamError("pARI pivotal statistic needs the full sorted row");
  const double span = static_cast<double>(m - delta);
  double lambda = std::numeric_limits<double>::infinity();
  for (std::size_t k = delta + 1; k <= m; ++k) {
    lambda = std::min(lambda, sorted_row[k - 1] * span / static_cast<double>(k - delta));
  }
  return lambda;
}

/// t_k = lambda (k - delta) / (m - delta) for k > delta, 0 otherwise; k in [K].
inline Template pari_template(std::size_t m, std::size_t delta, double lambda, double alpha, std::size_t K) {
  detail::check_k(K, m);
  if (delta >= m) throw ParamError("pARI requires delta < m");
  Template t = detail::make_template(TemplateKind::pari, alpha, std::vector<double>(K, 0.0));
  t.delta = delta;
  t.lambda_star = lambda;
  const double span = static_cast<double>(m - delta);
  for (std::size_t k = delta + 1; k <= K; ++k)
    t.thresholds[k - 1] = std::min(lambda * static_cast<double>(k - delta) / span, kBelowOne);
  return t;
}

/// Fraction of null rows with some row[k] < t_k, k in [K].
inline double empirical_jer(std::span<const double> thresholds, const NullRows& null) {
  if (thresholds.size() > null.width()) throw ParamError("template longer than the stored null rows");
  std::size_t violations = 0;
  for (std::size_t b = 0; b < null.rows(); ++b) {
    const auto row = null.row(b);
    for (std::size_t k = 0; k < thresholds.size(); ++k)
      if (row[k] < thresholds[k]) {
        ++violations;
        break;
      }
  }
  return static_cast<double>(violations) / static_cast<double>(null.rows());
}

inline double empirical_jer(const Template& t, const NullRows& null) { return empirical_jer(t.thresholds, null); }

struct CalibrationResult {
  Template tmpl;
  double lambda_star = 0.0;
  /// Notip: 1-based learned curve index (0 = the empty family). Unused for pARI.
  std::size_t curve_index = 0;
  std::vector<double> pivotal_values;
  std::size_t k_alpha = 0;
};

namespace detail {
inline std::size_t quantile_index(double alpha, std::size_t B) {
  check_alpha(alpha);
  const auto k = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(B)));
  if (k < 1) throw ParamError("too few randomizations: floor(alpha * B) must be at least 1");
  return k;
}

inline double kth_smallest(std::vector<double> values, std::size_t k) {
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(k - 1), values.end());
  return values[k - 1];
}
} // namespace detail

/// lambda* = k_alpha-th smallest pivotal value, k_alpha = floor(alpha B).
///
/// The threshold arithmetic can round a tied row onto the wrong side of its own
/// pivotal value; lambda* is then lowered ulp by ulp until the empirical JER on
/// `null` is <= alpha, which keeps the guarantee exact.
inline CalibrationResult calibrate_pari(const NullRows& null, std::size_t delta, double alpha, std::size_t K = 0,
                                        unsigned threads = default_threads()) {
  const std::size_t k_alpha = detail::quantile_index(alpha, null.rows());
  const std::size_t m = null.m();
  if (null.width() != m) throw ParamError("pARI calibration needs full-width null rows");
  if (K == 0) K = m;
  std::vector<double> pivots(null.rows());
  parallel_for(null.rows(), threads, [&](std::size_t b, unsigned) { pivots[b] = pari_pivotal(null.row(b), delta, m); });

  double lambda = detail::kth_smallest(pivots, k_alpha);
  Template t = pari_template(m, delta, lambda, alpha, K);
  while (empirical_jer(t, null) > alpha && lambda > 0.0) {
    lambda = std::nextafter(lambda, 0.0);
    t = pari_template(m, delta, lambda, alpha, K);
  }
  return CalibrationResult{std::move(t), lambda, 0, std::move(pivots), k_alpha};
}

/// Column-wise sorted training null: curve c (1-based) holds, for each k in [K],
/// the c-th smallest training value of p_(k).
class LearnedTemplateFamily {
public:
  LearnedTemplateFamily(std::size_t K, std::size_t b_train, std::vector<std::vector<double>> columns)
      : K_(K), b_train_(b_train), columns_(std::move(columns)) {}

  std::size_t K() const noexcept { return K_; }
  std::size_t b_train() const noexcept { return b_train_; }

  /// Sorted training values of p_(k), k 1-based.
  std::span<const double> column(std::size_t k) const { return columns_.at(k - 1); }

  double value(std::size_t curve, std::size_t k) const { return columns_.at(k - 1).at(curve - 1); }

  std::vector<double> curve(std::size_t c) const {
    if (c < 1 || c > b_train_) throw IndexError("learned curve index out of range");
    std::vector<double> out(K_);
    for (std::size_t k = 0; k < K_; ++k) out[k] = columns_[k][c - 1];
    return out;
  }

private:
  std::size_t K_;
  std::size_t b_train_;
  std::vector<std::vector<double>> columns_;
};

inline LearnedTemplateFamily learn_notip_templates(const NullRows& train, std::size_t K) {
  if (train.rows() < 2) throw ParamError("Notip training needs at least two randomizations");
  detail::check_k(K, train.m());
  if (K > train.width()) throw ParamError("Notip K exceeds the stored training columns");
  std::vector<std::vector<double>> columns(K, std::vector<double>(train.rows()));
  for (std::size_t b = 0; b < train.rows(); ++b) {
    const auto row = train.row(b);
    for (std::size_t k = 0; k < K; ++k) columns[k][b] = row[k];
  }
  for (auto& col : columns) std::sort(col.begin(), col.end());
  return LearnedTemplateFamily(K, train.rows(), std::move(columns));
}

/// Default Notip size: 2% of the voxels, at least 1.
inline std::size_t notip_default_k(std::size_t m) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(0.02 * static_cast<double>(m))));
}

/// Pivotal value of calibration row b: min over k of #{training values of p_(k) < row_b[k]} / B_train.
/// The k_alpha-th smallest rank r* selects curve r* (the empty family when r* = 0); every row with
/// rank >= r* lies strictly above that curve, so at most k_alpha - 1 rows violate it.
inline CalibrationResult calibrate_notip(const LearnedTemplateFamily& family, const NullRows& calib, double alpha,
                                         unsigned threads = default_threads()) {
  const std::size_t K = family.K();
  if (K > calib.m()) throw ParamError("Notip K exceeds the calibration voxel count");
  if (K > calib.width()) throw ParamError("Notip K exceeds the stored calibration columns");
  const std::size_t k_alpha = detail::quantile_index(alpha, calib.rows());

  std::vector<std::size_t> ranks(calib.rows());
  parallel_for(calib.rows(), threads, [&](std::size_t b, unsigned) {
    const auto row = calib.row(b);
    std::size_t best = family.b_train();
    for (std::size_t k = 1; k <= K && best > 0; ++k) {
      const auto col = family.column(k);
      const auto below = static_cast<std::size_t>(std::lower_bound(col.begin(), col.end(), row[k - 1]) - col.begin());
      best = std::min(best, below);
    }
    ranks[b] = best;
  });

  std::vector<std::size_t> sorted = ranks;
  std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(k_alpha - 1), sorted.end());
  const std::size_t curve = sorted[k_alpha - 1];
  const double b_train = static_cast<double>(family.b_train());

  Template t = detail::make_template(TemplateKind::notip, alpha, std::vector<double>(K, 0.0));
  if (curve > 0)
    for (std::size_t k = 1; k <= K; ++k) t.thresholds[k - 1] = std::min(family.value(curve, k), kBelowOne);
  const double lambda = static_cast<double>(curve) / b_train;
  t.lambda_star = lambda;

  std::vector<double> pivots(ranks.size());
  std::transform(ranks.begin(), ranks.end(), pivots.begin(), [&](std::size_t r) { return static_cast<double>(r) / b_train; });
  return CalibrationResult{std::move(t), lambda, curve, std::move(pivots), k_alpha};
}

} // namespace posthoc

#endif
