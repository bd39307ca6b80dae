#ifndef POSTHOC_STATS_HPP
#define POSTHOC_STATS_HPP

// One-sample group statistics under sign flipping and the null p-value matrix
// used by every calibrated template.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "posthoc/binary_io.hpp"
#include "posthoc/data_model.hpp"
#include "posthoc/distributions.hpp"
#include "posthoc/parallel.hpp"
#include "posthoc/philox.hpp"

namespace posthoc {

/// |Z| reported for zero-variance voxels; beyond double-precision Gaussian tail resolution.
inline constexpr double kZCap = 38.0;
/// Smallest p-value ever emitted.
inline constexpr double kPMin = 1e-300;

enum class Sidedness { two_sided, one_sided };

inline std::string to_string(Sidedness s) { return s == Sidedness::two_sided ? "two-sided" : "one-sided"; }

inline Sidedness sidedness_from_string(const std::string& s) {
  if (s == "two-sided") return Sidedness::two_sided;
  if (s == "one-sided") return Sidedness::one_sided;
  throw ParamError("unknown sidedness '" + s + "'");
}

using Flips = std::vector<std::int8_t>;

inline Flips identity_flips(std::size_t n) { return Flips(n, 1); }

/// Uniform +-1 assignment for row `row`, a pure function of (seed, row).
inline Flips random_flips(std::size_t n, std::uint64_t seed, std::uint32_t row) {
  Flips flips(n);
  const auto key = Philox4x32::key_from_seed(seed);
  for (std::size_t block = 0; block * 128 < n; ++block) {
    const auto bits = Philox4x32::block(
        {row, static_cast<std::uint32_t>(block), static_cast<std::uint32_t>(StreamTag::sign_flip), 0u}, key);
    for (std::size_t i = block * 128; i < std::min(n, (block + 1) * 128); ++i) {
      const std::size_t bit = i - block * 128;
      flips[i] = (bits[bit / 32] >> (bit % 32)) & 1u ? std::int8_t{1} : std::int8_t{-1};
    }
  }
  return flips;
}

namespace detail {

/// Per-voxel one-sample t statistics of sign-flipped data.
///
/// The sum of squares is flip-invariant and precomputed, so each flip costs one
/// multiply-add per (subject, voxel). Zero variance is decided exactly from the
/// data rather than from the rounded variance formula: t is +-inf then (0 when
/// every value is 0).
class FlipKernel {
public:
  explicit FlipKernel(const SubjectStack& stack)
      : stack_(stack), n_(stack.n_subjects()), m_(stack.m()), sumsq_(m_, 0.0), constant_abs_(m_, 1) {
    if (n_ < 2) throw ParamError("sign flipping needs at least two subjects");
    for (std::size_t i = 0; i < n_; ++i) {
      const auto row = stack.subject(i);
      const auto first = stack.subject(0);
      for (std::size_t v = 0; v < m_; ++v) {
        const double x = row[v];
        sumsq_[v] += x * x;
        if (std::fabs(row[v]) != std::fabs(first[v])) constant_abs_[v] = 0;
      }
    }
  }

  std::size_t n() const noexcept { return n_; }
  std::size_t m() const noexcept { return m_; }

  void t_statistics(std::span<const std::int8_t> flips, std::span<double> t) const {
    if (flips.size() != n_) throw ParamError("flip vector length must equal the number of subjects");
    std::fill(t.begin(), t.end(), 0.0);
    for (std::size_t i = 0; i < n_; ++i) {
      const double f = flips[i];
      if (f != 1.0 && f != -1.0) throw ParamError("flips must be +1 or -1");
      const auto row = stack_.subject(i);
      for (std::size_t v = 0; v < m_; ++v) t[v] += f * static_cast<double>(row[v]);
    }
    const double n = static_cast<double>(n_);
    for (std::size_t v = 0; v < m_; ++v) {
      const double sum = t[v];
      if (constant_abs_[v] && zero_variance(flips, v)) {
        t[v] = sum == 0.0 ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), sum);
        continue;
      }
      double var = (sumsq_[v] - sum * sum / n) / (n - 1.0);
      if (!(var > 0.0)) var = two_pass_variance(flips, v);
      const double mean = sum / n;
      t[v] = mean / std::sqrt(var / n);
    }
  }

private:
  bool zero_variance(std::span<const std::int8_t> flips, std::size_t v) const {
    const double first = flips[0] * static_cast<double>(stack_.subject(0)[v]);
    for (std::size_t i = 1; i < n_; ++i)
      if (flips[i] * static_cast<double>(stack_.subject(i)[v]) != first) return false;
    return true;
  }

  double two_pass_variance(std::span<const std::int8_t> flips, std::size_t v) const {
    double mean = 0.0;
    for (std::size_t i = 0; i < n_; ++i) mean += flips[i] * static_cast<double>(stack_.subject(i)[v]);
    mean /= static_cast<double>(n_);
    double ss = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      const double d = flips[i] * static_cast<double>(stack_.subject(i)[v]) - mean;
      ss += d * d;
    }
    return std::max(ss / static_cast<double>(n_ - 1), std::numeric_limits<double>::denorm_min());
  }

  const SubjectStack& stack_;
  std::size_t n_, m_;
  std::vector<double> sumsq_;
  std::vector<std::uint8_t> constant_abs_;
};

/// Two-sided tail of a t statistic, infinite t mapping to 0.
inline double tail_of(const StudentTail& tail, double t) { return std::isinf(t) ? 0.0 : tail(t); }

inline double p_from_t(const StudentTail& tail, double t, Sidedness side) {
  const double two = tail_of(tail, t);
  double p = two;
  if (side == Sidedness::one_sided) p = t > 0.0 ? 0.5 * two : (t < 0.0 ? 1.0 - 0.5 * two : 0.5);
  return std::clamp(p, kPMin, 1.0);
}

inline double z_from_t(const StudentTail& tail, double t) {
  if (t == 0.0) return 0.0;
  const double two = tail_of(tail, t);
  const double mag = two < std::numeric_limits<double>::min() ? kZCap
                                                              : std::min(kZCap, normal_two_sided_quantile(two));
  return std::copysign(mag, t);
}

} // namespace detail

/// Z map of the sign-flipped one-sample t test: Z = Phi^-1(F_t(t)), df = n - 1.
inline StatMap one_sample_z(const SubjectStack& stack, std::span<const std::int8_t> flips) {
  const detail::FlipKernel kernel(stack);
  std::vector<double> t(kernel.m());
  kernel.t_statistics(flips, t);
  const StudentTail tail(static_cast<std::uint32_t>(kernel.n() - 1));
  for (double& v : t) v = detail::z_from_t(tail, v);
  return StatMap(stack.mask_ptr(), std::move(t));
}

/// Two-sided p = 2(1 - Phi(|z|)), one-sided p = 1 - Phi(z); clamped to [kPMin, 1].
inline PValueVector p_from_z(const StatMap& zmap, Sidedness side) {
  std::vector<double> p(zmap.m());
  for (std::size_t v = 0; v < p.size(); ++v) {
    const double z = zmap.z[v];
    const double raw = side == Sidedness::two_sided ? std::erfc(std::fabs(z) / std::numbers::sqrt2)
                                                    : normal_upper_tail(z);
    p[v] = std::clamp(raw, kPMin, 1.0);
  }
  return PValueVector(std::move(p), zmap.mask);
}

/// p-values straight from the t statistics. Equal to p_from_z(one_sample_z(...))
/// up to the rounding of the Phi(Phi^-1(.)) round trip; this is the route every
/// null row takes, so the observed vector is bit-identical to row 0 of the null.
inline PValueVector one_sample_p(const SubjectStack& stack, std::span<const std::int8_t> flips, Sidedness side) {
  const detail::FlipKernel kernel(stack);
  std::vector<double> t(kernel.m());
  kernel.t_statistics(flips, t);
  const StudentTail tail(static_cast<std::uint32_t>(kernel.n() - 1));
  for (double& v : t) v = detail::p_from_t(tail, v, side);
  return PValueVector(std::move(t), stack.mask_ptr());
}

/// Non-owning view of sorted null rows; calibration routines consume this.
class NullRows {
public:
  NullRows(std::span<const double> data, std::size_t rows, std::size_t width, std::size_t m)
      : data_(data), rows_(rows), width_(width), m_(m) {
    if (data_.size() != rows_ * width_) throw ParamError("null rows: data size mismatch");
    if (width_ > m_) throw ParamError("null rows: width exceeds m");
  }

  std::size_t rows() const noexcept { return rows_; }
  /// Stored columns per row (the smallest `width` sorted p-values).
  std::size_t width() const noexcept { return width_; }
  std::size_t m() const noexcept { return m_; }
  std::span<const double> row(std::size_t b) const { return data_.subspan(b * width_, width_); }
  NullRows head(std::size_t rows) const {
    if (rows > rows_) throw ParamError("null rows: head larger than the matrix");
    return NullRows(data_.first(rows * width_), rows, width_, m_);
  }

private:
  std::span<const double> data_;
  std::size_t rows_, width_, m_;
};

/// B rows of sorted p-values under sign flipping; row 0 is the identity assignment.
struct NullPValueMatrix {
  std::size_t B = 0;
  std::size_t m = 0;
  std::size_t width = 0;
  std::uint64_t seed = 0;
  Sidedness sidedness = Sidedness::two_sided;
  std::vector<double> values; // B x width, row-major

  std::span<const double> row(std::size_t b) const { return std::span<const double>(values).subspan(b * width, width); }
  NullRows view() const { return NullRows(values, B, width, m); }
  operator NullRows() const { return view(); }
};

struct NullOptions {
  Sidedness sidedness = Sidedness::two_sided;
  /// Keep only the smallest `width` p-values of each row (0 = all m).
  std::size_t width = 0;
  /// Row 0 is the observed (identity) assignment; off gives B random rows.
  bool identity_first = true;
  unsigned threads = default_threads();
};

/// Sign-flipping null matrix. Row b >= 1 uses flips keyed by (seed, b), so the
/// result is independent of thread count and two calls with the same seed agree
/// on their common row prefix.
inline NullPValueMatrix sign_flip_null(const SubjectStack& stack, std::size_t B, std::uint64_t seed,
                                       const NullOptions& options = {}) {
  if (B < 2) throw ParamError("sign_flip_null needs B >= 2");
  if (B > std::numeric_limits<std::uint32_t>::max()) throw ParamError("B too large");
  const detail::FlipKernel kernel(stack);
  const std::size_t m = kernel.m();
  const std::size_t width = options.width == 0 ? m : options.width;
  if (width > m) throw ParamError("null width exceeds the number of voxels");
  // Selecting by t before converting is exact because p is monotone in t; the
  // margin absorbs any ulp-level non-monotonicity of the tail evaluation.
  const std::size_t keep = std::min(m, width + 64);
  const StudentTail tail(static_cast<std::uint32_t>(kernel.n() - 1));
  const Sidedness side = options.sidedness;

  NullPValueMatrix out{B, m, width, seed, side, std::vector<double>(B * width)};
  const unsigned threads = std::max(1u, options.threads);
  std::vector<std::vector<double>> scratch(threads, std::vector<double>(m));
  std::vector<std::vector<double>> pbuf(threads, std::vector<double>(keep));

  parallel_for(B, threads, [&](std::size_t b, unsigned worker) {
    auto& t = scratch[worker];
    auto& p = pbuf[worker];
    const Flips flips = b == 0 && options.identity_first ? identity_flips(kernel.n())
                               : random_flips(kernel.n(), seed, static_cast<std::uint32_t>(b));
    kernel.t_statistics(flips, t);
    if (keep < m) {
      // most significant first
      if (side == Sidedness::two_sided)
        std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(keep), t.end(),
                         [](double x, double y) { return std::fabs(x) > std::fabs(y); });
      else
        std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(keep), t.end(), std::greater<>());
    }
    for (std::size_t v = 0; v < keep; ++v) p[v] = detail::p_from_t(tail, t[v], side);
    std::sort(p.begin(), p.end());
    std::copy_n(p.begin(), width, out.values.begin() + static_cast<std::ptrdiff_t>(b * width));
  });
  return out;
}

// PNUL1 cache: "PNUL1" | u32 B | u32 m | u64 seed | f64 rows[B][m] (sorted). Full-width matrices only.
inline constexpr std::string_view kPnulMagic = "PNUL1";

inline std::vector<char> encode_pnul(const NullPValueMatrix& null) {
  if (null.width != null.m) throw ParamError("only full-width null matrices can be cached");
  detail::ByteWriter w;
  w.magic(kPnulMagic);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(null.B));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(null.m));
  w.put<std::uint64_t>(null.seed);
  w.put_all<double>(null.values);
  return w.bytes();
}

/// The container does not record sidedness; the caller supplies it.
inline NullPValueMatrix decode_pnul(std::span<const char> bytes, Sidedness side = Sidedness::two_sided) {
  detail::ByteReader r(bytes);
  r.expect_magic(kPnulMagic);
  NullPValueMatrix null;
  null.B = r.get<std::uint32_t>();
  null.m = null.width = r.get<std::uint32_t>();
  null.seed = r.get<std::uint64_t>();
  null.sidedness = side;
  if (null.m == 0 || null.B == 0) throw FormatError("null matrix has an empty dimension");
  null.values = r.get_n<double>(null.B * null.m);
  r.expect_end();
  for (std::size_t b = 0; b < null.B; ++b) {
    const auto row = null.row(b);
    for (std::size_t k = 0; k < row.size(); ++k) {
      if (!(row[k] >= 0.0 && row[k] <= 1.0)) throw DataError("null p-value outside [0, 1]");
      if (k > 0 && row[k] < row[k - 1]) throw DataError("null row is not sorted");
    }
  }
  return null;
}

inline void write_pnul(const NullPValueMatrix& null, const std::filesystem::path& path) {
  detail::spill(path, encode_pnul(null));
}

inline NullPValueMatrix read_pnul(const std::filesystem::path& path, Sidedness side = Sidedness::two_sided) {
  return decode_pnul(detail::slurp(path), side);
}

} // namespace posthoc

#endif
