#ifndef POSTHOC_DATA_MODEL_HPP
#define POSTHOC_DATA_MODEL_HPP

// Core value types: voxel grid geometry, brain mask, the masked subject stack
// and the per-voxel statistic / p-value vectors. Masked vectors (length m,
// x-fastest order) are the canonical representation; 3D only shows up at I/O
// and cluster-labelling boundaries.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "posthoc/error.hpp"

namespace posthoc {

using Vec3 = std::array<double, 3>;
using Affine = std::array<double, 16>; // row-major 4x4

class Grid3 {
public:
  Grid3(std::array<std::uint32_t, 3> dims, std::array<float, 3> voxel_size, const Affine& affine)
      : dims_(dims), voxel_size_(voxel_size), affine_(affine) {
    for (auto d : dims_)
      if (d == 0) throw DataError("grid dimensions must be positive");
    for (auto s : voxel_size_)
      if (!(s > 0.0f) || !std::isfinite(s)) throw DataError("voxel sizes must be positive and finite");
    for (double a : affine_)
      if (!std::isfinite(a)) throw DataError("affine contains non-finite entries");
    if (affine_[12] != 0.0 || affine_[13] != 0.0 || affine_[14] != 0.0 || affine_[15] != 1.0)
      throw DataError("affine last row must be (0,0,0,1)");
  }

  /// Grid whose affine is diag(voxel size) plus the given origin translation.
  static Grid3 scaled(std::array<std::uint32_t, 3> dims, float voxel_mm, Vec3 origin = {0, 0, 0}) {
    const double s = voxel_mm;
    return Grid3(dims, {voxel_mm, voxel_mm, voxel_mm},
                 Affine{s, 0, 0, origin[0], 0, s, 0, origin[1], 0, 0, s, origin[2], 0, 0, 0, 1});
  }

  const std::array<std::uint32_t, 3>& dims() const noexcept { return dims_; }
  const std::array<float, 3>& voxel_size() const noexcept { return voxel_size_; }
  const Affine& affine() const noexcept { return affine_; }

  std::size_t voxel_count() const noexcept {
    return std::size_t{dims_[0]} * dims_[1] * dims_[2];
  }

  /// mm^3 per voxel.
  double voxel_volume() const noexcept {
    return static_cast<double>(voxel_size_[0]) * voxel_size_[1] * voxel_size_[2];
  }

  /// x-fastest flattening: ix + nx * (iy + ny * iz).
  std::size_t flat_index(std::uint32_t ix, std::uint32_t iy, std::uint32_t iz) const noexcept {
    return ix + std::size_t{dims_[0]} * (iy + std::size_t{dims_[1]} * iz);
  }

  std::array<std::uint32_t, 3> coords(std::size_t flat) const noexcept {
    const auto nx = dims_[0], ny = dims_[1];
    return {static_cast<std::uint32_t>(flat % nx), static_cast<std::uint32_t>((flat / nx) % ny),
            static_cast<std::uint32_t>(flat / (std::size_t{nx} * ny))};
  }

  Vec3 to_world(const Vec3& ijk) const noexcept {
    const auto& a = affine_;
    return {a[0] * ijk[0] + a[1] * ijk[1] + a[2] * ijk[2] + a[3],
            a[4] * ijk[0] + a[5] * ijk[1] + a[6] * ijk[2] + a[7],
            a[8] * ijk[0] + a[9] * ijk[1] + a[10] * ijk[2] + a[11]};
  }

  /// Continuous voxel coordinates of a world point. Throws DataError for a singular affine.
  Vec3 to_voxel(const Vec3& xyz) const {
    const auto& a = affine_;
    const double c00 = a[5] * a[10] - a[6] * a[9];
    const double c01 = a[6] * a[8] - a[4] * a[10];
    const double c02 = a[4] * a[9] - a[5] * a[8];
    const double det = a[0] * c00 + a[1] * c01 + a[2] * c02;
    if (det == 0.0 || !std::isfinite(det)) throw DataError("affine is singular");
    const double inv[9] = {c00 / det,
                           (a[2] * a[9] - a[1] * a[10]) / det,
                           (a[1] * a[6] - a[2] * a[5]) / det,
                           c01 / det,
                           (a[0] * a[10] - a[2] * a[8]) / det,
                           (a[2] * a[4] - a[0] * a[6]) / det,
                           c02 / det,
                           (a[1] * a[8] - a[0] * a[9]) / det,
                           (a[0] * a[5] - a[1] * a[4]) / det};
    const Vec3 d{xyz[0] - a[3], xyz[1] - a[7], xyz[2] - a[11]};
    return {inv[0] * d[0] + inv[1] * d[1] + inv[2] * d[2], inv[3] * d[0] + inv[4] * d[1] + inv[5] * d[2],
            inv[6] * d[0] + inv[7] * d[1] + inv[8] * d[2]};
  }

  friend bool operator==(const Grid3&, const Grid3&) = default;

private:
  std::array<std::uint32_t, 3> dims_;
  std::array<float, 3> voxel_size_;
  Affine affine_;
};

/// Set of in-brain voxels. Masked index i <-> flat grid index is a bijection.
class Mask {
public:
  static constexpr std::int64_t outside = -1;

  Mask(Grid3 grid, std::vector<std::uint8_t> inside) : grid_(std::move(grid)), inside_(std::move(inside)) {
    if (inside_.size() != grid_.voxel_count()) throw DataError("mask length does not match the grid");
    flat_to_masked_.assign(inside_.size(), outside);
    for (std::size_t f = 0; f < inside_.size(); ++f) {
      if (inside_[f] > 1) throw DataError("mask entries must be 0 or 1");
      if (inside_[f]) {
        flat_to_masked_[f] = static_cast<std::int64_t>(masked_to_flat_.size());
        masked_to_flat_.push_back(f);
      }
    }
    if (masked_to_flat_.empty()) throw MaskError("mask selects no voxel");
  }

  static Mask full(Grid3 grid) {
    std::vector<std::uint8_t> inside(grid.voxel_count(), 1);
    return Mask(std::move(grid), std::move(inside));
  }

  const Grid3& grid() const noexcept { return grid_; }
  std::size_t size() const noexcept { return masked_to_flat_.size(); }
  std::span<const std::uint8_t> inside() const noexcept { return inside_; }

  std::size_t flat_index(std::size_t masked) const {
    if (masked >= masked_to_flat_.size()) throw IndexError("masked voxel index out of range");
    return masked_to_flat_[masked];
  }

  /// Masked index of a flat grid index, or Mask::outside.
  std::int64_t masked_index(std::size_t flat) const noexcept {
    return flat < flat_to_masked_.size() ? flat_to_masked_[flat] : outside;
  }

  std::array<std::uint32_t, 3> coords(std::size_t masked) const { return grid_.coords(flat_index(masked)); }

  friend bool operator==(const Mask& a, const Mask& b) { return a.grid_ == b.grid_ && a.inside_ == b.inside_; }

private:
  Grid3 grid_;
  std::vector<std::uint8_t> inside_;
  std::vector<std::size_t> masked_to_flat_;
  std::vector<std::int64_t> flat_to_masked_;
};

using MaskPtr = std::shared_ptr<const Mask>;

/// World (mm) coordinates of a masked voxel.
inline Vec3 voxel_to_world(const Mask& mask, std::size_t masked_index) {
  const auto c = mask.coords(masked_index);
  return mask.grid().to_world({double(c[0]), double(c[1]), double(c[2])});
}

/// n_subjects rows of m masked values each (f32, as stored on disk).
class SubjectStack {
public:
  SubjectStack(MaskPtr mask, std::size_t n_subjects, std::vector<float> data)
      : mask_(std::move(mask)), n_subjects_(n_subjects), data_(std::move(data)) {
    if (!mask_) throw DataError("subject stack requires a mask");
    if (n_subjects_ == 0) throw DataError("subject stack needs at least one subject");
    if (data_.size() != n_subjects_ * mask_->size()) throw DataError("subject data size mismatch");
    for (float v : data_)
      if (!std::isfinite(v)) throw DataError("subject data contains non-finite values");
  }

  const Mask& mask() const noexcept { return *mask_; }
  const MaskPtr& mask_ptr() const noexcept { return mask_; }
  std::size_t n_subjects() const noexcept { return n_subjects_; }
  std::size_t m() const noexcept { return mask_->size(); }
  std::span<const float> data() const noexcept { return data_; }

  std::span<const float> subject(std::size_t i) const {
    if (i >= n_subjects_) throw IndexError("subject index out of range");
    return std::span<const float>(data_).subspan(i * m(), m());
  }

  friend bool operator==(const SubjectStack& a, const SubjectStack& b) {
    return *a.mask_ == *b.mask_ && a.n_subjects_ == b.n_subjects_ && a.data_ == b.data_;
  }

private:
  MaskPtr mask_;
  std::size_t n_subjects_;
  std::vector<float> data_;
};

/// Per-voxel Z scores over the mask.
struct StatMap {
  MaskPtr mask;
  std::vector<double> z;

  StatMap(MaskPtr mask_, std::vector<double> z_) : mask(std::move(mask_)), z(std::move(z_)) {
    if (!mask || z.size() != mask->size()) throw DataError("stat map length does not match the mask");
    for (double v : z)
      if (!std::isfinite(v)) throw DataError("stat map contains non-finite values");
  }
  std::size_t m() const noexcept { return z.size(); }
};

/// Per-voxel p-values in [0, 1]. The mask may be null for bare vectors.
struct PValueVector {
  MaskPtr mask;
  std::vector<double> p;

  explicit PValueVector(std::vector<double> p_, MaskPtr mask_ = nullptr)
      : mask(std::move(mask_)), p(std::move(p_)) {
    if (mask && p.size() != mask->size()) throw DataError("p-value vector length does not match the mask");
    for (double v : p)
      if (!(v >= 0.0 && v <= 1.0)) throw DataError("p-values must lie in [0, 1]");
  }
  std::size_t m() const noexcept { return p.size(); }
  std::span<const double> values() const noexcept { return p; }
};

} // namespace posthoc

#endif
