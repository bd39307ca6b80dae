#ifndef POSTHOC_PHDAT_HPP
#define POSTHOC_PHDAT_HPP

// PHDAT v1 container, little-endian:
//   "PHD1" | u32 nx, ny, nz, n_subjects | f32 voxel_size[3] | f64 affine[16]
//   | u8 mask[nx*ny*nz] | f32 data[n_subjects][m]
// Trailing bytes are rejected.

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "posthoc/binary_io.hpp"
#include "posthoc/data_model.hpp"

namespace posthoc {

inline constexpr std::string_view kPhdatMagic = "PHD1";

inline std::vector<char> encode_phdat(const SubjectStack& stack) {
  const Grid3& grid = stack.mask().grid();
  detail::ByteWriter w;
  w.magic(kPhdatMagic);
  for (auto d : grid.dims()) w.put<std::uint32_t>(d);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(stack.n_subjects()));
  for (float s : grid.voxel_size()) w.put(s);
  for (double a : grid.affine()) w.put(a);
  w.put_all(stack.mask().inside());
  w.put_all(stack.data());
  return w.bytes();
}

inline SubjectStack decode_phdat(std::span<const char> bytes) {
  detail::ByteReader r(bytes);
  r.expect_magic(kPhdatMagic);
  std::array<std::uint32_t, 3> dims{};
  for (auto& d : dims) d = r.get<std::uint32_t>();
  const auto n_subjects = r.get<std::uint32_t>();
  std::array<float, 3> voxel_size{};
  for (auto& s : voxel_size) s = r.get<float>();
  Affine affine{};
  for (auto& a : affine) a = r.get<double>();

  const std::uint64_t voxels = std::uint64_t{dims[0]} * dims[1] * dims[2];
  if (voxels == 0) throw FormatError("grid has a zero dimension");
  if (voxels > r.remaining()) throw FormatError("truncated payload");
  auto inside = r.get_n<std::uint8_t>(static_cast<std::size_t>(voxels));
  for (auto v : inside)
    if (v > 1) throw FormatError("mask bytes must be 0 or 1");

  auto mask = std::make_shared<const Mask>(Grid3(dims, voxel_size, affine), std::move(inside));
  const std::uint64_t values = std::uint64_t{n_subjects} * mask->size();
  if (values > r.remaining() / sizeof(float)) throw FormatError("truncated payload");
  auto data = r.get_n<float>(static_cast<std::size_t>(values));
  r.expect_end();
  return SubjectStack(std::move(mask), n_subjects, std::move(data));
}

inline SubjectStack read_phdat(const std::filesystem::path& path) { return decode_phdat(detail::slurp(path)); }

inline void write_phdat(const SubjectStack& stack, const std::filesystem::path& path) {
  detail::spill(path, encode_phdat(stack));
}

} // namespace posthoc

#endif
