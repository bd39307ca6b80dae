#ifndef POSTHOC_BINARY_IO_HPP
#define POSTHOC_BINARY_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

#include "posthoc/error.hpp"

namespace posthoc::detail {

template <typename T>
concept Scalar = std::is_arithmetic_v<T>;

/// Appends little-endian scalars to a byte buffer.
class ByteWriter {
public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

  template <Scalar T>
  void put(T value) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bytes_.push_back(static_cast<char>(bits & 0xFF));
      if constexpr (sizeof(T) > 1) bits >>= 8;
    }
  }

  template <Scalar T>
  void put_all(std::span<const T> values) {
    bytes_.reserve(bytes_.size() + values.size() * sizeof(T));
    for (T v : values) put(v);
  }

  const std::vector<char>& bytes() const noexcept { return bytes_; }

private:
  std::vector<char> bytes_;
};

/// Reads little-endian scalars; every short read is a FormatError.
class ByteReader {
public:
  explicit ByteReader(std::span<const char> bytes) : bytes_(bytes) {}

  void expect_magic(std::string_view tag) {
    need(tag.size());
    if (std::string_view(bytes_.data() + pos_, tag.size()) != tag)
      throw FormatError("bad magic: expected \"" + std::string(tag) + "\"");
    pos_ += tag.size();
  }

  template <Scalar T>
  T get() {
    need(sizeof(T));
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bits |= static_cast<U>(static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i));
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  template <Scalar T>
  std::vector<T> get_n(std::size_t count) {
    if (count > remaining() / sizeof(T)) throw FormatError("truncated payload");
    std::vector<T> out(count);
    for (auto& v : out) v = get<T>();
    return out;
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

  void expect_end() const {
    if (remaining() != 0) throw FormatError("trailing bytes after payload");
  }

private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("truncated payload");
  }

  std::span<const char> bytes_;
  std::size_t pos_ = 0;
};

inline std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spill(const std::filesystem::path& path, std::span<const char> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

} // namespace posthoc::detail

#endif
