// SPDX-License-Identifier: Apache-2.0
//
// Little-endian byte codec shared by the binary file formats.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "xmf/errors.hpp"

namespace xmf::bytes {

template <std::size_t N>
using uint_of = std::conditional_t<
    N == 8, std::uint64_t,
    std::conditional_t<N == 4, std::uint32_t, std::conditional_t<N == 2, std::uint16_t, std::uint8_t>>>;

template <class T>
void put_le(std::vector<std::uint8_t>& out, T value) {
  const auto bits = std::bit_cast<uint_of<sizeof(T)>>(value);
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
}

/// Sequential reader; every short read throws FormatError with the offset.
class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  template <class T>
  T get(const char* what) {
    using U = uint_of<sizeof(T)>;
    need(sizeof(T), what);
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
      bits |= static_cast<U>(static_cast<U>(bytes_[pos_ + i]) << (8 * i));
    }
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - pos_ < n) {
      throw FormatError("truncated file at byte offset " + std::to_string(pos_) + " reading " +
                        what + " (need " + std::to_string(n) + " bytes, " +
                        std::to_string(bytes_.size() - pos_) + " left)");
    }
  }

  std::size_t pos() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> data);

}  // namespace xmf::bytes
