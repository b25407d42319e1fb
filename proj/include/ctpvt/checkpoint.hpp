#pragma once

// Binary weight container:
//   "PVTC19D1" | u32 count | count × { u32 name_len, name bytes (UTF-8),
//                                      u32 rank, rank × u32 extent,
//                                      numel × f32 payload }
// All integers and floats little-endian.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

#include "ctpvt/error.hpp"
#include "ctpvt/tensor.hpp"

namespace ctpvt {

inline constexpr std::string_view kCheckpointMagic = "PVTC19D1";

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                              static_cast<char>((v >> 16) & 0xff),
                              static_cast<char>((v >> 24) & 0xff)};
  os.write(b.data(), 4);
}

inline std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw format_error(std::string("checkpoint truncated while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace detail

inline void write_checkpoint(std::ostream& os, const std::vector<NamedTensor>& entries) {
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::put_u32(os, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    detail::put_u32(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::put_u32(os, static_cast<std::uint32_t>(tensor.rank()));
    for (std::size_t e : tensor.shape()) detail::put_u32(os, static_cast<std::uint32_t>(e));
    for (float v : tensor.data()) detail::put_u32(os, std::bit_cast<std::uint32_t>(v));
  }
  if (!os) throw io_error("failed writing checkpoint stream");
}

inline std::vector<NamedTensor> read_checkpoint(std::istream& is) {
  std::array<char, 8> magic{};
  if (!is.read(magic.data(), magic.size()) ||
      std::string_view(magic.data(), magic.size()) != kCheckpointMagic) {
    throw format_error("not a checkpoint: bad magic (expected PVTC19D1)");
  }
  const std::uint32_t count = detail::get_u32(is, "entry count");
  std::vector<NamedTensor> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t name_len = detail::get_u32(is, "name length");
    if (name_len > (1u << 16)) throw format_error("checkpoint name length implausible");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw format_error("checkpoint truncated in name");
    const std::uint32_t rank = detail::get_u32(is, "rank");
    if (rank == 0 || rank > 8) throw format_error("checkpoint entry '" + name + "' has bad rank");
    Shape shape(rank);
    for (auto& e : shape) {
      e = detail::get_u32(is, "extent");
      if (e == 0) throw format_error("checkpoint entry '" + name + "' has a zero extent");
    }
    std::vector<float> values(shape_numel(shape));
    for (auto& v : values) v = std::bit_cast<float>(detail::get_u32(is, "payload"));
    entries.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  return entries;
}

inline void save_checkpoint(const std::filesystem::path& path, const std::vector<NamedTensor>& entries) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw io_error("cannot open checkpoint for writing: " + path.string());
  write_checkpoint(os, entries);
}

inline std::vector<NamedTensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw io_error("cannot open checkpoint: " + path.string());
  return read_checkpoint(is);
}

}  // namespace ctpvt
