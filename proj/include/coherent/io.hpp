#pragma once

// Binary codecs: "SFM1" softmax maps and Middlebury .flo flow fields.
// Both are little-endian regardless of host byte order.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <string_view>

#include "coherent/core.hpp"

namespace coherent {

namespace io_detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFFu));
}
inline void put_f32(std::string& out, float f) { put_u32(out, std::bit_cast<std::uint32_t>(f)); }

inline std::uint32_t get_u32(std::string_view in, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  }
  return v;
}
inline float get_f32(std::string_view in, std::size_t pos) {
  return std::bit_cast<float>(get_u32(in, pos));
}

// Upper bound on decoded element counts; keeps a corrupt header from
// triggering a multi-gigabyte allocation before the truncation check.
inline constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 31;

}  // namespace io_detail

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

// Writes to a sibling temporary file and renames it into place.
inline void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  namespace fs = std::filesystem;
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw InputError("short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

// ---- SFM1 -----------------------------------------------------------------
// "SFM1", u32 H, u32 W, u32 C, then H*W*C f32 in (y, x, class) order.

inline std::string encode_sfm(const ScoreTensor<float>& scores) {
  std::string out;
  out.reserve(16 + scores.data().size() * 4);
  out.append("SFM1", 4);
  io_detail::put_u32(out, static_cast<std::uint32_t>(scores.height()));
  io_detail::put_u32(out, static_cast<std::uint32_t>(scores.width()));
  io_detail::put_u32(out, static_cast<std::uint32_t>(scores.classes()));
  for (float f : scores.data()) io_detail::put_f32(out, f);
  return out;
}

// Decodes without the probability checks (gradient files use this format too).
inline ScoreTensor<float> decode_score_tensor(std::string_view bytes) {
  if (bytes.size() < 16) throw FormatError("SFM1: truncated header");
  if (bytes.substr(0, 4) != "SFM1") throw FormatError("SFM1: bad magic");
  const std::uint64_t h = io_detail::get_u32(bytes, 4);
  const std::uint64_t w = io_detail::get_u32(bytes, 8);
  const std::uint64_t c = io_detail::get_u32(bytes, 12);
  if (h == 0 || w == 0 || c == 0) throw FormatError("SFM1: zero dimension");
  if (h > std::numeric_limits<int>::max() || w > std::numeric_limits<int>::max() ||
      c > std::numeric_limits<int>::max() || h * w > io_detail::kMaxElements ||
      h * w * c > io_detail::kMaxElements) {
    throw FormatError("SFM1: dimension overflow");
  }
  const std::uint64_t n = h * w * c;
  if (bytes.size() - 16 < n * 4) throw FormatError("SFM1: truncated payload");
  if (bytes.size() - 16 > n * 4) throw FormatError("SFM1: trailing bytes after payload");
  std::vector<float> data(n);
  for (std::uint64_t i = 0; i < n; ++i) data[i] = io_detail::get_f32(bytes, 16 + 4 * i);
  return ScoreTensor<float>(static_cast<int>(h), static_cast<int>(w), static_cast<int>(c),
                            std::move(data));
}

inline SoftmaxMap<float> decode_sfm(std::string_view bytes) {
  try {
    return SoftmaxMap<float>(decode_score_tensor(bytes));
  } catch (const InvariantError& e) {
    throw FormatError(std::string("SFM1: ") + e.what());
  }
}

inline SoftmaxMap<float> read_sfm(const std::filesystem::path& path) {
  return decode_sfm(read_file(path));
}
inline ScoreTensor<float> read_score_tensor(const std::filesystem::path& path) {
  return decode_score_tensor(read_file(path));
}
inline void write_sfm(const std::filesystem::path& path, const SoftmaxMap<float>& map) {
  atomic_write(path, encode_sfm(map.scores()));
}
inline void write_score_tensor(const std::filesystem::path& path, const ScoreTensor<float>& t) {
  atomic_write(path, encode_sfm(t));
}

// ---- Middlebury .flo ------------------------------------------------------
// f32 202021.25, i32 W, i32 H, then interleaved (u, v) f32 row-major.

inline constexpr float kFloMagic = 202021.25f;

inline std::string encode_flo(const FlowField& flow) {
  std::string out;
  out.reserve(12 + flow.offsets().size() * 4);
  io_detail::put_f32(out, kFloMagic);
  io_detail::put_u32(out, static_cast<std::uint32_t>(flow.width()));
  io_detail::put_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (float f : flow.offsets()) io_detail::put_f32(out, f);
  return out;
}

inline FlowField decode_flo(std::string_view bytes) {
  if (bytes.size() < 12) throw FormatError("flo: truncated header");
  if (io_detail::get_u32(bytes, 0) != std::bit_cast<std::uint32_t>(kFloMagic)) {
    throw FormatError("flo: bad magic");
  }
  const auto w = static_cast<std::int32_t>(io_detail::get_u32(bytes, 4));
  const auto h = static_cast<std::int32_t>(io_detail::get_u32(bytes, 8));
  if (w <= 0 || h <= 0) throw FormatError("flo: non-positive dimension");
  const std::uint64_t n = 2 * static_cast<std::uint64_t>(w) * static_cast<std::uint64_t>(h);
  if (n > io_detail::kMaxElements) throw FormatError("flo: dimension overflow");
  if (bytes.size() - 12 < n * 4) throw FormatError("flo: truncated payload");
  if (bytes.size() - 12 > n * 4) throw FormatError("flo: trailing bytes after payload");
  std::vector<float> offsets(n);
  for (std::uint64_t i = 0; i < n; ++i) offsets[i] = io_detail::get_f32(bytes, 12 + 4 * i);
  try {
    return FlowField(h, w, std::move(offsets));
  } catch (const InvariantError& e) {
    throw FormatError(std::string("flo: ") + e.what());
  }
}

inline FlowField read_flo(const std::filesystem::path& path) { return decode_flo(read_file(path)); }
inline void write_flo(const std::filesystem::path& path, const FlowField& flow) {
  atomic_write(path, encode_flo(flow));
}

}  // namespace coherent
