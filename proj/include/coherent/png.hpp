#pragma once

// PNG ingest/egest for label maps, masks and images (libpng).
//
// Labels: 8- or 16-bit grayscale only, stored verbatim.
// Masks:  8-bit grayscale, written as 0/255, read as (value != 0).
// Images: any non-palette or palette PNG, alpha dropped, normalized by the
//         bit-depth maximum; written as 8-bit gray or RGB.

#include <png.h>

#include <cmath>
#include <csetjmp>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "coherent/core.hpp"
#include "coherent/io.hpp"

namespace coherent {

namespace png_detail {

struct Raster {
  int height = 0;
  int width = 0;
  int channels = 0;
  int bit_depth = 0;
  std::vector<unsigned char> bytes;  // big-endian samples when bit_depth == 16
};

struct ReadCursor {
  std::string_view data;
  std::size_t pos = 0;
};

inline void read_callback(png_structp png, png_bytep out, png_size_t n) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->data.size() - cur->pos < n) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, cur->data.data() + cur->pos, n);
  cur->pos += n;
}

inline void write_callback(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<std::string*>(png_get_io_ptr(png));
  out->append(reinterpret_cast<const char*>(in), n);
}

inline void flush_callback(png_structp) {}

enum class Mode { kLabels, kImage };

// libpng reports errors via longjmp, so every object with a destructor that is
// touched after setjmp is owned by the caller.
inline void decode_into(std::string_view data, Mode mode, Raster& out,
                        std::vector<png_bytep>& rows, std::string& error) {
  if (data.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(data.data()), 0, 8) != 0) {
    error = "not a PNG file";
    return;
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    error = "libpng initialisation failed";
    return;
  }
  ReadCursor cursor{data, 0};
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    error = "corrupt PNG";
    return;
  }
  png_set_read_fn(png, &cursor, read_callback);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);

  if (mode == Mode::kLabels) {
    if (color == PNG_COLOR_TYPE_PALETTE) {
      png_destroy_read_struct(&png, &info, nullptr);
      error = "palette PNGs are not supported for labels";
      return;
    }
    if (color != PNG_COLOR_TYPE_GRAY) {
      png_destroy_read_struct(&png, &info, nullptr);
      error = "label PNG must be single-channel grayscale";
      return;
    }
    if (depth != 8 && depth != 16) {
      png_destroy_read_struct(&png, &info, nullptr);
      error = "unsupported label bit depth " + std::to_string(depth);
      return;
    }
  } else {
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  }
  png_set_interlace_handling(png);
  png_read_update_info(png, info);

  out.height = static_cast<int>(png_get_image_height(png, info));
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  out.bytes.resize(rowbytes * static_cast<std::size_t>(out.height));
  rows.resize(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y) rows[y] = out.bytes.data() + rowbytes * y;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
}

inline Raster decode(std::string_view data, Mode mode) {
  Raster r;
  std::vector<png_bytep> rows;
  std::string error;
  decode_into(data, mode, r, rows, error);
  if (!error.empty()) throw FormatError("PNG: " + error);
  return r;
}

// 8- or 16-bit rows given as a flat big-endian sample buffer.
inline void encode_into(const Raster& in, std::string& out, std::vector<png_bytep>& rows,
                        std::string& error) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    error = "libpng initialisation failed";
    return;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    error = "PNG encoding failed";
    return;
  }
  png_set_write_fn(png, &out, write_callback, flush_callback);
  png_set_IHDR(png, info, static_cast<png_uint_32>(in.width), static_cast<png_uint_32>(in.height),
               in.bit_depth, in.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes =
      static_cast<std::size_t>(in.width) * in.channels * (in.bit_depth / 8);
  rows.resize(static_cast<std::size_t>(in.height));
  for (int y = 0; y < in.height; ++y) {
    rows[y] = const_cast<png_bytep>(in.bytes.data() + rowbytes * y);
  }
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

inline std::string encode(const Raster& r) {
  std::string out;
  std::vector<png_bytep> rows;
  std::string error;
  encode_into(r, out, rows, error);
  if (!error.empty()) throw FormatError("PNG: " + error);
  return out;
}

}  // namespace png_detail

// ---- labels ---------------------------------------------------------------

inline LabelMap decode_label_png(std::string_view data) {
  const auto r = png_detail::decode(data, png_detail::Mode::kLabels);
  std::vector<LabelMap::Label> labels(static_cast<std::size_t>(r.height) * r.width);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    labels[i] = r.bit_depth == 16 ? (LabelMap::Label{r.bytes[2 * i]} << 8) | r.bytes[2 * i + 1]
                                  : LabelMap::Label{r.bytes[i]};
  }
  return LabelMap(r.height, r.width, std::move(labels));
}

// bit_depth must be 8 or 16; throws RangeError when a label does not fit.
inline std::string encode_label_png(const LabelMap& labels, int bit_depth = 8) {
  if (bit_depth != 8 && bit_depth != 16) {
    throw FormatError("PNG: unsupported label bit depth " + std::to_string(bit_depth));
  }
  const LabelMap::Label limit = bit_depth == 8 ? 0xFFu : 0xFFFFu;
  if (labels.max_label() > limit) {
    throw RangeError("PNG: label " + std::to_string(labels.max_label()) + " does not fit in " +
                     std::to_string(bit_depth) + " bits");
  }
  png_detail::Raster r{labels.height(), labels.width(), 1, bit_depth, {}};
  r.bytes.reserve(labels.pixels() * (bit_depth / 8));
  for (auto l : labels.labels()) {
    if (bit_depth == 16) r.bytes.push_back(static_cast<unsigned char>(l >> 8));
    r.bytes.push_back(static_cast<unsigned char>(l & 0xFFu));
  }
  return png_detail::encode(r);
}

inline LabelMap read_label_png(const std::filesystem::path& path) {
  return decode_label_png(read_file(path));
}
inline void write_label_png(const std::filesystem::path& path, const LabelMap& labels,
                            int bit_depth = 8) {
  atomic_write(path, encode_label_png(labels, bit_depth));
}

// ---- masks ----------------------------------------------------------------

inline BinaryMask read_mask_png(const std::filesystem::path& path) {
  const LabelMap raw = read_label_png(path);
  std::vector<std::uint8_t> bits(raw.pixels());
  for (std::size_t i = 0; i < bits.size(); ++i) bits[i] = raw[i] != 0 ? 1 : 0;
  return BinaryMask(raw.height(), raw.width(), std::move(bits));
}
inline void write_mask_png(const std::filesystem::path& path, const BinaryMask& mask) {
  std::vector<LabelMap::Label> v(mask.pixels());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = mask[i] ? 255u : 0u;
  write_label_png(path, LabelMap(mask.height(), mask.width(), std::move(v)), 8);
}

// ---- images ---------------------------------------------------------------

inline Image decode_image_png(std::string_view data) {
  const auto r = png_detail::decode(data, png_detail::Mode::kImage);
  if (r.channels != 1 && r.channels != 3) throw FormatError("PNG: unexpected channel count");
  const std::size_t n = static_cast<std::size_t>(r.height) * r.width * r.channels;
  std::vector<float> samples(n);
  for (std::size_t i = 0; i < n; ++i) {
    samples[i] = r.bit_depth == 16
                     ? static_cast<float>(((r.bytes[2 * i] << 8) | r.bytes[2 * i + 1]) / 65535.0)
                     : static_cast<float>(r.bytes[i] / 255.0);
  }
  return Image(r.height, r.width, r.channels, std::move(samples));
}

inline std::string encode_image_png(const Image& image) {
  png_detail::Raster r{image.height(), image.width(), image.channels(), 8, {}};
  r.bytes.reserve(image.samples().size());
  for (float s : image.samples()) {
    r.bytes.push_back(static_cast<unsigned char>(std::lround(s * 255.0f)));
  }
  return png_detail::encode(r);
}

inline Image read_image_png(const std::filesystem::path& path) {
  return decode_image_png(read_file(path));
}
inline void write_image_png(const std::filesystem::path& path, const Image& image) {
  atomic_write(path, encode_image_png(image));
}

}  // namespace coherent
