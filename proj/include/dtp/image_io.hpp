#pragma once

// PFM and PNG codecs for stereo data: float disparity maps (PFM), KITTI
// 16-bit disparity PNGs and 8-bit RGB images.

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include <png.h>

#include "dtp/error.hpp"
#include "dtp/tensor.hpp"

namespace dtp {

using Bytes = std::vector<std::uint8_t>;

inline Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::string& path, const Bytes& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to '" + path + "'");
}

// ---------------------------------------------------------------------------
// PFM

/// Pixels are top-to-bottom, channel-interleaved. `scale` is kept verbatim:
/// its sign selects the byte order and its text is reused on write so that
/// decode/encode is byte-exact.
struct PfmImage {
  int width = 0;
  int height = 0;
  int channels = 1;
  double scale = -1.0;
  std::string scale_text;
  std::vector<float> data;

  float at(int y, int x, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {

class HeaderReader {
 public:
  explicit HeaderReader(const Bytes& b) : bytes_(b) {}

  std::string token() {
    while (pos_ < bytes_.size() && std::isspace(bytes_[pos_])) ++pos_;
    const std::size_t start = last_start_ = pos_;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) ++pos_;
    if (start == pos_) throw FormatError("unexpected end of PFM header", start);
    return std::string(bytes_.begin() + static_cast<std::ptrdiff_t>(start),
                       bytes_.begin() + static_cast<std::ptrdiff_t>(pos_));
  }
  /// Consumes the single whitespace byte that ends the header.
  void end_header() {
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw FormatError("PFM header not terminated", pos_);
    ++pos_;
  }
  std::size_t pos() const { return pos_; }
  std::size_t last_start() const { return last_start_; }

 private:
  const Bytes& bytes_;
  std::size_t pos_ = 0;
  std::size_t last_start_ = 0;
};

inline int parse_dimension(const std::string& s, std::size_t offset) {
  try {
    std::size_t used = 0;
    const long v = std::stol(s, &used);
    if (used != s.size() || v <= 0 || v > (1 << 20)) throw FormatError("bad PFM dimension '" + s + "'", offset);
    return static_cast<int>(v);
  } catch (const std::logic_error&) {
    throw FormatError("bad PFM dimension '" + s + "'", offset);
  }
}

}  // namespace detail

inline PfmImage read_pfm(const Bytes& bytes) {
  detail::HeaderReader header(bytes);
  PfmImage img;
  const std::string magic = header.token();
  if (magic == "Pf") {
    img.channels = 1;
  } else if (magic == "PF") {
    img.channels = 3;
  } else {
    throw FormatError("bad PFM magic '" + magic + "'", 0);
  }
  std::string tok = header.token();
  img.width = detail::parse_dimension(tok, header.last_start());
  tok = header.token();
  img.height = detail::parse_dimension(tok, header.last_start());
  img.scale_text = header.token();
  const std::size_t at = header.last_start();
  try {
    std::size_t used = 0;
    img.scale = std::stod(img.scale_text, &used);
    if (used != img.scale_text.size()) throw std::invalid_argument("trailing");
  } catch (const std::logic_error&) {
    throw FormatError("bad PFM scale '" + img.scale_text + "'", at);
  }
  if (img.scale == 0.0 || !std::isfinite(img.scale)) throw FormatError("PFM scale must be nonzero", at);
  header.end_header();

  const std::size_t start = header.pos();
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (bytes.size() - start < count * 4) {
    throw FormatError("truncated PFM payload: need " + std::to_string(count * 4) + " bytes", bytes.size());
  }
  const bool little = img.scale < 0;
  img.data.resize(count);
  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = 0; y < img.height; ++y) {
    // rows are stored bottom-to-top
    const std::uint8_t* src = bytes.data() + start + static_cast<std::size_t>(img.height - 1 - y) * row * 4;
    for (std::size_t k = 0; k < row; ++k) {
      const std::uint8_t* p = src + 4 * k;
      const std::uint32_t u = little ? (std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 |
                                        std::uint32_t(p[3]) << 24)
                                     : (std::uint32_t(p[3]) | std::uint32_t(p[2]) << 8 | std::uint32_t(p[1]) << 16 |
                                        std::uint32_t(p[0]) << 24);
      img.data[static_cast<std::size_t>(y) * row + k] = std::bit_cast<float>(u);
    }
  }
  return img;
}

inline std::string format_scale(double scale) {
  std::ostringstream os;
  os.precision(17);
  os << scale;
  std::string s = os.str();
  if (s.find_first_of(".e") == std::string::npos) s += ".0";
  return s;
}

inline Bytes write_pfm(const PfmImage& img) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("PFM supports 1 or 3 channels", 0);
  if (img.scale == 0.0) throw FormatError("PFM scale must be nonzero", 0);
  const std::size_t count = static_cast<std::size_t>(img.width) * img.height * img.channels;
  if (img.data.size() != count) throw ShapeError("PFM data size does not match dimensions");
  std::string scale = img.scale_text;
  if (scale.empty() || std::stod(scale) != img.scale) scale = format_scale(img.scale);
  const std::string header = std::string(img.channels == 1 ? "Pf" : "PF") + "\n" + std::to_string(img.width) + " " +
                             std::to_string(img.height) + "\n" + scale + "\n";
  Bytes out(header.begin(), header.end());
  out.reserve(out.size() + count * 4);
  const bool little = img.scale < 0;
  const std::size_t row = static_cast<std::size_t>(img.width) * img.channels;
  for (int y = img.height - 1; y >= 0; --y) {
    for (std::size_t k = 0; k < row; ++k) {
      const std::uint32_t u = std::bit_cast<std::uint32_t>(img.data[static_cast<std::size_t>(y) * row + k]);
      for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(u >> (8 * (little ? b : 3 - b))));
    }
  }
  return out;
}

/// Single-channel PFM as an H x W tensor.
inline Tensor<float> pfm_to_tensor(const PfmImage& img) {
  if (img.channels != 1) throw FormatError("expected a single-channel PFM", 0);
  return Tensor<float>({img.height, img.width}, img.data);
}

inline PfmImage tensor_to_pfm(const Tensor<float>& t) {
  if (t.rank() != 2) throw ShapeError("PFM export expects an H x W tensor");
  PfmImage img;
  img.height = t.dim(0);
  img.width = t.dim(1);
  img.scale = -1.0;
  img.data = t.storage();
  return img;
}

// ---------------------------------------------------------------------------
// PNG

namespace detail {

struct PngReadState {
  const Bytes* bytes;
  std::size_t pos;
};

[[noreturn]] inline void png_fail(png_structp png, png_const_charp msg) {
  auto* message = static_cast<std::string*>(png_get_error_ptr(png));
  if (message) *message = msg;
  std::longjmp(png_jmpbuf(png), 1);
}

inline void png_warn(png_structp, png_const_charp) {}

inline void png_read_bytes(png_structp png, png_bytep out, png_size_t n) {
  auto* s = static_cast<PngReadState*>(png_get_io_ptr(png));
  if (s->pos + n > s->bytes->size()) png_error(png, "truncated PNG data");
  std::memcpy(out, s->bytes->data() + s->pos, n);
  s->pos += n;
}

inline void png_write_bytes(png_structp png, png_bytep in, png_size_t n) {
  auto* out = static_cast<Bytes*>(png_get_io_ptr(png));
  out->insert(out->end(), in, in + n);
}

inline void png_flush(png_structp) {}

struct RawPng {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int color_type = 0;
  std::vector<std::uint8_t> rows;  // packed rows as stored (after expansion of palette/low bit depths)
  std::size_t row_bytes = 0;
};

/// Decodes without gamma or depth conversion except palette/gray expansion.
inline RawPng decode_png(const Bytes& bytes, bool expand_to_8bit_rgb) {
  if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8) != 0) throw FormatError("not a PNG file", 0);
  std::string message;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw FormatError("libpng initialisation failed", 0);
  png_infop info = png_create_info_struct(png);
  PngReadState state{&bytes, 0};
  RawPng raw;
  if (setjmp(png_jmpbuf(png))) {
    const std::size_t at = state.pos;
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("PNG decode failed: " + message, at);
  }
  png_set_read_fn(png, &state, png_read_bytes);
  png_read_info(png, info);
  raw.width = static_cast<int>(png_get_image_width(png, info));
  raw.height = static_cast<int>(png_get_image_height(png, info));
  raw.bit_depth = png_get_bit_depth(png, info);
  raw.color_type = png_get_color_type(png, info);
  if (expand_to_8bit_rgb) {
    if (raw.color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (raw.color_type == PNG_COLOR_TYPE_GRAY || raw.color_type == PNG_COLOR_TYPE_GRAY_ALPHA) png_set_gray_to_rgb(png);
    if (raw.bit_depth < 8) png_set_expand(png);
    if (raw.bit_depth == 16) png_set_strip_16(png);
    if (raw.color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
    png_read_update_info(png, info);
  } else if (raw.bit_depth == 16) {
    png_set_swap(png);  // host order (little-endian) for 16-bit samples
  }
  raw.row_bytes = png_get_rowbytes(png, info);
  raw.rows.resize(raw.row_bytes * static_cast<std::size_t>(raw.height));
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(raw.height));
  for (int y = 0; y < raw.height; ++y) ptrs[y] = raw.rows.data() + raw.row_bytes * static_cast<std::size_t>(y);
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raw;
}

inline Bytes encode_png(int width, int height, int bit_depth, int color_type, const std::vector<std::uint8_t>& rows,
                        std::size_t row_bytes) {
  std::string message;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, png_fail, png_warn);
  if (!png) throw FormatError("libpng initialisation failed", 0);
  png_infop info = png_create_info_struct(png);
  Bytes out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw FormatError("PNG encode failed: " + message, out.size());
  }
  png_set_write_fn(png, &out, png_write_bytes, png_flush);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  std::vector<png_bytep> ptrs(static_cast<std::size_t>(height));
  for (int y = 0; y < height; ++y) {
    ptrs[y] = const_cast<png_bytep>(rows.data() + row_bytes * static_cast<std::size_t>(y));
  }
  png_write_image(png, ptrs.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return out;
}

}  // namespace detail

/// KITTI disparity: value / 256, stored 0 marks a missing measurement.
struct DisparityMap {
  Tensor<float> disparity;     // H x W
  Tensor<std::uint8_t> valid;  // H x W
};

inline DisparityMap read_kitti_disparity(const Bytes& bytes) {
  const auto raw = detail::decode_png(bytes, false);
  if (raw.bit_depth != 16 || raw.color_type != PNG_COLOR_TYPE_GRAY) {
    throw FormatError("KITTI disparity must be a 16-bit single-channel PNG (got depth " +
                          std::to_string(raw.bit_depth) + ", color type " + std::to_string(raw.color_type) + ")",
                      24);
  }
  DisparityMap out{Tensor<float>({raw.height, raw.width}), Tensor<std::uint8_t>({raw.height, raw.width})};
  for (int y = 0; y < raw.height; ++y) {
    const std::uint8_t* row = raw.rows.data() + raw.row_bytes * static_cast<std::size_t>(y);
    for (int x = 0; x < raw.width; ++x) {
      std::uint16_t v;
      std::memcpy(&v, row + 2 * x, 2);
      const std::size_t k = static_cast<std::size_t>(y) * raw.width + x;
      out.disparity[k] = static_cast<float>(v / 256.0);
      out.valid[k] = v != 0;
    }
  }
  return out;
}

/// Inverse of read_kitti_disparity; invalid or negative pixels are stored as 0.
inline Bytes write_kitti_disparity(const Tensor<float>& disparity, const Tensor<std::uint8_t>* valid = nullptr) {
  if (disparity.rank() != 2) throw ShapeError("disparity must be H x W");
  const int h = disparity.dim(0), w = disparity.dim(1);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 2);
  for (std::size_t k = 0; k < disparity.size(); ++k) {
    const bool ok = (!valid || (*valid)[k]) && disparity[k] > 0.0f;
    const double v = ok ? std::clamp(std::round(disparity[k] * 256.0), 1.0, 65535.0) : 0.0;
    const auto u = static_cast<std::uint16_t>(v);
    std::memcpy(rows.data() + 2 * k, &u, 2);
  }
  return detail::encode_png(w, h, 16, PNG_COLOR_TYPE_GRAY, rows, static_cast<std::size_t>(w) * 2);
}

/// 8-bit image as a 3 x H x W tensor with values in [0, 1].
inline Tensor<float> read_png_rgb(const Bytes& bytes) {
  const auto raw = detail::decode_png(bytes, true);
  Tensor<float> img({3, raw.height, raw.width});
  for (int y = 0; y < raw.height; ++y) {
    const std::uint8_t* row = raw.rows.data() + raw.row_bytes * static_cast<std::size_t>(y);
    for (int x = 0; x < raw.width; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = row[3 * x + c] / 255.0f;
  }
  return img;
}

/// Writes a 3 x H x W tensor with values in [0, 1] as 8-bit RGB.
inline Bytes write_png_rgb(const Tensor<float>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw ShapeError("RGB export expects a 3 x H x W tensor");
  const int h = img.dim(1), w = img.dim(2);
  std::vector<std::uint8_t> rows(static_cast<std::size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const float v = std::clamp(img.at(c, y, x), 0.0f, 1.0f);
        rows[(static_cast<std::size_t>(y) * w + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
      }
  return detail::encode_png(w, h, 8, PNG_COLOR_TYPE_RGB, rows, static_cast<std::size_t>(w) * 3);
}

}  // namespace dtp
