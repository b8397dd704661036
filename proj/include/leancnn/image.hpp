#pragma once

// Image decoding, bilinear resizing and lossless D4 augmentations on
// (H, W, C) tensors with values in [0, 1].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "leancnn/error.hpp"
#include "leancnn/rng.hpp"
#include "leancnn/tensor.hpp"

#ifdef LEANCNN_WITH_JPEG
#include <csetjmp>
#include <cstdio>

#include <jpeglib.h>
#endif

namespace leancnn {

using Image = Tensor<float>;

// ---------------------------------------------------------------------------
// PPM (binary P6)

namespace detail {

inline std::string ppm_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      tok.push_back(c);
      break;
    }
  }
  while (in.get(c) && !std::isspace(static_cast<unsigned char>(c))) tok.push_back(c);
  return tok;
}

}  // namespace detail

inline Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image " + path.string());
  if (detail::ppm_token(in) != "P6") throw DataError(path.string() + ": not a binary PPM (P6)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(detail::ppm_token(in));
    h = std::stoul(detail::ppm_token(in));
    maxval = std::stoul(detail::ppm_token(in));
  } catch (const std::exception&) {
    throw DataError(path.string() + ": malformed PPM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) throw DataError(path.string() + ": bad PPM header values");
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  std::vector<unsigned char> raw(w * h * 3 * bytes_per);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size()) throw DataError(path.string() + ": truncated PPM data");
  Image img({h, w, 3});
  const float scale = 1.0f / static_cast<float>(maxval);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const unsigned v = bytes_per == 1 ? raw[i] : (unsigned{raw[2 * i]} << 8) | raw[2 * i + 1];
    img[i] = static_cast<float>(v) * scale;
  }
  return img;
}

/// Writes an 8-bit P6 file; values are clamped to [0, 1] and rounded.
inline void write_ppm(const std::filesystem::path& path, const Image& img) {
  if (img.rank() != 3 || img.dim(2) != 3) throw ShapeError("write_ppm: expects an (H, W, 3) image");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image " + path.string());
  out << "P6\n" << img.dim(1) << ' ' << img.dim(0) << "\n255\n";
  std::vector<unsigned char> raw(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) {
    raw[i] = static_cast<unsigned char>(std::lround(std::clamp(img[i], 0.0f, 1.0f) * 255.0f));
  }
  out.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

#ifdef LEANCNN_WITH_JPEG
namespace detail {
struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};
}  // namespace detail

inline Image read_jpeg(const std::filesystem::path& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open image " + path.string());
  jpeg_decompress_struct cinfo;
  detail::JpegError err;
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = [](j_common_ptr c) { std::longjmp(reinterpret_cast<detail::JpegError*>(c->err)->jump, 1); };
  std::vector<float> pixels;
  std::size_t w = 0, h = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    std::fclose(f);
    throw DataError(path.string() + ": JPEG decode failed");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f);
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  w = cinfo.output_width;
  h = cinfo.output_height;
  pixels.resize(w * h * 3);
  std::vector<unsigned char> row(w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    const std::size_t y = cinfo.output_scanline;
    unsigned char* rp = row.data();
    jpeg_read_scanlines(&cinfo, &rp, 1);
    for (std::size_t i = 0; i < w * 3; ++i) pixels[y * w * 3 + i] = static_cast<float>(row[i]) / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  std::fclose(f);
  return Image({h, w, 3}, std::move(pixels));
}
#endif

/// Decodes by extension: .ppm always; .jpg/.jpeg when built with libjpeg.
inline Image read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".ppm") return read_ppm(path);
#ifdef LEANCNN_WITH_JPEG
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
#endif
  throw DataError("unsupported image format: " + path.string());
}

inline std::vector<std::string> supported_image_extensions() {
#ifdef LEANCNN_WITH_JPEG
  return {".ppm", ".jpg", ".jpeg"};
#else
  return {".ppm"};
#endif
}

// ---------------------------------------------------------------------------
// Resizing

/// Bilinear resize with half-pixel centers and edge clamping. Same-size
/// input is returned unchanged bit for bit.
template <typename T>
Tensor<T> resize_bilinear(const Tensor<T>& img, std::size_t out_h, std::size_t out_w) {
  if (img.rank() != 3) throw ShapeError("resize: expects an (H, W, C) image");
  const std::size_t in_h = img.dim(0), in_w = img.dim(1), ch = img.dim(2);
  if (in_h == out_h && in_w == out_w) return img;
  Tensor<T> out({out_h, out_w, ch});
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const T ty = static_cast<T>(fy - static_cast<double>(y0));
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const T tx = static_cast<T>(fx - static_cast<double>(x0));
      for (std::size_t c = 0; c < ch; ++c) {
        const T a = img.at(y0, x0, c), b = img.at(y0, x1, c);
        const T d = img.at(y1, x0, c), e = img.at(y1, x1, c);
        const T top = a + (b - a) * tx;
        const T bottom = d + (e - d) * tx;
        out.at(y, x, c) = top + (bottom - top) * ty;
      }
    }
  }
  return out;
}

template <typename T>
Tensor<T> resize(const Tensor<T>& img, std::size_t target = 224) {
  return resize_bilinear(img, target, target);
}

// ---------------------------------------------------------------------------
// Augmentation

enum class AugmentOp { rot90, rot180, rot270, hflip, vflip };

inline const char* to_string(AugmentOp op) {
  switch (op) {
    case AugmentOp::rot90: return "rot90";
    case AugmentOp::rot180: return "rot180";
    case AugmentOp::rot270: return "rot270";
    case AugmentOp::hflip: return "hflip";
    case AugmentOp::vflip: return "vflip";
  }
  return "?";
}

inline AugmentOp parse_augment_op(const std::string& s) {
  for (auto op : {AugmentOp::rot90, AugmentOp::rot180, AugmentOp::rot270, AugmentOp::hflip, AugmentOp::vflip}) {
    if (s == to_string(op)) return op;
  }
  throw Error("unknown augmentation '" + s + "' (expected rot90, rot180, rot270, hflip or vflip)");
}

/// Applies one lossless op. rot90 turns the image a quarter counter-clockwise.
template <typename T>
Tensor<T> apply_augment(const Tensor<T>& img, AugmentOp op) {
  if (img.rank() != 3) throw ShapeError("augment: expects an (H, W, C) image");
  const std::size_t h = img.dim(0), w = img.dim(1), ch = img.dim(2);
  const bool swaps = op == AugmentOp::rot90 || op == AugmentOp::rot270;
  Tensor<T> out(swaps ? Shape{w, h, ch} : Shape{h, w, ch});
  const std::size_t oh = out.dim(0), ow = out.dim(1);
  for (std::size_t y = 0; y < oh; ++y) {
    for (std::size_t x = 0; x < ow; ++x) {
      std::size_t sy = 0, sx = 0;
      switch (op) {
        case AugmentOp::rot90: sy = x; sx = w - 1 - y; break;
        case AugmentOp::rot180: sy = h - 1 - y; sx = w - 1 - x; break;
        case AugmentOp::rot270: sy = h - 1 - x; sx = y; break;
        case AugmentOp::hflip: sy = y; sx = w - 1 - x; break;
        case AugmentOp::vflip: sy = h - 1 - y; sx = x; break;
      }
      for (std::size_t c = 0; c < ch; ++c) out.at(y, x, c) = img.at(sy, sx, c);
    }
  }
  return out;
}

/// Picks uniformly among {identity} and `ops` using `seed`, and applies it.
template <typename T>
Tensor<T> augment(const Tensor<T>& img, std::span<const AugmentOp> ops, std::uint64_t seed) {
  if (ops.empty()) return img;
  Rng rng(seed);
  const auto pick = rng.below(ops.size() + 1);
  return pick == 0 ? img : apply_augment(img, ops[pick - 1]);
}

/// Small-angle rotation about the image center with bilinear resampling and
/// edge-replicating fill. Not lossless; not used unless requested.
template <typename T>
Tensor<T> rotate_bilinear(const Tensor<T>& img, double degrees) {
  if (img.rank() != 3) throw ShapeError("rotate: expects an (H, W, C) image");
  const std::size_t h = img.dim(0), w = img.dim(1), ch = img.dim(2);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  Tensor<T> out(img.shape());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double fy = std::clamp(cy + dy * cs - dx * sn, 0.0, static_cast<double>(h - 1));
      const double fx = std::clamp(cx + dy * sn + dx * cs, 0.0, static_cast<double>(w - 1));
      const std::size_t y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
      const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const double ty = fy - static_cast<double>(y0), tx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < ch; ++c) {
        const double top = img.at(y0, x0, c) + (img.at(y0, x1, c) - img.at(y0, x0, c)) * tx;
        const double bot = img.at(y1, x0, c) + (img.at(y1, x1, c) - img.at(y1, x0, c)) * tx;
        out.at(y, x, c) = static_cast<T>(top + (bot - top) * ty);
      }
    }
  }
  return out;
}

}  // namespace leancnn
