// Copyright (c) 2026 The FabricNet Authors
// SPDX-License-Identifier: Apache-2.0

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cctype>
#include <csetjmp>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <memory>

// jpeglib.h expects stdio declarations to be visible.
#include <jpeglib.h>

#include "fabricnet/data_io.hpp"

namespace fabricnet {

namespace {

struct RawImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;
};

[[noreturn]] void decode_error(const std::filesystem::path& path, const std::string& what) {
  throw DataError(DataError::Kind::kDecode, "cannot decode '" + path.string() + "': " + what);
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError(DataError::Kind::kMissingFile, "cannot open image '" + path.string() + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw DataError(DataError::Kind::kIo, "error reading '" + path.string() + "'");
  return bytes;
}

RawImage decode_png(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size())) decode_error(path, image.message);
  image.format = PNG_FORMAT_RGB;
  RawImage out;
  out.height = image.height;
  out.width = image.width;
  out.rgb.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.rgb.data(), 0, nullptr)) {
    const std::string message = image.message;
    png_image_free(&image);
    decode_error(path, message);
  }
  return out;
}

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr info) {
  auto* err = reinterpret_cast<JpegErrorManager*>(info->err);
  (*info->err->format_message)(info, err->message);
  std::longjmp(err->jump, 1);
}

RawImage decode_jpeg(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  jpeg_decompress_struct info{};
  JpegErrorManager err{};
  info.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  RawImage out;
  // No C++ objects with non-trivial destructors are created between setjmp
  // and the last libjpeg call.
  std::uint8_t* buffer = nullptr;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&info);
    decode_error(path, err.message);
  }
  jpeg_create_decompress(&info);
  jpeg_mem_src(&info, bytes.data(), static_cast<unsigned long>(bytes.size()));
  jpeg_read_header(&info, TRUE);
  info.out_color_space = JCS_RGB;
  jpeg_start_decompress(&info);
  out.height = info.output_height;
  out.width = info.output_width;
  out.rgb.resize(out.height * out.width * 3);
  buffer = out.rgb.data();
  while (info.output_scanline < info.output_height) {
    JSAMPROW row = buffer + static_cast<std::size_t>(info.output_scanline) * out.width * 3;
    jpeg_read_scanlines(&info, &row, 1);
  }
  jpeg_finish_decompress(&info);
  jpeg_destroy_decompress(&info);
  return out;
}

RawImage decode_pnm(const std::vector<std::uint8_t>& bytes, const std::filesystem::path& path) {
  std::size_t pos = 2;
  const auto next_int = [&]() -> std::size_t {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (1u << 20)) decode_error(path, "header value too large");
      ++pos;
    }
    if (pos == start) decode_error(path, "malformed header");
    return v;
  };
  const bool color = bytes[1] == '6';
  RawImage out;
  out.width = next_int();
  out.height = next_int();
  const std::size_t maxval = next_int();
  if (out.width == 0 || out.height == 0 || maxval == 0 || maxval > 255) decode_error(path, "unsupported header");
  ++pos;  // single whitespace before the raster
  const std::size_t channels = color ? 3 : 1;
  const std::size_t need = out.width * out.height * channels;
  if (pos > bytes.size() || bytes.size() - pos < need) decode_error(path, "truncated raster");
  out.rgb.resize(out.width * out.height * 3);
  for (std::size_t i = 0; i < out.width * out.height; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const std::size_t v = bytes[pos + i * channels + (color ? c : 0)];
      out.rgb[i * 3 + c] = static_cast<std::uint8_t>(v * 255 / maxval);
    }
  }
  return out;
}

}  // namespace

std::vector<float> resize_bilinear(std::span<const float> src, std::size_t in_h, std::size_t in_w,
                                   std::size_t channels, std::size_t out_h, std::size_t out_w) {
  if (src.size() != in_h * in_w * channels || in_h == 0 || in_w == 0 || out_h == 0 || out_w == 0) {
    throw ShapeError("resize_bilinear: bad source or target shape");
  }
  std::vector<float> out(out_h * out_w * channels);
  const double sy = static_cast<double>(in_h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(in_w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((static_cast<double>(y) + 0.5) * sy - 0.5, 0.0, static_cast<double>(in_h - 1));
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, in_h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((static_cast<double>(x) + 0.5) * sx - 0.5, 0.0, static_cast<double>(in_w - 1));
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, in_w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const auto at = [&](std::size_t yy, std::size_t xx) {
          return static_cast<double>(src[(yy * in_w + xx) * channels + c]);
        };
        const double top = at(y0, x0) * (1 - wx) + at(y0, x1) * wx;
        const double bottom = at(y1, x0) * (1 - wx) + at(y1, x1) * wx;
        out[(y * out_w + x) * channels + c] = static_cast<float>(top * (1 - wy) + bottom * wy);
      }
    }
  }
  return out;
}

Tensor decode_image(const std::filesystem::path& path, std::size_t size) {
  if (size == 0) throw ValidationError("target image size must be positive");
  const auto bytes = read_file(path);
  RawImage raw;
  if (bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0) {
    raw = decode_png(bytes, path);
  } else if (bytes.size() >= 3 && bytes[0] == 0xFF && bytes[1] == 0xD8 && bytes[2] == 0xFF) {
    raw = decode_jpeg(bytes, path);
  } else if (bytes.size() >= 3 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '6')) {
    raw = decode_pnm(bytes, path);
  } else {
    decode_error(path, "unrecognized image format");
  }
  std::vector<float> rgb(raw.rgb.size());
  std::transform(raw.rgb.begin(), raw.rgb.end(), rgb.begin(), [](std::uint8_t v) { return v / 255.0f; });
  if (raw.height != size || raw.width != size) rgb = resize_bilinear(rgb, raw.height, raw.width, 3, size, size);
  for (float& v : rgb) v = std::clamp(v, 0.0f, 1.0f);
  return Tensor({size, size, 3}, std::move(rgb));
}

void write_png(const std::filesystem::path& path, std::span<const float> image, std::size_t height,
               std::size_t width) {
  if (image.size() != height * width * 3) throw ShapeError("write_png: image must be HWC with 3 channels");
  std::vector<std::uint8_t> bytes(image.size());
  std::transform(image.begin(), image.end(), bytes.begin(), [](float v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
  });
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(width);
  png.height = static_cast<png_uint_32>(height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, bytes.data(), 0, nullptr)) {
    throw DataError(DataError::Kind::kIo, "cannot write '" + path.string() + "': " + png.message);
  }
}

}  // namespace fabricnet
