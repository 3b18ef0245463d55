// Copyright 2026 The dphr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

/// @file io.hpp
/// PFM (32-bit float, 1 or 3 channels) and 8-bit PNG images.

#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dphr/archive.hpp"
#include "dphr/error.hpp"
#include "dphr/image.hpp"

namespace dphr::io {

enum class Endian { little, big };

// ---------------------------------------------------------------------------
// PFM

namespace detail {

struct PfmHeader {
  std::size_t channels = 0, width = 0, height = 0;
  Endian endian = Endian::little;
  std::size_t data_offset = 0;
};

inline std::size_t skip_space(const std::string& b, std::size_t pos) {
  while (pos < b.size() && std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
  return pos;
}

inline std::string_view token(const std::string& b, std::size_t& pos) {
  const std::size_t start = pos;
  while (pos < b.size() && !std::isspace(static_cast<unsigned char>(b[pos]))) ++pos;
  return std::string_view(b).substr(start, pos - start);
}

inline std::size_t parse_dimension(const std::string& b, std::size_t& pos, const char* what) {
  pos = skip_space(b, pos);
  const std::size_t at = pos;
  const auto t = token(b, pos);
  std::size_t v = 0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size() || v == 0) {
    throw FormatError(std::string("pfm: invalid ") + what + " '" + std::string(t) + "'", at);
  }
  return v;
}

inline PfmHeader parse_pfm_header(const std::string& b) {
  PfmHeader h;
  if (b.size() < 2 || b[0] != 'P' || (b[1] != 'F' && b[1] != 'f')) throw FormatError("pfm: bad magic", 0);
  h.channels = b[1] == 'F' ? 3 : 1;
  std::size_t pos = 2;
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw FormatError("pfm: expected whitespace after magic", pos);
  }
  h.width = parse_dimension(b, pos, "width");
  h.height = parse_dimension(b, pos, "height");
  pos = skip_space(b, pos);
  const std::size_t at = pos;
  const auto t = token(b, pos);
  double scale = 0;
  const auto [end, ec] = std::from_chars(t.data(), t.data() + t.size(), scale);
  if (t.empty() || ec != std::errc() || end != t.data() + t.size() || scale == 0 || !std::isfinite(scale)) {
    throw FormatError("pfm: invalid scale '" + std::string(t) + "'", at);
  }
  h.endian = scale < 0 ? Endian::little : Endian::big;
  if (pos >= b.size() || !std::isspace(static_cast<unsigned char>(b[pos]))) {
    throw FormatError("pfm: expected a single whitespace byte before the payload", pos);
  }
  h.data_offset = pos + 1;
  return h;
}

}  // namespace detail

/// Decodes PFM bytes. Rows are stored bottom to top; the sign of the scale selects endianness.
inline Image decode_pfm(const std::string& bytes) {
  const auto h = detail::parse_pfm_header(bytes);
  const std::size_t n = h.channels * h.width * h.height;
  if (n > (bytes.size() - h.data_offset) / 4) {
    throw FormatError("pfm: payload truncated, expected " + std::to_string(4 * n) + " bytes", bytes.size());
  }
  Image img(h.channels, h.height, h.width);
  const bool swap = (h.endian == Endian::little) != (std::endian::native == std::endian::little);
  const char* p = bytes.data() + h.data_offset;
  for (std::size_t row = 0; row < h.height; ++row) {
    const std::size_t y = h.height - 1 - row;
    for (std::size_t x = 0; x < h.width; ++x)
      for (std::size_t c = 0; c < h.channels; ++c) {
        std::uint32_t u;
        std::memcpy(&u, p, 4);
        p += 4;
        if (swap) u = dphr::detail::byteswap(u);
        img.at(c, y, x) = static_cast<double>(std::bit_cast<float>(u));
      }
  }
  return img;
}

/// Values are stored as float32.
inline std::string encode_pfm(const Image& img, Endian endian = Endian::little) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::invalid_argument, "pfm: images must have 1 or 3 channels, got " + img.shape_string());
  }
  if (img.empty()) throw Error(ErrorCode::invalid_argument, "pfm: empty image");
  std::string out = std::string(img.channels == 3 ? "PF" : "Pf") + "\n" + std::to_string(img.width) + " " +
                    std::to_string(img.height) + "\n" + (endian == Endian::little ? "-1.0" : "1.0") + "\n";
  const bool swap = (endian == Endian::little) != (std::endian::native == std::endian::little);
  out.reserve(out.size() + 4 * img.size());
  for (std::size_t row = 0; row < img.height; ++row) {
    const std::size_t y = img.height - 1 - row;
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c) {
        auto u = std::bit_cast<std::uint32_t>(static_cast<float>(img.at(c, y, x)));
        if (swap) u = dphr::detail::byteswap(u);
        char buf[4];
        std::memcpy(buf, &u, 4);
        out.append(buf, 4);
      }
  }
  return out;
}

inline Image read_pfm(const std::string& path) { return decode_pfm(dphr::detail::read_file(path)); }

inline void write_pfm(const std::string& path, const Image& img, Endian endian = Endian::little) {
  dphr::detail::write_file(path, encode_pfm(img, endian));
}

// ---------------------------------------------------------------------------
// PNG (8-bit gray or RGB)

/// Pixel values in [0, 1] map to round(255 v); reading returns code / 255.
inline std::uint8_t to_code(double v) { return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); }

inline Image decode_png8(const std::string& bytes) {
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0) {
    throw FormatError("png: bad signature", 0);
  }
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  // libpng does not expose where decoding stopped; failures past the signature report
  // the start of the chunk stream.
  if (!png_image_begin_read_from_memory(&im, bytes.data(), bytes.size())) {
    throw FormatError(std::string("png: ") + im.message, 8);
  }
  const bool gray = (im.format & PNG_FORMAT_FLAG_COLOR) == 0;
  im.format = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  const std::size_t c = gray ? 1 : 3;
  std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(im));
  if (!png_image_finish_read(&im, nullptr, buf.data(), 0, nullptr)) {
    const std::string msg = im.message;
    png_image_free(&im);
    throw FormatError("png: " + msg, 8);
  }
  Image img(c, im.height, im.width);
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t k = 0; k < c; ++k) img.at(k, y, x) = buf[(y * img.width + x) * c + k] / 255.0;
  return img;
}

inline std::string encode_png8(const Image& img) {
  if (img.channels != 1 && img.channels != 3) {
    throw Error(ErrorCode::invalid_argument, "png: images must have 1 or 3 channels, got " + img.shape_string());
  }
  if (img.empty()) throw Error(ErrorCode::invalid_argument, "png: empty image");
  std::vector<std::uint8_t> buf(img.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t k = 0; k < img.channels; ++k) buf[(y * img.width + x) * img.channels + k] = to_code(img.at(k, y, x));
  png_image im;
  std::memset(&im, 0, sizeof im);
  im.version = PNG_IMAGE_VERSION;
  im.width = static_cast<png_uint_32>(img.width);
  im.height = static_cast<png_uint_32>(img.height);
  im.format = img.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&im, nullptr, &size, 0, buf.data(), 0, nullptr)) {
    throw Error(ErrorCode::io, std::string("png: ") + im.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&im, out.data(), &size, 0, buf.data(), 0, nullptr)) {
    throw Error(ErrorCode::io, std::string("png: ") + im.message);
  }
  out.resize(size);
  return out;
}

inline Image read_png8(const std::string& path) { return decode_png8(dphr::detail::read_file(path)); }

inline void write_png8(const std::string& path, const Image& img) { dphr::detail::write_file(path, encode_png8(img)); }

}  // namespace dphr::io
