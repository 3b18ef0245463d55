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

/// @file archive.hpp
/// Flat binary tensor archive. Layout (all integers little-endian):
///
///     offset 0   8 bytes   magic "DPHRCKPT"
///     offset 8   u32       format version (1)
///     offset 12  u64       manifest length L in bytes
///     offset 20  L bytes   UTF-8 JSON manifest
///     offset 20+L          payload
///
/// The manifest is {"metadata": {...}, "tensors": [{"name", "shape", "dtype", "offset",
/// "nbytes"}]} with offsets relative to the payload start. dtype is "f64" or "f32";
/// values are IEEE-754 little-endian, row-major. See docs/checkpoint_format.md.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "dphr/error.hpp"
#include "dphr/tensor.hpp"
#include "json.hpp"

namespace dphr {

inline constexpr char kArchiveMagic[8] = {'D', 'P', 'H', 'R', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct ArchiveEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct Archive {
  nlohmann::json metadata = nlohmann::json::object();
  std::vector<ArchiveEntry> entries;

  void add(std::string name, Shape shape, std::vector<double> values) {
    if (shape_numel(shape) != values.size()) {
      throw Error(ErrorCode::shape_mismatch, "archive entry " + name + ": shape " + shape_string(shape) +
                                                 " does not match " + std::to_string(values.size()) + " values");
    }
    entries.push_back({std::move(name), std::move(shape), std::move(values)});
  }

  void add(std::string name, const Tensor& t) {
    add(std::move(name), t.shape(), std::vector<double>(t.values().begin(), t.values().end()));
  }

  const ArchiveEntry* find(const std::string& name) const {
    for (const auto& e : entries)
      if (e.name == name) return &e;
    return nullptr;
  }

  const ArchiveEntry& at(const std::string& name) const {
    if (const auto* e = find(name)) return *e;
    throw Error(ErrorCode::format, "archive has no tensor named '" + name + "'");
  }
};

namespace detail {

template <class T>
T byteswap(T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(buf[i], buf[sizeof(T) - 1 - i]);
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <class T>
void put_le(std::string& out, T v) {
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get_le(const std::string& in, std::size_t offset) {
  if (offset + sizeof(T) > in.size()) throw FormatError("archive truncated", offset);
  T v;
  std::memcpy(&v, in.data() + offset, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) v = byteswap(v);
  return v;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error(ErrorCode::io, "cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw Error(ErrorCode::io, "write failed for " + path);
}

}  // namespace detail

/// Stored at the library's precision ("f64" unless built single-precision).
inline std::string encode_archive(const Archive& archive) {
  constexpr bool f64 = sizeof(real) == 8;
  const std::size_t width = f64 ? 8 : 4;
  nlohmann::json manifest;
  manifest["metadata"] = archive.metadata;
  manifest["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& e : archive.entries) {
    manifest["tensors"].push_back({{"name", e.name},
                                   {"shape", e.shape},
                                   {"dtype", f64 ? "f64" : "f32"},
                                   {"offset", payload.size()},
                                   {"nbytes", e.values.size() * width}});
    for (double v : e.values) {
      if constexpr (f64) {
        detail::put_le(payload, std::bit_cast<std::uint64_t>(v));
      } else {
        detail::put_le(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
      }
    }
  }
  const std::string text = manifest.dump();
  std::string out(kArchiveMagic, sizeof(kArchiveMagic));
  detail::put_le(out, kArchiveVersion);
  detail::put_le(out, static_cast<std::uint64_t>(text.size()));
  out += text;
  out += payload;
  return out;
}

inline Archive decode_archive(const std::string& bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kArchiveMagic, sizeof(kArchiveMagic)) != 0) {
    throw FormatError("not a dphr tensor archive (bad magic)", 0);
  }
  const auto version = detail::get_le<std::uint32_t>(bytes, 8);
  if (version != kArchiveVersion) throw FormatError("unsupported archive version " + std::to_string(version), 8);
  const auto len = detail::get_le<std::uint64_t>(bytes, 12);
  if (len > bytes.size() - 20) throw FormatError("manifest length exceeds file size", 12);
  const std::size_t base = 20 + static_cast<std::size_t>(len);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + static_cast<std::ptrdiff_t>(base));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest is not valid JSON: ") + e.what(), 20);
  }

  Archive archive;
  try {
    archive.metadata = manifest.value("metadata", nlohmann::json::object());
    for (const auto& t : manifest.at("tensors")) {
      ArchiveEntry e;
      e.name = t.at("name").get<std::string>();
      e.shape = t.at("shape").get<Shape>();
      const auto dtype = t.at("dtype").get<std::string>();
      const auto offset = t.at("offset").get<std::size_t>();
      const auto nbytes = t.at("nbytes").get<std::size_t>();
      const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
      if (width == 0) throw FormatError("tensor " + e.name + " has unknown dtype " + dtype, 20);
      const std::size_t n = shape_numel(e.shape);
      if (nbytes != n * width) throw FormatError("tensor " + e.name + " byte count does not match its shape", 20);
      if (offset > bytes.size() - base || nbytes > bytes.size() - base - offset) {
        throw FormatError("tensor " + e.name + " extends past end of file", base + offset);
      }
      e.values.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t at = base + offset + i * width;
        e.values[i] = width == 8 ? std::bit_cast<double>(detail::get_le<std::uint64_t>(bytes, at))
                                 : static_cast<double>(std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, at)));
      }
      archive.entries.push_back(std::move(e));
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed manifest: ") + e.what(), 20);
  }
  return archive;
}

inline void save_archive(const std::string& path, const Archive& archive) {
  detail::write_file(path, encode_archive(archive));
}

inline Archive load_archive(const std::string& path) { return decode_archive(detail::read_file(path)); }

}  // namespace dphr
