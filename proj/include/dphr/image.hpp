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

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "dphr/error.hpp"
#include "dphr/tensor.hpp"

namespace dphr {

/// Planar (channel-major) floating-point image.
struct Image {
  std::size_t channels = 0;
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> data;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), data(c * h * w, fill) {}

  std::size_t pixels() const { return height * width; }
  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }

  double& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }

  bool same_shape(const Image& o) const {
    return channels == o.channels && height == o.height && width == o.width;
  }

  std::string shape_string() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
  }
};

inline void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw Error(ErrorCode::shape_mismatch,
                std::string(what) + ": image shapes differ (" + a.shape_string() + " vs " + b.shape_string() + ")");
  }
}

/// Per-pixel maximum over channels, as a single-channel image.
inline Image max_over_channels(const Image& img) {
  Image out(1, img.height, img.width, -HUGE_VAL);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < img.pixels(); ++i) out.data[i] = std::max(out.data[i], img.data[c * img.pixels() + i]);
  return out;
}

/// Per-pixel mean over channels, as a single-channel image.
inline Image mean_over_channels(const Image& img) {
  Image out(1, img.height, img.width);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t i = 0; i < img.pixels(); ++i) out.data[i] += img.data[c * img.pixels() + i];
  for (auto& v : out.data) v /= static_cast<double>(img.channels);
  return out;
}

/// Rectangular window [y0, y0+h) x [x0, x0+w) of every channel.
inline Image crop(const Image& img, std::size_t y0, std::size_t x0, std::size_t h, std::size_t w) {
  if (y0 + h > img.height || x0 + w > img.width) {
    throw Error(ErrorCode::invalid_argument, "crop window exceeds image " + img.shape_string());
  }
  Image out(img.channels, h, w);
  for (std::size_t c = 0; c < img.channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y0 + y, x0 + x);
  return out;
}

/// Stacks equally shaped images into an [N, C, H, W] tensor.
inline Tensor to_tensor(const std::vector<Image>& batch, bool requires_grad = false) {
  if (batch.empty()) throw Error(ErrorCode::invalid_argument, "to_tensor: empty batch");
  std::vector<real> v;
  v.reserve(batch.size() * batch[0].size());
  for (const auto& img : batch) {
    require_same_shape(img, batch[0], "to_tensor");
    for (double x : img.data) v.push_back(static_cast<real>(x));
  }
  return Tensor({batch.size(), batch[0].channels, batch[0].height, batch[0].width}, std::move(v), requires_grad);
}

/// Sample `n` of an [N, C, H, W] tensor.
inline Image from_tensor(const Tensor& t, std::size_t n = 0) {
  if (t.rank() != 4 || n >= t.dim(0)) {
    throw Error(ErrorCode::shape_mismatch, "from_tensor: cannot take sample " + std::to_string(n) + " of " +
                                               shape_string(t.shape()));
  }
  Image img(t.dim(1), t.dim(2), t.dim(3));
  auto v = t.values();
  std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(n * img.size()), img.size(), img.data.begin());
  return img;
}

}  // namespace dphr
