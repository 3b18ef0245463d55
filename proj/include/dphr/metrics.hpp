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

/// @file metrics.hpp
/// MSE, PU-encoded PSNR and SSIM, and a global tone mapper for previews.
///
/// Images are expected in [0, 1] (see fusion::normalize_hdr). Before PU encoding they are
/// mapped to display luminance Y = black + (peak - black) x, with peak 1000 cd/m^2.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include "dphr/error.hpp"
#include "dphr/image.hpp"
#include "json.hpp"

#ifndef DPHR_DATA_DIR
#define DPHR_DATA_DIR "data"
#endif

namespace dphr::metrics {

inline constexpr double kPsnrCap = 99.0;

struct DisplayModel {
  double black = 0.005;
  double peak = 1000.0;

  double luminance(double x) const { return black + (peak - black) * std::max(x, 0.0); }
};

/// Monotone map from luminance (cd/m^2) to perceptually uniform code values.
class PuEncoding {
 public:
  enum class Kind { pu21, log };

  /// V = p7 (((p1 + p2 Y^p4) / (1 + p3 Y^p4))^p5 - p6), clamped at 0; Y is clamped to the domain.
  static PuEncoding pu21(std::array<double, 7> params, double y_min = 0.005, double y_max = 10000.0) {
    PuEncoding e;
    e.kind_ = Kind::pu21;
    e.p_ = params;
    e.y_min_ = y_min;
    e.y_max_ = y_max;
    return e;
  }

  /// log10(Y + eps).
  static PuEncoding log(double eps = 1e-6, double y_min = 0.005, double y_max = 10000.0) {
    PuEncoding e;
    e.kind_ = Kind::log;
    e.eps_ = eps;
    e.y_min_ = y_min;
    e.y_max_ = y_max;
    return e;
  }

  /// Reads a coefficient file such as data/pu21_banding.json.
  static PuEncoding from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error(ErrorCode::io, "cannot open PU coefficient file " + path);
    try {
      const auto j = nlohmann::json::parse(f);
      const auto p = j.at("params").get<std::vector<double>>();
      if (p.size() != 7) throw Error(ErrorCode::format, path + ": expected 7 PU parameters");
      const auto dom = j.at("domain_cd_m2").get<std::array<double, 2>>();
      return pu21({p[0], p[1], p[2], p[3], p[4], p[5], p[6]}, dom[0], dom[1]);
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::format, path + ": " + e.what());
    }
  }

  /// The bundled coefficient file, or the log encoding when it is unavailable.
  static PuEncoding default_encoding() {
    try {
      return from_file(std::string(DPHR_DATA_DIR) + "/pu21_banding.json");
    } catch (const Error&) {
      return log();
    }
  }

  Kind kind() const { return kind_; }
  double domain_min() const { return y_min_; }
  double domain_max() const { return y_max_; }

  double encode(double y) const {
    const double v = std::clamp(y, y_min_, y_max_);
    if (kind_ == Kind::log) return std::log10(v + eps_);
    const double t = std::pow(v, p_[3]);
    return std::max(p_[6] * (std::pow((p_[0] + p_[1] * t) / (1 + p_[2] * t), p_[4]) - p_[5]), 0.0);
  }

  double floor_code() const { return encode(y_min_); }
  double code_range() const { return encode(y_max_) - encode(y_min_); }

 private:
  Kind kind_ = Kind::log;
  std::array<double, 7> p_{};
  double eps_ = 1e-6;
  double y_min_ = 0.005;
  double y_max_ = 10000.0;
};

inline double mse(const Image& a, const Image& b) {
  require_same_shape(a, b, "mse");
  if (a.empty()) throw Error(ErrorCode::empty_reduction, "mse of empty images");
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
  return s / static_cast<double>(a.size());
}

inline Image pu_encode(const Image& img, const PuEncoding& enc, const DisplayModel& display = {}) {
  Image out = img;
  for (auto& v : out.data) v = enc.encode(display.luminance(v));
  return out;
}

/// PSNR with the code range as peak; identical images report kPsnrCap.
inline double pu_psnr(const Image& a, const Image& b, const PuEncoding& enc, const DisplayModel& display = {}) {
  const double e = mse(pu_encode(a, enc, display), pu_encode(b, enc, display));
  if (e == 0) return kPsnrCap;
  const double r = enc.code_range();
  return std::min(kPsnrCap, 10 * std::log10(r * r / e));
}

namespace detail {

// Normalized 1-d Gaussian taps of the given radius.
inline std::vector<double> gaussian_taps(std::size_t radius, double sigma) {
  std::vector<double> w(2 * radius + 1);
  double s = 0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    w[i] = std::exp(-d * d / (2 * sigma * sigma));
    s += w[i];
  }
  for (auto& v : w) v /= s;
  return w;
}

// Separable 'valid' filtering of one plane.
inline std::vector<double> filter_valid(const double* src, std::size_t h, std::size_t w, const std::vector<double>& k) {
  const std::size_t n = k.size(), ow = w - n + 1, oh = h - n + 1;
  std::vector<double> tmp(h * ow, 0), out(oh * ow, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t i = 0; i < n; ++i) tmp[y * ow + x] += k[i] * src[y * w + x + i];
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x)
      for (std::size_t i = 0; i < n; ++i) out[y * ow + x] += k[i] * tmp[(y + i) * ow + x];
  return out;
}

}  // namespace detail

/// Mean SSIM over channels and valid window positions. The window shrinks to fit images
/// smaller than 11 pixels.
inline double ssim(const Image& a, const Image& b, double dynamic_range, std::size_t window = 11,
                   double sigma = 1.5) {
  require_same_shape(a, b, "ssim");
  if (a.empty()) throw Error(ErrorCode::empty_reduction, "ssim of empty images");
  const std::size_t radius = std::min({window / 2, (a.height - 1) / 2, (a.width - 1) / 2});
  const auto k = detail::gaussian_taps(radius, sigma);
  const double c1 = std::pow(0.01 * dynamic_range, 2), c2 = std::pow(0.03 * dynamic_range, 2);
  const std::size_t px = a.pixels();
  double total = 0;
  std::size_t count = 0;
  std::vector<double> aa(px), bb(px), ab(px);
  for (std::size_t c = 0; c < a.channels; ++c) {
    const double* pa = a.data.data() + c * px;
    const double* pb = b.data.data() + c * px;
    for (std::size_t i = 0; i < px; ++i) {
      aa[i] = pa[i] * pa[i];
      bb[i] = pb[i] * pb[i];
      ab[i] = pa[i] * pb[i];
    }
    const auto ma = detail::filter_valid(pa, a.height, a.width, k);
    const auto mb = detail::filter_valid(pb, a.height, a.width, k);
    const auto saa = detail::filter_valid(aa.data(), a.height, a.width, k);
    const auto sbb = detail::filter_valid(bb.data(), a.height, a.width, k);
    const auto sab = detail::filter_valid(ab.data(), a.height, a.width, k);
    for (std::size_t i = 0; i < ma.size(); ++i) {
      const double va = saa[i] - ma[i] * ma[i], vb = sbb[i] - mb[i] * mb[i], cov = sab[i] - ma[i] * mb[i];
      total += ((2 * ma[i] * mb[i] + c1) * (2 * cov + c2)) /
               ((ma[i] * ma[i] + mb[i] * mb[i] + c1) * (va + vb + c2));
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

inline double pu_ssim(const Image& a, const Image& b, const PuEncoding& enc, const DisplayModel& display = {}) {
  return ssim(pu_encode(a, enc, display), pu_encode(b, enc, display), enc.code_range());
}

/// Preview operator: scales so the log-average luminance is 0.18, applies x / (1 + x)
/// per channel, then gamma 2.2, and rounds to 8-bit codes (returned as k / 255).
inline Image tonemap_global(const Image& img, double key = 0.18, double gamma = 2.2) {
  constexpr double delta = 1e-6;
  const std::size_t px = img.pixels();
  double log_sum = 0;
  for (std::size_t i = 0; i < px; ++i) {
    double lum = 0;
    if (img.channels == 3) {
      lum = 0.2126 * img.data[i] + 0.7152 * img.data[px + i] + 0.0722 * img.data[2 * px + i];
    } else {
      for (std::size_t c = 0; c < img.channels; ++c) lum += img.data[c * px + i];
      lum /= static_cast<double>(img.channels);
    }
    log_sum += std::log(delta + std::max(lum, 0.0));
  }
  const double log_avg = std::exp(log_sum / static_cast<double>(std::max<std::size_t>(px, 1)));
  const double scale = log_avg > delta * 1.000001 ? key / log_avg : 0.0;
  Image out(img.channels, img.height, img.width);
  for (std::size_t i = 0; i < img.size(); ++i) {
    const double x = std::max(img.data[i], 0.0) * scale;
    out.data[i] = std::round(255.0 * std::pow(x / (1 + x), 1 / gamma)) / 255.0;
  }
  return out;
}

}  // namespace dphr::metrics
