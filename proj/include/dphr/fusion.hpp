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

/// @file fusion.hpp
/// Model-based reconstruction from one polarization stack, and its blend with the
/// network prediction.
///
/// Orthogonal polarizer pairs (0, 90) and (45, 135) each sum to the full irradiance times
/// t0, so each pair is a pseudo-exposure of the unpolarized scene:
///
///     H_t = sum_p W(L_a + L_b) (g(L_a) + g(L_b)) / sum_p W(L_a + L_b) t0
///     W(x) = exp(-(x - c)^2 / (2 sigma^2))
///
/// The blend is H = alpha H_t + (1 - alpha) H_d with alpha = rho / (rho + 1 - M_1).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "dphr/error.hpp"
#include "dphr/image.hpp"
#include "dphr/polarimetry.hpp"

namespace dphr::fusion {

inline constexpr double kAlphaEpsilon = 1e-9;

struct FusionConfig {
  double sigma = 0.2;
  double center = 1.0;
  double weight_floor = 1e-12;
  double percentile = 99.9;
  polarimetry::CameraResponse crf = polarimetry::CameraResponse::linear();

  void validate() const {
    if (!(sigma > 0)) throw Error(ErrorCode::invalid_config, "fusion: sigma must be positive");
    if (!(percentile > 0 && percentile <= 100)) {
      throw Error(ErrorCode::invalid_config, "fusion: percentile must lie in (0, 100]");
    }
  }
};

inline double gaussian_weight(double x, double center, double sigma) {
  const double d = x - center;
  return std::exp(-d * d / (2 * sigma * sigma));
}

struct TraditionalHdr {
  Image value;                        // H_t; 0 where invalid
  std::vector<std::uint8_t> invalid;  // 1 where the summed weight fell below the floor
  std::size_t invalid_count = 0;
};

/// `stack` is a pixel-domain capture.
inline TraditionalHdr traditional_hdr(const polarimetry::PolarizationStack& stack, const FusionConfig& cfg = {}) {
  cfg.validate();
  stack.validate();
  if (stack.domain != polarimetry::Domain::pixel) {
    throw Error(ErrorCode::invalid_argument, "traditional_hdr: expects a pixel-domain capture");
  }
  if (!(stack.t0_ms > 0)) throw Error(ErrorCode::invalid_argument, "traditional_hdr: exposure time must be positive");
  const auto& i0 = stack.images[0];
  TraditionalHdr out{Image(i0.channels, i0.height, i0.width), std::vector<std::uint8_t>(i0.size(), 0), 0};
  constexpr std::size_t pairs[2][2] = {{0, 2}, {1, 3}};
  for (std::size_t i = 0; i < i0.size(); ++i) {
    double num = 0, wsum = 0;
    for (const auto& pr : pairs) {
      const double la = stack.images[pr[0]].data[i], lb = stack.images[pr[1]].data[i];
      const double w = gaussian_weight(la + lb, cfg.center, cfg.sigma);
      num += w * (cfg.crf.inverse(la) + cfg.crf.inverse(lb));
      wsum += w;
    }
    if (wsum < cfg.weight_floor) {
      out.invalid[i] = 1;
      ++out.invalid_count;
      continue;
    }
    out.value.data[i] = num / (wsum * stack.t0_ms);
  }
  return out;
}

/// alpha = rho / (rho + 1 - M_1); 0 where the denominator is at most kAlphaEpsilon.
inline Image alpha_map(const Image& rho, const Image& mean_mask) {
  require_same_shape(rho, mean_mask, "alpha_map");
  Image a(rho.channels, rho.height, rho.width);
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double den = rho.data[i] + 1.0 - mean_mask.data[i];
    a.data[i] = den <= kAlphaEpsilon ? 0.0 : std::clamp(rho.data[i] / den, 0.0, 1.0);
  }
  return a;
}

/// alpha H_t + (1 - alpha) H_d. `alpha` is single-channel or matches the images.
inline Image fuse(const Image& ht, const Image& hd, const Image& alpha) {
  require_same_shape(ht, hd, "fuse");
  if (alpha.height != ht.height || alpha.width != ht.width || (alpha.channels != 1 && alpha.channels != ht.channels)) {
    throw Error(ErrorCode::shape_mismatch, "fuse: alpha " + alpha.shape_string() + " does not match " + ht.shape_string());
  }
  Image h(ht.channels, ht.height, ht.width);
  const std::size_t px = ht.pixels();
  for (std::size_t c = 0; c < ht.channels; ++c)
    for (std::size_t i = 0; i < px; ++i) {
      const double a = alpha.data[(alpha.channels == 1 ? 0 : c) * px + i];
      const std::size_t k = c * px + i;
      h.data[k] = a * ht.data[k] + (1 - a) * hd.data[k];
    }
  return h;
}

/// p-th percentile with linear interpolation between order statistics.
inline double percentile(std::vector<double> values, double p) {
  if (values.empty()) throw Error(ErrorCode::empty_reduction, "percentile of an empty set");
  if (!(p >= 0 && p <= 100)) throw Error(ErrorCode::invalid_argument, "percentile must lie in [0, 100]");
  const double pos = p / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(lo), values.end());
  const double vlo = values[lo];
  if (hi == lo) return vlo;
  const double vhi = *std::min_element(values.begin() + static_cast<std::ptrdiff_t>(hi), values.end());
  return vlo + (pos - static_cast<double>(lo)) * (vhi - vlo);
}

/// Divides by the p-th percentile of all values and clamps to [0, 1].
inline Image normalize_hdr(const Image& img, double p = 99.9) {
  for (double v : img.data) {
    if (!std::isfinite(v)) throw Error(ErrorCode::non_finite, "normalize_hdr: image has non-finite values");
  }
  const double scale = percentile(img.data, p);
  if (!(scale > 0)) {
    throw Error(ErrorCode::degenerate_input, "normalize_hdr: percentile is zero (all-zero or mostly-zero image)");
  }
  Image out = img;
  for (auto& v : out.data) v = std::clamp(v / scale, 0.0, 1.0);
  return out;
}

struct FusionResult {
  Image ht;     // normalized H_t
  Image hd;     // normalized H_d
  Image alpha;  // single channel; 0 where H_t is invalid
  Image h;
};

/// Full blend for one capture: normalizes H_t and H_d to a common scale, builds alpha
/// from the capture DoLP and mean mask, and forces alpha to 0 where H_t is invalid.
inline FusionResult blend(const TraditionalHdr& ht, const Image& hd, const Image& rho, const Image& mean_mask,
                          const FusionConfig& cfg = {}) {
  FusionResult r;
  r.ht = normalize_hdr(ht.value, cfg.percentile);
  r.hd = normalize_hdr(hd, cfg.percentile);
  r.alpha = alpha_map(rho, mean_mask);
  const std::size_t px = r.alpha.pixels();
  for (std::size_t c = 0; c < ht.value.channels; ++c)
    for (std::size_t i = 0; i < px; ++i)
      if (ht.invalid[c * px + i]) r.alpha.data[i] = 0;
  r.h = fuse(r.ht, r.hd, r.alpha);
  return r;
}

}  // namespace dphr::fusion
