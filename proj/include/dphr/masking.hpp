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

/// @file masking.hpp
/// Polarization-driven feature masking.
///
/// Each polarizer image gets a validity mask from its exposedness and the scene DoLP:
///
///     M_i = (rho + K_i) / max(rho + K_i)
///
/// Features entering a convolution are multiplied by their mask, and the mask for the
/// convolution's output is the input mask convolved with the layer's absolute weights,
/// L1-normalized per output channel:
///
///     M_out = (|W| / (||W||_1 + eps)) * M_in
///
/// Mask propagation is not recorded on the tape.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dphr/error.hpp"
#include "dphr/image.hpp"
#include "dphr/polarimetry.hpp"
#include "dphr/tensor.hpp"

namespace dphr::masking {

inline constexpr double kDefaultThreshold = 0.95;
inline constexpr double kWeightEpsilon = 1e-6;

/// 1 up to the threshold, then a linear ramp down to 0 at full saturation. Evaluated on the
/// brightest colour channel of each pixel.
inline Image exposedness(const Image& ldr, double tau = kDefaultThreshold) {
  if (!(tau > 0 && tau < 1)) throw Error(ErrorCode::invalid_argument, "exposedness: threshold must lie in (0,1)");
  Image k = max_over_channels(ldr);
  for (auto& v : k.data) v = v <= tau ? 1.0 : std::clamp((1.0 - v) / (1.0 - tau), 0.0, 1.0);
  return k;
}

/// Normalized sum of DoLP and exposedness; the maximum is taken over the whole image.
inline Image input_mask(const Image& rho, const Image& k) {
  require_same_shape(rho, k, "input_mask");
  Image m(rho.channels, rho.height, rho.width);
  double peak = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    m.data[i] = rho.data[i] + k.data[i];
    peak = std::max(peak, m.data[i]);
  }
  if (!(peak > 0)) {
    throw Error(ErrorCode::degenerate_input, "input_mask: DoLP + exposedness is zero everywhere");
  }
  for (auto& v : m.data) v /= peak;
  return m;
}

inline Image mean_mask(const std::array<Image, 4>& masks) {
  for (const auto& m : masks) require_same_shape(m, masks[0], "mean_mask");
  Image out(masks[0].channels, masks[0].height, masks[0].width);
  for (const auto& m : masks)
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += m.data[i];
  for (auto& v : out.data) v *= 0.25;
  return out;
}

/// The four per-orientation masks of one capture and their mean.
struct InputMasks {
  std::array<Image, 4> per_angle;  // 0, 45, 90, 135 degrees; single channel each
  Image mean;                      // M_1
};

/// Masks for a pixel-domain capture given its (single-channel) DoLP.
inline InputMasks compute_input_masks(const polarimetry::PolarizationStack& pixels, const Image& rho,
                                      double tau = kDefaultThreshold) {
  InputMasks out;
  for (std::size_t i = 0; i < 4; ++i) out.per_angle[i] = input_mask(rho, exposedness(pixels.images[i], tau));
  out.mean = mean_mask(out.per_angle);
  return out;
}

/// Replicates each orientation mask over that image's colour channels, following the
/// network's input stacking order (all channels of 0 deg, then 45, 90, 135).
inline Image expand_to_input_channels(const InputMasks& masks, std::size_t channels_per_image) {
  const auto& m0 = masks.per_angle[0];
  Image out(4 * channels_per_image, m0.height, m0.width);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < channels_per_image; ++c)
      std::copy(masks.per_angle[i].data.begin(), masks.per_angle[i].data.end(),
                out.data.begin() + static_cast<std::ptrdiff_t>((i * channels_per_image + c) * m0.pixels()));
  return out;
}

/// X * M. The mask is either the same shape as the features or single-channel [N,1,H,W];
/// it is treated as a constant.
inline Tensor gate_features(const Tensor& features, const Tensor& mask) {
  if (features.rank() != 4 || mask.rank() != 4) {
    throw Error(ErrorCode::shape_mismatch, "gate_features: expected [N,C,H,W] features and mask");
  }
  if (mask.shape() == features.shape()) return mul(features, mask.detach());
  const auto& fs = features.shape();
  const auto& ms = mask.shape();
  if (ms[0] != fs[0] || ms[1] != 1 || ms[2] != fs[2] || ms[3] != fs[3]) {
    throw Error(ErrorCode::shape_mismatch, "gate_features: mask " + shape_string(ms) + " cannot gate features " +
                                               shape_string(fs));
  }
  const std::size_t hw = fs[2] * fs[3];
  std::vector<real> expanded(features.numel());
  auto mv = mask.values();
  for (std::size_t n = 0; n < fs[0]; ++n)
    for (std::size_t c = 0; c < fs[1]; ++c)
      std::copy_n(mv.begin() + static_cast<std::ptrdiff_t>(n * hw), hw,
                  expanded.begin() + static_cast<std::ptrdiff_t>((n * fs[1] + c) * hw));
  return mul(features, Tensor(fs, std::move(expanded)));
}

/// Mask for the output of a convolution with `weight` (same stride and padding as the
/// feature path). Values are clamped to [0, 1]; the result carries no gradient.
inline Tensor propagate_mask(const Tensor& mask, const Tensor& weight, std::size_t stride, std::size_t padding,
                             double eps = kWeightEpsilon) {
  const auto g = conv2d_geometry(mask.shape(), weight.shape(), stride, padding);
  const std::size_t per_filter = g.c * g.k * g.k;
  auto wv = weight.values();
  std::vector<real> kernel(wv.size());
  for (std::size_t f = 0; f < g.f; ++f) {
    real norm = 0;
    for (std::size_t j = 0; j < per_filter; ++j) norm += std::abs(wv[f * per_filter + j]);
    const real denom = norm + static_cast<real>(eps);
    for (std::size_t j = 0; j < per_filter; ++j) kernel[f * per_filter + j] = std::abs(wv[f * per_filter + j]) / denom;
  }
  std::vector<real> out(g.n * g.f * g.oh * g.ow, real{0});
  detail::conv2d_forward_raw(g, mask.values(), kernel, out);
  for (auto& v : out) v = std::clamp(v, real{0}, real{1});
  return Tensor({g.n, g.f, g.oh, g.ow}, std::move(out));
}

}  // namespace dphr::masking
