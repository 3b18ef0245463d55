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

/// @file polarimetry.hpp
/// Linear polarization physics for a four-orientation (0/45/90/135 degree) division-of-focal-plane
/// sensor: demosaicing, Stokes decomposition, the polarizer/exposure forward model, camera
/// response, and an EM fit of the Gamma + Uniform DoLP mixture.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/gamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "dphr/error.hpp"
#include "dphr/image.hpp"

namespace dphr::polarimetry {

enum class Domain { irradiance, pixel };

/// Polarizer angles handled by the sensor, in stack order.
inline constexpr std::array<int, 4> kAngles{0, 45, 90, 135};

inline std::size_t angle_index(int degrees) {
  for (std::size_t i = 0; i < kAngles.size(); ++i)
    if (kAngles[i] == degrees) return i;
  throw Error(ErrorCode::invalid_config, "unsupported polarizer angle " + std::to_string(degrees));
}

/// Four aligned images behind 0, 45, 90 and 135 degree polarizers.
struct PolarizationStack {
  std::array<Image, 4> images;  // indexed like kAngles
  double t0_ms = 1.0;
  Domain domain = Domain::irradiance;

  const Image& at_angle(int degrees) const { return images[angle_index(degrees)]; }
  const Image& i0() const { return images[0]; }
  const Image& i45() const { return images[1]; }
  const Image& i90() const { return images[2]; }
  const Image& i135() const { return images[3]; }

  std::size_t channels() const { return images[0].channels; }
  std::size_t height() const { return images[0].height; }
  std::size_t width() const { return images[0].width; }

  void validate() const {
    for (const auto& img : images) require_same_shape(img, images[0], "polarization stack");
    if (!(t0_ms > 0)) throw Error(ErrorCode::invalid_argument, "polarization stack: t0 must be positive");
    for (const auto& img : images) {
      for (double v : img.data) {
        const bool ok = domain == Domain::pixel ? (v >= 0 && v <= 1) : v >= 0;
        if (!ok) {
          throw Error(ErrorCode::invalid_argument,
                      std::string("polarization stack: value ") + std::to_string(v) + " outside the " +
                          (domain == Domain::pixel ? "[0,1] pixel" : "non-negative irradiance") + " range");
        }
      }
    }
  }
};

/// Polarizer angle of each pixel of the 2x2 superpixel, row-major.
struct OrientationLayout {
  std::array<std::array<int, 2>, 2> grid{{{90, 45}, {135, 0}}};

  static OrientationLayout from_grid(const std::array<std::array<int, 2>, 2>& g) {
    OrientationLayout layout{g};
    std::array<bool, 4> seen{};
    for (const auto& row : g)
      for (int a : row) {
        const auto i = angle_index(a);
        if (seen[i]) throw Error(ErrorCode::invalid_config, "orientation layout repeats angle " + std::to_string(a));
        seen[i] = true;
      }
    return layout;
  }
};

/// Splits a (2H x 2W) mosaic into four H x W images by superpixel indexing.
inline PolarizationStack demosaic(const Image& raw, const OrientationLayout& layout = {}, double t0_ms = 1.0,
                                  Domain domain = Domain::pixel) {
  if (raw.height % 2 || raw.width % 2 || raw.empty()) {
    throw Error(ErrorCode::invalid_argument, "demosaic: mosaic dimensions must be even and non-zero, got " +
                                                 raw.shape_string());
  }
  PolarizationStack stack;
  stack.t0_ms = t0_ms;
  stack.domain = domain;
  const std::size_t h = raw.height / 2, w = raw.width / 2;
  for (std::size_t r = 0; r < 2; ++r) {
    for (std::size_t c = 0; c < 2; ++c) {
      Image& img = stack.images[angle_index(layout.grid[r][c])];
      img = Image(raw.channels, h, w);
      for (std::size_t ch = 0; ch < raw.channels; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) img.at(ch, y, x) = raw.at(ch, 2 * y + r, 2 * x + c);
    }
  }
  return stack;
}

/// Inverse of `demosaic`.
inline Image mosaic(const PolarizationStack& stack, const OrientationLayout& layout = {}) {
  for (const auto& img : stack.images) require_same_shape(img, stack.images[0], "mosaic");
  const std::size_t h = stack.height(), w = stack.width();
  Image raw(stack.channels(), 2 * h, 2 * w);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 2; ++c) {
      const Image& img = stack.images[angle_index(layout.grid[r][c])];
      for (std::size_t ch = 0; ch < raw.channels; ++ch)
        for (std::size_t y = 0; y < h; ++y)
          for (std::size_t x = 0; x < w; ++x) raw.at(ch, 2 * y + r, 2 * x + c) = img.at(ch, y, x);
    }
  return raw;
}

struct StokesMap {
  Image s0, s1, s2;
};

/// S0 = (I0 + I45 + I90 + I135) / 2, S1 = I0 - I90, S2 = I45 - I135.
inline StokesMap stokes(const PolarizationStack& stack) {
  for (const auto& img : stack.images) require_same_shape(img, stack.images[0], "stokes");
  const auto& [i0, i45, i90, i135] = stack.images;
  StokesMap s{Image(i0.channels, i0.height, i0.width), Image(i0.channels, i0.height, i0.width),
              Image(i0.channels, i0.height, i0.width)};
  for (std::size_t i = 0; i < i0.size(); ++i) {
    s.s0.data[i] = 0.5 * (i0.data[i] + i45.data[i] + i90.data[i] + i135.data[i]);
    s.s1.data[i] = i0.data[i] - i90.data[i];
    s.s2.data[i] = i45.data[i] - i135.data[i];
  }
  return s;
}

/// Stokes parameters of the channel-mean signal (one shared polarization estimate for colour).
inline StokesMap mean_stokes(const StokesMap& s) {
  return {mean_over_channels(s.s0), mean_over_channels(s.s1), mean_over_channels(s.s2)};
}

/// Below this S0 a pixel is treated as dark and reported with zero DoLP.
inline constexpr double kDarkS0 = 1e-9;

/// Degree of linear polarization, clamped to [0, 1].
inline Image dolp(const StokesMap& s) {
  Image rho(s.s0.channels, s.s0.height, s.s0.width);
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double s0 = s.s0.data[i];
    if (s0 <= kDarkS0) continue;
    rho.data[i] = std::clamp(std::hypot(s.s1.data[i], s.s2.data[i]) / s0, 0.0, 1.0);
  }
  return rho;
}

/// Angle of linear polarization in degrees, within [0, 180).
inline Image aolp(const StokesMap& s) {
  Image theta(s.s0.channels, s.s0.height, s.s0.width);
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double s1 = s.s1.data[i], s2 = s.s2.data[i];
    if (s1 == 0 && s2 == 0) continue;
    double deg = 0.5 * std::atan2(s2, s1) * 180.0 / std::numbers::pi;
    if (deg < 0) deg += 180.0;
    if (deg >= 180.0) deg -= 180.0;
    theta.data[i] = deg;
  }
  return theta;
}

namespace detail {

// rho / theta may be single-channel (shared across colour channels) or match `irr`.
inline double channel_value(const Image& field, std::size_t c, std::size_t i) {
  return field.channels == 1 ? field.data[i] : field.data[c * field.pixels() + i];
}

inline void check_field(const Image& field, const Image& irr, const char* what) {
  if (field.height != irr.height || field.width != irr.width ||
      (field.channels != 1 && field.channels != irr.channels)) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + " " + field.shape_string() +
                                               " does not match irradiance " + irr.shape_string());
  }
}

}  // namespace detail

/// Irradiance behind each polarizer for light of irradiance I, DoLP rho and AoLP theta (degrees):
/// I0, I90 = I(1 +- rho cos 2theta) / 2 and I45, I135 = I(1 +- rho sin 2theta) / 2.
inline PolarizationStack simulate_polarizers(const Image& irradiance, const Image& rho, const Image& theta_deg,
                                             double t0_ms = 1.0) {
  detail::check_field(rho, irradiance, "dolp");
  detail::check_field(theta_deg, irradiance, "aolp");
  PolarizationStack stack;
  stack.t0_ms = t0_ms;
  stack.domain = Domain::irradiance;
  for (auto& img : stack.images) img = Image(irradiance.channels, irradiance.height, irradiance.width);
  const std::size_t px = irradiance.pixels();
  for (std::size_t c = 0; c < irradiance.channels; ++c) {
    for (std::size_t i = 0; i < px; ++i) {
      const double intensity = irradiance.data[c * px + i];
      const double p = detail::channel_value(rho, c, i);
      const double two_theta = 2.0 * detail::channel_value(theta_deg, c, i) * std::numbers::pi / 180.0;
      const double pc = p * std::cos(two_theta), ps = p * std::sin(two_theta);
      const std::size_t k = c * px + i;
      stack.images[0].data[k] = std::max(0.0, 0.5 * intensity * (1 + pc));
      stack.images[2].data[k] = std::max(0.0, 0.5 * intensity * (1 - pc));
      stack.images[1].data[k] = std::max(0.0, 0.5 * intensity * (1 + ps));
      stack.images[3].data[k] = std::max(0.0, 0.5 * intensity * (1 - ps));
    }
  }
  return stack;
}

/// Effective exposure times seen through each polarizer. t1/t3 pair the 0/90 degree
/// images and t2/t4 the 45/135 degree images, so t1 + t3 = t2 + t4 = t0.
struct ExposureSet {
  double t1 = 0, t2 = 0, t3 = 0, t4 = 0;
};

inline ExposureSet effective_exposures(double t0_ms, double rho, double theta_deg) {
  if (!(t0_ms > 0)) throw Error(ErrorCode::invalid_argument, "effective_exposures: t0 must be positive");
  const double two_theta = 2.0 * theta_deg * std::numbers::pi / 180.0;
  const double pc = rho * std::cos(two_theta), ps = rho * std::sin(two_theta);
  return {0.5 * t0_ms * (1 + pc), 0.5 * t0_ms * (1 + ps), 0.5 * t0_ms * (1 - pc), 0.5 * t0_ms * (1 - ps)};
}

// ---------------------------------------------------------------------------
// Camera response

/// Maps exposure to pixel value on [0, 1] and back. `bits == 0` disables quantization.
class CameraResponse {
 public:
  enum class Kind { linear, gamma, lut };

  static CameraResponse linear(int bits = 8) { return CameraResponse(Kind::linear, 1.0, {}, bits); }

  static CameraResponse gamma(double g = 2.2, int bits = 8) {
    if (!(g > 0) || !std::isfinite(g)) {
      throw Error(ErrorCode::invalid_config, "camera response: gamma must be positive and finite");
    }
    return CameraResponse(Kind::gamma, g, {}, bits);
  }

  /// `table[i]` is the pixel value for exposure i / (n - 1); must increase strictly from 0 to 1.
  static CameraResponse lut(std::vector<double> table, int bits = 8) {
    if (table.size() < 2) throw Error(ErrorCode::invalid_config, "camera response: LUT needs at least 2 entries");
    for (std::size_t i = 1; i < table.size(); ++i) {
      if (!(table[i] > table[i - 1])) {
        throw Error(ErrorCode::invalid_config,
                    "camera response: LUT is not strictly increasing at entry " + std::to_string(i));
      }
    }
    if (table.front() != 0.0 || table.back() != 1.0) {
      throw Error(ErrorCode::invalid_config, "camera response: LUT must run from 0 to 1");
    }
    return CameraResponse(Kind::lut, 1.0, std::move(table), bits);
  }

  Kind kind() const { return kind_; }
  double gamma_value() const { return gamma_; }
  int bits() const { return bits_; }
  const std::vector<double>& table() const { return table_; }

  /// Largest code value, or 0 when unquantized.
  double levels() const { return bits_ > 0 ? static_cast<double>((std::uint64_t{1} << bits_) - 1) : 0.0; }

  /// f on [0, 1]; exposure above 1 saturates.
  double response(double exposure) const {
    const double x = std::clamp(exposure, 0.0, 1.0);
    switch (kind_) {
      case Kind::linear: return x;
      case Kind::gamma: return std::pow(x, 1.0 / gamma_);
      case Kind::lut: {
        const double pos = x * static_cast<double>(table_.size() - 1);
        const auto i = std::min(static_cast<std::size_t>(pos), table_.size() - 2);
        const double frac = pos - static_cast<double>(i);
        return table_[i] + frac * (table_[i + 1] - table_[i]);
      }
    }
    return x;
  }

  /// g = f^-1 on [0, 1].
  double inverse(double pixel) const {
    const double v = std::clamp(pixel, 0.0, 1.0);
    switch (kind_) {
      case Kind::linear: return v;
      case Kind::gamma: return std::pow(v, gamma_);
      case Kind::lut: {
        const auto it = std::upper_bound(table_.begin(), table_.end(), v);
        const auto i = std::min<std::size_t>(static_cast<std::size_t>(std::max<std::ptrdiff_t>(it - table_.begin() - 1, 0)),
                                             table_.size() - 2);
        const double frac = (v - table_[i]) / (table_[i + 1] - table_[i]);
        return (static_cast<double>(i) + frac) / static_cast<double>(table_.size() - 1);
      }
    }
    return v;
  }

  /// Rounds to the nearest code value (halves away from zero).
  double quantize(double pixel) const {
    if (bits_ <= 0) return pixel;
    return std::round(pixel * levels()) / levels();
  }

 private:
  CameraResponse(Kind k, double g, std::vector<double> table, int bits)
      : kind_(k), gamma_(g), table_(std::move(table)), bits_(bits) {
    if (bits < 0 || bits > 16) throw Error(ErrorCode::invalid_config, "camera response: bit depth must be in [0, 16]");
  }

  Kind kind_;
  double gamma_;
  std::vector<double> table_;
  int bits_;
};

/// L = quantize(clamp(f(I * t), 0, 1)).
inline Image apply_crf(const Image& irradiance, double t_ms, const CameraResponse& crf) {
  Image out(irradiance.channels, irradiance.height, irradiance.width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (irradiance.data[i] < 0) throw Error(ErrorCode::invalid_argument, "apply_crf: negative irradiance");
    out.data[i] = crf.quantize(crf.response(irradiance.data[i] * t_ms));
  }
  return out;
}

struct LinearizedImage {
  Image value;                      // g(L)
  std::vector<std::uint8_t> saturated;  // 1 where L reached the top code
  std::size_t saturated_count = 0;
};

inline LinearizedImage invert_crf(const Image& ldr, const CameraResponse& crf) {
  LinearizedImage out{Image(ldr.channels, ldr.height, ldr.width), std::vector<std::uint8_t>(ldr.size(), 0), 0};
  for (std::size_t i = 0; i < ldr.size(); ++i) {
    out.value.data[i] = crf.inverse(ldr.data[i]);
    if (ldr.data[i] >= 1.0) {
      out.saturated[i] = 1;
      ++out.saturated_count;
    }
  }
  return out;
}

/// Irradiance stack -> pixel-domain capture at the stack's exposure.
inline PolarizationStack capture(const PolarizationStack& irradiance, const CameraResponse& crf) {
  PolarizationStack out;
  out.t0_ms = irradiance.t0_ms;
  out.domain = Domain::pixel;
  for (std::size_t i = 0; i < 4; ++i) out.images[i] = apply_crf(irradiance.images[i], irradiance.t0_ms, crf);
  return out;
}

/// Pixel-domain capture -> irradiance estimate g(L) / t0.
inline PolarizationStack linearize(const PolarizationStack& pixels, const CameraResponse& crf) {
  if (pixels.domain != Domain::pixel) return pixels;
  PolarizationStack out;
  out.t0_ms = pixels.t0_ms;
  out.domain = Domain::irradiance;
  for (std::size_t i = 0; i < 4; ++i) {
    out.images[i] = invert_crf(pixels.images[i], crf).value;
    for (auto& v : out.images[i].data) v /= pixels.t0_ms;
  }
  return out;
}

/// Single-channel DoLP of a capture, estimated from the channel-mean linear Stokes vector.
inline Image capture_dolp(const PolarizationStack& stack, const CameraResponse& crf) {
  return dolp(mean_stokes(stokes(linearize(stack, crf))));
}

// ---------------------------------------------------------------------------
// DoLP distribution: w * Gamma(shape, scale) + (1 - w) * Uniform(u_start, u_end)

struct MixtureParams {
  double w = 0.934;
  double gamma_shape = 6.264;
  double gamma_scale = 0.023;
  double u_start = 0.0;
  double u_end = 1.0;
};

struct MixtureFit {
  MixtureParams params;
  double neg_log_likelihood = 0;
  std::vector<double> nll_history;  // after initialization, then after every EM iteration
  int iterations = 0;
  bool converged = false;
};

struct EmConfig {
  double w0 = 0.9;
  double init_quantile = 0.9;  // Gamma moments use samples below this quantile
  double tolerance = 1e-8;     // stop when the NLL decrease falls below this
  int max_iterations = 500;
  double min_sample = 1e-6;    // samples are floored here so log(x) stays finite
};

inline double gamma_pdf(double x, double shape, double scale) {
  if (x <= 0) return 0.0;
  return std::exp((shape - 1) * std::log(x) - x / scale - std::lgamma(shape) - shape * std::log(scale));
}

inline double mixture_pdf(double x, const MixtureParams& p) {
  const double uniform = (x >= p.u_start && x <= p.u_end) ? 1.0 / (p.u_end - p.u_start) : 0.0;
  return p.w * gamma_pdf(x, p.gamma_shape, p.gamma_scale) + (1 - p.w) * uniform;
}

inline double mixture_cdf(double x, const MixtureParams& p) {
  const double g = x <= 0 ? 0.0 : boost::math::gamma_p(p.gamma_shape, x / p.gamma_scale);
  const double u = std::clamp((x - p.u_start) / (p.u_end - p.u_start), 0.0, 1.0);
  return p.w * g + (1 - p.w) * u;
}

/// Draws from the mixture; values are clamped to [0, 1] (Gamma tail mass above 1 is negligible
/// for realistic DoLP parameters).
inline double sample_mixture(const MixtureParams& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  if (unit(rng) < p.w) {
    std::gamma_distribution<double> g(p.gamma_shape, p.gamma_scale);
    return std::min(g(rng), 1.0);
  }
  return p.u_start + (p.u_end - p.u_start) * unit(rng);
}

namespace detail {

inline double mixture_nll(const std::vector<double>& x, const MixtureParams& p) {
  double nll = 0;
  for (double v : x) nll -= std::log(mixture_pdf(v, p));
  return nll;
}

// Weighted Gamma MLE: solves log k - digamma(k) = s by Newton iteration.
inline double solve_gamma_shape(double s) {
  double k = (3 - s + std::sqrt((s - 3) * (s - 3) + 24 * s)) / (12 * s);
  for (int i = 0; i < 100; ++i) {
    const double f = std::log(k) - boost::math::digamma(k) - s;
    const double df = 1 / k - boost::math::trigamma(k);
    double next = k - f / df;
    if (next <= 0) next = k / 2;
    if (std::abs(next - k) <= 1e-14 * k) return next;
    k = next;
  }
  return k;
}

}  // namespace detail

/// Expectation-maximization fit with the uniform support fixed to [0, 1]. The NLL recorded
/// in `nll_history` is non-increasing (EM ascent property).
inline MixtureFit fit_dolp_mixture(std::vector<double> samples, const EmConfig& cfg = {}) {
  if (samples.empty()) throw Error(ErrorCode::invalid_argument, "fit_dolp_mixture: no samples");
  for (double v : samples) {
    if (!(v >= 0 && v <= 1)) {
      throw Error(ErrorCode::invalid_argument, "fit_dolp_mixture: sample " + std::to_string(v) + " outside [0,1]");
    }
  }
  const auto [lo, hi] = std::minmax_element(samples.begin(), samples.end());
  if (*lo == *hi) throw Error(ErrorCode::degenerate_input, "fit_dolp_mixture: all samples are identical");
  for (double& v : samples) v = std::max(v, cfg.min_sample);

  // Method-of-moments Gamma start on the bulk below the configured quantile.
  std::vector<double> sorted = samples;
  std::sort(sorted.begin(), sorted.end());
  const auto cut = std::max<std::size_t>(
      2, static_cast<std::size_t>(cfg.init_quantile * static_cast<double>(sorted.size())));
  double m = 0, v = 0;
  const std::size_t n_bulk = std::min(cut, sorted.size());
  for (std::size_t i = 0; i < n_bulk; ++i) m += sorted[i];
  m /= static_cast<double>(n_bulk);
  for (std::size_t i = 0; i < n_bulk; ++i) v += (sorted[i] - m) * (sorted[i] - m);
  v /= static_cast<double>(n_bulk);
  if (!(v > 0)) v = 1e-6;

  MixtureFit fit;
  fit.params = MixtureParams{cfg.w0, m * m / v, v / m, 0.0, 1.0};
  fit.neg_log_likelihood = detail::mixture_nll(samples, fit.params);
  fit.nll_history.push_back(fit.neg_log_likelihood);

  const std::size_t n = samples.size();
  std::vector<double> resp(n);
  for (int it = 0; it < cfg.max_iterations; ++it) {
    const auto& p = fit.params;
    double rsum = 0, rx = 0, rlogx = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const double g = p.w * gamma_pdf(samples[i], p.gamma_shape, p.gamma_scale);
      const double total = g + (1 - p.w) / (p.u_end - p.u_start);
      resp[i] = total > 0 ? g / total : 0.0;
      rsum += resp[i];
      rx += resp[i] * samples[i];
      rlogx += resp[i] * std::log(samples[i]);
    }
    MixtureParams next = p;
    next.w = rsum / static_cast<double>(n);
    if (rsum > 0) {
      const double mean_x = rx / rsum;
      const double s = std::log(mean_x) - rlogx / rsum;
      if (s > 0) {
        next.gamma_shape = detail::solve_gamma_shape(s);
        next.gamma_scale = mean_x / next.gamma_shape;
      }
    }
    fit.params = next;
    const double nll = detail::mixture_nll(samples, next);
    fit.nll_history.push_back(nll);
    fit.iterations = it + 1;
    const double improvement = fit.neg_log_likelihood - nll;
    fit.neg_log_likelihood = nll;
    if (improvement < cfg.tolerance) {
      fit.converged = true;
      break;
    }
  }
  return fit;
}

}  // namespace dphr::polarimetry
