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

/// @file network.hpp
/// Masked U-Net. Encoder level k halves the resolution with a strided convolution;
/// decoder level j upsamples by 2, concatenates the encoder output of level D-1-j
/// (level 0 is the network input) and applies a stride-1 convolution.
///
/// Every convolution sees its input multiplied by a mask, and the mask of its output is
/// derived from the layer's weights (see masking.hpp). The mask pyramid is computed by
/// propagate_masks() and passed to forward(), so the same masks can be held fixed while
/// the parameters are perturbed.

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "dphr/archive.hpp"
#include "dphr/error.hpp"
#include "dphr/image.hpp"
#include "dphr/masking.hpp"
#include "dphr/polarimetry.hpp"
#include "dphr/tensor.hpp"
#include "json.hpp"

namespace dphr::network {

enum class Activation { relu, leaky_relu, linear };

inline constexpr real kLeakySlope = 0.2;
inline constexpr real kBatchNormEpsilon = 1e-5;
inline constexpr real kBatchNormMomentum = 0.1;

NLOHMANN_JSON_SERIALIZE_ENUM(Activation, {{Activation::relu, "relu"},
                                          {Activation::leaky_relu, "leaky_relu"},
                                          {Activation::linear, "linear"}})

struct LayerSpec {
  std::size_t filters = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  Activation activation = Activation::relu;
  bool batch_norm = false;

  bool operator==(const LayerSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(LayerSpec, filters, kernel, stride, activation, batch_norm)

struct NetworkConfig {
  std::size_t input_channels = 12;
  std::size_t output_channels = 3;
  std::vector<LayerSpec> encoder;
  std::vector<LayerSpec> decoder;
  bool skip_connections = true;

  bool operator==(const NetworkConfig&) const = default;

  std::size_t depth() const { return encoder.size(); }
  std::size_t layer_count() const { return encoder.size() + decoder.size(); }
  const LayerSpec& layer(std::size_t i) const { return i < encoder.size() ? encoder[i] : decoder[i - encoder.size()]; }

  /// Channels of encoder level `level` (0 is the network input).
  std::size_t level_channels(std::size_t level) const {
    return level == 0 ? input_channels : encoder[level - 1].filters;
  }

  /// Input channels seen by layer i (encoder layers first, then decoder layers).
  std::size_t layer_input_channels(std::size_t i) const {
    const std::size_t d = depth();
    if (i < d) return level_channels(i);
    const std::size_t j = i - d;
    const std::size_t below = j == 0 ? encoder.back().filters : decoder[j - 1].filters;
    return below + (skip_connections ? level_channels(d - 1 - j) : 0);
  }

  std::string layer_name(std::size_t i) const {
    return i < depth() ? "enc" + std::to_string(i) : "dec" + std::to_string(i - depth());
  }

  /// Throws invalid_config listing every violated constraint.
  void validate() const {
    std::vector<std::string> problems;
    if (input_channels == 0) problems.push_back("input_channels must be positive");
    if (encoder.empty()) problems.push_back("encoder must have at least one layer");
    if (encoder.size() != decoder.size()) {
      problems.push_back("decoder has " + std::to_string(decoder.size()) + " layers but encoder has " +
                         std::to_string(encoder.size()) + " (each decoder level undoes one encoder level)");
    }
    auto check = [&](const LayerSpec& s, const std::string& name, std::size_t required_stride) {
      if (s.filters == 0) problems.push_back(name + ": filters must be positive");
      if (s.kernel % 2 == 0) problems.push_back(name + ": kernel must be odd");
      if (s.stride != 1 && s.stride != 2) {
        problems.push_back(name + ": stride must be 1 or 2");
      } else if (s.stride != required_stride) {
        problems.push_back(name + (required_stride == 2 ? ": encoder layers must have stride 2"
                                                        : ": decoder layers must have stride 1"));
      }
    };
    for (std::size_t k = 0; k < encoder.size(); ++k) check(encoder[k], "enc" + std::to_string(k), 2);
    for (std::size_t j = 0; j < decoder.size(); ++j) check(decoder[j], "dec" + std::to_string(j), 1);
    if (!decoder.empty() && decoder.back().filters != output_channels) {
      problems.push_back("last decoder layer must output " + std::to_string(output_channels) + " channels");
    }
    if (output_channels != 3) problems.push_back("output_channels must be 3");
    if (!problems.empty()) {
      std::string msg = "invalid network config: ";
      for (std::size_t i = 0; i < problems.size(); ++i) msg += (i ? "; " : "") + problems[i];
      throw Error(ErrorCode::invalid_config, msg);
    }
  }

  /// Symmetric U-Net. Encoder filters base*2^k capped at 8*base; kernels 7, 5, 5, then 3.
  /// Leaky ReLU in the encoder, ReLU in the decoder, linear output. Batch norm on every
  /// layer except the first and the last.
  static NetworkConfig unet(std::size_t depth, std::size_t base_filters, std::size_t input_channels = 12) {
    NetworkConfig c;
    c.input_channels = input_channels;
    for (std::size_t k = 0; k < depth; ++k) {
      LayerSpec s;
      s.filters = base_filters << std::min<std::size_t>(k, 3);
      s.kernel = k == 0 ? 7 : k < 3 ? 5 : 3;
      s.stride = 2;
      s.activation = Activation::leaky_relu;
      s.batch_norm = k > 0;
      c.encoder.push_back(s);
    }
    for (std::size_t j = 0; j < depth; ++j) {
      const bool last = j + 1 == depth;
      LayerSpec s;
      s.filters = last ? c.output_channels : c.encoder[depth - 2 - j].filters;
      s.kernel = 3;
      s.stride = 1;
      s.activation = last ? Activation::linear : Activation::relu;
      s.batch_norm = !last;
      c.decoder.push_back(s);
    }
    return c;
  }

  static NetworkConfig desk() { return unet(4, 16); }
  static NetworkConfig full() { return unet(8, 64); }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, input_channels, output_channels, encoder, decoder,
                                                skip_connections)

struct ConvLayer {
  Tensor weight;  // [F, C, k, k]
  Tensor bias;    // [F]; undefined when followed by batch norm
  Tensor gamma;   // [F]; batch-norm layers only
  Tensor beta;    // [F]
  std::vector<real> running_mean;
  std::vector<real> running_var;

  bool batch_norm() const { return gamma.defined(); }
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

struct Parameters {
  NetworkConfig config;
  std::vector<ConvLayer> layers;  // encoder layers, then decoder layers

  /// Trainable tensors in a fixed order, named "<layer>.weight", "<layer>.bias",
  /// "<layer>.bn.gamma", "<layer>.bn.beta".
  std::vector<NamedTensor> trainable() const {
    std::vector<NamedTensor> out;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto name = config.layer_name(i);
      const auto& l = layers[i];
      out.push_back({name + ".weight", l.weight});
      if (l.bias.defined()) out.push_back({name + ".bias", l.bias});
      if (l.batch_norm()) {
        out.push_back({name + ".bn.gamma", l.gamma});
        out.push_back({name + ".bn.beta", l.beta});
      }
    }
    return out;
  }

  /// Deep copy; Tensor handles are otherwise shared.
  Parameters clone() const {
    auto copy = [](const Tensor& t) {
      return t.defined() ? Tensor(t.shape(), {t.values().begin(), t.values().end()}, t.requires_grad()) : Tensor();
    };
    Parameters p{config, {}};
    for (const auto& l : layers)
      p.layers.push_back({copy(l.weight), copy(l.bias), copy(l.gamma), copy(l.beta), l.running_mean, l.running_var});
    return p;
  }

  void zero_grad() {
    for (auto& t : trainable()) t.tensor.zero_grad();
  }
};

/// Xavier-uniform weights in [-sqrt(6/(fan_in+fan_out)), +sqrt(...)], zero bias, unit gamma.
inline ConvLayer make_conv_layer(std::size_t in_channels, const LayerSpec& spec, std::mt19937_64& rng) {
  const std::size_t kk = spec.kernel * spec.kernel;
  const double bound = std::sqrt(6.0 / static_cast<double>((in_channels + spec.filters) * kk));
  ConvLayer l;
  l.weight = random_uniform({spec.filters, in_channels, spec.kernel, spec.kernel}, static_cast<real>(-bound),
                            static_cast<real>(bound), rng, true);
  if (spec.batch_norm) {
    l.gamma = Tensor::full({spec.filters}, 1, true);
    l.beta = Tensor::zeros({spec.filters}, true);
    l.running_mean.assign(spec.filters, 0);
    l.running_var.assign(spec.filters, 1);
  } else {
    l.bias = Tensor::zeros({spec.filters}, true);
  }
  return l;
}

inline Parameters build(const NetworkConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  Parameters p{config, {}};
  for (std::size_t i = 0; i < config.layer_count(); ++i)
    p.layers.push_back(make_conv_layer(config.layer_input_channels(i), config.layer(i), rng));
  return p;
}

inline std::size_t count_parameters(const ConvLayer& l) {
  std::size_t n = l.weight.numel();
  for (const auto* t : {&l.bias, &l.gamma, &l.beta})
    if (t->defined()) n += t->numel();
  return n;
}

/// Trainable scalars; batch-norm running statistics are not counted.
inline std::size_t count_parameters(const Parameters& p) {
  std::size_t n = 0;
  for (const auto& l : p.layers) n += count_parameters(l);
  return n;
}

/// Batch mean and biased variance per channel, as used by a training-mode batch norm.
struct BatchStats {
  std::vector<real> mean;
  std::vector<real> var;
  std::size_t count = 0;  // values per channel
};

/// Training-mode batch norm over N, H, W. Writes the batch statistics to `stats`.
inline Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, BatchStats* stats,
                               real eps = kBatchNormEpsilon) {
  if (x.rank() != 4 || gamma.numel() != x.dim(1) || beta.numel() != x.dim(1)) {
    throw Error(ErrorCode::shape_mismatch, "batch_norm: " + shape_string(x.shape()) + " vs gamma " +
                                               shape_string(gamma.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3), m = n * hw;
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<real> mean(c, 0), var(c, 0), inv_std(c), xhat(x.numel()), out(x.numel());
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) mean[ch] += xv[(b * c + ch) * hw + i];
  for (auto& v : mean) v /= static_cast<real>(m);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const real d = xv[(b * c + ch) * hw + i] - mean[ch];
        var[ch] += d * d;
      }
  for (std::size_t ch = 0; ch < c; ++ch) {
    var[ch] /= static_cast<real>(m);
    inv_std[ch] = 1 / std::sqrt(var[ch] + eps);
  }
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        xhat[idx] = (xv[idx] - mean[ch]) * inv_std[ch];
        out[idx] = gv[ch] * xhat[idx] + bv[ch];
      }
  if (stats) *stats = {mean, var, m};
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [gamma, xhat = std::move(xhat), inv_std, n, c, hw, m](std::span<const real> g,
                                                                      std::span<const std::span<real>> pg) {
                   auto gv = gamma.values();
                   for (std::size_t ch = 0; ch < c; ++ch) {
                     real sum_g = 0, sum_gx = 0;
                     for (std::size_t b = 0; b < n; ++b)
                       for (std::size_t i = 0; i < hw; ++i) {
                         const std::size_t idx = (b * c + ch) * hw + i;
                         sum_g += g[idx];
                         sum_gx += g[idx] * xhat[idx];
                       }
                     if (!pg[1].empty()) pg[1][ch] += sum_gx;
                     if (!pg[2].empty()) pg[2][ch] += sum_g;
                     if (pg[0].empty()) continue;
                     const real scale = gv[ch] * inv_std[ch];
                     const real mg = sum_g / static_cast<real>(m), mgx = sum_gx / static_cast<real>(m);
                     for (std::size_t b = 0; b < n; ++b)
                       for (std::size_t i = 0; i < hw; ++i) {
                         const std::size_t idx = (b * c + ch) * hw + i;
                         pg[0][idx] += scale * (g[idx] - mg - xhat[idx] * mgx);
                       }
                   }
                 });
}

/// Inference-mode batch norm: a fixed per-channel affine map from the running statistics.
inline Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                              const std::vector<real>& running_mean, const std::vector<real>& running_var,
                              real eps = kBatchNormEpsilon) {
  if (x.rank() != 4 || gamma.numel() != x.dim(1) || running_mean.size() != x.dim(1)) {
    throw Error(ErrorCode::shape_mismatch, "batch_norm: " + shape_string(x.shape()) + " vs gamma " +
                                               shape_string(gamma.shape()));
  }
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto xv = x.values();
  auto gv = gamma.values();
  auto bv = beta.values();
  std::vector<real> inv_std(c), xhat(x.numel()), out(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) inv_std[ch] = 1 / std::sqrt(running_var[ch] + eps);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < hw; ++i) {
        const std::size_t idx = (b * c + ch) * hw + i;
        xhat[idx] = (xv[idx] - running_mean[ch]) * inv_std[ch];
        out[idx] = gv[ch] * xhat[idx] + bv[ch];
      }
  return make_op(x.shape(), std::move(out), {x, gamma, beta},
                 [gamma, xhat = std::move(xhat), inv_std, n, c, hw](std::span<const real> g,
                                                                   std::span<const std::span<real>> pg) {
                   auto gv = gamma.values();
                   for (std::size_t b = 0; b < n; ++b)
                     for (std::size_t ch = 0; ch < c; ++ch)
                       for (std::size_t i = 0; i < hw; ++i) {
                         const std::size_t idx = (b * c + ch) * hw + i;
                         if (!pg[0].empty()) pg[0][idx] += g[idx] * gv[ch] * inv_std[ch];
                         if (!pg[1].empty()) pg[1][ch] += g[idx] * xhat[idx];
                         if (!pg[2].empty()) pg[2][ch] += g[idx];
                       }
                 });
}

inline Tensor activate(const Tensor& x, Activation a) {
  switch (a) {
    case Activation::relu: return relu(x);
    case Activation::leaky_relu: return leaky_relu(x, kLeakySlope);
    case Activation::linear: return x;
  }
  return x;
}

/// Mask applied to the input of every layer, in layer order. Not on the tape.
struct MaskPyramid {
  std::vector<Tensor> gates;
};

inline void check_input(const NetworkConfig& config, const Tensor& t, const char* what) {
  if (t.rank() != 4 || t.dim(1) != config.input_channels) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + ": expected [N," +
                                               std::to_string(config.input_channels) + ",H,W], got " +
                                               shape_string(t.shape()));
  }
  const std::size_t factor = std::size_t{1} << config.depth();
  if (t.dim(2) % factor || t.dim(3) % factor) {
    throw Error(ErrorCode::shape_mismatch, std::string(what) + ": spatial size " + std::to_string(t.dim(2)) + "x" +
                                               std::to_string(t.dim(3)) + " is not divisible by " +
                                               std::to_string(factor));
  }
}

/// Follows each mask through the layers with the current weights. `input_mask` has one
/// channel per input channel ([N, input_channels, H, W]).
inline MaskPyramid propagate_masks(const Parameters& params, const Tensor& input_mask) {
  const auto& cfg = params.config;
  check_input(cfg, input_mask, "propagate_masks");
  const std::size_t d = cfg.depth();
  MaskPyramid pyr;
  std::vector<Tensor> level{input_mask.detach()};  // mask of encoder level k
  for (std::size_t k = 0; k < d; ++k) {
    pyr.gates.push_back(level[k]);
    const auto& s = cfg.encoder[k];
    level.push_back(masking::propagate_mask(level[k], params.layers[k].weight, s.stride, s.kernel / 2));
  }
  Tensor below = level[d];
  for (std::size_t j = 0; j < d; ++j) {
    Tensor up = upsample_nearest2x(below);
    Tensor gate = cfg.skip_connections ? concat_channels({up, level[d - 1 - j]}) : up;
    pyr.gates.push_back(gate);
    const auto& s = cfg.decoder[j];
    below = masking::propagate_mask(gate, params.layers[d + j].weight, s.stride, s.kernel / 2);
  }
  return pyr;
}

enum class Mode { train, eval };

struct ForwardResult {
  Tensor output;                       // [N, 3, H, W]
  std::vector<BatchStats> batch_stats;  // per layer; empty entries for layers without batch norm
  std::vector<Tensor> gated_inputs;     // what each convolution consumed
};

/// Pure function of its arguments. Training mode normalizes with batch statistics and
/// returns them; eval mode uses the running statistics and clamps the output at 0.
inline ForwardResult forward(const Parameters& params, const Tensor& input, const MaskPyramid& masks,
                             Mode mode = Mode::eval) {
  const auto& cfg = params.config;
  check_input(cfg, input, "forward");
  if (masks.gates.size() != cfg.layer_count()) {
    throw Error(ErrorCode::shape_mismatch, "forward: mask pyramid has " + std::to_string(masks.gates.size()) +
                                               " levels, network has " + std::to_string(cfg.layer_count()));
  }
  const std::size_t d = cfg.depth();
  ForwardResult r;
  r.batch_stats.resize(cfg.layer_count());

  auto layer = [&](std::size_t i, const Tensor& x) {
    const auto& s = cfg.layer(i);
    const auto& p = params.layers[i];
    Tensor gated = masking::gate_features(x, masks.gates[i]);
    r.gated_inputs.push_back(gated);
    Tensor y = conv2d(gated, p.weight, p.bias, s.stride, s.kernel / 2);
    if (p.batch_norm()) {
      y = mode == Mode::train ? batch_norm_train(y, p.gamma, p.beta, &r.batch_stats[i])
                              : batch_norm_eval(y, p.gamma, p.beta, p.running_mean, p.running_var);
    }
    return activate(y, s.activation);
  };

  std::vector<Tensor> level{input};
  for (std::size_t k = 0; k < d; ++k) level.push_back(layer(k, level[k]));
  Tensor below = level[d];
  for (std::size_t j = 0; j < d; ++j) {
    Tensor up = upsample_nearest2x(below);
    below = layer(d + j, cfg.skip_connections ? concat_channels({up, level[d - 1 - j]}) : up);
  }
  r.output = mode == Mode::eval ? clamp_min(below, 0) : below;
  return r;
}

/// running = (1 - momentum) * running + momentum * batch, with the unbiased batch variance.
inline void update_running_stats(Parameters& params, const std::vector<BatchStats>& stats,
                                 real momentum = kBatchNormMomentum) {
  for (std::size_t i = 0; i < params.layers.size() && i < stats.size(); ++i) {
    auto& l = params.layers[i];
    const auto& s = stats[i];
    if (!l.batch_norm() || s.mean.empty()) continue;
    const real unbias = s.count > 1 ? static_cast<real>(s.count) / static_cast<real>(s.count - 1) : 1;
    for (std::size_t c = 0; c < s.mean.size(); ++c) {
      l.running_mean[c] = (1 - momentum) * l.running_mean[c] + momentum * s.mean[c];
      l.running_var[c] = (1 - momentum) * l.running_var[c] + momentum * s.var[c] * unbias;
    }
  }
}

/// The four orientation images stacked along channels (0, 45, 90, 135 degrees).
inline Image stack_input(const polarimetry::PolarizationStack& stack) {
  stack.validate();
  const auto& first = stack.images[0];
  Image out(4 * first.channels, first.height, first.width);
  for (std::size_t i = 0; i < 4; ++i)
    std::copy(stack.images[i].data.begin(), stack.images[i].data.end(),
              out.data.begin() + static_cast<std::ptrdiff_t>(i * first.size()));
  return out;
}

/// Adds every parameter and running statistic, with the config under metadata["network"].
inline void to_archive(const Parameters& params, Archive& archive) {
  archive.metadata["network"] = params.config;
  for (const auto& t : params.trainable()) archive.add(t.name, t.tensor);
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    const auto& l = params.layers[i];
    if (!l.batch_norm()) continue;
    const auto name = params.config.layer_name(i);
    archive.add(name + ".bn.running_mean", {l.running_mean.size()}, {l.running_mean.begin(), l.running_mean.end()});
    archive.add(name + ".bn.running_var", {l.running_var.size()}, {l.running_var.begin(), l.running_var.end()});
  }
}

inline Parameters from_archive(const Archive& archive) {
  if (!archive.metadata.contains("network")) throw Error(ErrorCode::format, "archive has no network config");
  NetworkConfig cfg;
  try {
    cfg = archive.metadata.at("network").get<NetworkConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, std::string("network config in archive: ") + e.what());
  }
  Parameters p = build(cfg, 0);
  auto fill = [&](const std::string& name, std::span<real> dst, const Shape& shape) {
    const auto& e = archive.at(name);
    if (e.shape != shape) {
      throw Error(ErrorCode::shape_mismatch,
                  name + ": archive shape " + shape_string(e.shape) + ", network expects " + shape_string(shape));
    }
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<real>(e.values[i]);
  };
  for (auto& t : p.trainable()) fill(t.name, t.tensor.mutable_values(), t.tensor.shape());
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& l = p.layers[i];
    if (!l.batch_norm()) continue;
    const auto name = cfg.layer_name(i);
    fill(name + ".bn.running_mean", l.running_mean, {l.running_mean.size()});
    fill(name + ".bn.running_var", l.running_var, {l.running_var.size()});
  }
  return p;
}

inline void save_parameters(const std::string& path, const Parameters& params) {
  Archive a;
  to_archive(params, a);
  save_archive(path, a);
}

inline Parameters load_parameters(const std::string& path) { return from_archive(load_archive(path)); }

}  // namespace dphr::network
