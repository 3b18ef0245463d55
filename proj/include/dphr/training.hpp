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

/// @file training.hpp
/// Losses, optimizer and training loop.
///
///     L  = l1 Lr + l2 (l3 Lv + l4 Ls)
///     Lr = mean((1 - M_1) |H_g - H_d|)
///     Lv = sum_l mean|phi_l(H_g) - phi_l(H_d)|
///     Ls = sum_l mean|G(phi_l(H_g)) - G(phi_l(H_d))|,  G(F) = F F^T / (C H W)
///
/// phi_l are the three taps of a fixed convolutional feature extractor.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dphr/archive.hpp"
#include "dphr/error.hpp"
#include "dphr/fusion.hpp"
#include "dphr/image.hpp"
#include "dphr/masking.hpp"
#include "dphr/network.hpp"
#include "dphr/polarimetry.hpp"
#include "dphr/tensor.hpp"
#include "json.hpp"

namespace dphr::training {

using network::NamedTensor;

struct LossWeights {
  double l1 = 6.0;
  double l2 = 1.0;
  double l3 = 1.0;
  double l4 = 120.0;

  void validate() const {
    if (!(l1 >= 0 && l2 >= 0 && l3 >= 0 && l4 >= 0)) {
      throw Error(ErrorCode::invalid_config, "loss weights must be non-negative");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(LossWeights, l1, l2, l3, l4)

/// Per-sample Gram matrices of [N, C, H, W] features: [N, C, C].
inline Tensor gram(const Tensor& f) {
  if (f.rank() != 4) throw Error(ErrorCode::shape_mismatch, "gram: expected [N,C,H,W], got " + shape_string(f.shape()));
  const std::size_t n = f.dim(0), c = f.dim(1), p = f.dim(2) * f.dim(3);
  if (p == 0) throw Error(ErrorCode::empty_reduction, "gram: empty feature map");
  const real norm = 1 / static_cast<real>(c * p);
  auto fv = f.values();
  std::vector<real> out(n * c * c, 0);
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t i = 0; i < c; ++i)
      for (std::size_t j = i; j < c; ++j) {
        const real* a = fv.data() + (b * c + i) * p;
        const real* d = fv.data() + (b * c + j) * p;
        const real g = std::inner_product(a, a + p, d, real{0}) * norm;
        out[(b * c + i) * c + j] = g;
        out[(b * c + j) * c + i] = g;
      }
  return make_op({n, c, c}, std::move(out), {f},
                 [f, n, c, p, norm](std::span<const real> g, std::span<const std::span<real>> pg) {
                   auto fv = f.values();
                   for (std::size_t b = 0; b < n; ++b)
                     for (std::size_t i = 0; i < c; ++i) {
                       real* dst = pg[0].data() + (b * c + i) * p;
                       for (std::size_t j = 0; j < c; ++j) {
                         const real s = (g[(b * c + i) * c + j] + g[(b * c + j) * c + i]) * norm;
                         const real* src = fv.data() + (b * c + j) * p;
                         for (std::size_t k = 0; k < p; ++k) dst[k] += s * src[k];
                       }
                     }
                 });
}

/// Fixed stack of (3x3 conv, ReLU, 2x2 average pool) blocks; the output of each block is
/// a tap, so taps sit at strides 2, 4 and 8.
struct FeatureExtractor {
  std::vector<Tensor> weights;

  static FeatureExtractor seeded(std::uint64_t seed, std::vector<std::size_t> widths = {8, 16, 32},
                                 std::size_t in_channels = 3) {
    std::mt19937_64 rng(seed);
    FeatureExtractor fx;
    std::size_t c = in_channels;
    for (auto w : widths) {
      const double bound = std::sqrt(6.0 / static_cast<double>((c + w) * 9));
      fx.weights.push_back(random_uniform({w, c, 3, 3}, static_cast<real>(-bound), static_cast<real>(bound), rng));
      c = w;
    }
    return fx;
  }

  /// Reads "features.<k>.weight" entries.
  static FeatureExtractor from_archive(const Archive& a) {
    FeatureExtractor fx;
    for (std::size_t k = 0;; ++k) {
      const auto* e = a.find("features." + std::to_string(k) + ".weight");
      if (!e) break;
      if (e->shape.size() != 4 || e->shape[2] != 3 || e->shape[3] != 3) {
        throw Error(ErrorCode::shape_mismatch, "feature extractor weights must be [F,C,3,3]");
      }
      fx.weights.emplace_back(e->shape, std::vector<real>(e->values.begin(), e->values.end()));
    }
    if (fx.weights.empty()) throw Error(ErrorCode::format, "archive has no feature extractor weights");
    return fx;
  }

  void to_archive(Archive& a) const {
    for (std::size_t k = 0; k < weights.size(); ++k) a.add("features." + std::to_string(k) + ".weight", weights[k]);
  }

  std::vector<Tensor> taps(const Tensor& x) const {
    std::vector<Tensor> out;
    Tensor h = x;
    for (const auto& w : weights) {
      h = avg_pool2x2(relu(conv2d(h, w, 1, 1)));
      out.push_back(h);
    }
    return out;
  }
};

namespace detail {

inline void require_same(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw Error(ErrorCode::shape_mismatch,
                std::string(what) + ": " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace detail

/// mean((1 - M_1) |H_g - H_d|). `mean_mask` is [N,1,H,W] or the full image shape.
inline Tensor reconstruction_loss(const Tensor& hg, const Tensor& hd, const Tensor& mean_mask) {
  detail::require_same(hg, hd, "reconstruction_loss");
  const Tensor m = masking::gate_features(Tensor::full(hd.shape(), 1), mean_mask);
  std::vector<real> w(m.values().begin(), m.values().end());
  for (auto& v : w) v = 1 - v;
  return mean(mul(abs(sub(hd, hg.detach())), Tensor(hd.shape(), std::move(w))));
}

struct PerceptualTerms {
  Tensor content;  // Lv
  Tensor style;    // Ls
};

inline PerceptualTerms perceptual_terms(const Tensor& hg, const Tensor& hd, const FeatureExtractor& fx) {
  detail::require_same(hg, hd, "perceptual_loss");
  const auto tg = fx.taps(hg.detach());
  const auto td = fx.taps(hd);
  PerceptualTerms t{Tensor::scalar(0), Tensor::scalar(0)};
  for (std::size_t l = 0; l < tg.size(); ++l) {
    t.content = add(t.content, mean(abs(sub(td[l], tg[l]))));
    t.style = add(t.style, mean(abs(sub(gram(td[l]), gram(tg[l])))));
  }
  return t;
}

/// l3 Lv + l4 Ls.
inline Tensor perceptual_loss(const Tensor& hg, const Tensor& hd, const FeatureExtractor& fx,
                              const LossWeights& w = {}) {
  const auto t = perceptual_terms(hg, hd, fx);
  return add(mul(t.content, Tensor::scalar(static_cast<real>(w.l3))), mul(t.style, Tensor::scalar(static_cast<real>(w.l4))));
}

struct LossTerms {
  Tensor total;
  double reconstruction = 0;
  double content = 0;
  double style = 0;
};

inline LossTerms total_loss(const Tensor& hg, const Tensor& hd, const Tensor& mean_mask, const FeatureExtractor& fx,
                            const LossWeights& w = {}) {
  w.validate();
  const Tensor lr = reconstruction_loss(hg, hd, mean_mask);
  const auto p = perceptual_terms(hg, hd, fx);
  const Tensor lp = add(mul(p.content, Tensor::scalar(static_cast<real>(w.l3))),
                        mul(p.style, Tensor::scalar(static_cast<real>(w.l4))));
  LossTerms out;
  out.total = add(mul(lr, Tensor::scalar(static_cast<real>(w.l1))), mul(lp, Tensor::scalar(static_cast<real>(w.l2))));
  out.reconstruction = lr.item();
  out.content = p.content.item();
  out.style = p.style.item();
  return out;
}

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(AdamConfig, lr, beta1, beta2, eps)

struct AdamState {
  AdamConfig config;
  std::size_t step = 0;
  std::vector<std::vector<real>> m;
  std::vector<std::vector<real>> v;
};

/// sqrt of the summed squared gradients of all parameters.
inline double global_grad_norm(const std::vector<NamedTensor>& params) {
  double s = 0;
  for (const auto& p : params)
    for (real g : p.tensor.grad()) s += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(s);
}

/// One bias-corrected Adam update using each tensor's accumulated gradient times
/// `grad_scale`. A parameter that received no gradient is treated as having a zero one.
inline void adam_step(AdamState& state, std::vector<NamedTensor>& params, double grad_scale = 1.0) {
  for (const auto& p : params)
    for (real g : p.tensor.grad()) {
      if (!std::isfinite(g)) throw Error(ErrorCode::non_finite, "non-finite gradient in parameter " + p.name);
    }
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.tensor.numel(), real{0});
      state.v.emplace_back(p.tensor.numel(), real{0});
    }
  }
  if (state.m.size() != params.size()) {
    throw Error(ErrorCode::shape_mismatch, "adam: optimizer state tracks " + std::to_string(state.m.size()) +
                                               " tensors, got " + std::to_string(params.size()));
  }
  ++state.step;
  const auto& c = state.config;
  const double bc1 = 1 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1 - std::pow(c.beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& t = params[k].tensor;
    auto values = t.mutable_values();
    auto grad = t.grad();
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (m.size() != values.size()) {
      throw Error(ErrorCode::shape_mismatch, "adam: moment size mismatch for " + params[k].name);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad.empty() ? 0.0 : static_cast<double>(grad[i]) * grad_scale;
      m[i] = static_cast<real>(c.beta1 * m[i] + (1 - c.beta1) * g);
      v[i] = static_cast<real>(c.beta2 * v[i] + (1 - c.beta2) * g * g);
      const double mhat = m[i] / bc1, vhat = v[i] / bc2;
      values[i] -= static_cast<real>(c.lr * mhat / (std::sqrt(vhat) + c.eps));
    }
  }
}

/// One training example at network resolution.
struct TrainingSample {
  Image input;      // 12 channels of LDR pixel values, orientations 0, 45, 90, 135
  Image mask;       // per-orientation masks replicated over each image's channels
  Image mean_mask;  // M_1, single channel
  Image target;     // H_g divided by its 99.9th percentile
};

inline TrainingSample make_sample(const polarimetry::PolarizationStack& pixels, const Image& hg,
                                  const polarimetry::CameraResponse& crf, double tau = masking::kDefaultThreshold,
                                  double percentile = 99.9) {
  const Image rho = polarimetry::capture_dolp(pixels, crf);
  const auto masks = masking::compute_input_masks(pixels, rho, tau);
  return {network::stack_input(pixels), masking::expand_to_input_channels(masks, pixels.channels()), masks.mean,
          fusion::normalize_hdr(hg, percentile)};
}

struct Batch {
  Tensor input, mask, mean_mask, target;
};

inline Batch make_batch(const std::vector<TrainingSample>& data, const std::vector<std::size_t>& idx) {
  std::vector<Image> in, mk, mm, tg;
  for (auto i : idx) {
    in.push_back(data[i].input);
    mk.push_back(data[i].mask);
    mm.push_back(data[i].mean_mask);
    tg.push_back(data[i].target);
  }
  return {to_tensor(in), to_tensor(mk), to_tensor(mm), to_tensor(tg)};
}

/// Sample indices for `step`. Each epoch is a fresh permutation seeded by (seed, epoch),
/// so a resumed run only needs the step count.
inline std::vector<std::size_t> batch_indices(std::size_t step, std::size_t dataset_size, std::size_t batch_size,
                                              std::uint64_t seed) {
  const std::size_t b = std::min(batch_size, dataset_size);
  const std::size_t per_epoch = dataset_size / b;
  const std::size_t epoch = step / per_epoch, pos = step % per_epoch;
  std::vector<std::size_t> perm(dataset_size);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), static_cast<std::uint32_t>(epoch >> 32)};
  std::mt19937_64 rng(seq);
  std::shuffle(perm.begin(), perm.end(), rng);
  return {perm.begin() + static_cast<std::ptrdiff_t>(pos * b), perm.begin() + static_cast<std::ptrdiff_t>((pos + 1) * b)};
}

struct TrainConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 4;
  AdamConfig adam;
  double clip_norm = 10.0;  // global gradient norm; 0 disables clipping
  LossWeights weights;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
  std::string checkpoint_path;       // empty: no checkpoints
  std::string loss_csv_path;         // empty: no CSV
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(TrainConfig, steps, batch_size, adam, clip_norm, weights, seed,
                                                checkpoint_every, checkpoint_path, loss_csv_path)

struct LossRecord {
  std::size_t step = 0;
  double reconstruction = 0;
  double content = 0;
  double style = 0;
  double total = 0;
};

/// Everything needed to continue training bit-exactly.
struct TrainState {
  network::Parameters params;
  AdamState adam;
  FeatureExtractor features;
  std::uint64_t seed = 0;
};

inline TrainState initial_state(const network::NetworkConfig& net, const TrainConfig& cfg) {
  TrainState s{network::build(net, cfg.seed), AdamState{cfg.adam, 0, {}, {}},
               FeatureExtractor::seeded(cfg.seed ^ 0x9e3779b97f4a7c15ULL), cfg.seed};
  return s;
}

inline void save_checkpoint(const std::string& path, const TrainState& s) {
  Archive a;
  network::to_archive(s.params, a);
  s.features.to_archive(a);
  const auto named = s.params.trainable();
  for (std::size_t k = 0; k < s.adam.m.size() && k < named.size(); ++k) {
    a.add("adam.m." + named[k].name, named[k].tensor.shape(), {s.adam.m[k].begin(), s.adam.m[k].end()});
    a.add("adam.v." + named[k].name, named[k].tensor.shape(), {s.adam.v[k].begin(), s.adam.v[k].end()});
  }
  a.metadata["step"] = s.adam.step;
  a.metadata["seed"] = s.seed;
  a.metadata["adam"] = s.adam.config;
  save_archive(path, a);
}

inline TrainState load_checkpoint(const std::string& path) {
  const Archive a = load_archive(path);
  TrainState s;
  s.params = network::from_archive(a);
  s.features = FeatureExtractor::from_archive(a);
  s.adam.step = a.metadata.value("step", std::size_t{0});
  s.seed = a.metadata.value("seed", std::uint64_t{0});
  if (a.metadata.contains("adam")) s.adam.config = a.metadata.at("adam").get<AdamConfig>();
  for (const auto& t : s.params.trainable()) {
    const auto* m = a.find("adam.m." + t.name);
    const auto* v = a.find("adam.v." + t.name);
    if (!m || !v) {
      if (s.adam.step > 0) throw Error(ErrorCode::format, "checkpoint lacks optimizer moments for " + t.name);
      s.adam.m.clear();
      s.adam.v.clear();
      break;
    }
    s.adam.m.emplace_back(m->values.begin(), m->values.end());
    s.adam.v.emplace_back(v->values.begin(), v->values.end());
  }
  return s;
}

inline std::string format_loss_row(const LossRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g,%.9g,%.9g\n", r.step, r.reconstruction, r.content, r.style, r.total);
  return buf;
}

inline constexpr const char* kLossCsvHeader = "step,Lr,Lv,Ls,total\n";

/// Losses of a batch under the current parameters, without touching any state.
inline LossTerms evaluate_batch(const TrainState& s, const Batch& b, const LossWeights& w) {
  const auto masks = network::propagate_masks(s.params, b.mask);
  const auto r = network::forward(s.params, b.input, masks, network::Mode::train);
  return total_loss(b.target, r.output, b.mean_mask, s.features, w);
}

/// Runs steps state.adam.step .. cfg.steps - 1. The CSV is truncated when starting from
/// step 0 and appended to otherwise. `on_step` may be empty.
inline std::vector<LossRecord> train(TrainState& s, const std::vector<TrainingSample>& data, const TrainConfig& cfg,
                                     const std::function<void(const LossRecord&)>& on_step = {}) {
  if (data.empty()) throw Error(ErrorCode::invalid_argument, "train: the training split is empty");
  if (cfg.batch_size == 0) throw Error(ErrorCode::invalid_config, "train: batch size must be positive");
  cfg.weights.validate();
  std::ofstream csv;
  if (!cfg.loss_csv_path.empty()) {
    const bool fresh = s.adam.step == 0;
    csv.open(cfg.loss_csv_path, fresh ? std::ios::trunc : std::ios::app);
    if (!csv) throw Error(ErrorCode::io, "cannot write " + cfg.loss_csv_path);
    if (fresh) csv << kLossCsvHeader;
  }
  std::vector<LossRecord> curve;
  auto named = s.params.trainable();
  while (s.adam.step < cfg.steps) {
    const std::size_t step = s.adam.step;
    const Batch b = make_batch(data, batch_indices(step, data.size(), cfg.batch_size, s.seed));
    const auto masks = network::propagate_masks(s.params, b.mask);
    const auto fwd = network::forward(s.params, b.input, masks, network::Mode::train);
    const auto loss = total_loss(b.target, fwd.output, b.mean_mask, s.features, cfg.weights);
    const LossRecord rec{step, loss.reconstruction, loss.content, loss.style, loss.total.item()};
    if (!std::isfinite(rec.total)) {
      std::ostringstream msg;
      msg << "loss became non-finite at step " << step << " (Lr=" << rec.reconstruction << ", Lv=" << rec.content
          << ", Ls=" << rec.style << ")";
      throw Error(ErrorCode::non_finite, msg.str());
    }
    s.params.zero_grad();
    backward(loss.total);
    const double norm = global_grad_norm(named);
    const double scale = cfg.clip_norm > 0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    adam_step(s.adam, named, scale);
    network::update_running_stats(s.params, fwd.batch_stats);
    curve.push_back(rec);
    if (csv.is_open()) csv << format_loss_row(rec);
    if (on_step) on_step(rec);
    const bool last = s.adam.step == cfg.steps;
    if (!cfg.checkpoint_path.empty() && (last || (cfg.checkpoint_every && s.adam.step % cfg.checkpoint_every == 0))) {
      save_checkpoint(cfg.checkpoint_path, s);
    }
  }
  s.params.zero_grad();
  return curve;
}

}  // namespace dphr::training
