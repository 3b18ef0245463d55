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

/// @file dataset.hpp
/// Dataset manifests, ground-truth merging, patch cropping, scene-level splits and the
/// synthetic scene generator. The manifest schema is described in docs/manifest_schema.md.

#pragma once

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dphr/error.hpp"
#include "dphr/fusion.hpp"
#include "dphr/image.hpp"
#include "dphr/io.hpp"
#include "dphr/polarimetry.hpp"
#include "dphr/training.hpp"
#include "json.hpp"

namespace dphr::polarimetry {

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(MixtureParams, w, gamma_shape, gamma_scale, u_start, u_end)

}  // namespace dphr::polarimetry

namespace nlohmann {

template <>
struct adl_serializer<dphr::polarimetry::CameraResponse> {
  using Crf = dphr::polarimetry::CameraResponse;

  static void to_json(json& j, const Crf& c) {
    switch (c.kind()) {
      case Crf::Kind::linear: j = {{"kind", "linear"}, {"bits", c.bits()}}; break;
      case Crf::Kind::gamma: j = {{"kind", "gamma"}, {"gamma", c.gamma_value()}, {"bits", c.bits()}}; break;
      case Crf::Kind::lut: j = {{"kind", "lut"}, {"table", c.table()}, {"bits", c.bits()}}; break;
    }
  }

  static Crf from_json(const json& j) {
    const auto kind = j.at("kind").get<std::string>();
    const int bits = j.value("bits", 8);
    if (kind == "linear") return Crf::linear(bits);
    if (kind == "gamma") return Crf::gamma(j.value("gamma", 2.2), bits);
    if (kind == "lut") return Crf::lut(j.at("table").get<std::vector<double>>(), bits);
    throw dphr::Error(dphr::ErrorCode::invalid_config, "unknown camera response kind '" + kind + "'");
  }
};

}  // namespace nlohmann

namespace dphr::dataset {

namespace fs = std::filesystem;
using polarimetry::CameraResponse;
using polarimetry::PolarizationStack;

/// Bracket used for the real captures, in milliseconds.
inline constexpr std::array<double, 17> kCaptureExposuresMs{0.03,  0.045, 0.068, 0.101, 0.152, 0.228,
                                                            0.342, 0.513, 0.769, 1.153, 1.73,  2.595,
                                                            3.592, 5.839, 8.758, 13.137, 19.705};
inline constexpr double kInputExposureMs = 0.769;
inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Manifest

enum class Split { unassigned, train, val, test };

NLOHMANN_JSON_SERIALIZE_ENUM(Split, {{Split::unassigned, "unassigned"},
                                     {Split::train, "train"},
                                     {Split::val, "val"},
                                     {Split::test, "test"}})

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw Error(ErrorCode::invalid_argument, "unknown split '" + s + "' (expected train, val or test)");
}

struct ExposureRecord {
  double t_ms = 0;
  std::string mosaic;  // 2H x 2W PNG, relative to the manifest directory
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ExposureRecord, t_ms, mosaic)

struct CropBox {
  std::size_t y = 0, x = 0, size = 0;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(CropBox, y, x, size)

struct SceneRecord {
  std::string id;
  std::vector<ExposureRecord> exposures;  // strictly increasing t_ms
  std::string ground_truth;               // PFM; empty means merge the bracket at load time
  Split split = Split::unassigned;
  std::vector<CropBox> crops;             // empty means the full frame
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SceneRecord, id, exposures, ground_truth, split, crops)

struct DatasetManifest {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  std::size_t patch_size = 64;
  double input_exposure_ms = kInputExposureMs;
  CameraResponse crf = CameraResponse::gamma(2.2, 8);
  std::array<std::array<int, 2>, 2> layout = polarimetry::OrientationLayout{}.grid;
  polarimetry::MixtureParams dolp;
  std::vector<SceneRecord> scenes;

  /// Index of the exposure closest to `input_exposure_ms`.
  std::size_t input_index(const SceneRecord& s) const {
    if (s.exposures.empty()) throw Error(ErrorCode::invalid_config, "scene " + s.id + " has no exposures");
    std::size_t best = 0;
    for (std::size_t i = 1; i < s.exposures.size(); ++i)
      if (std::abs(s.exposures[i].t_ms - input_exposure_ms) < std::abs(s.exposures[best].t_ms - input_exposure_ms))
        best = i;
    return best;
  }

  void validate() const {
    if (version != kManifestVersion) {
      throw Error(ErrorCode::invalid_config, "unsupported manifest version " + std::to_string(version));
    }
    polarimetry::OrientationLayout::from_grid(layout);
    std::vector<std::string> ids;
    for (const auto& s : scenes) {
      if (s.exposures.empty()) throw Error(ErrorCode::invalid_config, "scene " + s.id + " has no exposures");
      for (std::size_t i = 0; i < s.exposures.size(); ++i) {
        if (!(s.exposures[i].t_ms > 0) || (i > 0 && !(s.exposures[i].t_ms > s.exposures[i - 1].t_ms))) {
          throw Error(ErrorCode::invalid_config, "scene " + s.id + ": exposures must be positive and strictly increasing");
        }
      }
      ids.push_back(s.id);
    }
    std::sort(ids.begin(), ids.end());
    if (auto it = std::adjacent_find(ids.begin(), ids.end()); it != ids.end()) {
      throw Error(ErrorCode::invalid_config, "duplicate scene id " + *it);
    }
  }
};

inline void to_json(nlohmann::json& j, const DatasetManifest& m) {
  j = {{"version", m.version}, {"seed", m.seed},   {"patch_size", m.patch_size}, {"input_exposure_ms", m.input_exposure_ms},
       {"crf", m.crf},         {"layout", m.layout}, {"dolp", m.dolp},           {"scenes", m.scenes}};
}

inline void from_json(const nlohmann::json& j, DatasetManifest& m) {
  DatasetManifest d;
  m.version = j.value("version", d.version);
  m.seed = j.value("seed", d.seed);
  m.patch_size = j.value("patch_size", d.patch_size);
  m.input_exposure_ms = j.value("input_exposure_ms", d.input_exposure_ms);
  m.crf = j.contains("crf") ? j.at("crf").get<CameraResponse>() : d.crf;
  m.layout = j.value("layout", d.layout);
  m.dolp = j.value("dolp", d.dolp);
  m.scenes = j.at("scenes").get<std::vector<SceneRecord>>();
}

inline void save_manifest(const std::string& path, const DatasetManifest& m) {
  dphr::detail::write_file(path, nlohmann::json(m).dump(2) + "\n");
}

inline DatasetManifest load_manifest(const std::string& path) {
  DatasetManifest m;
  try {
    m = nlohmann::json::parse(dphr::detail::read_file(path)).get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, path + ": " + e.what());
  }
  m.validate();
  return m;
}

/// Throws if a file referenced by the manifest is missing under `root`.
inline void check_files(const DatasetManifest& m, const fs::path& root) {
  for (const auto& s : m.scenes) {
    for (const auto& e : s.exposures)
      if (!fs::exists(root / e.mosaic)) throw Error(ErrorCode::io, "scene " + s.id + ": missing " + (root / e.mosaic).string());
    if (!s.ground_truth.empty() && !fs::exists(root / s.ground_truth)) {
      throw Error(ErrorCode::io, "scene " + s.id + ": missing " + (root / s.ground_truth).string());
    }
  }
}

// ---------------------------------------------------------------------------
// Stacks on disk

inline void write_stack(const std::string& path, const PolarizationStack& pixels,
                        const polarimetry::OrientationLayout& layout = {}) {
  io::write_png8(path, polarimetry::mosaic(pixels, layout));
}

inline PolarizationStack read_stack(const std::string& path, double t_ms, const polarimetry::OrientationLayout& layout = {}) {
  return polarimetry::demosaic(io::read_png8(path), layout, t_ms, polarimetry::Domain::pixel);
}

// ---------------------------------------------------------------------------
// Ground truth

struct MergeConfig {
  double sigma = 0.2;
  double center = 1.0;
  double weight_floor = 1e-12;
};

struct GroundTruth {
  Image value;                        // irradiance per unit exposure time
  std::vector<std::uint8_t> flagged;  // 1 where no exposure was usable
  std::size_t flagged_count = 0;
};

/// Weighted merge of an exposure bracket of pixel-domain stacks. Each exposure contributes
/// its total-intensity estimate (g(L0) + g(L45) + g(L90) + g(L135)) / (2 t), weighted by the
/// Gaussian of the summed pixel values (L0 + L45 + L90 + L135) / 2 and skipped where any
/// orientation is saturated. Pixels with no usable exposure keep the shortest exposure's
/// estimate and are flagged.
inline GroundTruth assemble_ground_truth(const std::vector<PolarizationStack>& bracket, const CameraResponse& crf,
                                         const MergeConfig& cfg = {}) {
  if (bracket.empty()) throw Error(ErrorCode::invalid_argument, "assemble_ground_truth: empty bracket");
  if (!(cfg.sigma > 0)) throw Error(ErrorCode::invalid_config, "assemble_ground_truth: sigma must be positive");
  for (const auto& s : bracket) {
    s.validate();
    if (s.domain != polarimetry::Domain::pixel) {
      throw Error(ErrorCode::invalid_argument, "assemble_ground_truth: expects pixel-domain stacks");
    }
    require_same_shape(s.images[0], bracket[0].images[0], "assemble_ground_truth");
  }
  std::size_t shortest = 0;
  for (std::size_t e = 1; e < bracket.size(); ++e)
    if (bracket[e].t0_ms < bracket[shortest].t0_ms) shortest = e;
  const auto& ref = bracket[0].images[0];
  GroundTruth gt{Image(ref.channels, ref.height, ref.width), std::vector<std::uint8_t>(ref.size(), 0), 0};
  for (std::size_t k = 0; k < ref.size(); ++k) {
    double num = 0, wsum = 0, fallback = 0;
    for (std::size_t e = 0; e < bracket.size(); ++e) {
      double lsum = 0, gsum = 0;
      bool saturated = false;
      for (const auto& img : bracket[e].images) {
        const double l = img.data[k];
        lsum += l;
        gsum += crf.inverse(l);
        saturated = saturated || l >= 1.0;
      }
      const double estimate = gsum / (2.0 * bracket[e].t0_ms);
      if (e == shortest) fallback = estimate;
      if (saturated) continue;
      const double w = fusion::gaussian_weight(0.5 * lsum, cfg.center, cfg.sigma);
      if (w < cfg.weight_floor) continue;
      num += w * estimate;
      wsum += w;
    }
    if (wsum > 0) {
      gt.value.data[k] = num / wsum;
    } else {
      gt.value.data[k] = fallback;
      gt.flagged[k] = 1;
      ++gt.flagged_count;
    }
  }
  return gt;
}

// ---------------------------------------------------------------------------
// Patches

/// `count` square boxes drawn uniformly inside an h x w frame.
inline std::vector<CropBox> crop_boxes(std::size_t height, std::size_t width, std::size_t size, std::size_t count,
                                       std::uint64_t seed) {
  if (size == 0 || size > height || size > width) {
    throw Error(ErrorCode::invalid_argument, "crop: patch size " + std::to_string(size) + " does not fit " +
                                                 std::to_string(height) + "x" + std::to_string(width));
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> uy(0, height - size), ux(0, width - size);
  std::vector<CropBox> boxes(count);
  for (auto& b : boxes) {
    b.y = uy(rng);
    b.x = ux(rng);
    b.size = size;
  }
  return boxes;
}

inline Image crop(const Image& img, const CropBox& b) { return dphr::crop(img, b.y, b.x, b.size, b.size); }

inline PolarizationStack crop(const PolarizationStack& s, const CropBox& b) {
  PolarizationStack out = s;
  for (auto& img : out.images) img = crop(img, b);
  return out;
}

struct Patch {
  CropBox box;
  PolarizationStack stack;
  Image ground_truth;
};

/// Crops the same boxes from every polarization image and the ground truth.
inline std::vector<Patch> crop_patches(const PolarizationStack& stack, const Image& ground_truth, std::size_t size,
                                       std::size_t count, std::uint64_t seed) {
  if (ground_truth.height != stack.height() || ground_truth.width != stack.width()) {
    throw Error(ErrorCode::shape_mismatch, "crop_patches: ground truth " + ground_truth.shape_string() +
                                               " does not match the stack");
  }
  std::vector<Patch> out;
  for (const auto& b : crop_boxes(stack.height(), stack.width(), size, count, seed))
    out.push_back({b, crop(stack, b), crop(ground_truth, b)});
  return out;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitRatios {
  double train = 0.7, val = 0.2, test = 0.1;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SplitRatios, train, val, test)

/// Largest-remainder apportionment of n scenes; every split with a positive ratio gets at least one scene.
inline std::array<std::size_t, 3> split_counts(std::size_t n, const SplitRatios& r) {
  const std::array<double, 3> ratio{r.train, r.val, r.test};
  std::size_t needed = 0;
  for (double v : ratio) {
    if (!(v >= 0)) throw Error(ErrorCode::invalid_config, "split ratios must be non-negative");
    needed += v > 0;
  }
  if (std::abs(ratio[0] + ratio[1] + ratio[2] - 1.0) > 1e-9) {
    throw Error(ErrorCode::invalid_config, "split ratios must sum to 1");
  }
  if (n < needed) {
    throw Error(ErrorCode::invalid_argument,
                "cannot split " + std::to_string(n) + " scenes into " + std::to_string(needed) + " non-empty sets");
  }
  std::array<std::size_t, 3> count{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = ratio[i] * static_cast<double>(n);
    count[i] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    rem[i] = std::round((exact - static_cast<double>(count[i])) * 1e9) / 1e9;  // ties go to the earlier split
    assigned += count[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return rem[a] > rem[b]; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) ++count[order[k % 3]];
  for (std::size_t i = 0; i < 3; ++i) {
    if (ratio[i] > 0 && count[i] == 0) {
      auto donor = static_cast<std::size_t>(std::max_element(count.begin(), count.end()) - count.begin());
      --count[donor];
      ++count[i];
    }
  }
  return count;
}

/// Assigns whole scenes to train/val/test from a seeded permutation.
inline void split(DatasetManifest& m, const SplitRatios& ratios = {}, std::uint64_t seed = 0) {
  const auto count = split_counts(m.scenes.size(), ratios);
  std::vector<std::size_t> perm(m.scenes.size());
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::size_t k = 0;
  constexpr Split tags[3] = {Split::train, Split::val, Split::test};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < count[s]; ++i) m.scenes[perm[k++]].split = tags[s];
}

// ---------------------------------------------------------------------------
// Loading

inline std::vector<PolarizationStack> load_bracket(const DatasetManifest& m, const fs::path& root, const SceneRecord& s) {
  const auto layout = polarimetry::OrientationLayout::from_grid(m.layout);
  std::vector<PolarizationStack> out;
  for (const auto& e : s.exposures) out.push_back(read_stack((root / e.mosaic).string(), e.t_ms, layout));
  return out;
}

inline PolarizationStack load_input_stack(const DatasetManifest& m, const fs::path& root, const SceneRecord& s) {
  const auto& e = s.exposures[m.input_index(s)];
  return read_stack((root / e.mosaic).string(), e.t_ms, polarimetry::OrientationLayout::from_grid(m.layout));
}

inline Image load_ground_truth(const DatasetManifest& m, const fs::path& root, const SceneRecord& s) {
  if (!s.ground_truth.empty()) return io::read_pfm((root / s.ground_truth).string());
  return assemble_ground_truth(load_bracket(m, root, s), m.crf).value;
}

/// Training samples for every crop of every scene in `which`.
inline std::vector<training::TrainingSample> load_samples(const DatasetManifest& m, const fs::path& root, Split which,
                                                          double tau = masking::kDefaultThreshold,
                                                          double percentile = 99.9) {
  std::vector<training::TrainingSample> out;
  for (const auto& s : m.scenes) {
    if (s.split != which) continue;
    const auto stack = load_input_stack(m, root, s);
    const auto hg = load_ground_truth(m, root, s);
    if (s.crops.empty()) {
      out.push_back(training::make_sample(stack, hg, m.crf, tau, percentile));
      continue;
    }
    for (const auto& b : s.crops) out.push_back(training::make_sample(crop(stack, b), crop(hg, b), m.crf, tau, percentile));
  }
  return out;
}

/// Per-pixel DoLP of every scene's input capture.
inline std::vector<double> load_dolp_samples(const DatasetManifest& m, const fs::path& root) {
  std::vector<double> out;
  for (const auto& s : m.scenes) {
    const auto rho = polarimetry::capture_dolp(load_input_stack(m, root, s), m.crf);
    out.insert(out.end(), rho.data.begin(), rho.data.end());
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic scenes

struct SyntheticConfig {
  std::size_t scenes = 32;
  std::size_t size = 64;              // frame side in pixels (per polarization image)
  std::size_t patch_size = 64;
  std::size_t patches_per_scene = 1;
  std::uint64_t seed = 0;
  std::vector<double> exposures_ms{0.228, 0.769, 2.595};
  double input_exposure_ms = kInputExposureMs;
  double crf_gamma = 2.2;
  polarimetry::MixtureParams dolp;
  SplitRatios ratios;
  std::size_t threads = 0;  // 0: hardware concurrency

  void validate() const {
    if (scenes == 0 || size == 0) throw Error(ErrorCode::invalid_config, "synthetic: scenes and size must be positive");
    if (patch_size == 0 || patch_size > size) {
      throw Error(ErrorCode::invalid_config, "synthetic: patch size must lie in [1, size]");
    }
    if (exposures_ms.empty()) throw Error(ErrorCode::invalid_config, "synthetic: at least one exposure is required");
    for (std::size_t i = 0; i < exposures_ms.size(); ++i)
      if (!(exposures_ms[i] > 0) || (i > 0 && !(exposures_ms[i] > exposures_ms[i - 1])))
        throw Error(ErrorCode::invalid_config, "synthetic: exposures must be positive and strictly increasing");
    if (!(input_exposure_ms > 0)) throw Error(ErrorCode::invalid_config, "synthetic: input exposure must be positive");
    if (!(dolp.w >= 0 && dolp.w <= 1) || !(dolp.gamma_shape > 0) || !(dolp.gamma_scale > 0)) {
      throw Error(ErrorCode::invalid_config, "synthetic: invalid DoLP mixture parameters");
    }
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SyntheticConfig, scenes, size, patch_size, patches_per_scene, seed,
                                                exposures_ms, input_exposure_ms, crf_gamma, dolp, ratios, threads)

struct SyntheticScene {
  Image irradiance;  // 3 channels, per millisecond of exposure
  Image rho;         // 1 channel
  Image theta;       // 1 channel, degrees in [0, 180)
};

inline std::uint64_t scene_seed(std::uint64_t master, std::size_t index) { return master ^ static_cast<std::uint64_t>(index); }

inline std::string scene_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "scene_%04zu", index);
  return buf;
}

/// Smooth gradient background, an optional bright sky band above a wavy horizon, and a
/// few disks. Levels are exposure values at the input exposure, so 1 is the clipping point.
inline SyntheticScene generate_scene(const SyntheticConfig& cfg, std::size_t index) {
  std::mt19937_64 rng(scene_seed(cfg.seed, index));
  std::uniform_real_distribution<double> u(0, 1);
  auto in = [&](double lo, double hi) { return lo + (hi - lo) * u(rng); };
  const std::size_t n = cfg.size;
  const double sz = static_cast<double>(n);

  std::array<double, 3> tint{in(0.7, 1), in(0.7, 1), in(0.7, 1)};
  const double base = in(0.03, 0.15), slope = in(0.1, 0.45), phi = in(0, 2 * std::numbers::pi);
  const bool sky = u(rng) < 0.5;
  const double horizon = in(0.2, 0.45) * sz, wave = in(0.02, 0.08) * sz, freq = in(0.5, 2), phase = in(0, 6.3);
  const double sky_level = in(1.5, 4);
  struct Disk {
    double cx, cy, r, level;
  };
  std::vector<Disk> disks(1 + static_cast<std::size_t>(u(rng) * 4));
  for (auto& d : disks) d = {in(0, sz), in(0, sz), in(0.05, 0.18) * sz, in(0.3, 6)};

  SyntheticScene s{Image(3, n, n), Image(1, n, n), Image(1, n, n)};
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double fx = static_cast<double>(x), fy = static_cast<double>(y);
      double v = base + slope * (0.5 + 0.5 * (fx * std::cos(phi) + fy * std::sin(phi)) / sz);
      std::array<double, 3> t = tint;
      if (sky && fy < horizon + wave * std::sin(2 * std::numbers::pi * freq * fx / sz + phase)) {
        v = sky_level * (1 - 0.3 * fy / std::max(horizon, 1.0));
        t = {0.8, 0.9, 1.0};
      }
      for (const auto& d : disks)
        if (std::hypot(fx - d.cx, fy - d.cy) < d.r) v = d.level;
      for (std::size_t c = 0; c < 3; ++c) s.irradiance.at(c, y, x) = v * t[c] / cfg.input_exposure_ms;
    }
  for (auto& r : s.rho.data) r = polarimetry::sample_mixture(cfg.dolp, rng);
  for (auto& t : s.theta.data) t = 180.0 * u(rng);
  return s;
}

/// Writes <out>/<scene>/exp_<k>.png for every exposure, <out>/<scene>/hg.pfm with the exact
/// irradiance, and <out>/manifest.json. Scenes are generated in parallel with per-scene seeds,
/// so the output does not depend on the thread count.
inline DatasetManifest generate_synthetic_dataset(const SyntheticConfig& cfg, const fs::path& out_dir) {
  cfg.validate();
  const auto crf = CameraResponse::gamma(cfg.crf_gamma, 8);
  DatasetManifest m;
  m.seed = cfg.seed;
  m.patch_size = cfg.patch_size;
  m.input_exposure_ms = cfg.input_exposure_ms;
  m.crf = crf;
  m.dolp = cfg.dolp;
  m.scenes.resize(cfg.scenes);
  fs::create_directories(out_dir);

  std::atomic<std::size_t> next{0};
  std::vector<std::string> errors(cfg.scenes);
  auto worker = [&] {
    for (std::size_t i = next++; i < cfg.scenes; i = next++) {
      try {
        const auto scene = generate_scene(cfg, i);
        SceneRecord& rec = m.scenes[i];
        rec.id = scene_id(i);
        fs::create_directories(out_dir / rec.id);
        for (std::size_t k = 0; k < cfg.exposures_ms.size(); ++k) {
          const double t = cfg.exposures_ms[k];
          char name[32];
          std::snprintf(name, sizeof name, "exp_%02zu.png", k);
          const auto ldr = polarimetry::capture(polarimetry::simulate_polarizers(scene.irradiance, scene.rho, scene.theta, t), crf);
          write_stack((out_dir / rec.id / name).string(), ldr);
          rec.exposures.push_back({t, rec.id + "/" + name});
        }
        io::write_pfm((out_dir / rec.id / "hg.pfm").string(), scene.irradiance);
        rec.ground_truth = rec.id + "/hg.pfm";
        rec.crops = crop_boxes(cfg.size, cfg.size, cfg.patch_size, cfg.patches_per_scene, scene_seed(cfg.seed, i));
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  const std::size_t threads =
      std::min<std::size_t>(cfg.scenes, cfg.threads ? cfg.threads : std::max(1u, std::thread::hardware_concurrency()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < cfg.scenes; ++i)
    if (!errors[i].empty()) throw Error(ErrorCode::io, "synthetic scene " + std::to_string(i) + ": " + errors[i]);

  split(m, cfg.ratios, cfg.seed);
  save_manifest((out_dir / "manifest.json").string(), m);
  return m;
}

}  // namespace dphr::dataset
