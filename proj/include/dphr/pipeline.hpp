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

/// @file pipeline.hpp
/// End-to-end steps used by the command-line tool: reconstruction of one capture and
/// evaluation of predictions against ground truth.

#pragma once

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "dphr/dataset.hpp"
#include "dphr/fusion.hpp"
#include "dphr/io.hpp"
#include "dphr/masking.hpp"
#include "dphr/metrics.hpp"
#include "dphr/network.hpp"
#include "dphr/polarimetry.hpp"

namespace dphr::pipeline {

namespace fs = std::filesystem;

struct ReconstructConfig {
  double tau = masking::kDefaultThreshold;
  fusion::FusionConfig fusion;  // its crf also linearizes the capture for the DoLP
};

struct Reconstruction {
  Image rho;        // capture DoLP, single channel
  Image mean_mask;  // M_1
  fusion::TraditionalHdr ht_raw;
  fusion::FusionResult fused;  // normalized H_t, H_d, alpha and H
};

/// Network prediction, model-based reconstruction and their blend for one pixel-domain capture.
inline Reconstruction reconstruct(const network::Parameters& params, const polarimetry::PolarizationStack& pixels,
                                  const ReconstructConfig& cfg = {}) {
  pixels.validate();
  if (pixels.domain != polarimetry::Domain::pixel) {
    throw Error(ErrorCode::invalid_argument, "reconstruct: expects a pixel-domain capture");
  }
  if (4 * pixels.channels() != params.config.input_channels || params.config.output_channels != pixels.channels()) {
    throw Error(ErrorCode::shape_mismatch, "reconstruct: network expects " +
                                               std::to_string(params.config.input_channels) +
                                               " input channels, capture has " + std::to_string(4 * pixels.channels()));
  }
  Reconstruction r;
  r.rho = polarimetry::capture_dolp(pixels, cfg.fusion.crf);
  const auto masks = masking::compute_input_masks(pixels, r.rho, cfg.tau);
  r.mean_mask = masks.mean;
  const Tensor input = to_tensor({network::stack_input(pixels)});
  const Tensor mask = to_tensor({masking::expand_to_input_channels(masks, pixels.channels())});
  const auto out = network::forward(params, input, network::propagate_masks(params, mask), network::Mode::eval);
  r.ht_raw = fusion::traditional_hdr(pixels, cfg.fusion);
  r.fused = fusion::blend(r.ht_raw, from_tensor(out.output), r.rho, r.mean_mask, cfg.fusion);
  return r;
}

/// Names of the files written by write_reconstruction.
inline const std::vector<std::string>& reconstruction_files() {
  static const std::vector<std::string> names{"H_d.pfm", "H_t.pfm", "alpha.pfm", "H.pfm", "H.png"};
  return names;
}

inline void write_reconstruction(const fs::path& dir, const Reconstruction& r) {
  fs::create_directories(dir);
  io::write_pfm((dir / "H_d.pfm").string(), r.fused.hd);
  io::write_pfm((dir / "H_t.pfm").string(), r.fused.ht);
  io::write_pfm((dir / "alpha.pfm").string(), r.fused.alpha);
  io::write_pfm((dir / "H.pfm").string(), r.fused.h);
  io::write_png8((dir / "H.png").string(), metrics::tonemap_global(r.fused.h));
}

// ---------------------------------------------------------------------------
// Evaluation

struct MetricRow {
  std::string name;
  double mse = 0, pu_psnr = 0, pu_ssim = 0;
};

inline constexpr const char* kMetricsCsvHeader = "name,mse,pu_psnr,pu_ssim\n";

/// Both images are normalized with fusion::normalize_hdr before scoring.
inline MetricRow score(const std::string& name, const Image& pred, const Image& gt, const metrics::PuEncoding& enc,
                       double percentile = 99.9) {
  const Image p = fusion::normalize_hdr(pred, percentile), g = fusion::normalize_hdr(gt, percentile);
  return {name, metrics::mse(p, g), metrics::pu_psnr(p, g, enc), metrics::pu_ssim(p, g, enc)};
}

inline std::string format_metrics_csv(const std::vector<MetricRow>& rows) {
  std::string out = kMetricsCsvHeader;
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g\n", r.mse, r.pu_psnr, r.pu_ssim);
    out += r.name + buf;
  }
  return out;
}

/// Every PFM under `gt_dir` (recursively, sorted by relative path) scored against the file at
/// the same relative path under `pred_dir`.
inline std::vector<MetricRow> evaluate_directories(const fs::path& pred_dir, const fs::path& gt_dir,
                                                   const metrics::PuEncoding& enc) {
  if (!fs::is_directory(gt_dir)) throw Error(ErrorCode::io, "not a directory: " + gt_dir.string());
  std::vector<std::string> names;
  for (const auto& e : fs::recursive_directory_iterator(gt_dir))
    if (e.is_regular_file() && e.path().extension() == ".pfm") names.push_back(fs::relative(e.path(), gt_dir).generic_string());
  if (names.empty()) throw Error(ErrorCode::invalid_argument, "no .pfm files under " + gt_dir.string());
  std::sort(names.begin(), names.end());
  std::vector<MetricRow> rows;
  for (const auto& n : names) {
    if (!fs::exists(pred_dir / n)) throw Error(ErrorCode::io, "missing prediction " + (pred_dir / n).string());
    rows.push_back(score(n, io::read_pfm((pred_dir / n).string()), io::read_pfm((gt_dir / n).string()), enc));
  }
  return rows;
}

/// Scores <pred_dir>/<scene id>/<file> against each scene's ground truth for one split.
inline std::vector<MetricRow> evaluate_manifest(const dataset::DatasetManifest& m, const fs::path& root,
                                                const fs::path& pred_dir, dataset::Split which, const std::string& file,
                                                const metrics::PuEncoding& enc) {
  std::vector<MetricRow> rows;
  for (const auto& s : m.scenes) {
    if (s.split != which) continue;
    const auto path = pred_dir / s.id / file;
    if (!fs::exists(path)) throw Error(ErrorCode::io, "missing prediction " + path.string());
    rows.push_back(score(s.id, io::read_pfm(path.string()), dataset::load_ground_truth(m, root, s), enc));
  }
  if (rows.empty()) throw Error(ErrorCode::invalid_argument, "no scenes in the requested split");
  return rows;
}

}  // namespace dphr::pipeline
