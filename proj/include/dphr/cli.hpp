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

/// @file cli.hpp
/// The `dphr` command-line tool: simulate, decompose, train, reconstruct, eval, fit-dolp.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage error. Runtime failures print one
/// line `error code=<code> message="<text>"` to standard error. Logs go to standard error;
/// data goes to files only.

#pragma once

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dphr/dataset.hpp"
#include "dphr/metrics.hpp"
#include "dphr/network.hpp"
#include "dphr/pipeline.hpp"
#include "dphr/polarimetry.hpp"
#include "dphr/training.hpp"
#include "json.hpp"

namespace dphr::cli {

namespace fs = std::filesystem;

/// Settings shared by all subcommands. A JSON config file may set any field; flags override it.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string out;
  double tau = masking::kDefaultThreshold;
  double sigma = 0.2;
  std::size_t depth = 4;
  std::size_t filters = 16;
  double lr = 1e-4;
  std::size_t steps = 1000;
  std::size_t batch = 4;
  training::LossWeights weights;
  double clip_norm = 10.0;
  double percentile = 99.9;
  double crf_gamma = 2.2;  // for captures read outside a manifest
  std::size_t checkpoint_every = 0;
  std::size_t log_every = 50;
  dataset::SyntheticConfig synthetic;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(RunConfig, seed, out, tau, sigma, depth, filters, lr, steps, batch,
                                                weights, clip_norm, percentile, crf_gamma, checkpoint_every, log_every,
                                                synthetic)

/// Invalid invocation; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Parses a config file, rejecting keys RunConfig does not have.
inline RunConfig load_run_config(const std::string& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(dphr::detail::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::format, path + ": " + e.what());
  }
  if (!j.is_object()) throw Error(ErrorCode::invalid_config, path + ": expected a JSON object");
  const nlohmann::json known = RunConfig{};
  for (const auto& [key, _] : j.items())
    if (!known.contains(key)) throw Error(ErrorCode::invalid_config, path + ": unknown key '" + key + "'");
  try {
    return j.get<RunConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::invalid_config, path + ": " + e.what());
  }
}

/// Flag values; unset flags leave the config untouched.
struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<double> tau, sigma, lr, lambda1, lambda2, lambda3, lambda4, crf_gamma;
  std::optional<std::size_t> depth, filters, steps, batch;
  std::optional<std::size_t> scenes, size, patch, patches_per_scene, threads, checkpoint_every, log_every;

  void apply(RunConfig& c) const {
    if (seed) c.seed = *seed;
    if (out) c.out = *out;
    if (tau) c.tau = *tau;
    if (sigma) c.sigma = *sigma;
    if (lr) c.lr = *lr;
    if (lambda1) c.weights.l1 = *lambda1;
    if (lambda2) c.weights.l2 = *lambda2;
    if (lambda3) c.weights.l3 = *lambda3;
    if (lambda4) c.weights.l4 = *lambda4;
    if (crf_gamma) c.crf_gamma = *crf_gamma;
    if (depth) c.depth = *depth;
    if (filters) c.filters = *filters;
    if (steps) c.steps = *steps;
    if (batch) c.batch = *batch;
    if (scenes) c.synthetic.scenes = *scenes;
    if (size) c.synthetic.size = *size;
    if (patch) c.synthetic.patch_size = *patch;
    if (patches_per_scene) c.synthetic.patches_per_scene = *patches_per_scene;
    if (threads) c.synthetic.threads = *threads;
    if (checkpoint_every) c.checkpoint_every = *checkpoint_every;
    if (log_every) c.log_every = *log_every;
  }
};

inline void log(const std::string& line) { std::cerr << "[dphr] " << line << "\n"; }

inline fs::path require_out(const RunConfig& c) {
  if (c.out.empty()) throw UsageError("--out is required (or set \"out\" in the config file)");
  fs::create_directories(c.out);
  return c.out;
}

inline polarimetry::PolarizationStack read_capture(const std::string& path, double t_ms) {
  return dataset::read_stack(path, t_ms);
}

// ---------------------------------------------------------------------------
// Subcommands

inline void cmd_simulate(const RunConfig& c) {
  auto cfg = c.synthetic;
  cfg.seed = c.seed;
  const auto out = require_out(c);
  const auto m = dataset::generate_synthetic_dataset(cfg, out);
  log("simulate: wrote " + std::to_string(m.scenes.size()) + " scenes to " + (out / "manifest.json").string());
}

inline void cmd_decompose(const RunConfig& c, const std::string& stack_path, double t_ms) {
  const auto out = require_out(c);
  const auto crf = polarimetry::CameraResponse::gamma(c.crf_gamma, 8);
  const auto pixels = read_capture(stack_path, t_ms);
  const auto s = polarimetry::stokes(polarimetry::linearize(pixels, crf));
  const auto mean = polarimetry::mean_stokes(s);
  io::write_pfm((out / "S0.pfm").string(), s.s0);
  io::write_pfm((out / "S1.pfm").string(), s.s1);
  io::write_pfm((out / "S2.pfm").string(), s.s2);
  io::write_pfm((out / "rho.pfm").string(), polarimetry::dolp(mean));
  io::write_pfm((out / "theta.pfm").string(), polarimetry::aolp(mean));
  log("decompose: wrote S0, S1, S2, rho, theta to " + out.string());
}

inline void cmd_train(const RunConfig& c, const std::string& manifest_path, const std::string& resume) {
  const auto out = require_out(c);
  const auto m = dataset::load_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  dataset::check_files(m, root);
  const auto data = dataset::load_samples(m, root, dataset::Split::train, c.tau, c.percentile);
  if (data.empty()) throw Error(ErrorCode::invalid_argument, "train: the manifest has no training scenes");

  training::TrainConfig tc;
  tc.steps = c.steps;
  tc.batch_size = c.batch;
  tc.adam.lr = c.lr;
  tc.clip_norm = c.clip_norm;
  tc.weights = c.weights;
  tc.seed = c.seed;
  tc.checkpoint_every = c.checkpoint_every;
  tc.checkpoint_path = (out / "checkpoint.dphr").string();
  tc.loss_csv_path = (out / "loss.csv").string();

  training::TrainState state;
  if (resume.empty()) {
    const auto net = network::NetworkConfig::unet(c.depth, c.filters, data[0].input.channels);
    state = training::initial_state(net, tc);
  } else {
    state = training::load_checkpoint(resume);
    state.adam.config.lr = c.lr;
    log("train: resuming from " + resume + " at step " + std::to_string(state.adam.step));
  }
  dphr::detail::write_file((out / "run_config.json").string(), nlohmann::json(c).dump(2) + "\n");
  log("train: " + std::to_string(data.size()) + " samples, " +
      std::to_string(network::count_parameters(state.params)) + " parameters, " + std::to_string(c.steps) + " steps");
  training::train(state, data, tc, [&](const training::LossRecord& r) {
    if (c.log_every && ((r.step + 1) % c.log_every == 0 || r.step + 1 == c.steps)) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "train: step %zu Lr=%.5g Lv=%.5g Ls=%.5g total=%.5g", r.step + 1,
                    r.reconstruction, r.content, r.style, r.total);
      log(buf);
    }
  });
  log("train: wrote " + tc.checkpoint_path + " and " + tc.loss_csv_path);
}

inline void cmd_reconstruct(const RunConfig& c, const std::string& checkpoint, const std::string& stack_path,
                            double t_ms, const std::string& manifest_path, const std::string& split) {
  const auto out = require_out(c);
  const auto params = training::load_checkpoint(checkpoint).params;
  pipeline::ReconstructConfig rc;
  rc.tau = c.tau;
  rc.fusion.sigma = c.sigma;
  rc.fusion.percentile = c.percentile;
  if (!stack_path.empty()) {
    rc.fusion.crf = polarimetry::CameraResponse::gamma(c.crf_gamma, 8);
    pipeline::write_reconstruction(out, pipeline::reconstruct(params, read_capture(stack_path, t_ms), rc));
    log("reconstruct: wrote " + out.string());
    return;
  }
  const auto m = dataset::load_manifest(manifest_path);
  const fs::path root = fs::path(manifest_path).parent_path();
  const auto which = dataset::parse_split(split);
  rc.fusion.crf = m.crf;
  std::size_t n = 0;
  for (const auto& s : m.scenes) {
    if (s.split != which) continue;
    pipeline::write_reconstruction(out / s.id, pipeline::reconstruct(params, dataset::load_input_stack(m, root, s), rc));
    ++n;
  }
  if (n == 0) throw Error(ErrorCode::invalid_argument, "reconstruct: no scenes in split " + split);
  log("reconstruct: wrote " + std::to_string(n) + " scenes to " + out.string());
}

inline void cmd_eval(const RunConfig& c, const std::string& pred, const std::string& gt, const std::string& manifest_path,
                     const std::string& split, const std::string& file) {
  const auto out = require_out(c);
  const auto enc = metrics::PuEncoding::default_encoding();
  if (enc.kind() != metrics::PuEncoding::Kind::pu21) log("eval: PU coefficient file not found, using log encoding");
  std::vector<pipeline::MetricRow> rows;
  if (!gt.empty()) {
    rows = pipeline::evaluate_directories(pred, gt, enc);
  } else {
    const auto m = dataset::load_manifest(manifest_path);
    rows = pipeline::evaluate_manifest(m, fs::path(manifest_path).parent_path(), pred, dataset::parse_split(split), file, enc);
  }
  dphr::detail::write_file((out / "metrics.csv").string(), pipeline::format_metrics_csv(rows));
  double mse = 0, psnr = 0, ssim = 0;
  for (const auto& r : rows) {
    mse += r.mse;
    psnr += r.pu_psnr;
    ssim += r.pu_ssim;
  }
  const double n = static_cast<double>(rows.size());
  char buf[160];
  std::snprintf(buf, sizeof buf, "eval: %zu images  mean MSE %.6g  PU-PSNR %.4f dB  PU-SSIM %.4f", rows.size(), mse / n,
                psnr / n, ssim / n);
  log(buf);
}

inline void cmd_fit_dolp(const RunConfig& c, const std::string& manifest_path) {
  const auto out = require_out(c);
  const auto m = dataset::load_manifest(manifest_path);
  const auto samples = dataset::load_dolp_samples(m, fs::path(manifest_path).parent_path());
  const auto fit = polarimetry::fit_dolp_mixture(samples);
  const nlohmann::json report = {{"samples", samples.size()},
                                 {"params", fit.params},
                                 {"neg_log_likelihood", fit.neg_log_likelihood},
                                 {"iterations", fit.iterations},
                                 {"converged", fit.converged},
                                 {"nll_history", fit.nll_history}};
  dphr::detail::write_file((out / "dolp_fit.json").string(), report.dump(2) + "\n");
  char buf[200];
  std::snprintf(buf, sizeof buf, "fit-dolp: %zu samples  w=%.4f  shape=%.4f  scale=%.5f  (%d iterations%s)",
                samples.size(), fit.params.w, fit.params.gamma_shape, fit.params.gamma_scale, fit.iterations,
                fit.converged ? "" : ", not converged");
  log(buf);
}

// ---------------------------------------------------------------------------
// Entry point

inline std::string one_line(std::string s) {
  for (auto& ch : s)
    if (ch == '\n' || ch == '\r') ch = ' ';
  std::string out;
  for (char ch : s) out += ch == '"' ? std::string("\\\"") : std::string(1, ch);
  return out;
}

inline int run(int argc, char** argv) {
  CLI::App app{"Polarimetric HDR reconstruction: simulation, training, reconstruction and evaluation."};
  app.name("dphr");
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Print help for every subcommand");

  std::string config_path;
  Overrides ov;
  std::string manifest, stack, checkpoint, resume, pred, gt, split = "test", file = "H.pfm";
  double exposure = dataset::kInputExposureMs;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "JSON run configuration; flags override its values")
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", ov.seed, "Master random seed (default 0)");
    sub->add_option("--out", ov.out, "Output directory");
  };
  auto capture_opts = [&](CLI::App* sub) {
    sub->add_option("--exposure", exposure, "Exposure time of the capture in ms (default 0.769)");
    sub->add_option("--crf-gamma", ov.crf_gamma, "Gamma of the camera response used to linearize the capture (default 2.2)");
  };

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset (exposure stacks, ground truth, manifest)");
  common(sim);
  sim->add_option("--scenes", ov.scenes, "Number of scenes (default 32)");
  sim->add_option("--size", ov.size, "Side of each polarization image in pixels (default 64)");
  sim->add_option("--patch", ov.patch, "Training patch side in pixels (default 64)");
  sim->add_option("--patches-per-scene", ov.patches_per_scene, "Patches cropped per scene (default 1)");
  sim->add_option("--threads", ov.threads, "Worker threads, 0 for all cores; output does not depend on it");

  auto* dec = app.add_subcommand("decompose", "Write Stokes images, DoLP and AoLP of one mosaic capture");
  common(dec);
  dec->add_option("--stack", stack, "Mosaic PNG (2H x 2W) of the capture")->required()->check(CLI::ExistingFile);
  capture_opts(dec);

  auto* trn = app.add_subcommand("train", "Train the network on the train split of a manifest");
  common(trn);
  trn->add_option("--manifest", manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);
  trn->add_option("--resume", resume, "Checkpoint to continue from")->check(CLI::ExistingFile);
  trn->add_option("--tau", ov.tau, "Over-exposure threshold of the input masks (default 0.95)");
  trn->add_option("--depth", ov.depth, "Encoder depth of the network (default 4)");
  trn->add_option("--filters", ov.filters, "Filters of the first encoder layer (default 16)");
  trn->add_option("--lr", ov.lr, "Adam learning rate (default 1e-4)");
  trn->add_option("--steps", ov.steps, "Total optimizer steps (default 1000)");
  trn->add_option("--batch", ov.batch, "Batch size (default 4)");
  trn->add_option("--lambda1", ov.lambda1, "Weight of the reconstruction loss (default 6)");
  trn->add_option("--lambda2", ov.lambda2, "Weight of the perceptual loss (default 1)");
  trn->add_option("--lambda3", ov.lambda3, "Weight of the content term inside the perceptual loss (default 1)");
  trn->add_option("--lambda4", ov.lambda4, "Weight of the style term inside the perceptual loss (default 120)");
  trn->add_option("--checkpoint-every", ov.checkpoint_every, "Also checkpoint every N steps, 0 for the end only");
  trn->add_option("--log-every", ov.log_every, "Log losses every N steps, 0 to disable (default 50)");

  auto* rec = app.add_subcommand("reconstruct", "Write H_d, H_t, alpha, H (PFM) and a tone-mapped H.png");
  common(rec);
  rec->add_option("--checkpoint", checkpoint, "Trained checkpoint")->required()->check(CLI::ExistingFile);
  auto* rec_stack = rec->add_option("--stack", stack, "Mosaic PNG of a single capture")->check(CLI::ExistingFile);
  auto* rec_manifest =
      rec->add_option("--manifest", manifest, "Reconstruct every scene of --split from this manifest")->check(CLI::ExistingFile);
  rec_stack->excludes(rec_manifest);
  rec->add_option("--split", split, "Split used with --manifest: train, val or test (default test)");
  capture_opts(rec);
  rec->add_option("--tau", ov.tau, "Over-exposure threshold of the input masks (default 0.95)");
  rec->add_option("--sigma", ov.sigma, "Width of the Gaussian exposure weight of H_t (default 0.2)");

  auto* ev = app.add_subcommand("eval", "Score predictions with MSE, PU-PSNR and PU-SSIM into metrics.csv");
  common(ev);
  ev->add_option("--pred", pred, "Directory of predictions")->required()->check(CLI::ExistingDirectory);
  auto* ev_gt = ev->add_option("--gt", gt, "Directory of ground-truth PFMs, matched by relative path")
                    ->check(CLI::ExistingDirectory);
  auto* ev_manifest =
      ev->add_option("--manifest", manifest, "Score <pred>/<scene>/<file> against the manifest ground truth")
          ->check(CLI::ExistingFile);
  ev_gt->excludes(ev_manifest);
  ev->add_option("--split", split, "Split used with --manifest (default test)");
  ev->add_option("--file", file, "Prediction file name inside each scene directory (default H.pfm)");

  auto* fit = app.add_subcommand("fit-dolp", "Fit the Gamma + uniform DoLP mixture to a dataset's input captures");
  common(fit);
  fit->add_option("--manifest", manifest, "Dataset manifest JSON")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    ov.apply(cfg);
    if (sim->parsed()) {
      cmd_simulate(cfg);
    } else if (dec->parsed()) {
      cmd_decompose(cfg, stack, exposure);
    } else if (trn->parsed()) {
      cmd_train(cfg, manifest, resume);
    } else if (rec->parsed()) {
      if (stack.empty() == manifest.empty()) throw UsageError("reconstruct: give exactly one of --stack or --manifest");
      cmd_reconstruct(cfg, checkpoint, stack, exposure, manifest, split);
    } else if (ev->parsed()) {
      if (gt.empty() == manifest.empty()) throw UsageError("eval: give exactly one of --gt or --manifest");
      cmd_eval(cfg, pred, gt, manifest, split, file);
    } else if (fit->parsed()) {
      cmd_fit_dolp(cfg, manifest);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\nRun with --help for more information.\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error code=" << to_string(e.code()) << " message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error code=internal message=\"" << one_line(e.what()) << "\"\n";
    return 1;
  }
  return 0;
}

}  // namespace dphr::cli
