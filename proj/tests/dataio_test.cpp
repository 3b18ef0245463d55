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

#include <gtest/gtest.h>

#include <bit>
#include <filesystem>
#include <map>
#include <random>
#include <set>

#include "dphr/dataset.hpp"
#include "dphr/io.hpp"

namespace dphr::dataset {
namespace {

using polarimetry::CameraResponse;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("dphr_dataio_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

Image random_image(std::size_t c, std::size_t h, std::size_t w, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

// Float32-representable values so the round trip can be bit exact.
Image random_float_image(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(-1e4f, 1e4f);
  Image img(c, h, w);
  for (auto& v : img.data) v = static_cast<double>(u(rng));
  return img;
}

std::uint32_t bits(double v) { return std::bit_cast<std::uint32_t>(static_cast<float>(v)); }

// ---------------------------------------------------------------------------
// PFM

TEST(Pfm, TwoByTwoRoundTripIsBitIdentical) {
  Image img(3, 2, 2);
  const float vals[12] = {0.f, -0.f, 1.5f, 3.14159f, 1e-38f, 6.5e4f, -2.f, 0.1f, 7.f, 8.f, 9.f, 1e30f};
  for (std::size_t i = 0; i < 12; ++i) img.data[i] = vals[i];
  for (auto e : {io::Endian::little, io::Endian::big}) {
    const auto bytes = io::encode_pfm(img, e);
    const auto back = io::decode_pfm(bytes);
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(bits(back.data[i]), bits(img.data[i]));
    EXPECT_EQ(io::encode_pfm(back, e), bytes);
  }
}

TEST(Pfm, HeaderAndRowOrder) {
  Image img(1, 2, 3);
  for (std::size_t i = 0; i < 6; ++i) img.data[i] = static_cast<double>(i);
  const auto bytes = io::encode_pfm(img);
  const std::string header = "Pf\n3 2\n-1.0\n";
  ASSERT_EQ(bytes.substr(0, header.size()), header);
  // The first stored row is the bottom row: values 3, 4, 5.
  float first;
  std::memcpy(&first, bytes.data() + header.size(), 4);
  if constexpr (std::endian::native == std::endian::little) {
    EXPECT_EQ(first, 3.0f);
  }
  EXPECT_EQ(io::encode_pfm(img, io::Endian::big).substr(0, 11), "Pf\n3 2\n1.0\n");
}

TEST(Pfm, BigEndianFileReadsBackEqual) {
  std::mt19937_64 rng(1);
  TempDir dir("pfm_endian");
  for (std::size_t c : {1u, 3u}) {
    auto img = random_float_image(c, 7, 5, rng);
    io::write_pfm((dir.path / "le.pfm").string(), img, io::Endian::little);
    io::write_pfm((dir.path / "be.pfm").string(), img, io::Endian::big);
    auto le = io::read_pfm((dir.path / "le.pfm").string());
    auto be = io::read_pfm((dir.path / "be.pfm").string());
    for (std::size_t i = 0; i < img.size(); ++i) {
      EXPECT_EQ(bits(le.data[i]), bits(img.data[i]));
      EXPECT_EQ(bits(be.data[i]), bits(img.data[i]));
    }
    // Same payload, byte-reversed per value.
    const auto lb = io::encode_pfm(img, io::Endian::little), bb = io::encode_pfm(img, io::Endian::big);
    const std::size_t hl = lb.size() - 4 * img.size(), hb = bb.size() - 4 * img.size();
    for (std::size_t k = 0; k < img.size(); ++k)
      for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(lb[hl + 4 * k + j], bb[hb + 4 * k + 3 - j]);
  }
}

TEST(Pfm, MalformedInputsReportOffsets) {
  auto offset_of = [](const std::string& bytes) -> std::size_t {
    try {
      io::decode_pfm(bytes);
    } catch (const FormatError& e) {
      return e.offset();
    }
    ADD_FAILURE() << "no error for " << bytes.substr(0, 16);
    return 0;
  };
  EXPECT_EQ(offset_of("P6\n1 1\n-1\n"), 0u);
  EXPECT_EQ(offset_of("PFx1 1\n-1\n"), 2u);
  EXPECT_EQ(offset_of("PF\nab 1\n-1\n"), 3u);
  EXPECT_EQ(offset_of("PF\n2 0\n-1\n"), 5u);
  EXPECT_EQ(offset_of("PF\n2 2\nnan\n"), 7u);
  EXPECT_EQ(offset_of("PF\n2 2\n-1"), 9u);
  const std::string truncated = "Pf\n2 2\n-1\n" + std::string(12, '\0');
  EXPECT_EQ(offset_of(truncated), truncated.size());
  EXPECT_THROW(io::encode_pfm(Image(2, 2, 2)), Error);
  EXPECT_THROW(io::read_pfm("/nonexistent/x.pfm"), Error);
}

// ---------------------------------------------------------------------------
// PNG

TEST(Png, EightBitRoundTripIsExact) {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> code(0, 255);
  TempDir dir("png");
  for (std::size_t c : {1u, 3u}) {
    Image img(c, 9, 13);
    for (auto& v : img.data) v = code(rng) / 255.0;
    const auto path = (dir.path / "x.png").string();
    io::write_png8(path, img);
    auto back = io::read_png8(path);
    ASSERT_TRUE(back.same_shape(img));
    for (std::size_t i = 0; i < img.size(); ++i) EXPECT_EQ(back.data[i], img.data[i]);
    EXPECT_EQ(io::encode_png8(back), io::encode_png8(img));
  }
}

TEST(Png, MalformedInputsAreFormatErrors) {
  Image img(3, 4, 4, 0.5);
  const auto good = io::encode_png8(img);
  try {
    io::decode_png8("not a png file");
    ADD_FAILURE();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 0u);
  }
  EXPECT_THROW(io::decode_png8(good.substr(0, good.size() / 2)), FormatError);
  EXPECT_THROW(io::encode_png8(Image(4, 2, 2)), Error);
}

// ---------------------------------------------------------------------------
// Ground truth

TEST(GroundTruth, ThreeExposureBracketRecoversRadiance) {
  std::mt19937_64 rng(3);
  auto irr = random_image(3, 16, 16, 0.0, 3.0, rng);
  auto rho = random_image(1, 16, 16, 0, 1, rng), theta = random_image(1, 16, 16, 0, 180, rng);
  const auto crf = CameraResponse::linear(0);
  std::vector<polarimetry::PolarizationStack> bracket;
  for (double t : {0.25, 1.0, 4.0}) bracket.push_back(polarimetry::capture(polarimetry::simulate_polarizers(irr, rho, theta, t), crf));
  auto gt = assemble_ground_truth(bracket, crf);
  // The shortest exposure never saturates (I t <= 0.75 per orientation), so nothing is flagged.
  EXPECT_EQ(gt.flagged_count, 0u);
  for (std::size_t i = 0; i < irr.size(); ++i) EXPECT_NEAR(gt.value.data[i], irr.data[i], 1e-6);
}

TEST(GroundTruth, IdenticalExposuresGiveTheSingleEstimate) {
  polarimetry::PolarizationStack s;
  for (std::size_t k = 0; k < 4; ++k) s.images[k] = Image(1, 2, 2, 0.1 * static_cast<double>(k + 1));
  s.t0_ms = 2.0;
  s.domain = polarimetry::Domain::pixel;
  const auto crf = CameraResponse::gamma(2.2, 0);
  auto gt = assemble_ground_truth({s, s, s}, crf);
  double g = 0;
  for (std::size_t k = 0; k < 4; ++k) g += std::pow(0.1 * static_cast<double>(k + 1), 2.2);
  for (double v : gt.value.data) EXPECT_NEAR(v, g / (2 * 2.0), 1e-15);
  EXPECT_EQ(gt.flagged_count, 0u);
}

TEST(GroundTruth, SaturatedEverywhereIsFlagged) {
  Image irr(1, 2, 2, 0.2);
  irr.data[3] = 100;
  Image rho(1, 2, 2, 0.3), theta(1, 2, 2, 10);
  const auto crf = CameraResponse::linear(0);
  auto single = assemble_ground_truth({polarimetry::capture(polarimetry::simulate_polarizers(irr, rho, theta, 1.0), crf)}, crf);
  EXPECT_EQ(single.flagged_count, 1u);
  EXPECT_EQ(single.flagged[3], 1);
  EXPECT_NEAR(single.value.data[0], 0.2, 1e-12);
  EXPECT_THROW(assemble_ground_truth({}, crf), Error);
}

// ---------------------------------------------------------------------------
// Crops and splits

TEST(Crop, FullResolutionFramesGiveFourPatches) {
  auto boxes = crop_boxes(1024, 1224, 512, 4, 9);
  ASSERT_EQ(boxes.size(), 4u);
  for (const auto& b : boxes) {
    EXPECT_EQ(b.size, 512u);
    EXPECT_LE(b.y + 512, 1024u);
    EXPECT_LE(b.x + 512, 1224u);
  }
  auto again = crop_boxes(1024, 1224, 512, 4, 9);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(boxes[i].y, again[i].y);
    EXPECT_EQ(boxes[i].x, again[i].x);
  }
  EXPECT_THROW(crop_boxes(100, 200, 101, 1, 0), Error);
}

TEST(Crop, CommutesWithStokes) {
  std::mt19937_64 rng(4);
  auto irr = random_image(3, 20, 24, 0, 1, rng);
  auto rho = random_image(1, 20, 24, 0, 1, rng), theta = random_image(1, 20, 24, 0, 180, rng);
  auto stack = polarimetry::simulate_polarizers(irr, rho, theta, 1.0);
  auto patches = crop_patches(stack, irr, 8, 3, 5);
  ASSERT_EQ(patches.size(), 3u);
  const auto full = polarimetry::stokes(stack);
  for (const auto& p : patches) {
    const auto s = polarimetry::stokes(p.stack);
    const auto d1 = polarimetry::dolp(s), d2 = crop(polarimetry::dolp(full), p.box);
    for (std::size_t i = 0; i < s.s0.size(); ++i) {
      EXPECT_EQ(s.s0.data[i], crop(full.s0, p.box).data[i]);
      EXPECT_EQ(s.s1.data[i], crop(full.s1, p.box).data[i]);
      EXPECT_EQ(s.s2.data[i], crop(full.s2, p.box).data[i]);
      EXPECT_EQ(d1.data[i], d2.data[i]);
    }
    EXPECT_EQ(p.ground_truth.data, crop(irr, p.box).data);
  }
  EXPECT_THROW(crop_patches(stack, Image(3, 20, 23), 8, 1, 0), Error);
}

DatasetManifest scenes(std::size_t n) {
  DatasetManifest m;
  for (std::size_t i = 0; i < n; ++i) m.scenes.push_back({scene_id(i), {{1.0, "x.png"}}, "", Split::unassigned, {}});
  return m;
}

TEST(Split, TenScenesSplitSevenTwoOne) {
  auto m = scenes(10);
  split(m, {}, 3);
  std::map<Split, int> count;
  for (const auto& s : m.scenes) ++count[s.split];
  EXPECT_EQ(count[Split::train], 7);
  EXPECT_EQ(count[Split::val], 2);
  EXPECT_EQ(count[Split::test], 1);
  EXPECT_EQ(count[Split::unassigned], 0);
  // Equal remainders (0.6 each for 8 scenes) are broken in split order.
  EXPECT_EQ(split_counts(8, {}), (std::array<std::size_t, 3>{6, 1, 1}));
}

TEST(Split, DeterministicAndLeakFree) {
  for (std::size_t n : {3u, 7u, 32u, 101u}) {
    auto a = scenes(n), b = scenes(n), c = scenes(n);
    split(a, {}, 11);
    split(b, {}, 11);
    split(c, {}, 12);
    bool differs = false;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(a.scenes[i].split, b.scenes[i].split);
      EXPECT_NE(a.scenes[i].split, Split::unassigned);
      differs = differs || a.scenes[i].split != c.scenes[i].split;
    }
    if (n > 7) {
      EXPECT_TRUE(differs);
    }
    const auto k = split_counts(n, {});
    EXPECT_EQ(k[0] + k[1] + k[2], n);
    for (std::size_t s = 0; s < 3; ++s) EXPECT_GE(k[s], 1u);
    // Largest remainder keeps every count within one of its exact share.
    const double share[3] = {0.7, 0.2, 0.1};
    for (std::size_t s = 0; s < 3 && n >= 10; ++s) EXPECT_LE(std::abs(static_cast<double>(k[s]) - share[s] * n), 1.0);
  }
  auto two = scenes(2);
  EXPECT_THROW(split(two), Error);
  auto m = scenes(10);
  EXPECT_THROW(split(m, {0.5, 0.2, 0.1}), Error);
}

// ---------------------------------------------------------------------------
// Manifest and synthetic generation

TEST(Manifest, JsonRoundTripAndValidation) {
  auto m = scenes(3);
  m.scenes[0].crops = {{1, 2, 8}};
  m.scenes[1].exposures = {{0.5, "a.png"}, {1.0, "b.png"}};
  m.crf = CameraResponse::lut({0, 0.3, 1}, 8);
  m.seed = 42;
  split(m, {}, 0);
  TempDir dir("manifest");
  const auto path = (dir.path / "m.json").string();
  save_manifest(path, m);
  auto back = load_manifest(path);
  EXPECT_EQ(nlohmann::json(back), nlohmann::json(m));
  EXPECT_EQ(back.input_index(back.scenes[1]), 1u);

  auto bad = m;
  bad.scenes[1].exposures = {{1.0, "a.png"}, {1.0, "b.png"}};
  EXPECT_THROW(bad.validate(), Error);
  bad = m;
  bad.scenes[2].id = bad.scenes[0].id;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_THROW(check_files(m, dir.path), Error);
}

TEST(Synthetic, DefaultMixtureIsTheFittedOne) {
  SyntheticConfig cfg;
  EXPECT_DOUBLE_EQ(cfg.dolp.w, 0.934);
  EXPECT_DOUBLE_EQ(cfg.dolp.gamma_shape, 6.264);
  EXPECT_DOUBLE_EQ(cfg.dolp.gamma_scale, 0.023);
  EXPECT_EQ(kCaptureExposuresMs.size(), 17u);
  EXPECT_DOUBLE_EQ(kCaptureExposuresMs.front(), 0.03);
  EXPECT_DOUBLE_EQ(kCaptureExposuresMs.back(), 19.705);
}

TEST(Synthetic, DolpFieldPassesKolmogorovSmirnov) {
  SyntheticConfig cfg;
  cfg.seed = 2024;
  std::vector<double> rho;
  for (std::size_t i = 0; rho.size() < 100000; ++i) {
    auto s = generate_scene(cfg, i);
    rho.insert(rho.end(), s.rho.data.begin(), s.rho.data.end());
  }
  rho.resize(100000);
  std::sort(rho.begin(), rho.end());
  const double n = static_cast<double>(rho.size());
  double d = 0;
  for (std::size_t i = 0; i < rho.size(); ++i) {
    const double f = polarimetry::mixture_cdf(rho[i], cfg.dolp);
    d = std::max({d, f - i / n, (i + 1) / n - f});
  }
  // Asymptotic critical value at alpha = 0.01.
  EXPECT_LT(d, 1.6276 / std::sqrt(n));
}

TEST(Synthetic, UnquantizedDolpMatchesGeneratingField) {
  SyntheticConfig cfg;
  cfg.size = 32;
  auto s = generate_scene(cfg, 0);
  const auto stack = polarimetry::simulate_polarizers(s.irradiance, s.rho, s.theta, 1.0);
  const auto d = polarimetry::dolp(polarimetry::mean_stokes(polarimetry::stokes(stack)));
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_NEAR(d.data[i], s.rho.data[i], 1e-9);
}

TEST(Synthetic, DatasetOnDiskIsDeterministicAndLoadable) {
  SyntheticConfig cfg;
  cfg.scenes = 10;
  cfg.size = 32;
  cfg.patch_size = 16;
  cfg.patches_per_scene = 2;
  cfg.seed = 7;
  TempDir a("synth_a"), b("synth_b");
  cfg.threads = 4;
  auto ma = generate_synthetic_dataset(cfg, a.path);
  cfg.threads = 1;
  auto mb = generate_synthetic_dataset(cfg, b.path);
  EXPECT_EQ(detail::read_file((a.path / "manifest.json").string()), detail::read_file((b.path / "manifest.json").string()));
  for (const auto& s : ma.scenes) {
    for (const auto& e : s.exposures)
      EXPECT_EQ(detail::read_file((a.path / e.mosaic).string()), detail::read_file((b.path / e.mosaic).string()));
    EXPECT_EQ(detail::read_file((a.path / s.ground_truth).string()),
              detail::read_file((b.path / s.ground_truth).string()));
  }

  auto m = load_manifest((a.path / "manifest.json").string());
  check_files(m, a.path);
  std::map<Split, int> count;
  for (const auto& s : m.scenes) ++count[s.split];
  EXPECT_EQ(count[Split::train], 7);
  auto train = load_samples(m, a.path, Split::train);
  ASSERT_EQ(train.size(), 14u);
  EXPECT_EQ(train[0].input.channels, 12u);
  EXPECT_EQ(train[0].input.height, 16u);
  EXPECT_EQ(train[0].target.channels, 3u);

  // Stored H_g is the float32 image of the generating irradiance.
  auto s0 = generate_scene(cfg, 0);
  auto hg = io::read_pfm((a.path / m.scenes[0].ground_truth).string());
  for (std::size_t i = 0; i < hg.size(); ++i) EXPECT_EQ(hg.data[i], static_cast<double>(static_cast<float>(s0.irradiance.data[i])));

  // The stored input capture matches the simulator at the input exposure.
  const auto in = load_input_stack(m, a.path, m.scenes[0]);
  EXPECT_DOUBLE_EQ(in.t0_ms, cfg.input_exposure_ms);
  const auto expect = polarimetry::capture(
      polarimetry::simulate_polarizers(s0.irradiance, s0.rho, s0.theta, cfg.input_exposure_ms), m.crf);
  for (std::size_t k = 0; k < 4; ++k) EXPECT_EQ(in.images[k].data, expect.images[k].data);

  EXPECT_EQ(load_dolp_samples(m, a.path).size(), 10u * 32 * 32);
}

}  // namespace
}  // namespace dphr::dataset
