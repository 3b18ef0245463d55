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

#include <random>

#include "dphr/fusion.hpp"

namespace dphr::fusion {
namespace {

using polarimetry::CameraResponse;
using polarimetry::Domain;
using polarimetry::PolarizationStack;

PolarizationStack uniform_stack(double v, std::size_t h = 3, std::size_t w = 3) {
  PolarizationStack s;
  for (auto& img : s.images) img = Image(1, h, w, v);
  s.t0_ms = 1;
  s.domain = Domain::pixel;
  return s;
}

Image random_image(std::size_t c, std::size_t h, std::size_t w, double lo, double hi, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(lo, hi);
  Image img(c, h, w);
  for (auto& v : img.data) v = u(rng);
  return img;
}

FusionConfig identity_config() {
  FusionConfig cfg;
  cfg.crf = CameraResponse::linear(0);
  return cfg;
}

TEST(TraditionalHdr, UniformInputGivesTwiceTheValue) {
  for (double v : {0.1, 0.25, 0.4}) {
    auto ht = traditional_hdr(uniform_stack(v), identity_config());
    EXPECT_EQ(ht.invalid_count, 0u);
    for (double x : ht.value.data) EXPECT_NEAR(x, 2 * v, 1e-12);
  }
  EXPECT_NEAR(traditional_hdr(uniform_stack(0.25), identity_config()).value.data[0], 0.5, 1e-12);
}

TEST(TraditionalHdr, RecoversSimulatedIrradiance) {
  std::mt19937_64 rng(1);
  for (double t0 : {1.0, 0.5}) {
    auto irr = random_image(3, 16, 16, 0.0, 1.0 / t0, rng);
    auto rho = random_image(1, 16, 16, 0, 1, rng);
    auto theta = random_image(1, 16, 16, 0, 180, rng);
    auto stack = polarimetry::simulate_polarizers(irr, rho, theta, t0);
    auto ht = traditional_hdr(polarimetry::capture(stack, CameraResponse::linear(0)), identity_config());
    auto s0 = polarimetry::stokes(stack).s0;
    for (std::size_t i = 0; i < s0.size(); ++i) {
      if (!ht.invalid[i]) {
        EXPECT_NEAR(ht.value.data[i], s0.data[i], 1e-6);
      }
    }
  }
}

TEST(TraditionalHdr, ExposureConsistent) {
  std::mt19937_64 rng(2);
  auto irr = random_image(1, 8, 8, 0.0, 1.0, rng);
  auto rho = random_image(1, 8, 8, 0, 1, rng);
  auto theta = random_image(1, 8, 8, 0, 180, rng);
  Image half = irr;
  for (auto& v : half.data) v *= 0.5;
  const auto crf = CameraResponse::linear(0);
  auto a = traditional_hdr(polarimetry::capture(polarimetry::simulate_polarizers(irr, rho, theta, 1.0), crf),
                           identity_config());
  auto b = traditional_hdr(polarimetry::capture(polarimetry::simulate_polarizers(half, rho, theta, 2.0), crf),
                           identity_config());
  // Identical pixels; the doubled exposure halves the irradiance estimate.
  for (std::size_t i = 0; i < irr.size(); ++i) {
    EXPECT_NEAR(a.value.data[i], irr.data[i], 1e-9);
    EXPECT_NEAR(b.value.data[i], half.data[i], 1e-9);
  }
}

TEST(TraditionalHdr, UnderflowingWeightsAreFlaggedNotNaN) {
  auto cfg = identity_config();
  cfg.sigma = 0.01;
  auto ht = traditional_hdr(uniform_stack(1.0, 2, 2), cfg);
  EXPECT_EQ(ht.invalid_count, 4u);
  for (double v : ht.value.data) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(traditional_hdr(uniform_stack(0.5), FusionConfig{.sigma = 0}), Error);
}

TEST(TraditionalHdr, GaussianWeightPeaksAtCenter) {
  EXPECT_DOUBLE_EQ(gaussian_weight(1.0, 1.0, 0.2), 1.0);
  EXPECT_NEAR(gaussian_weight(1.2, 1.0, 0.2), std::exp(-0.5), 1e-15);
  EXPECT_DOUBLE_EQ(gaussian_weight(0.7, 1.0, 0.2), gaussian_weight(1.3, 1.0, 0.2));
}

TEST(Alpha, ReferenceValues) {
  auto one = [](double v) { return Image(1, 1, 1, v); };
  EXPECT_DOUBLE_EQ(alpha_map(one(1), one(1)).data[0], 1.0);
  EXPECT_DOUBLE_EQ(alpha_map(one(0), one(0.3)).data[0], 0.0);
  EXPECT_DOUBLE_EQ(alpha_map(one(0.5), one(0.5)).data[0], 0.5);
  EXPECT_DOUBLE_EQ(alpha_map(one(0), one(1)).data[0], 0.0);
}

TEST(Alpha, MonotoneInDolpAndMask) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 2000; ++t) {
    const double rho = u(rng), m = u(rng), d = 0.1 * u(rng);
    auto a = [](double r, double mm) { return alpha_map(Image(1, 1, 1, r), Image(1, 1, 1, mm)).data[0]; };
    const double base = a(rho, m);
    EXPECT_GE(base, 0.0);
    EXPECT_LE(base, 1.0);
    EXPECT_GE(a(std::min(1.0, rho + d), m), base);
    EXPECT_GE(a(rho, std::min(1.0, m + d)), base);
  }
}

TEST(Fuse, ReferenceValuesAndConvexity) {
  auto one = [](double v) { return Image(1, 1, 1, v); };
  EXPECT_DOUBLE_EQ(fuse(one(4), one(0), one(0.25)).data[0], 1.0);
  EXPECT_DOUBLE_EQ(fuse(one(4), one(2), one(1)).data[0], 4.0);
  EXPECT_DOUBLE_EQ(fuse(one(4), one(2), one(0)).data[0], 2.0);

  std::mt19937_64 rng(4);
  auto ht = random_image(3, 8, 8, 0, 5, rng), hd = random_image(3, 8, 8, 0, 5, rng);
  auto alpha = random_image(1, 8, 8, 0, 1, rng);
  auto h = fuse(ht, hd, alpha);
  for (std::size_t i = 0; i < h.size(); ++i) {
    EXPECT_GE(h.data[i], std::min(ht.data[i], hd.data[i]) - 1e-15);
    EXPECT_LE(h.data[i], std::max(ht.data[i], hd.data[i]) + 1e-15);
  }
  EXPECT_THROW(fuse(ht, Image(3, 8, 7), alpha), Error);
  EXPECT_THROW(fuse(ht, hd, Image(2, 8, 8)), Error);
}

TEST(Normalize, PercentileMatchesLinearInterpolation) {
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 50), 2.5);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 25), 1.75);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 100), 4.0);
  EXPECT_DOUBLE_EQ(percentile({4, 1, 3, 2}, 0), 1.0);
  EXPECT_THROW(percentile({}, 50), Error);
}

TEST(Normalize, ReferenceCases) {
  auto ones = normalize_hdr(Image(3, 2, 2, 7.5), 100);
  for (double v : ones.data) EXPECT_DOUBLE_EQ(v, 1.0);

  Image ramp(1, 1, 1001);
  for (std::size_t i = 0; i <= 1000; ++i) ramp.data[i] = static_cast<double>(i);
  auto n = normalize_hdr(ramp, 99.9);
  for (std::size_t i = 0; i <= 1000; ++i) {
    if (i >= 999) {
      EXPECT_DOUBLE_EQ(n.data[i], 1.0);
    } else {
      EXPECT_LT(n.data[i], 1.0);
    }
  }
  EXPECT_THROW(normalize_hdr(Image(1, 2, 2, 0.0)), Error);
}

TEST(Normalize, ScaleInvariant) {
  std::mt19937_64 rng(5);
  auto img = random_image(3, 10, 10, 0, 50, rng);
  auto a = normalize_hdr(img);
  Image scaled = img;
  for (auto& v : scaled.data) v *= 37.0;
  auto b = normalize_hdr(scaled);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_NEAR(a.data[i], b.data[i], 1e-12);
    EXPECT_GE(a.data[i], 0.0);
    EXPECT_LE(a.data[i], 1.0);
  }
}

TEST(Normalize, IdempotentWhenThePercentileIsOne) {
  Image img(1, 1, 100);
  for (std::size_t i = 0; i < 100; ++i) img.data[i] = i < 90 ? static_cast<double>(i) : 200.0;
  auto once = normalize_hdr(img, 95);
  ASSERT_DOUBLE_EQ(percentile(once.data, 95), 1.0);
  auto twice = normalize_hdr(once, 95);
  for (std::size_t i = 0; i < once.size(); ++i) EXPECT_DOUBLE_EQ(once.data[i], twice.data[i]);
}

TEST(Blend, InvalidTraditionalPixelsFallBackToPrediction) {
  auto ht = traditional_hdr(uniform_stack(0.25, 2, 2), identity_config());
  ht.invalid[3] = 1;
  ht.value.data[3] = 0;
  Image hd(1, 2, 2, 0.5);
  hd.data[0] = 1.0;
  auto r = blend(ht, hd, Image(1, 2, 2, 1.0), Image(1, 2, 2, 1.0));
  EXPECT_DOUBLE_EQ(r.alpha.data[0], 1.0);
  EXPECT_DOUBLE_EQ(r.alpha.data[3], 0.0);
  EXPECT_DOUBLE_EQ(r.h.data[3], r.hd.data[3]);
  EXPECT_DOUBLE_EQ(r.h.data[0], r.ht.data[0]);
}

}  // namespace
}  // namespace dphr::fusion
