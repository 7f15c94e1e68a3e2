// Copyright 2026 The K2S Toolkit Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "k2s/error.hpp"
#include "k2s/geometry.hpp"

namespace k2s {
namespace {

// Pixel-count IoU of two integer boxes.
double raster_iou(int ax1, int ay1, int ax2, int ay2, int bx1, int by1, int bx2,
                  int by2) {
  long inter = 0, uni = 0;
  const int lo_x = std::min(ax1, bx1), hi_x = std::max(ax2, bx2);
  const int lo_y = std::min(ay1, by1), hi_y = std::max(ay2, by2);
  for (int y = lo_y; y < hi_y; ++y) {
    for (int x = lo_x; x < hi_x; ++x) {
      const bool in_a = x >= ax1 && x < ax2 && y >= ay1 && y < ay2;
      const bool in_b = x >= bx1 && x < bx2 && y >= by1 && y < by2;
      inter += in_a && in_b;
      uni += in_a || in_b;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

TEST(Quantize, HalfExtentMapsToFiveHundred) {
  EXPECT_EQ(quantize_coord(512, 1024), 500);
}

TEST(Quantize, EndpointsMapToRangeLimits) {
  for (int w : {1, 7, 512, 1000, 1024, 2048, 3001}) {
    EXPECT_EQ(quantize_coord(0, w), 0);
    EXPECT_EQ(quantize_coord(w, w), 1000);
  }
}

TEST(Quantize, UnitScaleIsIdentity) {
  const ImageDims dims{1000, 1000};
  const QuantizedBox q = quantize({276, 141, 484, 218}, dims);
  EXPECT_EQ(q, (QuantizedBox{276, 141, 484, 218}));
}

TEST(Quantize, OutOfBoundsBoxNamesCoordinate) {
  try {
    quantize({0, 0, 777, 10}, {512, 512});
    FAIL() << "expected a bounds error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kValidation);
    EXPECT_NE(std::string(e.what()).find("x2"), std::string::npos);
  }
}

TEST(Quantize, HandComputedRoundTrip) {
  EXPECT_EQ(quantize_coord(300, 512), 585);
  EXPECT_DOUBLE_EQ(dequantize_coord(585, 512), 299.52);
}

TEST(Dequantize, MatchingScaleIsIdentity) {
  EXPECT_DOUBLE_EQ(dequantize_coord(500, 1000), 500.0);
}

TEST(Dequantize, QuantizeOfDequantizeIsFixedPoint) {
  for (int w : {1, 3, 333, 512, 1000, 1023, 2500, 4096}) {
    for (int q = 0; q <= 1000; ++q) {
      ASSERT_EQ(quantize_coord(dequantize_coord(q, w), w), q) << "w=" << w;
    }
  }
}

TEST(Dequantize, RandomRoundTripWithinOneBin) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 10000; ++i) {
    const ImageDims dims{std::uniform_int_distribution<int>(1, 5000)(rng),
                         std::uniform_int_distribution<int>(1, 5000)(rng)};
    std::uniform_real_distribution<double> ux(0.0, dims.width);
    std::uniform_real_distribution<double> uy(0.0, dims.height);
    double a = ux(rng), b = ux(rng), c = uy(rng), d = uy(rng);
    const BoundingBox box{std::min(a, b), std::min(c, d), std::max(a, b),
                          std::max(c, d)};
    const QuantizedBox q = quantize(box, dims);
    ASSERT_NO_THROW(validate(q));
    const BoundingBox back = dequantize(q, dims);
    ASSERT_LE(std::abs(back.x1 - box.x1), dims.width / 1000.0 + 1e-9);
    ASSERT_LE(std::abs(back.x2 - box.x2), dims.width / 1000.0 + 1e-9);
    ASSERT_LE(std::abs(back.y1 - box.y1), dims.height / 1000.0 + 1e-9);
    ASSERT_LE(std::abs(back.y2 - box.y2), dims.height / 1000.0 + 1e-9);
  }
}

TEST(Iou, IdenticalAndDisjoint) {
  const BoundingBox a{1, 2, 30, 40};
  EXPECT_DOUBLE_EQ(iou(a, a), 1.0);
  EXPECT_DOUBLE_EQ(iou(a, {31, 2, 50, 40}), 0.0);
  EXPECT_DOUBLE_EQ(iou(a, {30, 2, 50, 40}), 0.0);  // shared edge only
}

TEST(Iou, HalfOverlapIsOneThird) {
  EXPECT_NEAR(iou({0, 0, 10, 10}, {5, 0, 15, 10}), 50.0 / 150.0, 1e-12);
  EXPECT_NEAR(raster_iou(0, 0, 10, 10, 5, 0, 15, 10), 50.0 / 150.0, 1e-12);
}

TEST(Iou, DegenerateScoresZero) {
  EXPECT_DOUBLE_EQ(iou({5, 5, 5, 9}, {5, 5, 5, 9}), 0.0);
  EXPECT_DOUBLE_EQ(iou({0, 0, 10, 10}, {2, 2, 2, 8}), 0.0);
}

TEST(Iou, MatchesRasterCount) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> pos(0, 60), ext(1, 40);
  for (int i = 0; i < 1000; ++i) {
    const int ax = pos(rng), ay = pos(rng), bx = pos(rng), by = pos(rng);
    const int aw = ext(rng), ah = ext(rng), bw = ext(rng), bh = ext(rng);
    const double analytic = iou({double(ax), double(ay), double(ax + aw), double(ay + ah)},
                                {double(bx), double(by), double(bx + bw), double(by + bh)});
    ASSERT_NEAR(analytic, raster_iou(ax, ay, ax + aw, ay + ah, bx, by, bx + bw, by + bh),
                1e-3);
  }
}

TEST(Iou, SymmetricAndTransformInvariant) {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(0, 100);
  for (int i = 0; i < 500; ++i) {
    double a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const BoundingBox p{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    a = u(rng), b = u(rng), c = u(rng), d = u(rng);
    const BoundingBox q{std::min(a, b), std::min(c, d), std::max(a, b), std::max(c, d)};
    const double v = iou(p, q);
    ASSERT_GE(v, 0.0);
    ASSERT_LE(v, 1.0);
    ASSERT_DOUBLE_EQ(v, iou(q, p));
    ASSERT_NEAR(v, iou(translate(p, 17.5, 3.25), translate(q, 17.5, 3.25)), 1e-9);
    ASSERT_NEAR(v, iou(scale(p, 2.5), scale(q, 2.5)), 1e-9);
  }
}

TEST(CenterDistance, HandValues) {
  const BoundingBox a{0, 0, 10, 10}, b{10, 0, 20, 10};
  EXPECT_DOUBLE_EQ(center_distance(a, a), 0.0);
  EXPECT_DOUBLE_EQ(center_distance(a, b), 10.0);
  EXPECT_DOUBLE_EQ(center_distance(b, a), 10.0);
}

TEST(Validate, RejectsBadBoxesAndDims) {
  EXPECT_THROW(validate(BoundingBox{5, 0, 4, 1}), Error);
  EXPECT_THROW(validate(BoundingBox{-1, 0, 4, 1}), Error);
  EXPECT_THROW(validate(BoundingBox{0, 0, NAN, 1}), Error);
  EXPECT_THROW(validate(ImageDims{0, 10}), Error);
  EXPECT_THROW(validate(QuantizedBox{0, 0, 1001, 5}), Error);
  EXPECT_THROW(validate(QuantizedBox{10, 0, 5, 5}), Error);
  EXPECT_NO_THROW(validate(BoundingBox{0, 0, 0, 0}));
}

TEST(ClampTo, KeepsBoxInsideImage) {
  const BoundingBox c = clamp_to({-5, 3, 120, 80}, {100, 50});
  EXPECT_EQ(c, (BoundingBox{0, 3, 100, 50}));
}

}  // namespace
}  // namespace k2s
