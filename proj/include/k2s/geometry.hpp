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
#pragma once

#include <array>
#include <string>

namespace k2s {

/// Number of location bins; quantized coordinates live in {0, ..., kLocMax}.
inline constexpr int kLocMax = 1000;

/// Axis-aligned box in continuous pixel coordinates. Area is
/// (x2 - x1) * (y2 - y1): no +1 pixel inclusivity.
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  double center_x() const { return 0.5 * (x1 + x2); }
  double center_y() const { return 0.5 * (y1 + y2); }
  double diagonal() const;
  bool degenerate() const { return !(width() > 0.0) || !(height() > 0.0); }

  std::array<double, 4> coords() const { return {x1, y1, x2, y2}; }

  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ImageDims {
  int width = 0;
  int height = 0;

  friend bool operator==(const ImageDims&, const ImageDims&) = default;
};

/// Box on the [0, 1000] location vocabulary.
struct QuantizedBox {
  int qx1 = 0;
  int qy1 = 0;
  int qx2 = 0;
  int qy2 = 0;

  std::array<int, 4> coords() const { return {qx1, qy1, qx2, qy2}; }

  friend bool operator==(const QuantizedBox&, const QuantizedBox&) = default;
};

/// Throws Error(kValidation) when x1 > x2, y1 > y2, a coordinate is negative
/// or non-finite.
void validate(const BoundingBox& box);
void validate(const ImageDims& dims);
void validate(const QuantizedBox& qbox);

/// Throws Error(kValidation) naming the first coordinate outside the image.
void validate_within(const BoundingBox& box, const ImageDims& dims);

/// floor(coord / extent * 1000), clamped to [0, 1000]. A 1e-9 guard absorbs
/// floating-point noise so that exact multiples of extent/1000 map back to
/// their own bin.
int quantize_coord(double coord, int extent);
double dequantize_coord(int q, int extent);

QuantizedBox quantize(const BoundingBox& box, const ImageDims& dims);
BoundingBox dequantize(const QuantizedBox& qbox, const ImageDims& dims);

/// Intersection over union. Zero when either box is degenerate.
double iou(const BoundingBox& a, const BoundingBox& b);

/// Euclidean distance between box centers, in pixels.
double center_distance(const BoundingBox& a, const BoundingBox& b);

BoundingBox translate(const BoundingBox& box, double dx, double dy);
BoundingBox scale(const BoundingBox& box, double factor);

/// Clamp into [0, W] x [0, H].
BoundingBox clamp_to(const BoundingBox& box, const ImageDims& dims);

std::string to_string(const BoundingBox& box);

}  // namespace k2s
