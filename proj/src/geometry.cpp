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
#include "k2s/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "k2s/error.hpp"

namespace k2s {

namespace {

std::string fmt_coord(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

double BoundingBox::diagonal() const { return std::hypot(width(), height()); }

void validate(const BoundingBox& box) {
  static constexpr const char* kNames[] = {"x1", "y1", "x2", "y2"};
  const auto c = box.coords();
  for (int i = 0; i < 4; ++i) {
    if (!std::isfinite(c[i])) {
      fail(ErrorKind::kValidation,
           std::string("box coordinate ") + kNames[i] + " is not finite");
    }
    if (c[i] < 0.0) {
      fail(ErrorKind::kValidation, std::string("box coordinate ") + kNames[i] +
                                       "=" + fmt_coord(c[i]) + " is negative");
    }
  }
  if (box.x1 > box.x2) {
    fail(ErrorKind::kValidation, "box has x1=" + fmt_coord(box.x1) +
                                     " > x2=" + fmt_coord(box.x2));
  }
  if (box.y1 > box.y2) {
    fail(ErrorKind::kValidation, "box has y1=" + fmt_coord(box.y1) +
                                     " > y2=" + fmt_coord(box.y2));
  }
}

void validate(const ImageDims& dims) {
  if (dims.width <= 0 || dims.height <= 0) {
    fail(ErrorKind::kValidation, "image dims must be positive, got " +
                                     std::to_string(dims.width) + "x" +
                                     std::to_string(dims.height));
  }
}

void validate(const QuantizedBox& q) {
  for (int v : q.coords()) {
    if (v < 0 || v > kLocMax) {
      fail(ErrorKind::kValidation,
           "quantized coordinate " + std::to_string(v) + " outside [0,1000]");
    }
  }
  if (q.qx1 > q.qx2 || q.qy1 > q.qy2) {
    fail(ErrorKind::kValidation, "quantized box corners out of order");
  }
}

void validate_within(const BoundingBox& box, const ImageDims& dims) {
  validate(box);
  validate(dims);
  if (box.x2 > dims.width) {
    fail(ErrorKind::kValidation, "box coordinate x2=" + fmt_coord(box.x2) +
                                     " exceeds image width " +
                                     std::to_string(dims.width));
  }
  if (box.y2 > dims.height) {
    fail(ErrorKind::kValidation, "box coordinate y2=" + fmt_coord(box.y2) +
                                     " exceeds image height " +
                                     std::to_string(dims.height));
  }
}

int quantize_coord(double coord, int extent) {
  const double v = coord * static_cast<double>(kLocMax) / extent;
  const auto q = static_cast<int>(std::floor(v + 1e-9));
  return std::clamp(q, 0, kLocMax);
}

double dequantize_coord(int q, int extent) {
  return static_cast<double>(q) * extent / kLocMax;
}

QuantizedBox quantize(const BoundingBox& box, const ImageDims& dims) {
  validate_within(box, dims);
  return {quantize_coord(box.x1, dims.width),
          quantize_coord(box.y1, dims.height),
          quantize_coord(box.x2, dims.width),
          quantize_coord(box.y2, dims.height)};
}

BoundingBox dequantize(const QuantizedBox& qbox, const ImageDims& dims) {
  validate(qbox);
  validate(dims);
  return {dequantize_coord(qbox.qx1, dims.width),
          dequantize_coord(qbox.qy1, dims.height),
          dequantize_coord(qbox.qx2, dims.width),
          dequantize_coord(qbox.qy2, dims.height)};
}

double iou(const BoundingBox& a, const BoundingBox& b) {
  if (a.degenerate() || b.degenerate()) return 0.0;
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

double center_distance(const BoundingBox& a, const BoundingBox& b) {
  return std::hypot(a.center_x() - b.center_x(), a.center_y() - b.center_y());
}

BoundingBox translate(const BoundingBox& box, double dx, double dy) {
  return {box.x1 + dx, box.y1 + dy, box.x2 + dx, box.y2 + dy};
}

BoundingBox scale(const BoundingBox& box, double factor) {
  return {box.x1 * factor, box.y1 * factor, box.x2 * factor, box.y2 * factor};
}

BoundingBox clamp_to(const BoundingBox& box, const ImageDims& dims) {
  const double w = dims.width;
  const double h = dims.height;
  return {std::clamp(box.x1, 0.0, w), std::clamp(box.y1, 0.0, h),
          std::clamp(box.x2, 0.0, w), std::clamp(box.y2, 0.0, h)};
}

std::string to_string(const BoundingBox& box) {
  std::ostringstream os;
  os << "(" << box.x1 << "," << box.y1 << "," << box.x2 << "," << box.y2
     << ")";
  return os.str();
}

}  // namespace k2s
