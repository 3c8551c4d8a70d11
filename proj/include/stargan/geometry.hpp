#pragma once

#include <array>

namespace stargan {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Axis-aligned box in pixel coordinates; valid when x2 > x1 and y2 > y1.
struct BBox {
  double x1 = 0.0, y1 = 0.0, x2 = 0.0, y2 = 0.0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return valid() ? width() * height() : 0.0; }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool operator==(const BBox&) const = default;
};

/// Left eye, right eye, nose tip, left mouth corner, right mouth corner.
using Landmarks5 = std::array<Point2, 5>;

/// Frontal five-point layout in an S x S frame: eyes at 0.35 S, nose at
/// 0.53 S, mouth corners at 0.72 S.
inline Landmarks5 canonical_landmarks(double size) {
  return {Point2{0.34 * size, 0.35 * size}, Point2{0.66 * size, 0.35 * size}, Point2{0.50 * size, 0.53 * size},
          Point2{0.38 * size, 0.72 * size}, Point2{0.62 * size, 0.72 * size}};
}

}  // namespace stargan
