#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>

namespace smallscale {

/// Axis-aligned box in pixel coordinates, stored as (x, y, w, h) like the COCO
/// wire format. Coordinates are real-valued; rounding happens at serialization.
struct BBox {
  double x;
  double y;
  double w;
  double h;

  BBox(double x_, double y_, double w_, double h_) : x(x_), y(y_), w(w_), h(h_) {
    if (!(w > 0.0) || !(h > 0.0)) {
      throw std::invalid_argument("BBox: degenerate box (w=" + std::to_string(w_) +
                                  ", h=" + std::to_string(h_) + ")");
    }
  }

  double area() const { return w * h; }
  double x2() const { return x + w; }
  double y2() const { return y + h; }
};

enum class SizeClass { Small, Medium, Large };

inline const char* to_string(SizeClass c) {
  switch (c) {
    case SizeClass::Small: return "small";
    case SizeClass::Medium: return "medium";
    default: return "large";
  }
}

/// COCO convention: small/medium boundary 32^2, medium/large boundary 96^2.
struct SizeThresholds {
  double small_max = 1024.0;
  double medium_max = 9216.0;

  SizeThresholds() = default;
  SizeThresholds(double small_max_, double medium_max_)
      : small_max(small_max_), medium_max(medium_max_) {
    if (!(0.0 < small_max && small_max < medium_max)) {
      throw std::invalid_argument("SizeThresholds: need 0 < small_max < medium_max");
    }
  }
};

/// Half-open intervals: [0, small_max) -> Small, [small_max, medium_max) -> Medium.
inline SizeClass classify_size(double area, const SizeThresholds& t = {}) {
  if (area < 0.0 || std::isnan(area)) {
    throw std::invalid_argument("classify_size: negative area");
  }
  if (area < t.small_max) return SizeClass::Small;
  if (area < t.medium_max) return SizeClass::Medium;
  return SizeClass::Large;
}

inline SizeClass classify_box(const BBox& b, const SizeThresholds& t = {}) {
  return classify_size(b.area(), t);
}

/// Intersection over union. 0 for disjoint boxes; symmetric.
inline double iou(const BBox& a, const BBox& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x, b.x);
  if (iw <= 0.0) return 0.0;
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y, b.y);
  if (ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

inline BBox scale_box(const BBox& b, double factor) {
  if (!(factor > 0.0)) {
    throw std::invalid_argument("scale_box: factor must be positive");
  }
  return BBox(b.x * factor, b.y * factor, b.w * factor, b.h * factor);
}

/// Intersection of b with [0,width]x[0,height]; nullopt when it has zero area.
inline std::optional<BBox> clip_box(const BBox& b, double width, double height) {
  if (!(width > 0.0) || !(height > 0.0)) {
    throw std::invalid_argument("clip_box: image dimensions must be positive");
  }
  const double x1 = std::max(b.x, 0.0);
  const double y1 = std::max(b.y, 0.0);
  const double x2 = std::min(b.x2(), width);
  const double y2 = std::min(b.y2(), height);
  if (x2 - x1 <= 0.0 || y2 - y1 <= 0.0) return std::nullopt;
  return BBox(x1, y1, x2 - x1, y2 - y1);
}

}  // namespace smallscale
