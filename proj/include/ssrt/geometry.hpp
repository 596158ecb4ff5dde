#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "ssrt/error.hpp"

namespace ssrt {

/// Axis-aligned box in normalized image coordinates, stored in corner form.
///
/// Construction rejects non-finite coordinates and non-positive extents.
/// Coordinates outside [0,1] are allowed here (apply_rsc produces them);
/// `is_normalized()` checks the range for callers that require it.
class Box {
 public:
  Box(double x1, double y1, double x2, double y2) : x1_(x1), y1_(y1), x2_(x2), y2_(y2) {
    if (!std::isfinite(x1) || !std::isfinite(y1) || !std::isfinite(x2) || !std::isfinite(y2)) {
      throw ValidationError("box has non-finite coordinates");
    }
    if (!(x2 > x1) || !(y2 > y1)) {
      std::ostringstream os;
      os << "degenerate box [" << x1 << ", " << y1 << ", " << x2 << ", " << y2 << "]";
      throw ValidationError(os.str());
    }
  }

  static Box from_corners(const std::array<double, 4>& c) { return Box(c[0], c[1], c[2], c[3]); }
  static Box from_center(double cx, double cy, double w, double h) {
    return Box(cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h);
  }
  static Box from_top_left(double x, double y, double w, double h) { return Box(x, y, x + w, y + h); }

  double x1() const { return x1_; }
  double y1() const { return y1_; }
  double x2() const { return x2_; }
  double y2() const { return y2_; }
  double width() const { return x2_ - x1_; }
  double height() const { return y2_ - y1_; }
  double area() const { return width() * height(); }
  double cx() const { return 0.5 * (x1_ + x2_); }
  double cy() const { return 0.5 * (y1_ + y2_); }

  std::array<double, 4> corners() const { return {x1_, y1_, x2_, y2_}; }
  std::array<double, 4> center_form() const { return {cx(), cy(), width(), height()}; }

  bool is_normalized() const {
    return x1_ >= 0.0 && y1_ >= 0.0 && x2_ <= 1.0 && y2_ <= 1.0;
  }

  friend bool operator==(const Box&, const Box&) = default;

 private:
  double x1_, y1_, x2_, y2_;
};

/// Relative spatial configuration of an object box with respect to a human box.
struct RSC {
  double dx = 0.0;
  double dy = 0.0;
  double dw = 0.0;
  double dh = 0.0;

  std::array<double, 4> as_array() const { return {dx, dy, dw, dh}; }
  friend bool operator==(const RSC&, const RSC&) = default;
};

namespace detail {

inline double intersection_area(const Box& a, const Box& b) {
  const double w = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double h = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  return (w > 0.0 && h > 0.0) ? w * h : 0.0;
}

}  // namespace detail

inline double iou(const Box& a, const Box& b) {
  const double inter = detail::intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  return inter / uni;
}

/// Generalized IoU: IoU minus the fraction of the enclosing box not covered by the union.
inline double giou(const Box& a, const Box& b) {
  const double inter = detail::intersection_area(a, b);
  const double uni = a.area() + b.area() - inter;
  const double enclosing = (std::max(a.x2(), b.x2()) - std::min(a.x1(), b.x1())) *
                           (std::max(a.y2(), b.y2()) - std::min(a.y1(), b.y1()));
  return inter / uni - (enclosing - uni) / enclosing;
}

/// Object placement relative to the human, computed on top-left + size form.
inline RSC rsc(const Box& human, const Box& object) {
  return RSC{(object.x1() - human.x1()) / human.width(), (object.y1() - human.y1()) / human.height(),
             std::log(object.width() / human.width()), std::log(object.height() / human.height())};
}

/// Inverse of rsc(): places an object box relative to `human`. The result is not clamped.
inline Box apply_rsc(const Box& human, const RSC& r) {
  const double x = human.x1() + r.dx * human.width();
  const double y = human.y1() + r.dy * human.height();
  const double w = human.width() * std::exp(r.dw);
  const double h = human.height() * std::exp(r.dh);
  return Box::from_top_left(x, y, w, h);
}

/// Clamps a box into the unit square while keeping each side at least `min_side`.
inline Box clamp_to_unit(double x1, double y1, double x2, double y2, double min_side) {
  const double cx1 = std::clamp(x1, 0.0, 1.0 - min_side);
  const double cy1 = std::clamp(y1, 0.0, 1.0 - min_side);
  const double cx2 = std::clamp(x2, cx1 + min_side, 1.0);
  const double cy2 = std::clamp(y2, cy1 + min_side, 1.0);
  return Box(cx1, cy1, cx2, cy2);
}

inline Box clamp_to_unit(const Box& b, double min_side) {
  return clamp_to_unit(b.x1(), b.y1(), b.x2(), b.y2(), min_side);
}

}  // namespace ssrt
