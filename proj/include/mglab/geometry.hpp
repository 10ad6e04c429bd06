#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <optional>

namespace mglab {

inline constexpr double kPi = 3.14159265358979323846;

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(Vec2 o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(Vec2 o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  bool operator==(const Vec2&) const = default;
};

inline Vec2 unit(double angle) { return {std::cos(angle), std::sin(angle)}; }
inline Vec2 rotate(Vec2 v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x - s * v.y, s * v.x + c * v.y};
}

struct Rgb {
  double r = 0.0, g = 0.0, b = 0.0;
  bool operator==(const Rgb&) const = default;
};

/// Oriented rectangle: `size.x` spans the local axis at `yaw`, `size.y` the
/// perpendicular axis.
struct OrientedRect {
  Vec2 center;
  Vec2 size;
  double yaw = 0.0;

  Vec2 axis_u() const { return unit(yaw); }
  Vec2 axis_v() const { return unit(yaw + kPi / 2); }

  bool contains(Vec2 p) const {
    const Vec2 d = p - center;
    return std::abs(d.dot(axis_u())) <= size.x / 2 && std::abs(d.dot(axis_v())) <= size.y / 2;
  }

  std::array<Vec2, 4> corners() const {
    const Vec2 u = axis_u() * (size.x / 2), v = axis_v() * (size.y / 2);
    return {center + u + v, center - u + v, center - u - v, center + u - v};
  }
};

/// Separating-axis test. Rectangles closer than `clearance` count as touching.
inline bool rects_intersect(const OrientedRect& a, const OrientedRect& b, double clearance = 0.0) {
  const auto ca = a.corners(), cb = b.corners();
  for (const Vec2 axis : {a.axis_u(), a.axis_v(), b.axis_u(), b.axis_v()}) {
    double amin = std::numeric_limits<double>::infinity(), amax = -amin, bmin = amin, bmax = -amin;
    for (const auto& p : ca) {
      amin = std::min(amin, p.dot(axis));
      amax = std::max(amax, p.dot(axis));
    }
    for (const auto& p : cb) {
      bmin = std::min(bmin, p.dot(axis));
      bmax = std::max(bmax, p.dot(axis));
    }
    if (amax + clearance < bmin || bmax + clearance < amin) return false;
  }
  return true;
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

/// Parameter range s for which origin + s * dir lies inside the rectangle.
inline std::optional<Interval> clip_line(const OrientedRect& r, Vec2 origin, Vec2 dir) {
  double lo = -std::numeric_limits<double>::infinity(), hi = std::numeric_limits<double>::infinity();
  const Vec2 d = origin - r.center;
  const std::array<std::pair<Vec2, double>, 2> slabs = {{{r.axis_u(), r.size.x / 2}, {r.axis_v(), r.size.y / 2}}};
  for (const auto& [axis, half] : slabs) {
    const double p = d.dot(axis), q = dir.dot(axis);
    if (std::abs(q) < 1e-12) {
      if (std::abs(p) > half) return std::nullopt;
      continue;
    }
    double t0 = (-half - p) / q, t1 = (half - p) / q;
    if (t0 > t1) std::swap(t0, t1);
    lo = std::max(lo, t0);
    hi = std::min(hi, t1);
    if (lo > hi) return std::nullopt;
  }
  return Interval{lo, hi};
}

}  // namespace mglab
