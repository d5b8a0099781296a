#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace dpnet {

using Vec2 = Eigen::Vector2d;

// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a + M_PI, 2.0 * M_PI);
  if (a <= 0.0) a += 2.0 * M_PI;
  return a - M_PI;
}

inline Vec2 perp(const Vec2& v) { return Vec2(-v.y(), v.x()); }

/// 2D oriented rectangle used for robot and obstacle footprints.
/// Vertices are counter-clockwise; heading is normalized to (-pi, pi].
struct OrientedBox {
  double cx{0.0};
  double cy{0.0};
  double heading{0.0};
  double half_length{0.5};
  double half_width{0.5};

  OrientedBox() = default;
  OrientedBox(double cx_, double cy_, double heading_, double half_length_,
              double half_width_)
      : cx(cx_), cy(cy_), heading(wrap_angle(heading_)),
        half_length(half_length_), half_width(half_width_) {
    if (!(half_length > 0.0) || !(half_width > 0.0)) {
      throw std::invalid_argument("OrientedBox: non-positive dimension");
    }
  }

  Vec2 center() const { return Vec2(cx, cy); }
  Vec2 axis_long() const { return Vec2(std::cos(heading), std::sin(heading)); }
  Vec2 axis_lat() const { return Vec2(-std::sin(heading), std::cos(heading)); }

  std::array<Vec2, 4> corners() const {
    const Vec2 c = center();
    const Vec2 u = axis_long() * half_length;
    const Vec2 v = axis_lat() * half_width;
    return {c + u - v, c + u + v, c - u + v, c - u - v};
  }

  // Farthest point of the box along direction d.
  Vec2 support(const Vec2& d) const {
    const Vec2 u = axis_long();
    const Vec2 v = axis_lat();
    const double su = d.dot(u) >= 0.0 ? half_length : -half_length;
    const double sv = d.dot(v) >= 0.0 ? half_width : -half_width;
    return center() + su * u + sv * v;
  }
};

inline OrientedBox box_from_state(double center_x, double center_y,
                                  double heading, double length,
                                  double width) {
  if (!(length > 0.0) || !(width > 0.0)) {
    throw std::invalid_argument("box_from_state: non-positive dimension");
  }
  return OrientedBox(center_x, center_y, heading, 0.5 * length, 0.5 * width);
}

inline constexpr double kContainTol = 1e-9;

/// True iff p lies inside box or within kContainTol of its boundary.
inline bool contains(const OrientedBox& box, const Vec2& p) {
  const Vec2 d = p - box.center();
  const double lx = d.dot(box.axis_long());
  const double ly = d.dot(box.axis_lat());
  return std::abs(lx) <= box.half_length + kContainTol &&
         std::abs(ly) <= box.half_width + kContainTol;
}

namespace detail {

// Projection extent of a box onto a unit axis.
inline double extent_on_axis(const OrientedBox& b, const Vec2& axis) {
  return b.half_length * std::abs(axis.dot(b.axis_long())) +
         b.half_width * std::abs(axis.dot(b.axis_lat()));
}

struct SatResult {
  bool overlap{false};
  double depth{0.0};  // minimum overlap across axes when overlapping
  Vec2 axis{1.0, 0.0};  // axis of minimum overlap, oriented from b to a
};

inline SatResult sat_test(const OrientedBox& a, const OrientedBox& b) {
  const std::array<Vec2, 4> axes = {a.axis_long(), a.axis_lat(),
                                    b.axis_long(), b.axis_lat()};
  const Vec2 d = a.center() - b.center();
  SatResult res;
  res.overlap = true;
  res.depth = std::numeric_limits<double>::infinity();
  for (const Vec2& ax : axes) {
    const double gap = std::abs(d.dot(ax)) -
                       (extent_on_axis(a, ax) + extent_on_axis(b, ax));
    if (gap > 0.0) {
      res.overlap = false;
      return res;
    }
    if (-gap < res.depth) {
      res.depth = -gap;
      res.axis = d.dot(ax) >= 0.0 ? ax : Vec2(-ax);
    }
  }
  return res;
}

struct SegmentPair {
  double dist;
  Vec2 p;  // on first segment
  Vec2 q;  // on second segment
};

inline SegmentPair closest_between_segments(const Vec2& p1, const Vec2& q1,
                                            const Vec2& p2, const Vec2& q2) {
  // Ericson, Real-Time Collision Detection, 5.1.9 (2D specialization).
  const Vec2 d1 = q1 - p1;
  const Vec2 d2 = q2 - p2;
  const Vec2 r = p1 - p2;
  const double a = d1.squaredNorm();
  const double e = d2.squaredNorm();
  const double f = d2.dot(r);
  double s = 0.0, t = 0.0;
  constexpr double eps = 1e-30;
  if (a <= eps && e <= eps) {
    // both degenerate
  } else if (a <= eps) {
    t = std::clamp(f / e, 0.0, 1.0);
  } else {
    const double c = d1.dot(r);
    if (e <= eps) {
      s = std::clamp(-c / a, 0.0, 1.0);
    } else {
      const double b = d1.dot(d2);
      const double denom = a * e - b * b;
      if (denom > eps) {
        s = std::clamp((b * f - c * e) / denom, 0.0, 1.0);
      }
      t = (b * s + f) / e;
      if (t < 0.0) {
        t = 0.0;
        s = std::clamp(-c / a, 0.0, 1.0);
      } else if (t > 1.0) {
        t = 1.0;
        s = std::clamp((b - c) / a, 0.0, 1.0);
      }
    }
  }
  SegmentPair out;
  out.p = p1 + s * d1;
  out.q = p2 + t * d2;
  out.dist = (out.p - out.q).norm();
  return out;
}

// Deterministic ordering key so symmetric queries evaluate identically.
inline bool box_less(const OrientedBox& a, const OrientedBox& b) {
  if (a.cx != b.cx) return a.cx < b.cx;
  if (a.cy != b.cy) return a.cy < b.cy;
  if (a.heading != b.heading) return a.heading < b.heading;
  if (a.half_length != b.half_length) return a.half_length < b.half_length;
  return a.half_width < b.half_width;
}

}  // namespace detail

/// Separation geometry between two boxes. dist is the boundary distance when
/// separated and minus the penetration depth when overlapping. normal is the
/// unit direction from b toward a along which dist grows fastest; point_a and
/// point_b are the closest (or deepest-contact) points on each box.
struct Separation {
  double dist{0.0};
  Vec2 point_a{0.0, 0.0};
  Vec2 point_b{0.0, 0.0};
  Vec2 normal{1.0, 0.0};
};

inline Separation signed_separation(const OrientedBox& a,
                                    const OrientedBox& b) {
  const detail::SatResult sat = detail::sat_test(a, b);
  Separation out;
  if (sat.overlap) {
    out.dist = -sat.depth;
    out.normal = sat.axis;
    out.point_a = a.support(-sat.axis);
    out.point_b = b.support(sat.axis);
    return out;
  }
  const auto ca = a.corners();
  const auto cb = b.corners();
  double best = std::numeric_limits<double>::infinity();
  detail::SegmentPair best_pair{};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) {
      const auto sp = detail::closest_between_segments(
          ca[i], ca[(i + 1) % 4], cb[j], cb[(j + 1) % 4]);
      if (sp.dist < best) {
        best = sp.dist;
        best_pair = sp;
      }
    }
  }
  out.dist = best;
  out.point_a = best_pair.p;
  out.point_b = best_pair.q;
  if (best > 1e-12) {
    out.normal = (best_pair.p - best_pair.q) / best;
  } else {
    const Vec2 d = a.center() - b.center();
    const double n = d.norm();
    out.normal = n > 1e-12 ? Vec2(d / n) : Vec2(1.0, 0.0);
  }
  return out;
}

/// Exact minimum distance between two boxes (0 when they intersect).
/// Symmetric in its arguments bit-for-bit.
inline double min_distance(const OrientedBox& a, const OrientedBox& b) {
  const bool swap = detail::box_less(b, a);
  const Separation s =
      swap ? signed_separation(b, a) : signed_separation(a, b);
  return std::max(s.dist, 0.0);
}

}  // namespace dpnet
