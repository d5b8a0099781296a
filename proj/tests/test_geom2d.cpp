#include "dpnet/geom2d.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "dpnet/rng.hpp"
#include "oracles.hpp"

using dpnet::box_from_state;
using dpnet::contains;
using dpnet::min_distance;
using dpnet::OrientedBox;
using dpnet::Vec2;

namespace {

bool has_vertex(const OrientedBox& b, const Vec2& v, double tol = 1e-12) {
  for (const Vec2& c : b.corners()) {
    if ((c - v).norm() <= tol) return true;
  }
  return false;
}

OrientedBox random_box(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-5.0, 5.0);
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  std::uniform_real_distribution<double> dim(0.2, 1.5);
  return OrientedBox(pos(rng), pos(rng), ang(rng), dim(rng), dim(rng));
}

}  // namespace

TEST(BoxFromState, AxisAlignedVertices) {
  const OrientedBox b = box_from_state(0, 0, 0, 2, 1);
  EXPECT_TRUE(has_vertex(b, {1, 0.5}));
  EXPECT_TRUE(has_vertex(b, {1, -0.5}));
  EXPECT_TRUE(has_vertex(b, {-1, 0.5}));
  EXPECT_TRUE(has_vertex(b, {-1, -0.5}));
}

TEST(BoxFromState, QuarterTurn) {
  const OrientedBox b = box_from_state(0, 0, M_PI / 2, 2, 1);
  EXPECT_TRUE(has_vertex(b, {0.5, 1}));
  EXPECT_TRUE(has_vertex(b, {-0.5, 1}));
  EXPECT_TRUE(has_vertex(b, {0.5, -1}));
  EXPECT_TRUE(has_vertex(b, {-0.5, -1}));
}

TEST(BoxFromState, RotatedSquareVertex) {
  // 2x2 square at (3,4) rotated pi/4: corner (1,1) lands at (3, 4+sqrt(2)).
  const OrientedBox b = box_from_state(3, 4, M_PI / 4, 2, 2);
  EXPECT_TRUE(has_vertex(b, {3.0, 4.0 + std::sqrt(2.0)}, 1e-12));
}

TEST(BoxFromState, RejectsNonPositiveDims) {
  EXPECT_THROW(box_from_state(0, 0, 0, 0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(box_from_state(0, 0, 0, 1.0, -2.0), std::invalid_argument);
}

TEST(BoxFromState, HeadingNormalizedAndCcw) {
  const OrientedBox b = box_from_state(1, 2, 3 * M_PI, 2, 1);
  EXPECT_GT(b.heading, -M_PI);
  EXPECT_LE(b.heading, M_PI);
  EXPECT_NEAR(b.heading, M_PI, 1e-12);
  // Signed area of the vertex loop must be positive (CCW).
  const auto c = b.corners();
  double area = 0.0;
  for (int i = 0; i < 4; ++i) {
    const Vec2& p = c[i];
    const Vec2& q = c[(i + 1) % 4];
    area += p.x() * q.y() - q.x() * p.y();
  }
  EXPECT_GT(area, 0.0);
}

TEST(Contains, CenterAndBoundary) {
  const OrientedBox b = box_from_state(0, 0, 0, 1, 1);
  EXPECT_TRUE(contains(b, {0, 0}));
  EXPECT_TRUE(contains(b, {0.5, 0}));
  EXPECT_FALSE(contains(b, {0.5 + 1e-6, 0}));
}

TEST(Contains, RotatedSquareHalfPlane) {
  // Square rotated pi/4 with half-diagonal sqrt(2)/2, i.e. unit square.
  const OrientedBox b = box_from_state(0, 0, M_PI / 4, 1, 1);
  EXPECT_FALSE(contains(b, {0.6, 0.6}));
  EXPECT_TRUE(contains(b, {0.3, 0.3}));
}

TEST(MinDistance, OverlapIsZero) {
  const OrientedBox a = box_from_state(0, 0, 0, 1, 1);
  const OrientedBox b = box_from_state(0.5, 0, 0, 1, 1);
  EXPECT_EQ(min_distance(a, b), 0.0);
}

TEST(MinDistance, FaceToFaceGap) {
  const OrientedBox a = box_from_state(0, 0, 0, 1, 1);
  const OrientedBox b = box_from_state(3, 0, 0, 1, 1);
  EXPECT_NEAR(min_distance(a, b), 2.0, 1e-12);
}

TEST(MinDistance, RotatedCornerGap) {
  const OrientedBox a = box_from_state(0, 0, 0, 1, 1);
  const OrientedBox b = box_from_state(3, 0, M_PI / 4, 1, 1);
  EXPECT_NEAR(min_distance(a, b), 3.0 - 0.5 - std::sqrt(2.0) / 2.0, 1e-12);
}

TEST(MinDistance, SymmetricExactly) {
  auto rng = dpnet::make_engine(dpnet::mix64(11, 1));
  for (int i = 0; i < 300; ++i) {
    const OrientedBox a = random_box(rng);
    const OrientedBox b = random_box(rng);
    EXPECT_EQ(min_distance(a, b), min_distance(b, a));
  }
}

TEST(MinDistance, TranslationInvariance) {
  auto rng = dpnet::make_engine(dpnet::mix64(11, 2));
  std::uniform_real_distribution<double> shift(-20.0, 20.0);
  for (int i = 0; i < 200; ++i) {
    OrientedBox a = random_box(rng);
    OrientedBox b = random_box(rng);
    const double d0 = min_distance(a, b);
    const double tx = shift(rng), ty = shift(rng);
    a.cx += tx;
    a.cy += ty;
    b.cx += tx;
    b.cy += ty;
    EXPECT_NEAR(min_distance(a, b), d0, 1e-12);
  }
}

TEST(MinDistance, RotationInvariance) {
  auto rng = dpnet::make_engine(dpnet::mix64(11, 3));
  std::uniform_real_distribution<double> ang(-M_PI, M_PI);
  for (int i = 0; i < 200; ++i) {
    const OrientedBox a = random_box(rng);
    const OrientedBox b = random_box(rng);
    const double d0 = min_distance(a, b);
    const double phi = ang(rng);
    const double c = std::cos(phi), s = std::sin(phi);
    const auto rotate = [&](const OrientedBox& x) {
      return OrientedBox(c * x.cx - s * x.cy, s * x.cx + c * x.cy,
                         x.heading + phi, x.half_length, x.half_width);
    };
    EXPECT_NEAR(min_distance(rotate(a), rotate(b)), d0, 1e-9);
  }
}

TEST(MinDistance, MatchesBoundarySamplingOracle) {
  auto rng = dpnet::make_engine(dpnet::mix64(11, 4));
  for (int i = 0; i < 60; ++i) {
    const OrientedBox a = random_box(rng);
    const OrientedBox b = random_box(rng);
    const double fast = min_distance(a, b);
    const double slow = oracles::sampled_min_distance(a, b);
    EXPECT_NEAR(fast, slow, 2e-4) << "pair " << i;
  }
}

TEST(Separation, ContactPointInsideBothWhenOverlapping) {
  auto rng = dpnet::make_engine(dpnet::mix64(11, 5));
  std::uniform_real_distribution<double> small(-0.3, 0.3);
  int overlaps = 0;
  for (int i = 0; i < 300; ++i) {
    const OrientedBox a = random_box(rng);
    OrientedBox b = a;
    b.cx += small(rng);
    b.cy += small(rng);
    b.heading = dpnet::wrap_angle(b.heading + small(rng));
    if (min_distance(a, b) != 0.0) continue;
    ++overlaps;
    const auto sep = dpnet::signed_separation(a, b);
    EXPECT_LE(sep.dist, 0.0);
    EXPECT_TRUE(contains(a, sep.point_a));
    EXPECT_TRUE(contains(b, sep.point_b));
  }
  EXPECT_GT(overlaps, 100);
}

TEST(Separation, ClosestPointsRealizeDistance) {
  auto rng = dpnet::make_engine(dpnet::mix64(11, 6));
  for (int i = 0; i < 200; ++i) {
    const OrientedBox a = random_box(rng);
    OrientedBox b = random_box(rng);
    b.cx += 6.0;
    if (min_distance(a, b) == 0.0) continue;
    const auto sep = dpnet::signed_separation(a, b);
    ASSERT_GT(sep.dist, 0.0);
    EXPECT_NEAR((sep.point_a - sep.point_b).norm(), sep.dist, 1e-12);
    EXPECT_TRUE(contains(a, sep.point_a));
    EXPECT_TRUE(contains(b, sep.point_b));
    EXPECT_NEAR(sep.normal.norm(), 1.0, 1e-12);
  }
}
