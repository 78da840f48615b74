#include "dcpf/geometry.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "test_support.h"

namespace dcpf {
namespace {

using test::RandomConvexPolygon;
using test::RasterOverlap;
using test::SameVertexSet;

bool HasVertex(const ConvexPolygon& p, Vec2 v, double tol = 1e-12) {
  return std::any_of(p.vertices().begin(), p.vertices().end(),
                     [&](const Vec2& u) { return (u - v).norm() <= tol; });
}

TEST_CASE("rect polygon construction") {
  const auto box = RectPolygon(2, 1, Pose2());
  CHECK(box.size() == 4);
  for (Vec2 v : {Vec2{1, 0.5}, Vec2{-1, 0.5}, Vec2{-1, -0.5}, Vec2{1, -0.5}}) {
    CHECK(HasVertex(box, v));
  }
  const auto turned = RectPolygon(2, 1, Pose2(0, 0, std::numbers::pi / 2));
  for (Vec2 v : {Vec2{0.5, 1}, Vec2{-0.5, 1}, Vec2{-0.5, -1}, Vec2{0.5, -1}}) {
    CHECK(HasVertex(turned, v, 1e-12));
  }
  const auto moved = RectPolygon(1, 1, Pose2(3, 4, 0));
  CHECK(moved.Centroid().x == doctest::Approx(3));
  CHECK(moved.Centroid().y == doctest::Approx(4));
  CHECK(moved.Area() == doctest::Approx(1));
  CHECK(box.Area() > 0);  // counter-clockwise

  CHECK_THROWS_AS(RectPolygon(0, 1, Pose2()), std::invalid_argument);
  CHECK_THROWS_AS(RectPolygon(1, -1, Pose2()), std::invalid_argument);
}

TEST_CASE("pose normalization and frames") {
  CHECK(Pose2(0, 0, 3 * std::numbers::pi).phi == doctest::Approx(std::numbers::pi));
  CHECK(Pose2(0, 0, -std::numbers::pi).phi == doctest::Approx(std::numbers::pi));
  CHECK(Pose2(0, 0, 0.5).phi == 0.5);
  const Pose2 frame(1, 2, 0.7);
  const Pose2 world(-3, 5, -2.0);
  const Pose2 local = frame.Relative(world);
  const Pose2 back = frame.Compose(local);
  CHECK(back.x == doctest::Approx(world.x));
  CHECK(back.y == doctest::Approx(world.y));
  CHECK(back.phi == doctest::Approx(world.phi));
}

TEST_CASE("polygon construction cleans its input") {
  // Clockwise input with a duplicate and a collinear midpoint.
  ConvexPolygon p({{0, 0}, {0, 1}, {0, 1}, {1, 1}, {1, 0.5}, {1, 0}});
  CHECK(p.size() == 4);
  CHECK(p.Area() == doctest::Approx(1));
  CHECK_THROWS_AS(ConvexPolygon({{0, 0}, {1, 1}, {2, 2}}), DegenerateGeometryError);
  CHECK_THROWS_AS(ConvexPolygon({{0, 0}, {2, 0}, {1, 0.2}, {2, 2}, {0, 2}}),
                  std::invalid_argument);
}

TEST_CASE("intersects on fixed cases") {
  const auto a = RectPolygon(1, 1, Pose2());
  CHECK_FALSE(Intersects(a, RectPolygon(1, 1, Pose2(3, 0, 0))));
  CHECK(Intersects(a, RectPolygon(1, 1, Pose2())));
  // Edge contact counts as collision.
  CHECK(Intersects(a, RectPolygon(1, 1, Pose2(1, 0, 0))));
  CHECK(Intersects(a, RectPolygon(1, 1, Pose2(1, 1, 0))));
  CHECK_FALSE(Intersects(a, RectPolygon(1, 1, Pose2(1 + 1e-6, 0, 0))));
  // Rotated square whose corner pokes into the gap between axis-aligned faces.
  CHECK_FALSE(Intersects(a, RectPolygon(1, 1, Pose2(1.25, 1.25, std::numbers::pi / 4))));
  CHECK(Intersects(a, RectPolygon(1, 1, Pose2(1.1, 0.0, std::numbers::pi / 4))));
}

TEST_CASE("intersects matches the 1 mm raster oracle and is symmetric") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> side(0.1, 2.0);
  std::uniform_real_distribution<double> pos(0.0, 3.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  int checked = 0;
  int overlapping = 0;
  while (checked < 1000) {
    const auto a = RectPolygon(side(gen), side(gen), Pose2(pos(gen), pos(gen), ang(gen)));
    const auto b = RectPolygon(side(gen), side(gen), Pose2(pos(gen), pos(gen), ang(gen)));
    if (std::abs(SatSeparation(a.vertices(), b.vertices())) < 5e-3) continue;  // grazing
    const bool sat = Intersects(a, b);
    REQUIRE(sat == Intersects(b, a));
    REQUIRE(sat == RasterOverlap(a, b, 1e-3));
    overlapping += sat ? 1 : 0;
    ++checked;
  }
  CHECK(overlapping > 100);
  CHECK(overlapping < 900);
}

TEST_CASE("minkowski sum of boxes and translation") {
  const auto sum = MinkowskiSum(RectPolygon(2, 1, Pose2()), RectPolygon(4, 2, Pose2()));
  CHECK(SameVertexSet(sum, RectPolygon(6, 3, Pose2()), 1e-12));

  const auto poly = RectPolygon(2, 1, Pose2(0, 0, 0.3));
  const std::vector<Vec2> point = {{1, 2}, {1, 2}, {1, 2}};
  CHECK(SameVertexSet(MinkowskiSum(poly, point), poly.Translated({1, 2}), 1e-12));

  const std::vector<Vec2> segment = {{-1, 0}, {1, 0}};
  CHECK(SameVertexSet(MinkowskiSum(RectPolygon(2, 2, Pose2()), segment),
                      RectPolygon(4, 2, Pose2()), 1e-12));
}

TEST_CASE("minkowski sum equals hull of pairwise vertex sums") {
  std::mt19937_64 gen(11);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = RandomConvexPolygon(gen, 3 + trial % 9);
    const auto b = RandomConvexPolygon(gen, 3 + (trial / 3) % 9);
    std::vector<Vec2> sums;
    for (const Vec2& u : a.vertices()) {
      for (const Vec2& v : b.vertices()) sums.push_back(u + v);
    }
    REQUIRE(SameVertexSet(MinkowskiSum(a, b), ConvexHull(sums), 1e-9));
  }
}

TEST_CASE("minkowski properties") {
  std::mt19937_64 gen(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = RandomConvexPolygon(gen, 6);
    const auto b = RandomConvexPolygon(gen, 5);
    const Vec2 shift{0.7 * trial - 3, 1.3 - 0.1 * trial};
    CHECK(SameVertexSet(MinkowskiSum(a, b.Translated(shift)),
                        MinkowskiSum(a, b).Translated(shift), 1e-9));
    // b re-centred so that it contains the origin.
    const auto centred = b.Translated(-b.Centroid());
    const auto sum = MinkowskiSum(a, centred);
    for (const Vec2& v : a.vertices()) CHECK(sum.Contains(v, 1e-9));
  }
}

TEST_CASE("offset grows, shrinks and closes") {
  const auto unit = RectPolygon(1, 1, Pose2());
  CHECK(SameVertexSet(Offset(unit, 0.5), RectPolygon(2, 2, Pose2()), 1e-12));
  CHECK(SameVertexSet(Offset(unit, -0.25), RectPolygon(0.5, 0.5, Pose2()), 1e-12));
  CHECK_THROWS_AS(Offset(unit, -0.5), DegenerateGeometryError);
  CHECK_THROWS_AS(Offset(unit, -0.7), DegenerateGeometryError);

  std::mt19937_64 gen(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = RandomConvexPolygon(gen, 4 + trial % 6);
    const double d = 0.05 + 0.02 * trial;
    CHECK(SameVertexSet(Offset(Offset(p, d), -d), p, 1e-9));
    const auto small = Offset(p, 0.5 * d);
    const auto large = Offset(p, d);
    for (const Vec2& v : small.vertices()) CHECK(large.Contains(v, 1e-9));
    for (const Vec2& v : p.vertices()) CHECK(small.Contains(v, 1e-9));
  }
}

TEST_CASE("ellipse polygon") {
  const auto oct = EllipsePolygon(1, 1, 8);
  CHECK(oct.size() == 8);
  for (const Vec2& v : oct.vertices()) CHECK(v.norm() == doctest::Approx(1.0).epsilon(1e-12));
  const auto wide = EllipsePolygon(2, 1, 64);
  for (const Vec2& v : wide.vertices()) {
    CHECK(std::abs(v.x * v.x / 4 + v.y * v.y - 1) < 1e-12);
  }
  const double area = EllipsePolygon(2, 0.5, 256).Area();
  CHECK(std::abs(area / (std::numbers::pi * 2 * 0.5) - 1) < 1e-3);
  CHECK_THROWS_AS(EllipsePolygon(1, 1, 7), std::invalid_argument);
  CHECK_THROWS_AS(EllipsePolygon(0, 1, 16), std::invalid_argument);
}

TEST_CASE("convex hull") {
  const std::vector<Vec2> square = {{0, 0}, {1, 0}, {1, 1}, {0, 1}, {0.5, 0.5}, {0.5, 0}};
  CHECK(SameVertexSet(ConvexHull(square), RectPolygon(1, 1, Pose2(0.5, 0.5, 0)), 1e-12));

  std::mt19937_64 gen(9);
  std::normal_distribution<double> n(0, 1);
  std::vector<Vec2> pts(100);
  for (auto& p : pts) p = {n(gen), n(gen)};
  const auto hull = ConvexHull(pts);
  for (const Vec2& p : pts) CHECK(hull.Contains(p, 1e-12));
  CHECK(SameVertexSet(ConvexHull(hull.vertices()), hull, 0));

  const std::vector<Vec2> line = {{0, 0}, {1, 1}, {2, 2}, {3, 3}};
  CHECK_THROWS_AS(ConvexHull(line), DegenerateGeometryError);
}

}  // namespace
}  // namespace dcpf
