#ifndef DCPF_GEOMETRY_H_
#define DCPF_GEOMETRY_H_

#include <array>
#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace dcpf {

// Distances below this are treated as zero (vertex dedup, SAT projections).
inline constexpr double kGeomTolerance = 1e-9;

// Raised when an operation produces or receives a polygon with no area.
class DegenerateGeometryError : public std::runtime_error {
 public:
  explicit DegenerateGeometryError(const std::string& what)
      : std::runtime_error(what) {}
};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  constexpr Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  constexpr Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  constexpr Vec2 operator-() const { return {-x, -y}; }
  constexpr Vec2 operator*(double s) const { return {x * s, y * s}; }
  constexpr bool operator==(const Vec2&) const = default;
  double norm() const { return std::hypot(x, y); }
};

constexpr double Dot(const Vec2& a, const Vec2& b) { return a.x * b.x + a.y * b.y; }
constexpr double Cross(const Vec2& a, const Vec2& b) { return a.x * b.y - a.y * b.x; }

// Wraps an angle to (-pi, pi].
double NormalizeAngle(double angle);

// Planar pose. The heading is kept in (-pi, pi].
struct Pose2 {
  double x = 0.0;
  double y = 0.0;
  double phi = 0.0;

  Pose2() = default;
  Pose2(double x_in, double y_in, double phi_in)
      : x(x_in), y(y_in), phi(NormalizeAngle(phi_in)) {}

  Vec2 position() const { return {x, y}; }
  // Maps a point from this pose's local frame into the parent frame.
  Vec2 Transform(const Vec2& local) const;
  // Pose of `other` (given in the parent frame) expressed in this frame.
  Pose2 Relative(const Pose2& other) const;
  // Composition: `local` given in this frame, result in the parent frame.
  Pose2 Compose(const Pose2& local) const;
};

// Rectangular robot footprint plus the wheelbase used by the bicycle model.
struct RobotSpec {
  double width = 4.07;   // extent along the heading
  double height = 1.74;  // lateral extent
  double wheelbase = 2.7;

  void Validate() const;
};

// Strictly convex polygon with counter-clockwise vertices.
class ConvexPolygon {
 public:
  // Removes duplicate and collinear vertices, orients CCW and verifies
  // convexity. Throws DegenerateGeometryError when fewer than three
  // non-collinear vertices remain, std::invalid_argument when the ring is
  // not convex.
  explicit ConvexPolygon(std::vector<Vec2> vertices);

  std::span<const Vec2> vertices() const { return vertices_; }
  std::size_t size() const { return vertices_.size(); }
  const Vec2& operator[](std::size_t i) const { return vertices_[i]; }

  double Area() const;
  double Perimeter() const;
  Vec2 Centroid() const;
  // Closed containment with kGeomTolerance slack.
  bool Contains(const Vec2& p, double tol = kGeomTolerance) const;
  ConvexPolygon Translated(const Vec2& d) const;
  ConvexPolygon Transformed(const Pose2& pose) const;
  // (min_x, min_y, max_x, max_y)
  std::array<double, 4> Bounds() const;

 private:
  std::vector<Vec2> vertices_;
};

// Corners of an l1 x l2 rectangle centred on `pose`, CCW, no allocation.
std::array<Vec2, 4> RectCorners(double l1, double l2, const Pose2& pose);

ConvexPolygon RectPolygon(double l1, double l2, const Pose2& pose);

// Separating-axis test over the edge normals of both rings. Both rings must
// be convex and CCW. Touching boundaries count as intersecting.
bool Intersects(std::span<const Vec2> a, std::span<const Vec2> b);
bool Intersects(const ConvexPolygon& a, const ConvexPolygon& b);

// Largest separation over all SAT axes (positive: gap width in meters,
// negative: minimum penetration depth).
double SatSeparation(std::span<const Vec2> a, std::span<const Vec2> b);

// {p + q : p in a, q in b} via the rotating-edge merge.
ConvexPolygon MinkowskiSum(const ConvexPolygon& a, const ConvexPolygon& b);
// Same, but `b` may be degenerate (a point or a segment given as a ring).
ConvexPolygon MinkowskiSum(const ConvexPolygon& a, std::span<const Vec2> b);

// Intersection of the half-planes of `p` shifted outward by `d`.
ConvexPolygon Offset(const ConvexPolygon& p, double d);

ConvexPolygon EllipsePolygon(double rx, double ry, int n);

ConvexPolygon ConvexHull(std::span<const Vec2> points);

}  // namespace dcpf

#endif  // DCPF_GEOMETRY_H_
