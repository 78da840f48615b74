#include "dcpf/geometry.h"

#include <algorithm>
#include <limits>

namespace dcpf {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double SignedArea(std::span<const Vec2> ring) {
  double twice = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    twice += Cross(ring[i], ring[(i + 1) % ring.size()]);
  }
  return 0.5 * twice;
}

// Distance from `p` to the line through `a` and `b`.
double LineDistance(const Vec2& a, const Vec2& b, const Vec2& p) {
  const Vec2 ab = b - a;
  const double len = ab.norm();
  if (len <= kGeomTolerance) return (p - a).norm();
  return std::abs(Cross(ab, p - a)) / len;
}

std::vector<Vec2> DedupRing(std::span<const Vec2> ring) {
  std::vector<Vec2> out;
  out.reserve(ring.size());
  for (const Vec2& v : ring) {
    if (out.empty() || (v - out.back()).norm() > kGeomTolerance) out.push_back(v);
  }
  while (out.size() > 1 && (out.front() - out.back()).norm() <= kGeomTolerance) {
    out.pop_back();
  }
  return out;
}

// Lowest (then leftmost) vertex first.
std::vector<Vec2> RotateToBottom(std::span<const Vec2> ring) {
  std::size_t start = 0;
  for (std::size_t i = 1; i < ring.size(); ++i) {
    if (ring[i].y < ring[start].y ||
        (ring[i].y == ring[start].y && ring[i].x < ring[start].x)) {
      start = i;
    }
  }
  std::vector<Vec2> out(ring.begin() + static_cast<std::ptrdiff_t>(start), ring.end());
  out.insert(out.end(), ring.begin(), ring.begin() + static_cast<std::ptrdiff_t>(start));
  return out;
}

// Keeps the part of `poly` with Dot(normal, x) <= offset.
std::vector<Vec2> ClipHalfPlane(const std::vector<Vec2>& poly, const Vec2& normal,
                                double offset) {
  std::vector<Vec2> out;
  out.reserve(poly.size() + 1);
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Vec2& cur = poly[i];
    const Vec2& nxt = poly[(i + 1) % poly.size()];
    const double dc = Dot(normal, cur) - offset;
    const double dn = Dot(normal, nxt) - offset;
    if (dc <= 0.0) out.push_back(cur);
    if ((dc < 0.0 && dn > 0.0) || (dc > 0.0 && dn < 0.0)) {
      const double t = dc / (dc - dn);
      out.push_back(cur + (nxt - cur) * t);
    }
  }
  return out;
}

}  // namespace

double NormalizeAngle(double angle) {
  if (angle > -std::numbers::pi && angle <= std::numbers::pi) return angle;
  double a = std::fmod(angle + std::numbers::pi, kTwoPi);
  if (a <= 0.0) a += kTwoPi;
  return a - std::numbers::pi;
}

Vec2 Pose2::Transform(const Vec2& local) const {
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  return {x + c * local.x - s * local.y, y + s * local.x + c * local.y};
}

Pose2 Pose2::Relative(const Pose2& other) const {
  const double c = std::cos(phi);
  const double s = std::sin(phi);
  const double dx = other.x - x;
  const double dy = other.y - y;
  return {c * dx + s * dy, -s * dx + c * dy, other.phi - phi};
}

Pose2 Pose2::Compose(const Pose2& local) const {
  const Vec2 p = Transform(local.position());
  return {p.x, p.y, phi + local.phi};
}

void RobotSpec::Validate() const {
  if (!(width > 0.0) || !(height > 0.0) || !(wheelbase > 0.0)) {
    throw std::invalid_argument("robot dimensions must be positive");
  }
}

ConvexPolygon::ConvexPolygon(std::vector<Vec2> vertices) {
  for (const Vec2& v : vertices) {
    if (!std::isfinite(v.x) || !std::isfinite(v.y)) {
      throw std::invalid_argument("polygon vertex is not finite");
    }
  }
  std::vector<Vec2> ring = DedupRing(vertices);
  if (ring.size() < 3) throw DegenerateGeometryError("polygon has fewer than 3 vertices");
  if (SignedArea(ring) < 0.0) std::reverse(ring.begin(), ring.end());

  // Drop vertices lying on the line through their neighbours.
  bool changed = true;
  while (changed && ring.size() >= 3) {
    changed = false;
    for (std::size_t i = 0; i < ring.size(); ++i) {
      const Vec2& prev = ring[(i + ring.size() - 1) % ring.size()];
      const Vec2& next = ring[(i + 1) % ring.size()];
      if (LineDistance(prev, next, ring[i]) <= kGeomTolerance &&
          Dot(ring[i] - prev, next - ring[i]) >= 0.0) {
        ring.erase(ring.begin() + static_cast<std::ptrdiff_t>(i));
        changed = true;
        break;
      }
    }
  }
  if (ring.size() < 3 || SignedArea(ring) <= kGeomTolerance * kGeomTolerance) {
    throw DegenerateGeometryError("polygon has no area");
  }

  double turning = 0.0;
  for (std::size_t i = 0; i < ring.size(); ++i) {
    const Vec2 e0 = ring[(i + 1) % ring.size()] - ring[i];
    const Vec2 e1 = ring[(i + 2) % ring.size()] - ring[(i + 1) % ring.size()];
    if (Cross(e0, e1) <= 0.0) throw std::invalid_argument("polygon is not convex");
    turning += std::atan2(Cross(e0, e1), Dot(e0, e1));
  }
  if (std::abs(turning - kTwoPi) > 1e-6) {
    throw std::invalid_argument("polygon ring is self-overlapping");
  }
  vertices_ = std::move(ring);
}

double ConvexPolygon::Area() const { return SignedArea(vertices_); }

double ConvexPolygon::Perimeter() const {
  double total = 0.0;
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    total += (vertices_[(i + 1) % vertices_.size()] - vertices_[i]).norm();
  }
  return total;
}

Vec2 ConvexPolygon::Centroid() const {
  double cx = 0.0;
  double cy = 0.0;
  double twice_area = 0.0;
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const Vec2& a = vertices_[i];
    const Vec2& b = vertices_[(i + 1) % vertices_.size()];
    const double w = Cross(a, b);
    twice_area += w;
    cx += (a.x + b.x) * w;
    cy += (a.y + b.y) * w;
  }
  return {cx / (3.0 * twice_area), cy / (3.0 * twice_area)};
}

bool ConvexPolygon::Contains(const Vec2& p, double tol) const {
  for (std::size_t i = 0; i < vertices_.size(); ++i) {
    const Vec2& a = vertices_[i];
    const Vec2 e = vertices_[(i + 1) % vertices_.size()] - a;
    if (Cross(e, p - a) < -tol * e.norm()) return false;
  }
  return true;
}

ConvexPolygon ConvexPolygon::Translated(const Vec2& d) const {
  std::vector<Vec2> out(vertices_.begin(), vertices_.end());
  for (Vec2& v : out) v = v + d;
  return ConvexPolygon(std::move(out));
}

ConvexPolygon ConvexPolygon::Transformed(const Pose2& pose) const {
  std::vector<Vec2> out;
  out.reserve(vertices_.size());
  for (const Vec2& v : vertices_) out.push_back(pose.Transform(v));
  return ConvexPolygon(std::move(out));
}

std::array<double, 4> ConvexPolygon::Bounds() const {
  std::array<double, 4> b = {std::numeric_limits<double>::infinity(),
                             std::numeric_limits<double>::infinity(),
                             -std::numeric_limits<double>::infinity(),
                             -std::numeric_limits<double>::infinity()};
  for (const Vec2& v : vertices_) {
    b[0] = std::min(b[0], v.x);
    b[1] = std::min(b[1], v.y);
    b[2] = std::max(b[2], v.x);
    b[3] = std::max(b[3], v.y);
  }
  return b;
}

std::array<Vec2, 4> RectCorners(double l1, double l2, const Pose2& pose) {
  const double c = std::cos(pose.phi);
  const double s = std::sin(pose.phi);
  const double h1 = 0.5 * l1;
  const double h2 = 0.5 * l2;
  const Vec2 u{c * h1, s * h1};    // half side along local x
  const Vec2 v{-s * h2, c * h2};   // half side along local y
  const Vec2 o{pose.x, pose.y};
  return {o - u - v, o + u - v, o + u + v, o - u + v};
}

ConvexPolygon RectPolygon(double l1, double l2, const Pose2& pose) {
  if (!(l1 > 0.0) || !(l2 > 0.0)) {
    throw std::invalid_argument("rectangle sides must be positive");
  }
  const auto corners = RectCorners(l1, l2, pose);
  return ConvexPolygon(std::vector<Vec2>(corners.begin(), corners.end()));
}

namespace {

// True when every point of `b` lies strictly outside (beyond tolerance) some
// edge line of `a`.
bool HasSeparatingEdge(std::span<const Vec2> a, std::span<const Vec2> b) {
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p0 = a[i];
    const Vec2 e = a[(i + 1) % n] - p0;
    const Vec2 normal{e.y, -e.x};  // outward for CCW rings
    const double edge_proj = Dot(normal, p0);
    double min_b = std::numeric_limits<double>::infinity();
    for (const Vec2& q : b) min_b = std::min(min_b, Dot(normal, q));
    const double gap = min_b - edge_proj;
    if (gap > 0.0 && gap * gap > kGeomTolerance * kGeomTolerance * Dot(normal, normal)) {
      return true;
    }
  }
  return false;
}

double MaxEdgeSeparation(std::span<const Vec2> a, std::span<const Vec2> b) {
  double best = -std::numeric_limits<double>::infinity();
  const std::size_t n = a.size();
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& p0 = a[i];
    const Vec2 e = a[(i + 1) % n] - p0;
    const double len = e.norm();
    const Vec2 normal{e.y / len, -e.x / len};
    double min_b = std::numeric_limits<double>::infinity();
    for (const Vec2& q : b) min_b = std::min(min_b, Dot(normal, q));
    best = std::max(best, min_b - Dot(normal, p0));
  }
  return best;
}

}  // namespace

bool Intersects(std::span<const Vec2> a, std::span<const Vec2> b) {
  return !HasSeparatingEdge(a, b) && !HasSeparatingEdge(b, a);
}

bool Intersects(const ConvexPolygon& a, const ConvexPolygon& b) {
  return Intersects(a.vertices(), b.vertices());
}

double SatSeparation(std::span<const Vec2> a, std::span<const Vec2> b) {
  return std::max(MaxEdgeSeparation(a, b), MaxEdgeSeparation(b, a));
}

ConvexPolygon MinkowskiSum(const ConvexPolygon& a, const ConvexPolygon& b) {
  std::vector<Vec2> p = RotateToBottom(a.vertices());
  std::vector<Vec2> q = RotateToBottom(b.vertices());
  const std::size_t n = p.size();
  const std::size_t m = q.size();
  p.push_back(p[0]);
  p.push_back(p[1]);
  q.push_back(q[0]);
  q.push_back(q[1]);

  std::vector<Vec2> out;
  out.reserve(n + m);
  std::size_t i = 0;
  std::size_t j = 0;
  while (i < n || j < m) {
    out.push_back(p[i] + q[j]);
    const double turn = Cross(p[i + 1] - p[i], q[j + 1] - q[j]);
    if (turn >= 0.0 && i < n) ++i;
    if (turn <= 0.0 && j < m) ++j;
  }
  return ConvexPolygon(std::move(out));
}

ConvexPolygon MinkowskiSum(const ConvexPolygon& a, std::span<const Vec2> b) {
  const std::vector<Vec2> ring = DedupRing(b);
  if (ring.empty()) throw std::invalid_argument("empty Minkowski operand");
  if (ring.size() == 1) return a.Translated(ring[0]);
  if (ring.size() >= 3 && std::abs(SignedArea(ring)) > kGeomTolerance * kGeomTolerance) {
    return MinkowskiSum(a, ConvexPolygon(ring));
  }
  std::vector<Vec2> sums;
  sums.reserve(a.size() * ring.size());
  for (const Vec2& u : a.vertices()) {
    for (const Vec2& v : ring) sums.push_back(u + v);
  }
  return ConvexHull(sums);
}

ConvexPolygon Offset(const ConvexPolygon& p, double d) {
  const auto verts = p.vertices();
  const std::size_t n = verts.size();
  std::vector<Vec2> normals(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2 e = verts[(i + 1) % n] - verts[i];
    const double len = e.norm();
    normals[i] = {e.y / len, -e.x / len};
  }

  if (d >= 0.0) {
    // Growing never removes edges: each new vertex is the meet of the two
    // shifted lines adjacent to the old one.
    std::vector<Vec2> out(n);
    for (std::size_t i = 0; i < n; ++i) {
      const Vec2& n0 = normals[(i + n - 1) % n];
      const Vec2& n1 = normals[i];
      const double c0 = Dot(n0, verts[i]) + d;
      const double c1 = Dot(n1, verts[i]) + d;
      const double det = Cross(n0, n1);
      out[i] = {(c0 * n1.y - c1 * n0.y) / det, (n0.x * c1 - n1.x * c0) / det};
    }
    return ConvexPolygon(std::move(out));
  }

  std::vector<Vec2> region(verts.begin(), verts.end());
  for (std::size_t i = 0; i < n && !region.empty(); ++i) {
    region = ClipHalfPlane(region, normals[i], Dot(normals[i], verts[i]) + d);
  }
  if (region.size() < 3 || SignedArea(region) <= kGeomTolerance * kGeomTolerance) {
    throw DegenerateGeometryError("offset collapses the polygon");
  }
  return ConvexPolygon(std::move(region));
}

ConvexPolygon EllipsePolygon(double rx, double ry, int n) {
  if (!(rx > 0.0) || !(ry > 0.0)) throw std::invalid_argument("ellipse radii must be positive");
  if (n < 8) throw std::invalid_argument("ellipse needs at least 8 vertices");
  std::vector<Vec2> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const double t = kTwoPi * k / n;
    out[static_cast<std::size_t>(k)] = {rx * std::cos(t), ry * std::sin(t)};
  }
  return ConvexPolygon(std::move(out));
}

ConvexPolygon ConvexHull(std::span<const Vec2> points) {
  std::vector<Vec2> pts(points.begin(), points.end());
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x < b.x || (a.x == b.x && a.y < b.y);
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) throw DegenerateGeometryError("hull needs 3 distinct points");

  // Pops while the last turn is not strictly left.
  auto keep_left = [](std::vector<Vec2>& chain, const Vec2& p) {
    while (chain.size() >= 2) {
      const Vec2& a = chain[chain.size() - 2];
      const Vec2& b = chain.back();
      if (Cross(b - a, p - a) > kGeomTolerance * (p - a).norm()) break;
      chain.pop_back();
    }
    chain.push_back(p);
  };
  std::vector<Vec2> lower;
  std::vector<Vec2> upper;
  for (const Vec2& p : pts) keep_left(lower, p);
  for (auto it = pts.rbegin(); it != pts.rend(); ++it) keep_left(upper, *it);
  lower.pop_back();
  upper.pop_back();
  lower.insert(lower.end(), upper.begin(), upper.end());
  if (lower.size() < 3) throw DegenerateGeometryError("points are collinear");
  return ConvexPolygon(std::move(lower));
}

}  // namespace dcpf
