#include "hmer/geometry.hpp"

#include <algorithm>
#include <limits>

namespace hmer {

std::vector<Vec2> Obb::corners() const {
  return {
      pose.to_world({+half_len, +half_wid}),
      pose.to_world({+half_len, -half_wid}),
      pose.to_world({-half_len, -half_wid}),
      pose.to_world({-half_len, +half_wid}),
  };
}

namespace {

// Separating-axis test for a convex polygon pair.
bool sat_overlap(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  const std::vector<Vec2>* polys[2] = {&a, &b};
  for (const auto* poly : polys) {
    const auto& pts = *poly;
    for (size_t i = 0; i < pts.size(); ++i) {
      const Vec2 edge = pts[(i + 1) % pts.size()] - pts[i];
      const Vec2 axis{-edge.y, edge.x};
      double amin = std::numeric_limits<double>::infinity(), amax = -amin;
      double bmin = amin, bmax = amax;
      for (const auto& p : a) {
        const double t = axis.dot(p);
        amin = std::min(amin, t);
        amax = std::max(amax, t);
      }
      for (const auto& p : b) {
        const double t = axis.dot(p);
        bmin = std::min(bmin, t);
        bmax = std::max(bmax, t);
      }
      if (amax < bmin || bmax < amin) return false;
    }
  }
  return true;
}

}  // namespace

bool obb_aabb_overlap(const Obb& o, const Aabb& a) {
  const std::vector<Vec2> box = {
      {a.xmin, a.ymin}, {a.xmax, a.ymin}, {a.xmax, a.ymax}, {a.xmin, a.ymax}};
  return sat_overlap(o.corners(), box);
}

bool obb_obb_overlap(const Obb& a, const Obb& b) {
  return sat_overlap(a.corners(), b.corners());
}

bool obb_circle_overlap(const Obb& o, const Vec2& c, double r) {
  const Vec2 b = o.pose.to_body(c);
  const double dx = std::max(0.0, std::abs(b.x) - o.half_len);
  const double dy = std::max(0.0, std::abs(b.y) - o.half_wid);
  return dx * dx + dy * dy <= r * r;
}

std::optional<double> ray_segment(const Vec2& origin, const Vec2& dir, const Vec2& a, const Vec2& b) {
  // origin + t*dir = a + u*(b-a), t >= 0, u in [0,1]
  const Vec2 e = b - a;
  const double denom = dir.x * e.y - dir.y * e.x;
  if (std::abs(denom) < 1e-15) return std::nullopt;
  const Vec2 d = a - origin;
  const double t = (d.x * e.y - d.y * e.x) / denom;
  const double u = (d.x * dir.y - d.y * dir.x) / -denom;
  if (t < 0.0 || u < 0.0 || u > 1.0) return std::nullopt;
  return t;
}

std::optional<double> ray_aabb(const Vec2& origin, const Vec2& dir, const Aabb& box) {
  // Slab method; returns entry distance (0 when origin is inside).
  double tmin = 0.0;
  double tmax = std::numeric_limits<double>::infinity();
  const double o[2] = {origin.x, origin.y};
  const double d[2] = {dir.x, dir.y};
  const double lo[2] = {box.xmin, box.ymin};
  const double hi[2] = {box.xmax, box.ymax};
  for (int i = 0; i < 2; ++i) {
    if (std::abs(d[i]) < 1e-15) {
      if (o[i] < lo[i] || o[i] > hi[i]) return std::nullopt;
    } else {
      double t1 = (lo[i] - o[i]) / d[i];
      double t2 = (hi[i] - o[i]) / d[i];
      if (t1 > t2) std::swap(t1, t2);
      tmin = std::max(tmin, t1);
      tmax = std::min(tmax, t2);
      if (tmin > tmax) return std::nullopt;
    }
  }
  return tmin;
}

std::optional<double> ray_circle(const Vec2& origin, const Vec2& dir, const Vec2& center, double r) {
  const Vec2 oc = origin - center;
  const double b = oc.dot(dir);
  const double c = oc.dot(oc) - r * r;
  const double disc = b * b - c;
  if (disc < 0.0) return std::nullopt;
  const double s = std::sqrt(disc);
  double t = -b - s;
  if (t < 0.0) t = -b + s;  // origin inside the circle
  if (t < 0.0) return std::nullopt;
  return t;
}

std::optional<double> ray_obb(const Vec2& origin, const Vec2& dir, const Obb& box) {
  const auto pts = box.corners();
  std::optional<double> best;
  for (size_t i = 0; i < pts.size(); ++i) {
    const auto hit = ray_segment(origin, dir, pts[i], pts[(i + 1) % pts.size()]);
    if (hit && (!best || *hit < *best)) best = hit;
  }
  return best;
}

}  // namespace hmer
