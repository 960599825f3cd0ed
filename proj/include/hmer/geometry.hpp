#pragma once

#include <cmath>
#include <optional>
#include <vector>

namespace hmer {

inline constexpr double kPi = 3.14159265358979323846;

// Wrap an angle into (-pi, pi].
inline double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * kPi);
  if (a <= -kPi) a += 2.0 * kPi;
  if (a > kPi) a -= 2.0 * kPi;
  return a;
}

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2 operator+(const Vec2& o) const { return {x + o.x, y + o.y}; }
  Vec2 operator-(const Vec2& o) const { return {x - o.x, y - o.y}; }
  Vec2 operator*(double s) const { return {x * s, y * s}; }
  double dot(const Vec2& o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

struct Pose2D {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;  // always wrapped to (-pi, pi]

  Vec2 position() const { return {x, y}; }
  Vec2 heading() const { return {std::cos(theta), std::sin(theta)}; }

  // World point expressed in this pose's body frame (x forward, y left).
  Vec2 to_body(const Vec2& world) const {
    const double dx = world.x - x;
    const double dy = world.y - y;
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return {c * dx + s * dy, -s * dx + c * dy};
  }

  Vec2 to_world(const Vec2& body) const {
    const double c = std::cos(theta);
    const double s = std::sin(theta);
    return {x + c * body.x - s * body.y, y + s * body.x + c * body.y};
  }
};

// Explicit-Euler unicycle integration step.
inline Pose2D integrate_kinematics(const Pose2D& pose, double v, double omega, double dt) {
  Pose2D out;
  out.x = pose.x + v * std::cos(pose.theta) * dt;
  out.y = pose.y + v * std::sin(pose.theta) * dt;
  out.theta = wrap_angle(pose.theta + omega * dt);
  return out;
}

// Bearing of a world point in the pose's frame, in (-pi, pi]; left is positive.
inline double bearing_to(const Pose2D& pose, const Vec2& target) {
  return wrap_angle(std::atan2(target.y - pose.y, target.x - pose.x) - pose.theta);
}

struct Aabb {
  double xmin = 0.0, ymin = 0.0, xmax = 0.0, ymax = 0.0;

  bool contains(const Vec2& p) const {
    return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax;
  }
  Vec2 center() const { return {0.5 * (xmin + xmax), 0.5 * (ymin + ymax)}; }
};

// Oriented rectangle given by center pose and half extents (along body x/y).
struct Obb {
  Pose2D pose;
  double half_len = 0.0;   // along heading
  double half_wid = 0.0;   // across heading

  bool contains(const Vec2& p) const {
    const Vec2 b = pose.to_body(p);
    return std::abs(b.x) <= half_len && std::abs(b.y) <= half_wid;
  }
  std::vector<Vec2> corners() const;
};

bool obb_aabb_overlap(const Obb& o, const Aabb& a);
bool obb_circle_overlap(const Obb& o, const Vec2& c, double r);
bool obb_obb_overlap(const Obb& a, const Obb& b);

// First intersection distance of ray (origin, unit dir) with each primitive,
// or nullopt when there is no hit in front of the origin.
std::optional<double> ray_segment(const Vec2& origin, const Vec2& dir, const Vec2& a, const Vec2& b);
std::optional<double> ray_aabb(const Vec2& origin, const Vec2& dir, const Aabb& box);
std::optional<double> ray_circle(const Vec2& origin, const Vec2& dir, const Vec2& center, double r);
std::optional<double> ray_obb(const Vec2& origin, const Vec2& dir, const Obb& box);

}  // namespace hmer
