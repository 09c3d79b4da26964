#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "nstrokes/error.hpp"

namespace nstrokes {

/// Image-space position in pixels; origin top-left, y down, pixel centers
/// at integer + 0.5.
struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  Vec2& operator+=(Vec2 o) {
    x += o.x;
    y += o.y;
    return *this;
  }
  Vec2& operator-=(Vec2 o) {
    x -= o.x;
    y -= o.y;
    return *this;
  }
  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator-(Vec2 a) { return {-a.x, -a.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend Vec2 operator*(Vec2 a, double s) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2 a, Vec2 b) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }
inline double distance(Vec2 a, Vec2 b) { return norm(a - b); }

struct Polyline {
  std::vector<Vec2> points;

  double length() const {
    double s = 0.0;
    for (size_t i = 1; i < points.size(); ++i) s += distance(points[i - 1], points[i]);
    return s;
  }
  friend bool operator==(const Polyline&, const Polyline&) = default;
};

struct CurveSet {
  std::vector<Polyline> paths;

  size_t point_count() const {
    size_t n = 0;
    for (const auto& p : paths) n += p.points.size();
    return n;
  }
  friend bool operator==(const CurveSet&, const CurveSet&) = default;
};

/// Base curves plus per-point displacement (px) and thickness (px, >= 0).
struct StrokeSet {
  CurveSet base;
  std::vector<std::vector<Vec2>> displacement;
  std::vector<std::vector<double>> thickness;

  static StrokeSet undisplaced(CurveSet curves, double thickness) {
    StrokeSet s;
    for (const auto& p : curves.paths) {
      s.displacement.emplace_back(p.points.size(), Vec2{});
      s.thickness.emplace_back(p.points.size(), thickness);
    }
    s.base = std::move(curves);
    return s;
  }

  size_t path_count() const { return base.paths.size(); }

  Vec2 position(size_t path, size_t j) const { return base.paths[path].points[j] + displacement[path][j]; }

  void validate() const {
    if (displacement.size() != base.paths.size() || thickness.size() != base.paths.size())
      throw DataError("stroke set: per-path arrays do not match path count");
    for (size_t i = 0; i < base.paths.size(); ++i) {
      const size_t m = base.paths[i].points.size();
      if (displacement[i].size() != m || thickness[i].size() != m)
        throw DataError("stroke set: path " + std::to_string(i) + " arrays not congruent with its points");
      for (double t : thickness[i])
        if (!(t >= 0.0) || !std::isfinite(t))
          throw DataError("stroke set: path " + std::to_string(i) + " has negative or non-finite thickness");
    }
  }

  friend bool operator==(const StrokeSet&, const StrokeSet&) = default;
};

}  // namespace nstrokes
