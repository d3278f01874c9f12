// Copyright 2026 The wsiscreen Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace wsi {

struct Point2 {
  double x = 0, y = 0;
  friend bool operator==(const Point2&, const Point2&) = default;
  friend auto operator<=>(const Point2&, const Point2&) = default;
};

/// Closed polygon; the last vertex connects back to the first.
using Polygon = std::vector<Point2>;

struct Rect {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open [x0, x1) x [y0, y1)
};

/// Crossing-number test. Points on a left/bottom edge count as inside, points
/// on a right/top edge as outside, so adjacent polygons never share a point.
[[nodiscard]] inline bool point_in_polygon(std::span<const Point2> poly, Point2 p) noexcept {
  bool inside = false;
  const auto n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const auto& a = poly[i];
    const auto& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y)) {
      const double xint = b.x + (p.y - b.y) * (a.x - b.x) / (a.y - b.y);
      if (p.x < xint) inside = !inside;
    }
  }
  return inside;
}

namespace detail {

[[nodiscard]] inline double cross(Point2 o, Point2 a, Point2 b) noexcept {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

[[nodiscard]] inline bool segments_intersect(Point2 p1, Point2 p2, Point2 q1, Point2 q2) noexcept {
  const double d1 = cross(q1, q2, p1), d2 = cross(q1, q2, p2);
  const double d3 = cross(p1, p2, q1), d4 = cross(p1, p2, q2);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0)))
    return true;
  auto on_seg = [](Point2 a, Point2 b, Point2 c) {
    return std::min(a.x, b.x) <= c.x && c.x <= std::max(a.x, b.x) && std::min(a.y, b.y) <= c.y &&
           c.y <= std::max(a.y, b.y);
  };
  return (d1 == 0 && on_seg(q1, q2, p1)) || (d2 == 0 && on_seg(q1, q2, p2)) ||
         (d3 == 0 && on_seg(p1, p2, q1)) || (d4 == 0 && on_seg(p1, p2, q2));
}

}  // namespace detail

/// True if the closed polygon and the closed rectangle share any point.
/// Conservative w.r.t. pixel-center rasterization: false implies no pixel
/// center of the rectangle is inside the polygon.
[[nodiscard]] inline bool polygon_intersects_rect(std::span<const Point2> poly, Rect r) noexcept {
  if (poly.empty()) return false;
  for (const auto& v : poly)
    if (v.x >= r.x0 && v.x <= r.x1 && v.y >= r.y0 && v.y <= r.y1) return true;
  const Point2 corners[4] = {{r.x0, r.y0}, {r.x1, r.y0}, {r.x1, r.y1}, {r.x0, r.y1}};
  for (const auto& c : corners)
    if (point_in_polygon(poly, c)) return true;
  const auto n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++)
    for (int k = 0; k < 4; ++k)
      if (detail::segments_intersect(poly[j], poly[i], corners[k], corners[(k + 1) % 4]))
        return true;
  return false;
}

/// Shoelace area (absolute value).
[[nodiscard]] inline double polygon_area(std::span<const Point2> poly) noexcept {
  double acc = 0;
  const auto n = poly.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++)
    acc += poly[j].x * poly[i].y - poly[i].x * poly[j].y;
  return std::abs(acc) * 0.5;
}

/// Andrew's monotone chain; returns the hull counter-clockwise without
/// collinear points.
[[nodiscard]] inline Polygon convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() < 3) return pts;
  Polygon hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && detail::cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
    while (k >= t && detail::cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

[[nodiscard]] inline Rect bounding_box(std::span<const Point2> poly) noexcept {
  Rect r{INFINITY, INFINITY, -INFINITY, -INFINITY};
  for (const auto& p : poly) {
    r.x0 = std::min(r.x0, p.x);
    r.y0 = std::min(r.y0, p.y);
    r.x1 = std::max(r.x1, p.x);
    r.y1 = std::max(r.y1, p.y);
  }
  return r;
}

}  // namespace wsi
