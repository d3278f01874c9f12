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
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "wsi/classifier.hpp"
#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/geometry.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/raster.hpp"

namespace wsi {

/// Per-patch probability grid; one cell per patch footprint. Cells without
/// a score hold kUnscored.
struct Heatmap {
  static constexpr double kUnscored = -1.0;
  static constexpr int kFormatVersion = 1;

  std::string slide_id;
  std::int64_t rows = 0, cols = 0;
  std::int64_t cell_size = 256;
  std::int64_t origin_x = 0, origin_y = 0;
  std::vector<double> values;

  Heatmap() = default;
  Heatmap(std::string id, std::int64_t r, std::int64_t c, std::int64_t cell)
      : slide_id(std::move(id)), rows(r), cols(c), cell_size(cell),
        values(static_cast<std::size_t>(r * c), kUnscored) {}

  [[nodiscard]] double& at(std::int64_t r, std::int64_t c) noexcept {
    return values[static_cast<std::size_t>(r * cols + c)];
  }
  [[nodiscard]] double at(std::int64_t r, std::int64_t c) const noexcept {
    return values[static_cast<std::size_t>(r * cols + c)];
  }
  [[nodiscard]] bool scored(std::int64_t r, std::int64_t c) const noexcept { return at(r, c) >= 0.0; }

  [[nodiscard]] std::size_t scored_count() const noexcept {
    return static_cast<std::size_t>(
        std::count_if(values.begin(), values.end(), [](double v) { return v >= 0.0; }));
  }

  [[nodiscard]] BinaryGrid coverage() const {
    BinaryGrid g(cols, rows);
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t c = 0; c < cols; ++c) g.at(c, r) = scored(r, c) ? 1 : 0;
    return g;
  }

  friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

/// Places each score in the cell of its patch. Grid dims are
/// ceil(level-0 size / stride).
[[nodiscard]] inline Heatmap assemble_heatmap(std::span<const PatchScore> scores,
                                              const std::string& slide_id,
                                              std::int64_t slide_width,
                                              std::int64_t slide_height, std::int64_t stride,
                                              std::int64_t origin_x = 0,
                                              std::int64_t origin_y = 0) {
  if (stride < 1) throw Error(Errc::config, "stride must be positive");
  Heatmap hm(slide_id, ceil_div(slide_height - origin_y, stride),
             ceil_div(slide_width - origin_x, stride), stride);
  hm.origin_x = origin_x;
  hm.origin_y = origin_y;
  for (const auto& s : scores) {
    const auto& p = s.patch;
    if (p.slide_id != slide_id)
      throw Error(Errc::alignment, "score for slide '" + p.slide_id + "' in heatmap of '" +
                                       slide_id + "'");
    if (p.level != scores.front().patch.level || p.size != scores.front().patch.size)
      throw Error(Errc::alignment, "patches differ in level or size");
    const auto dx = p.x - origin_x, dy = p.y - origin_y;
    if (dx < 0 || dy < 0 || dx % stride != 0 || dy % stride != 0)
      throw Error(Errc::alignment, "patch at (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                                       ") is not stride-aligned");
    const auto r = dy / stride, c = dx / stride;
    if (r >= hm.rows || c >= hm.cols)
      throw Error(Errc::alignment, "patch outside slide bounds");
    if (hm.scored(r, c))
      throw Error(Errc::duplicate_patch, "two scores at (" + std::to_string(p.x) + "," +
                                             std::to_string(p.y) + ")");
    if (!(s.p_tumor >= 0.0 && s.p_tumor <= 1.0)) throw Error(Errc::data, "score outside [0,1]");
    hm.at(r, c) = s.p_tumor;
  }
  return hm;
}

/// 1 iff scored and p > t (strict).
[[nodiscard]] inline BinaryGrid threshold_heatmap(const Heatmap& hm, double t) {
  if (!(t >= 0.0 && t <= 1.0)) throw Error(Errc::config, "threshold must lie in [0,1]");
  BinaryGrid g(hm.cols, hm.rows);
  for (std::int64_t r = 0; r < hm.rows; ++r)
    for (std::int64_t c = 0; c < hm.cols; ++c) g.at(c, r) = hm.scored(r, c) && hm.at(r, c) > t;
  return g;
}

// --- Regions ----------------------------------------------------------------

struct Cell {
  std::int64_t row = 0, col = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
  friend auto operator<=>(const Cell&, const Cell&) = default;
};

struct Region {
  int id = 0;
  std::vector<Cell> cells;  // row-major order
  std::int64_t area = 0;
  double centroid_row = 0, centroid_col = 0;
  double major_axis_length = 0;
  double minor_axis_length = 0;
  double eccentricity = 0;
  double extent = 0;
  double solidity = 0;
  std::int64_t perimeter = 0;
  double mean_p = 0, max_p = 0;
  std::int64_t bbox_row0 = 0, bbox_col0 = 0, bbox_rows = 0, bbox_cols = 0;
};

/// 8-connected components sorted by area descending, ties by the topmost,
/// then leftmost, cell. Ids run 1..n in that order.
[[nodiscard]] inline std::vector<Region> connected_components(const BinaryGrid& grid) {
  const auto w = grid.width(), h = grid.height();
  std::vector<std::uint8_t> seen(static_cast<std::size_t>(w * h), 0);
  std::vector<Region> regions;
  std::vector<Cell> stack;
  for (std::int64_t r = 0; r < h; ++r) {
    for (std::int64_t c = 0; c < w; ++c) {
      if (!grid.at(c, r) || seen[static_cast<std::size_t>(r * w + c)]) continue;
      Region reg;
      stack.assign(1, {r, c});
      seen[static_cast<std::size_t>(r * w + c)] = 1;
      while (!stack.empty()) {
        const auto cur = stack.back();
        stack.pop_back();
        reg.cells.push_back(cur);
        for (int dr = -1; dr <= 1; ++dr)
          for (int dc = -1; dc <= 1; ++dc) {
            const auto nr = cur.row + dr, nc = cur.col + dc;
            if (!grid.contains(nc, nr) || !grid.at(nc, nr)) continue;
            auto& s = seen[static_cast<std::size_t>(nr * w + nc)];
            if (s) continue;
            s = 1;
            stack.push_back({nr, nc});
          }
      }
      std::sort(reg.cells.begin(), reg.cells.end());
      reg.area = static_cast<std::int64_t>(reg.cells.size());
      regions.push_back(std::move(reg));
    }
  }
  // Discovery order is already topmost-leftmost, so a stable sort on area suffices.
  std::stable_sort(regions.begin(), regions.end(),
                   [](const Region& a, const Region& b) { return a.area > b.area; });
  for (std::size_t i = 0; i < regions.size(); ++i) regions[i].id = static_cast<int>(i + 1);
  return regions;
}

/// Fills the geometric and probability properties of a region.
///
/// Second moments treat every cell as a unit square, i.e. the centered
/// moments of the cell centers plus 1/12 on each diagonal term. The
/// equivalent ellipse has eigenvalues l1 >= l2 of that covariance;
/// major axis = 4 sqrt(l1), eccentricity = sqrt(1 - l2 / l1).
/// Solidity divides the area by the cell count of the convex hull of the
/// cell centers.
[[nodiscard]] inline Region region_properties(Region reg, const Heatmap* hm = nullptr) {
  if (reg.cells.empty()) throw Error(Errc::data, "region without cells");
  const auto n = static_cast<double>(reg.cells.size());
  reg.area = static_cast<std::int64_t>(reg.cells.size());

  double sr = 0, sc = 0;
  std::int64_t r0 = reg.cells.front().row, r1 = r0, c0 = reg.cells.front().col, c1 = c0;
  for (const auto& cell : reg.cells) {
    sr += static_cast<double>(cell.row);
    sc += static_cast<double>(cell.col);
    r0 = std::min(r0, cell.row);
    r1 = std::max(r1, cell.row);
    c0 = std::min(c0, cell.col);
    c1 = std::max(c1, cell.col);
  }
  reg.centroid_row = sr / n;
  reg.centroid_col = sc / n;
  double mxx = 0, myy = 0, mxy = 0;
  for (const auto& cell : reg.cells) {
    const double dx = static_cast<double>(cell.col) - reg.centroid_col;
    const double dy = static_cast<double>(cell.row) - reg.centroid_row;
    mxx += dx * dx;
    myy += dy * dy;
    mxy += dx * dy;
  }
  mxx = mxx / n + 1.0 / 12.0;
  myy = myy / n + 1.0 / 12.0;
  mxy /= n;
  const double half_tr = 0.5 * (mxx + myy);
  const double disc = std::sqrt(0.25 * (mxx - myy) * (mxx - myy) + mxy * mxy);
  const double l1 = half_tr + disc;
  const double l2 = std::max(half_tr - disc, 0.0);
  reg.major_axis_length = 4.0 * std::sqrt(l1);
  reg.minor_axis_length = 4.0 * std::sqrt(l2);
  reg.eccentricity = std::sqrt(std::max(0.0, 1.0 - l2 / l1));

  reg.bbox_row0 = r0;
  reg.bbox_col0 = c0;
  reg.bbox_rows = r1 - r0 + 1;
  reg.bbox_cols = c1 - c0 + 1;
  reg.extent = n / static_cast<double>(reg.bbox_rows * reg.bbox_cols);

  // Cells of the region's digital convex hull: by Pick's theorem the hull of
  // the cell centers holds A + B/2 + 1 lattice points (A shoelace area, B
  // lattice points on the boundary), so solidity <= 1 always.
  std::vector<Point2> centers;
  centers.reserve(reg.cells.size());
  for (const auto& cell : reg.cells)
    centers.push_back({static_cast<double>(cell.col), static_cast<double>(cell.row)});
  const auto hull = convex_hull(std::move(centers));
  std::int64_t boundary = 0;
  if (hull.size() > 1)
    for (std::size_t i = 0; i < hull.size(); ++i) {
      const auto& a = hull[i];
      const auto& b = hull[(i + 1) % hull.size()];
      boundary += std::gcd(std::llabs(std::llround(b.x - a.x)), std::llabs(std::llround(b.y - a.y)));
    }
  const double hull_cells =
      (hull.size() > 2 ? polygon_area(hull) : 0.0) + static_cast<double>(boundary) / 2.0 + 1.0;
  reg.solidity = n / hull_cells;

  std::set<Cell> members(reg.cells.begin(), reg.cells.end());
  reg.perimeter = 0;
  for (const auto& cell : reg.cells) {
    const Cell nb[4] = {{cell.row - 1, cell.col}, {cell.row + 1, cell.col},
                        {cell.row, cell.col - 1}, {cell.row, cell.col + 1}};
    for (const auto& q : nb) reg.perimeter += members.count(q) == 0;
  }

  reg.mean_p = reg.max_p = 0;
  if (hm) {
    double sum = 0;
    for (const auto& cell : reg.cells) {
      const double p = hm->scored(cell.row, cell.col) ? hm->at(cell.row, cell.col) : 0.0;
      sum += p;
      reg.max_p = std::max(reg.max_p, p);
    }
    reg.mean_p = sum / n;
  }
  return reg;
}

[[nodiscard]] inline std::vector<Region> heatmap_regions(const Heatmap& hm, double t) {
  auto regions = connected_components(threshold_heatmap(hm, t));
  for (auto& r : regions) r = region_properties(std::move(r), &hm);
  return regions;
}

// --- Heatmap file -----------------------------------------------------------

inline void write_heatmap(const std::filesystem::path& path, const Heatmap& hm) {
  auto out = csv::open_out(path);
  out << "wsi-heatmap " << Heatmap::kFormatVersion << "\n"
      << "slide_id " << hm.slide_id << "\n"
      << "dims " << hm.rows << " " << hm.cols << "\n"
      << "cell_size " << hm.cell_size << "\n"
      << "origin " << hm.origin_x << " " << hm.origin_y << "\n";
  for (std::int64_t r = 0; r < hm.rows; ++r) {
    for (std::int64_t c = 0; c < hm.cols; ++c) {
      if (c) out << ' ';
      out << (hm.scored(r, c) ? csv::fmt(hm.at(r, c)) : std::string("-1"));
    }
    out << "\n";
  }
  if (!out) throw Error(Errc::io, "short write to " + path.string());
}

[[nodiscard]] inline Heatmap read_heatmap(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open heatmap " + path.string());
  std::string magic, key;
  int version = 0;
  in >> magic >> version;
  if (magic != "wsi-heatmap" || version != Heatmap::kFormatVersion)
    throw Error(Errc::format, "not a heatmap file: " + path.string());
  Heatmap hm;
  in >> key >> hm.slide_id >> key >> hm.rows >> hm.cols >> key >> hm.cell_size >> key >>
      hm.origin_x >> hm.origin_y;
  if (!in || hm.rows < 0 || hm.cols < 0 || hm.cell_size < 1)
    throw Error(Errc::format, "bad heatmap header in " + path.string());
  hm.values.resize(static_cast<std::size_t>(hm.rows * hm.cols));
  for (auto& v : hm.values) {
    std::string tok;
    if (!(in >> tok)) throw Error(Errc::format, "truncated heatmap " + path.string());
    v = csv::to_double(tok);
    if (v < 0) v = Heatmap::kUnscored;
    else if (v > 1) throw Error(Errc::data, "heatmap value above 1 in " + path.string());
  }
  return hm;
}

// --- Rendering --------------------------------------------------------------

/// 8-bit grayscale, one pixel per cell; unscored cells are 0.
[[nodiscard]] inline GrayImage render_heatmap_gray(const Heatmap& hm) {
  GrayImage g(hm.cols, hm.rows);
  for (std::int64_t r = 0; r < hm.rows; ++r)
    for (std::int64_t c = 0; c < hm.cols; ++c)
      g.at(c, r) = hm.scored(r, c)
                       ? static_cast<std::uint8_t>(std::lround(hm.at(r, c) * 255.0))
                       : 0;
  return g;
}

/// Red overlay on the coarsest slide level whose downsample does not exceed
/// the cell size; blend weight grows with p.
[[nodiscard]] inline RgbImage render_heatmap_overlay(const Heatmap& hm, const PyramidSlide& slide) {
  int level = 0;
  for (const auto& l : slide.manifest().levels)
    if (l.downsample <= hm.cell_size) level = l.level_index;
  auto img = slide.read_level(level);
  const auto ds = slide.level(level).downsample;
  for (std::int64_t y = 0; y < img.height(); ++y)
    for (std::int64_t x = 0; x < img.width(); ++x) {
      const auto c = (x * ds - hm.origin_x) / hm.cell_size;
      const auto r = (y * ds - hm.origin_y) / hm.cell_size;
      if (r < 0 || c < 0 || r >= hm.rows || c >= hm.cols || !hm.scored(r, c)) continue;
      const double a = 0.6 * hm.at(r, c);
      const auto px = pixel(img, x, y);
      set_pixel(img, x, y,
                {static_cast<std::uint8_t>(std::lround((1 - a) * px.r + a * 255.0)),
                 static_cast<std::uint8_t>(std::lround((1 - a) * px.g)),
                 static_cast<std::uint8_t>(std::lround((1 - a) * px.b))});
    }
  return img;
}

}  // namespace wsi
