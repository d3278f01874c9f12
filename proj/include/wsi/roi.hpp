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
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "wsi/error.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/raster.hpp"

namespace wsi {

struct Hsv {
  double h = 0;  // degrees, [0, 360)
  double s = 0;  // [0, 1]
  double v = 0;  // [0, 1]
};

/// Hexcone RGB -> HSV. Grays (max == min) get h = 0 and s = 0.
[[nodiscard]] inline Hsv rgb_to_hsv(Rgb p) noexcept {
  const int mx = std::max({p.r, p.g, p.b});
  const int mn = std::min({p.r, p.g, p.b});
  const double delta = mx - mn;
  Hsv out;
  out.v = mx / 255.0;
  out.s = mx == 0 ? 0.0 : delta / mx;
  if (delta == 0) return out;
  double h;
  if (mx == p.r)
    h = 60.0 * std::fmod((p.g - p.b) / delta + 6.0, 6.0);
  else if (mx == p.g)
    h = 60.0 * ((p.b - p.r) / delta + 2.0);
  else
    h = 60.0 * ((p.r - p.g) / delta + 4.0);
  out.h = h >= 360.0 ? h - 360.0 : h;
  return out;
}

/// Saturation on the 0..255 scale, round-half-up, integer-exact.
[[nodiscard]] constexpr std::uint8_t saturation_byte(std::uint8_t r, std::uint8_t g,
                                                     std::uint8_t b) noexcept {
  const unsigned mx = std::max({r, g, b});
  const unsigned mn = std::min({r, g, b});
  if (mx == 0) return 0;
  return static_cast<std::uint8_t>((2u * 255u * (mx - mn) + mx) / (2u * mx));
}

using Histogram256 = std::array<std::uint64_t, 256>;

namespace detail {

// Between-class variance at threshold t is proportional to
// (N*s0 - n0*S)^2 / (n0*n1). Candidates are compared exactly via
// cross-multiplication when the products fit in 128 bits.
struct OtsuScore {
  unsigned __int128 num = 0;  // (N*s0 - n0*S)^2
  unsigned __int128 den = 1;  // n0*n1
  long double approx = 0;
};

[[nodiscard]] inline int bit_width128(unsigned __int128 v) noexcept {
  const auto hi = static_cast<std::uint64_t>(v >> 64);
  return hi ? 64 + std::bit_width(hi) : std::bit_width(static_cast<std::uint64_t>(v));
}

[[nodiscard]] inline bool greater(const OtsuScore& a, const OtsuScore& b) noexcept {
  if (bit_width128(a.num) + bit_width128(b.den) <= 127 &&
      bit_width128(b.num) + bit_width128(a.den) <= 127)
    return a.num * b.den > b.num * a.den;
  return a.approx > b.approx;
}

}  // namespace detail

/// Otsu threshold: argmax of between-class variance, class 0 = bins <= t.
/// Ties go to the smallest t. A histogram with a single occupied bin returns
/// that bin.
[[nodiscard]] inline int otsu_threshold(const Histogram256& hist) {
  std::uint64_t total = 0, weighted = 0;
  int occupied = 0, last_bin = 0;
  for (int i = 0; i < 256; ++i) {
    total += hist[static_cast<std::size_t>(i)];
    weighted += static_cast<std::uint64_t>(i) * hist[static_cast<std::size_t>(i)];
    if (hist[static_cast<std::size_t>(i)]) {
      ++occupied;
      last_bin = i;
    }
  }
  if (total == 0) throw Error(Errc::empty_histogram, "histogram has no mass");
  if (occupied == 1) return last_bin;

  int best_t = 0;
  detail::OtsuScore best;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 256; ++t) {
    n0 += hist[static_cast<std::size_t>(t)];
    s0 += static_cast<std::uint64_t>(t) * hist[static_cast<std::size_t>(t)];
    const std::uint64_t n1 = total - n0;
    detail::OtsuScore score;
    if (n0 != 0 && n1 != 0) {
      const auto a = static_cast<__int128>(total) * s0;
      const auto b = static_cast<__int128>(n0) * weighted;
      const auto diff = static_cast<unsigned __int128>(a > b ? a - b : b - a);
      score.num = diff * diff;
      score.den = static_cast<unsigned __int128>(n0) * n1;
      const long double d = static_cast<long double>(diff);
      score.approx = d * d / (static_cast<long double>(n0) * static_cast<long double>(n1));
    }
    if (t == 0 || detail::greater(score, best)) {
      best = score;
      best_t = t;
    }
  }
  return best_t;
}

// --- Binary morphology ------------------------------------------------------

enum class MorphOp { erode, dilate, open, close };

/// Offsets (dx, dy) with dx^2 + dy^2 <= radius^2.
[[nodiscard]] inline std::vector<std::pair<int, int>> disc_offsets(int radius) {
  std::vector<std::pair<int, int>> offs;
  for (int dy = -radius; dy <= radius; ++dy)
    for (int dx = -radius; dx <= radius; ++dx)
      if (dx * dx + dy * dy <= radius * radius) offs.emplace_back(dx, dy);
  return offs;
}

namespace detail {

// Pixels outside the grid are ignored by both primitives, which keeps
// erosion and dilation adjoint so opening and closing stay idempotent.
[[nodiscard]] inline BinaryGrid erode_or_dilate(const BinaryGrid& g, int radius, bool erode) {
  const auto offs = disc_offsets(radius);
  BinaryGrid out(g.width(), g.height());
  for (std::int64_t y = 0; y < g.height(); ++y) {
    for (std::int64_t x = 0; x < g.width(); ++x) {
      bool acc = erode;
      for (auto [dx, dy] : offs) {
        const auto nx = x + dx, ny = y + dy;
        if (!g.contains(nx, ny)) continue;
        const bool v = g.at(nx, ny) != 0;
        if (erode && !v) {
          acc = false;
          break;
        }
        if (!erode && v) {
          acc = true;
          break;
        }
      }
      out.at(x, y) = acc ? 1 : 0;
    }
  }
  return out;
}

}  // namespace detail

/// Disc structuring element. open = dilate(erode(g)), close = erode(dilate(g)).
[[nodiscard]] inline BinaryGrid binary_morphology(const BinaryGrid& grid, MorphOp op, int radius) {
  if (radius < 0) throw Error(Errc::config, "morphology radius must be >= 0");
  if (radius == 0) return grid;
  switch (op) {
    case MorphOp::erode:  return detail::erode_or_dilate(grid, radius, true);
    case MorphOp::dilate: return detail::erode_or_dilate(grid, radius, false);
    case MorphOp::open:
      return detail::erode_or_dilate(detail::erode_or_dilate(grid, radius, true), radius, false);
    case MorphOp::close:
      return detail::erode_or_dilate(detail::erode_or_dilate(grid, radius, false), radius, true);
  }
  return grid;
}

// --- Tissue mask ------------------------------------------------------------

struct RoiConfig {
  /// Unset: coarsest level whose smaller side is >= 256 (level 0 if none).
  std::optional<int> mask_level;
  int morph_radius = 2;
  /// Mark low-saturation pixels as tissue instead.
  bool invert = false;
};

struct TissueMask {
  std::string slide_id;
  int level = 0;
  std::int64_t downsample = 1;
  std::int64_t level0_width = 0;
  std::int64_t level0_height = 0;
  BinaryGrid grid;
};

[[nodiscard]] inline int default_mask_level(const SlideManifest& m) {
  int best = 0;
  for (const auto& l : m.levels)
    if (std::min(l.width, l.height) >= 256) best = l.level_index;
  return best;
}

[[nodiscard]] inline Histogram256 saturation_histogram(const RgbImage& img) {
  Histogram256 hist{};
  const auto& d = img.data();
  for (std::size_t i = 0; i + 2 < d.size(); i += 3) ++hist[saturation_byte(d[i], d[i + 1], d[i + 2])];
  return hist;
}

[[nodiscard]] inline TissueMask compute_tissue_mask(const PyramidSlide& slide,
                                                    const RoiConfig& cfg = {}) {
  if (cfg.morph_radius < 0) throw Error(Errc::config, "morph_radius must be >= 0");
  const int level = cfg.mask_level.value_or(default_mask_level(slide.manifest()));
  const auto& lv = slide.level(level);
  const auto img = slide.read_level(level);
  const int t = otsu_threshold(saturation_histogram(img));

  BinaryGrid raw(img.width(), img.height());
  for (std::int64_t y = 0; y < img.height(); ++y)
    for (std::int64_t x = 0; x < img.width(); ++x) {
      const bool above = saturation_byte(img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)) > t;
      raw.at(x, y) = (above != cfg.invert) ? 1 : 0;
    }
  TissueMask mask;
  mask.slide_id = slide.slide_id();
  mask.level = level;
  mask.downsample = lv.downsample;
  mask.level0_width = slide.width();
  mask.level0_height = slide.height();
  mask.grid = binary_morphology(binary_morphology(raw, MorphOp::open, cfg.morph_radius),
                                MorphOp::close, cfg.morph_radius);
  if (count_nonzero(mask.grid) == 0)
    throw Error(Errc::empty_tissue, "no tissue found in slide " + slide.slide_id());
  return mask;
}

/// Area-weighted fraction of tissue under a level-0 rectangle.
[[nodiscard]] inline double mask_lookup(const TissueMask& mask, std::int64_t x, std::int64_t y,
                                        std::int64_t width, std::int64_t height) {
  if (x < 0 || y < 0 || width < 1 || height < 1 || x + width > mask.level0_width ||
      y + height > mask.level0_height)
    throw Error(Errc::bounds, "lookup rectangle outside level 0");
  const double ds = static_cast<double>(mask.downsample);
  const double fx0 = x / ds, fx1 = (x + width) / ds;
  const double fy0 = y / ds, fy1 = (y + height) / ds;
  const auto mx0 = static_cast<std::int64_t>(std::floor(fx0));
  const auto my0 = static_cast<std::int64_t>(std::floor(fy0));
  const auto mx1 = std::min(mask.grid.width(), static_cast<std::int64_t>(std::ceil(fx1)));
  const auto my1 = std::min(mask.grid.height(), static_cast<std::int64_t>(std::ceil(fy1)));
  double covered = 0, total = 0;
  for (auto my = my0; my < my1; ++my) {
    const double wy = std::min<double>(fy1, my + 1) - std::max<double>(fy0, my);
    if (wy <= 0) continue;
    for (auto mx = mx0; mx < mx1; ++mx) {
      const double wx = std::min<double>(fx1, mx + 1) - std::max<double>(fx0, mx);
      if (wx <= 0) continue;
      total += wx * wy;
      if (mask.grid.at(mx, my)) covered += wx * wy;
    }
  }
  return total > 0 ? covered / total : 0.0;
}

// Masks are a 0/255 PGM plus a `<file>.txt` sidecar header.
inline void write_mask(const std::filesystem::path& path, const TissueMask& mask) {
  GrayImage img(mask.grid.width(), mask.grid.height());
  for (std::size_t i = 0; i < img.data().size(); ++i) img.data()[i] = mask.grid.data()[i] ? 255 : 0;
  write_netpbm(path, img);
  std::ofstream hdr(path.string() + ".txt", std::ios::trunc);
  if (!hdr) throw Error(Errc::io, "cannot write mask header for " + path.string());
  hdr << "wsi-mask 1\n"
      << "slide_id " << mask.slide_id << "\n"
      << "level " << mask.level << "\n"
      << "downsample " << mask.downsample << "\n"
      << "level0 " << mask.level0_width << " " << mask.level0_height << "\n";
}

[[nodiscard]] inline TissueMask read_mask(const std::filesystem::path& path) {
  TissueMask mask;
  std::ifstream hdr(path.string() + ".txt");
  if (!hdr) throw Error(Errc::format, "missing mask header " + path.string() + ".txt");
  std::string magic, key;
  int version = 0;
  hdr >> magic >> version;
  if (magic != "wsi-mask" || version != 1) throw Error(Errc::format, "bad mask header");
  hdr >> key >> mask.slide_id >> key >> mask.level >> key >> mask.downsample >> key >>
      mask.level0_width >> mask.level0_height;
  if (!hdr) throw Error(Errc::format, "truncated mask header " + path.string());
  const auto img = read_netpbm<1>(path);
  mask.grid = BinaryGrid(img.width(), img.height());
  for (std::size_t i = 0; i < img.data().size(); ++i) mask.grid.data()[i] = img.data()[i] ? 1 : 0;
  return mask;
}

}  // namespace wsi
