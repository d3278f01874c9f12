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

// PNG output and small curve plots. Needs libpng at link time.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <memory>
#include <span>
#include <utility>
#include <vector>

#include "wsi/error.hpp"
#include "wsi/raster.hpp"

namespace wsi {

template <int Channels>
inline void write_png(const std::filesystem::path& path, const Raster<std::uint8_t, Channels>& img) {
  static_assert(Channels == 1 || Channels == 3);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw Error(Errc::io, "cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw Error(Errc::io, "libpng init failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error(Errc::io, "libpng failed writing " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width()), static_cast<png_uint_32>(img.height()), 8,
               Channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::int64_t y = 0; y < img.height(); ++y)
    png_write_row(png, const_cast<png_bytep>(img.row(y).data()));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Polyline on a white canvas with axes; x spans [0, x_max], y spans [0, 1].
[[nodiscard]] inline RgbImage plot_curve(std::span<const std::pair<double, double>> pts, double x_max,
                                         std::int64_t size = 400) {
  RgbImage img(size, size);
  std::fill(img.data().begin(), img.data().end(), std::uint8_t{255});
  const std::int64_t m = size / 10, span = size - 2 * m;
  auto to_px = [&](double x, double y) {
    const double fx = std::clamp(x / x_max, 0.0, 1.0), fy = std::clamp(y, 0.0, 1.0);
    return std::pair<std::int64_t, std::int64_t>{m + std::llround(fx * span), size - m - std::llround(fy * span)};
  };
  auto line = [&](std::pair<std::int64_t, std::int64_t> a, std::pair<std::int64_t, std::int64_t> b, Rgb c) {
    const auto steps = std::max({std::abs(b.first - a.first), std::abs(b.second - a.second), std::int64_t{1}});
    for (std::int64_t s = 0; s <= steps; ++s) {
      const auto x = a.first + (b.first - a.first) * s / steps;
      const auto y = a.second + (b.second - a.second) * s / steps;
      if (img.contains(x, y)) set_pixel(img, x, y, c);
    }
  };
  const Rgb axis{0, 0, 0}, ink{200, 30, 30};
  line(to_px(0, 0), to_px(x_max, 0), axis);
  line(to_px(0, 0), to_px(0, 1), axis);
  for (std::size_t i = 1; i < pts.size(); ++i)
    line(to_px(pts[i - 1].first, pts[i - 1].second), to_px(pts[i].first, pts[i].second), ink);
  return img;
}

}  // namespace wsi
