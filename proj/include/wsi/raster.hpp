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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "wsi/error.hpp"

namespace wsi {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

/// Dense row-major raster with `Channels` interleaved samples per pixel.
template <typename T, int Channels = 1>
class Raster {
 public:
  static constexpr int channels = Channels;

  Raster() = default;
  Raster(std::int64_t width, std::int64_t height, T fill = T{})
      : width_(width), height_(height),
        data_(static_cast<std::size_t>(width * height * Channels), fill) {
    if (width < 0 || height < 0) throw Error(Errc::shape, "negative raster dimensions");
  }

  [[nodiscard]] std::int64_t width() const noexcept { return width_; }
  [[nodiscard]] std::int64_t height() const noexcept { return height_; }
  [[nodiscard]] std::size_t pixel_count() const noexcept {
    return static_cast<std::size_t>(width_ * height_);
  }
  [[nodiscard]] bool empty() const noexcept { return data_.empty(); }

  [[nodiscard]] T& at(std::int64_t x, std::int64_t y, int c = 0) noexcept {
    return data_[static_cast<std::size_t>((y * width_ + x) * Channels + c)];
  }
  [[nodiscard]] const T& at(std::int64_t x, std::int64_t y, int c = 0) const noexcept {
    return data_[static_cast<std::size_t>((y * width_ + x) * Channels + c)];
  }

  [[nodiscard]] bool contains(std::int64_t x, std::int64_t y) const noexcept {
    return x >= 0 && y >= 0 && x < width_ && y < height_;
  }

  [[nodiscard]] std::span<T> row(std::int64_t y) noexcept {
    return {data_.data() + static_cast<std::size_t>(y * width_ * Channels),
            static_cast<std::size_t>(width_ * Channels)};
  }
  [[nodiscard]] std::span<const T> row(std::int64_t y) const noexcept {
    return {data_.data() + static_cast<std::size_t>(y * width_ * Channels),
            static_cast<std::size_t>(width_ * Channels)};
  }

  [[nodiscard]] std::vector<T>& data() noexcept { return data_; }
  [[nodiscard]] const std::vector<T>& data() const noexcept { return data_; }

  friend bool operator==(const Raster&, const Raster&) = default;

 private:
  std::int64_t width_ = 0;
  std::int64_t height_ = 0;
  std::vector<T> data_;
};

using RgbImage = Raster<std::uint8_t, 3>;
/// Binary raster; cells hold 0 or 1.
using BinaryGrid = Raster<std::uint8_t, 1>;
using GrayImage = Raster<std::uint8_t, 1>;

[[nodiscard]] inline Rgb pixel(const RgbImage& img, std::int64_t x, std::int64_t y) noexcept {
  return {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
}

inline void set_pixel(RgbImage& img, std::int64_t x, std::int64_t y, Rgb p) noexcept {
  img.at(x, y, 0) = p.r;
  img.at(x, y, 1) = p.g;
  img.at(x, y, 2) = p.b;
}

/// Copies the rectangle [x, x+w) x [y, y+h) out of `src`; caller guarantees bounds.
template <typename T, int C>
[[nodiscard]] Raster<T, C> crop(const Raster<T, C>& src, std::int64_t x, std::int64_t y,
                                std::int64_t w, std::int64_t h) {
  Raster<T, C> out(w, h);
  for (std::int64_t r = 0; r < h; ++r) {
    auto s = src.row(y + r).subspan(static_cast<std::size_t>(x * C), static_cast<std::size_t>(w * C));
    std::copy(s.begin(), s.end(), out.row(r).begin());
  }
  return out;
}

[[nodiscard]] inline std::size_t count_nonzero(const BinaryGrid& g) noexcept {
  std::size_t n = 0;
  for (auto v : g.data()) n += v != 0;
  return n;
}

// --- Netpbm I/O -------------------------------------------------------------
// Binary PPM (P6) / PGM (P5), maxval 255. Lossless and trivially seekable,
// which the tile reader relies on for partial reads.

struct NetpbmHeader {
  char kind = '6';          // '5' gray, '6' rgb
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::streamoff data_offset = 0;
};

namespace detail {

inline void skip_ws_and_comments(std::istream& in) {
  for (;;) {
    int c = in.peek();
    if (c == '#') {
      std::string dummy;
      std::getline(in, dummy);
    } else if (c == ' ' || c == '\n' || c == '\r' || c == '\t') {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace detail

[[nodiscard]] inline NetpbmHeader read_netpbm_header(std::istream& in, const std::string& name) {
  NetpbmHeader h;
  char magic[2] = {0, 0};
  in.read(magic, 2);
  if (!in || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6'))
    throw Error(Errc::format, "not a binary PGM/PPM raster: " + name);
  h.kind = magic[1];
  int maxval = 0;
  detail::skip_ws_and_comments(in);
  in >> h.width;
  detail::skip_ws_and_comments(in);
  in >> h.height;
  detail::skip_ws_and_comments(in);
  in >> maxval;
  if (!in || h.width <= 0 || h.height <= 0 || maxval != 255)
    throw Error(Errc::format, "bad raster header: " + name);
  in.get();  // single whitespace byte before data
  h.data_offset = in.tellg();
  return h;
}

template <int C>
void write_netpbm(const std::filesystem::path& path, const Raster<std::uint8_t, C>& img) {
  static_assert(C == 1 || C == 3);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write " + path.string());
  out << (C == 3 ? "P6\n" : "P5\n") << img.width() << ' ' << img.height() << "\n255\n";
  out.write(reinterpret_cast<const char*>(img.data().data()),
            static_cast<std::streamsize>(img.data().size()));
  if (!out) throw Error(Errc::io, "short write to " + path.string());
}

template <int C>
[[nodiscard]] Raster<std::uint8_t, C> read_netpbm(const std::filesystem::path& path) {
  static_assert(C == 1 || C == 3);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io, "cannot open " + path.string());
  const auto h = read_netpbm_header(in, path.string());
  if ((C == 3) != (h.kind == '6'))
    throw Error(Errc::format, "unexpected channel count in " + path.string());
  Raster<std::uint8_t, C> img(h.width, h.height);
  in.read(reinterpret_cast<char*>(img.data().data()),
          static_cast<std::streamsize>(img.data().size()));
  if (!in) throw Error(Errc::format, "truncated raster " + path.string());
  return img;
}

}  // namespace wsi
