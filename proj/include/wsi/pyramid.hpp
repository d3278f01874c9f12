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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsi/error.hpp"
#include "wsi/raster.hpp"

namespace wsi {

enum class SlideLabel { normal = 0, tumor = 1 };

[[nodiscard]] inline std::string to_string(SlideLabel l) {
  return l == SlideLabel::tumor ? "tumor" : "normal";
}

[[nodiscard]] inline SlideLabel parse_slide_label(const std::string& s) {
  if (s == "tumor" || s == "1") return SlideLabel::tumor;
  if (s == "normal" || s == "0") return SlideLabel::normal;
  throw Error(Errc::data, "unknown slide label '" + s + "'");
}

struct LevelInfo {
  int level_index = 0;
  std::int64_t width = 0;
  std::int64_t height = 0;
  /// Integer factor relative to level 0; the product of the steps above this level.
  std::int64_t downsample = 1;
  friend bool operator==(const LevelInfo&, const LevelInfo&) = default;
};

struct SlideManifest {
  static constexpr int kFormatVersion = 1;

  std::string slide_id;
  std::vector<LevelInfo> levels;
  double mpp_level0 = 1.20;
  std::int64_t tile_size = 512;
  std::optional<SlideLabel> label;

  [[nodiscard]] int level_count() const noexcept { return static_cast<int>(levels.size()); }
  [[nodiscard]] const LevelInfo& level(int k) const {
    if (k < 0 || k >= level_count())
      throw Error(Errc::bounds, "level " + std::to_string(k) + " does not exist");
    return levels[static_cast<std::size_t>(k)];
  }
  friend bool operator==(const SlideManifest&, const SlideManifest&) = default;
};

struct RegionRequest {
  int level = 0;
  std::int64_t x = 0, y = 0;
  std::int64_t width = 0, height = 0;
};

struct PixelPoint {
  std::int64_t x = 0, y = 0;
  friend bool operator==(const PixelPoint&, const PixelPoint&) = default;
};

/// Parameters for `write_slide`. Level k+1 is ceil(level k / downsample_steps[k]).
struct SlideWriteParams {
  std::string slide_id;
  double mpp_level0 = 1.20;
  std::int64_t tile_size = 512;
  std::vector<std::int64_t> downsample_steps{4, 4};
  std::optional<SlideLabel> label{};
};

[[nodiscard]] constexpr std::int64_t ceil_div(std::int64_t a, std::int64_t b) noexcept {
  return (a + b - 1) / b;
}

/// Throws CorruptSlide unless the level table is a valid pyramid.
inline void validate_levels(const std::vector<LevelInfo>& levels) {
  if (levels.empty()) throw Error(Errc::corrupt_slide, "no levels");
  for (std::size_t k = 0; k < levels.size(); ++k) {
    const auto& l = levels[k];
    if (l.level_index != static_cast<int>(k))
      throw Error(Errc::corrupt_slide, "level indices must be 0..n-1 in order");
    if (l.width < 1 || l.height < 1)
      throw Error(Errc::corrupt_slide, "level " + std::to_string(k) + " is empty");
    if (k == 0) {
      if (l.downsample != 1) throw Error(Errc::corrupt_slide, "level 0 downsample must be 1");
      continue;
    }
    const auto& prev = levels[k - 1];
    if (l.downsample <= prev.downsample || l.downsample % prev.downsample != 0)
      throw Error(Errc::corrupt_slide, "downsample must grow by an integer step at level " +
                                           std::to_string(k));
    const auto step = l.downsample / prev.downsample;
    if (step < 2 || l.width != ceil_div(prev.width, step) ||
        l.height != ceil_div(prev.height, step))
      throw Error(Errc::corrupt_slide,
                  "level " + std::to_string(k) + " dimensions do not follow from level " +
                      std::to_string(k - 1));
  }
}

[[nodiscard]] inline nlohmann::json manifest_to_json(const SlideManifest& m) {
  nlohmann::json j;
  j["format_version"] = SlideManifest::kFormatVersion;
  j["slide_id"] = m.slide_id;
  j["mpp_level0"] = m.mpp_level0;
  j["tile_size"] = m.tile_size;
  j["label"] = m.label ? nlohmann::json(to_string(*m.label)) : nlohmann::json(nullptr);
  auto& levels = j["levels"] = nlohmann::json::array();
  for (const auto& l : m.levels)
    levels.push_back({{"level", l.level_index},
                      {"width", l.width},
                      {"height", l.height},
                      {"downsample", l.downsample}});
  return j;
}

[[nodiscard]] inline SlideManifest manifest_from_json(const nlohmann::json& j) {
  SlideManifest m;
  try {
    if (j.at("format_version").get<int>() != SlideManifest::kFormatVersion)
      throw Error(Errc::format, "unsupported format_version");
    m.slide_id = j.at("slide_id").get<std::string>();
    m.mpp_level0 = j.at("mpp_level0").get<double>();
    m.tile_size = j.at("tile_size").get<std::int64_t>();
    if (j.contains("label") && !j["label"].is_null())
      m.label = parse_slide_label(j["label"].get<std::string>());
    for (const auto& l : j.at("levels"))
      m.levels.push_back({l.at("level").get<int>(), l.at("width").get<std::int64_t>(),
                          l.at("height").get<std::int64_t>(),
                          l.at("downsample").get<std::int64_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format, std::string("malformed manifest: ") + e.what());
  }
  if (m.tile_size < 1 || !(m.mpp_level0 > 0))
    throw Error(Errc::corrupt_slide, "tile_size and mpp_level0 must be positive");
  validate_levels(m.levels);
  return m;
}

[[nodiscard]] inline std::string manifest_text(const SlideManifest& m) {
  return manifest_to_json(m).dump(2) + "\n";
}

[[nodiscard]] inline std::filesystem::path tile_path(const std::filesystem::path& root, int level,
                                                     std::int64_t row, std::int64_t col) {
  return root / ("level_" + std::to_string(level)) /
         ("tile_" + std::to_string(row) + "_" + std::to_string(col) + ".ppm");
}

/// Read-only handle on a slide directory. Immutable after construction, so
/// concurrent `read_region` calls from several threads are safe: every call
/// opens its own file streams and pixel data is never cached.
class PyramidSlide {
 public:
  PyramidSlide(std::filesystem::path root, SlideManifest manifest)
      : root_(std::move(root)), manifest_(std::move(manifest)) {}

  [[nodiscard]] const SlideManifest& manifest() const noexcept { return manifest_; }
  [[nodiscard]] const std::string& slide_id() const noexcept { return manifest_.slide_id; }
  [[nodiscard]] const std::filesystem::path& path() const noexcept { return root_; }
  [[nodiscard]] int level_count() const noexcept { return manifest_.level_count(); }
  [[nodiscard]] const LevelInfo& level(int k) const { return manifest_.level(k); }
  [[nodiscard]] std::int64_t width() const { return level(0).width; }
  [[nodiscard]] std::int64_t height() const { return level(0).height; }

  [[nodiscard]] RgbImage read_region(const RegionRequest& req) const {
    const auto& lv = level(req.level);
    if (req.width < 1 || req.height < 1 || req.x < 0 || req.y < 0 ||
        req.x + req.width > lv.width || req.y + req.height > lv.height)
      throw Error(Errc::bounds, "region (" + std::to_string(req.x) + "," + std::to_string(req.y) +
                                    ")+" + std::to_string(req.width) + "x" +
                                    std::to_string(req.height) + " outside level " +
                                    std::to_string(req.level));
    RgbImage out(req.width, req.height);
    const auto ts = manifest_.tile_size;
    for (auto tr = req.y / ts; tr <= (req.y + req.height - 1) / ts; ++tr) {
      for (auto tc = req.x / ts; tc <= (req.x + req.width - 1) / ts; ++tc) {
        const auto path = tile_path(root_, req.level, tr, tc);
        std::ifstream in(path, std::ios::binary);
        if (!in) throw Error(Errc::corrupt_slide, "missing tile " + path.string());
        const auto hdr = read_netpbm_header(in, path.string());
        const auto tx0 = tc * ts, ty0 = tr * ts;
        if (hdr.kind != '6' || hdr.width != std::min(ts, lv.width - tx0) ||
            hdr.height != std::min(ts, lv.height - ty0))
          throw Error(Errc::corrupt_slide, "tile geometry mismatch in " + path.string());
        const auto x0 = std::max(req.x, tx0), x1 = std::min(req.x + req.width, tx0 + hdr.width);
        const auto y0 = std::max(req.y, ty0), y1 = std::min(req.y + req.height, ty0 + hdr.height);
        for (auto y = y0; y < y1; ++y) {
          in.seekg(hdr.data_offset + ((y - ty0) * hdr.width + (x0 - tx0)) * 3);
          auto dst = out.row(y - req.y).subspan(static_cast<std::size_t>((x0 - req.x) * 3));
          in.read(reinterpret_cast<char*>(dst.data()), (x1 - x0) * 3);
          if (!in) throw Error(Errc::corrupt_slide, "truncated tile " + path.string());
        }
      }
    }
    return out;
  }

  [[nodiscard]] RgbImage read_level(int k) const {
    const auto& lv = level(k);
    return read_region({k, 0, 0, lv.width, lv.height});
  }

  /// Scales by the downsample ratio, truncating toward zero.
  [[nodiscard]] PixelPoint map_point(int from_level, int to_level, PixelPoint p) const {
    const auto from = level(from_level).downsample;
    const auto to = level(to_level).downsample;
    return {p.x * from / to, p.y * from / to};
  }

 private:
  std::filesystem::path root_;
  SlideManifest manifest_;
};

[[nodiscard]] inline PyramidSlide open_slide(const std::filesystem::path& path) {
  const auto mpath = path / "manifest.json";
  std::ifstream in(mpath);
  if (!in) throw Error(Errc::format, "no manifest.json in " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::format, "unparsable manifest " + mpath.string() + ": " + e.what());
  }
  return PyramidSlide(path, manifest_from_json(j));
}

/// Block mean over `factor`-sized blocks with round-half-up. Edge blocks
/// average only the pixels that exist.
[[nodiscard]] inline RgbImage block_mean_downsample(const RgbImage& src, std::int64_t factor) {
  if (factor == 1) return src;
  const auto w = ceil_div(src.width(), factor), h = ceil_div(src.height(), factor);
  RgbImage out(w, h);
  std::vector<std::uint64_t> sums(static_cast<std::size_t>(w * 3));
  std::vector<std::uint64_t> counts(static_cast<std::size_t>(w));
  for (std::int64_t by = 0; by < h; ++by) {
    std::fill(sums.begin(), sums.end(), 0);
    std::fill(counts.begin(), counts.end(), 0);
    const auto y1 = std::min(src.height(), (by + 1) * factor);
    for (auto y = by * factor; y < y1; ++y) {
      const auto row = src.row(y);
      for (std::int64_t x = 0; x < src.width(); ++x) {
        const auto bx = static_cast<std::size_t>(x / factor);
        sums[bx * 3 + 0] += row[static_cast<std::size_t>(x * 3 + 0)];
        sums[bx * 3 + 1] += row[static_cast<std::size_t>(x * 3 + 1)];
        sums[bx * 3 + 2] += row[static_cast<std::size_t>(x * 3 + 2)];
        ++counts[bx];
      }
    }
    auto orow = out.row(by);
    for (std::size_t bx = 0; bx < static_cast<std::size_t>(w); ++bx)
      for (std::size_t c = 0; c < 3; ++c)
        orow[bx * 3 + c] =
            static_cast<std::uint8_t>((2 * sums[bx * 3 + c] + counts[bx]) / (2 * counts[bx]));
  }
  return out;
}

/// Persists level 0 and every derived level, then the manifest. Lower levels
/// are block means of level 0 itself, never of an intermediate level.
inline SlideManifest write_slide(const RgbImage& level0, const SlideWriteParams& params,
                                 const std::filesystem::path& path) {
  if (level0.empty()) throw Error(Errc::shape, "level 0 is empty");
  if (params.tile_size < 1) throw Error(Errc::config, "tile_size must be positive");
  SlideManifest m;
  m.slide_id = params.slide_id;
  m.mpp_level0 = params.mpp_level0;
  m.tile_size = params.tile_size;
  m.label = params.label;
  m.levels.push_back({0, level0.width(), level0.height(), 1});
  for (auto step : params.downsample_steps) {
    if (step < 2) throw Error(Errc::config, "downsample steps must be >= 2");
    const auto& prev = m.levels.back();
    m.levels.push_back({prev.level_index + 1, ceil_div(prev.width, step),
                        ceil_div(prev.height, step), prev.downsample * step});
  }
  validate_levels(m.levels);

  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec || !std::filesystem::is_directory(path))
    throw Error(Errc::io, "cannot create slide directory " + path.string());
  std::filesystem::remove(path / "manifest.json", ec);

  for (const auto& lv : m.levels) {
    const auto img = block_mean_downsample(level0, lv.downsample);
    const auto dir = path / ("level_" + std::to_string(lv.level_index));
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(Errc::io, "cannot create " + dir.string());
    const auto ts = m.tile_size;
    for (std::int64_t tr = 0; tr * ts < lv.height; ++tr)
      for (std::int64_t tc = 0; tc * ts < lv.width; ++tc)
        write_netpbm(tile_path(path, lv.level_index, tr, tc),
                     crop(img, tc * ts, tr * ts, std::min(ts, lv.width - tc * ts),
                          std::min(ts, lv.height - tr * ts)));
  }
  std::ofstream out(path / "manifest.json", std::ios::trunc);
  if (!out) throw Error(Errc::io, "cannot write manifest in " + path.string());
  out << manifest_text(m);
  if (!out) throw Error(Errc::io, "short write of manifest in " + path.string());
  return m;
}

/// Generator form: `fn(x, y)` yields the level-0 pixel.
inline SlideManifest write_slide(std::int64_t width, std::int64_t height,
                                 const std::function<Rgb(std::int64_t, std::int64_t)>& fn,
                                 const SlideWriteParams& params,
                                 const std::filesystem::path& path) {
  RgbImage img(width, height);
  for (std::int64_t y = 0; y < height; ++y)
    for (std::int64_t x = 0; x < width; ++x) set_pixel(img, x, y, fn(x, y));
  return write_slide(img, params, path);
}

}  // namespace wsi
