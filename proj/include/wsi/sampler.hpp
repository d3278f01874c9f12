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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "wsi/annotation.hpp"
#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/rng.hpp"
#include "wsi/roi.hpp"

namespace wsi {

struct PatchRef {
  std::string slide_id;
  int level = 0;
  std::int64_t x = 0, y = 0;
  std::int64_t size = 256;
  std::optional<SlideLabel> label;
  friend bool operator==(const PatchRef&, const PatchRef&) = default;
};

struct SamplerConfig {
  std::int64_t patch_size = 256;
  std::int64_t crop_size = 224;
  std::int64_t stride = 256;
  double min_tissue_fraction = 0.5;
  std::int64_t tumor_per_slide = 1000;
  std::int64_t normal_per_tumor_slide = 500;
  std::int64_t normal_per_normal_slide = 500;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (patch_size < 1 || crop_size < 1 || crop_size > patch_size)
      throw Error(Errc::config, "need 0 < crop_size <= patch_size");
    if (stride < 1) throw Error(Errc::config, "stride must be positive");
    if (!(min_tissue_fraction >= 0.0 && min_tissue_fraction <= 1.0))
      throw Error(Errc::config, "min_tissue_fraction must lie in [0, 1]");
    if (tumor_per_slide < 0 || normal_per_tumor_slide < 0 || normal_per_normal_slide < 0)
      throw Error(Errc::config, "patch quotas must be non-negative");
  }
};

inline void check_mask_matches(const PyramidSlide& slide, const TissueMask& mask) {
  if (mask.slide_id != slide.slide_id() || mask.level0_width != slide.width() ||
      mask.level0_height != slide.height())
    throw Error(Errc::config, "tissue mask of '" + mask.slide_id + "' used with slide '" +
                                  slide.slide_id() + "'");
}

/// Grid-aligned level-0 patches whose tissue fraction reaches the
/// configured minimum, row-major.
[[nodiscard]] inline std::vector<PatchRef> grid_patches(const PyramidSlide& slide,
                                                        const TissueMask& mask,
                                                        const SamplerConfig& cfg) {
  cfg.validate();
  check_mask_matches(slide, mask);
  std::vector<PatchRef> out;
  if (count_nonzero(mask.grid) == 0) return out;
  const auto s = cfg.patch_size;
  for (std::int64_t y = 0; y + s <= slide.height(); y += cfg.stride)
    for (std::int64_t x = 0; x + s <= slide.width(); x += cfg.stride)
      if (mask_lookup(mask, x, y, s, s) >= cfg.min_tissue_fraction)
        out.push_back({slide.slide_id(), 0, x, y, s, std::nullopt});
  return out;
}

struct SampleResult {
  std::vector<PatchRef> patches;
  std::int64_t tumor_shortfall = 0;
  std::int64_t normal_shortfall = 0;
  [[nodiscard]] bool shortfall() const noexcept {
    return tumor_shortfall > 0 || normal_shortfall > 0;
  }
};

/// Patch label rule: tumor iff the center pixel is inside a tumor polygon,
/// normal iff the patch does not touch any polygon, otherwise none.
[[nodiscard]] inline std::optional<SlideLabel> label_patch(const Annotation& annotation,
                                                           std::int64_t x, std::int64_t y,
                                                           std::int64_t size) {
  const Point2 center{static_cast<double>(x + size / 2) + 0.5,
                      static_cast<double>(y + size / 2) + 0.5};
  if (annotation.contains(center)) return SlideLabel::tumor;
  const Rect r{static_cast<double>(x), static_cast<double>(y), static_cast<double>(x + size),
               static_cast<double>(y + size)};
  for (const auto& poly : annotation.polygons)
    if (polygon_intersects_rect(poly, r)) return std::nullopt;
  return SlideLabel::normal;
}

/// Uniformly draws tissue patch positions until both quotas are met or
/// 100x the total quota has been attempted. Tumor slides are those with a
/// tumor label in the manifest or any annotation polygon.
[[nodiscard]] inline SampleResult sample_training_patches(const PyramidSlide& slide,
                                                          const Annotation& annotation,
                                                          const TissueMask& mask,
                                                          const SamplerConfig& cfg, Rng& rng) {
  cfg.validate();
  check_mask_matches(slide, mask);
  const bool tumor_slide =
      slide.manifest().label == SlideLabel::tumor || !annotation.polygons.empty();
  if (tumor_slide && annotation.polygons.empty() && cfg.tumor_per_slide > 0)
    throw Error(Errc::config, "tumor quota requested but slide '" + slide.slide_id() +
                                  "' has no annotation");
  const auto s = cfg.patch_size;
  if (s > slide.width() || s > slide.height())
    throw Error(Errc::config, "patch larger than slide '" + slide.slide_id() + "'");

  const std::int64_t tumor_quota = tumor_slide ? cfg.tumor_per_slide : 0;
  const std::int64_t normal_quota =
      tumor_slide ? cfg.normal_per_tumor_slide : cfg.normal_per_normal_slide;
  const std::int64_t max_attempts = 100 * (tumor_quota + normal_quota);

  SampleResult res;
  std::int64_t tumor = 0, normal = 0;
  for (std::int64_t attempt = 0;
       attempt < max_attempts && (tumor < tumor_quota || normal < normal_quota); ++attempt) {
    const auto x = uniform_int(rng, 0, slide.width() - s);
    const auto y = uniform_int(rng, 0, slide.height() - s);
    if (mask_lookup(mask, x, y, s, s) < cfg.min_tissue_fraction) continue;
    const auto label = label_patch(annotation, x, y, s);
    if (!label) continue;
    if (*label == SlideLabel::tumor && tumor < tumor_quota) {
      ++tumor;
    } else if (*label == SlideLabel::normal && normal < normal_quota) {
      ++normal;
    } else {
      continue;
    }
    res.patches.push_back({slide.slide_id(), 0, x, y, s, label});
  }
  res.tumor_shortfall = tumor_quota - tumor;
  res.normal_shortfall = normal_quota - normal;
  return res;
}

// --- Augmentation -----------------------------------------------------------

struct AugmentParams {
  int quarter_turns = 0;  // clockwise, 0..3
  std::int64_t crop_x = 0, crop_y = 0;
  bool flip = false;      // left-right, applied after the crop
};

[[nodiscard]] inline AugmentParams draw_augment_params(Rng& rng, std::int64_t patch_size,
                                                       std::int64_t crop_size) {
  AugmentParams p;
  p.quarter_turns = static_cast<int>(uniform_below(rng, 4));
  p.crop_x = uniform_int(rng, 0, patch_size - crop_size);
  p.crop_y = uniform_int(rng, 0, patch_size - crop_size);
  p.flip = uniform_below(rng, 2) == 1;
  return p;
}

[[nodiscard]] inline RgbImage rotate_quarter_turns(const RgbImage& src, int turns) {
  turns = ((turns % 4) + 4) % 4;
  if (turns == 0) return src;
  const auto w = src.width(), h = src.height();
  RgbImage out(turns == 2 ? w : h, turns == 2 ? h : w);
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      std::int64_t nx = 0, ny = 0;
      switch (turns) {
        case 1: nx = h - 1 - y; ny = x; break;
        case 2: nx = w - 1 - x; ny = h - 1 - y; break;
        case 3: nx = y; ny = w - 1 - x; break;
      }
      set_pixel(out, nx, ny, pixel(src, x, y));
    }
  return out;
}

/// Right-angle rotation, then crop, then optional left-right flip.
[[nodiscard]] inline RgbImage augment(const RgbImage& patch, const AugmentParams& p,
                                      std::int64_t patch_size = 256,
                                      std::int64_t crop_size = 224) {
  if (patch.width() != patch_size || patch.height() != patch_size)
    throw Error(Errc::shape, "augment expects a " + std::to_string(patch_size) + "^2 patch, got " +
                                 std::to_string(patch.width()) + "x" +
                                 std::to_string(patch.height()));
  if (p.crop_x < 0 || p.crop_y < 0 || p.crop_x + crop_size > patch_size ||
      p.crop_y + crop_size > patch_size)
    throw Error(Errc::shape, "crop window outside patch");
  auto out = crop(rotate_quarter_turns(patch, p.quarter_turns), p.crop_x, p.crop_y, crop_size,
                  crop_size);
  if (p.flip) {
    for (std::int64_t y = 0; y < crop_size; ++y)
      for (std::int64_t x = 0; x < crop_size / 2; ++x) {
        const auto a = pixel(out, x, y);
        set_pixel(out, x, y, pixel(out, crop_size - 1 - x, y));
        set_pixel(out, crop_size - 1 - x, y, a);
      }
  }
  return out;
}

[[nodiscard]] inline RgbImage augment(const RgbImage& patch, Rng& rng,
                                      std::int64_t patch_size = 256,
                                      std::int64_t crop_size = 224) {
  return augment(patch, draw_augment_params(rng, patch_size, crop_size), patch_size, crop_size);
}

[[nodiscard]] inline RgbImage read_patch(const PyramidSlide& slide, const PatchRef& p) {
  return slide.read_region({p.level, p.x, p.y, p.size, p.size});
}

// --- Patch list CSV: slide_id,level,x,y,size,label ---------------------------

inline void write_patches_csv(const std::filesystem::path& path,
                              const std::vector<PatchRef>& patches) {
  auto out = csv::open_out(path);
  out << "slide_id,level,x,y,size,label\n";
  for (const auto& p : patches)
    out << p.slide_id << ',' << p.level << ',' << p.x << ',' << p.y << ',' << p.size << ','
        << (p.label ? to_string(*p.label) : "") << '\n';
}

[[nodiscard]] inline std::vector<PatchRef> read_patches_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.column("slide_id"), c_lv = t.column("level"), c_x = t.column("x"),
             c_y = t.column("y"), c_s = t.column("size");
  std::optional<std::size_t> c_label;
  for (std::size_t i = 0; i < t.header.size(); ++i)
    if (t.header[i] == "label") c_label = i;
  std::vector<PatchRef> out;
  for (const auto& r : t.rows) {
    PatchRef p{r[c_id], static_cast<int>(csv::to_int(r[c_lv])), csv::to_int(r[c_x]),
               csv::to_int(r[c_y]), csv::to_int(r[c_s]), std::nullopt};
    if (c_label && !r[*c_label].empty()) p.label = parse_slide_label(r[*c_label]);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace wsi
