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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <string>
#include <vector>

#include "wsi/annotation.hpp"
#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/geometry.hpp"
#include "wsi/parallel.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/raster.hpp"
#include "wsi/rng.hpp"
#include "wsi/roi.hpp"

namespace wsi {

struct ColorModel {
  Rgb mean;
  double jitter_std = 0;
};

template <typename T>
struct Range {
  T lo{}, hi{};
};

/// Synthetic cohort parameters. Lengths are level-0 pixels unless noted.
struct SynthConfig {
  std::int64_t slide_dim = 4096;
  int n_levels = 3;
  std::int64_t downsample_step = 4;
  std::int64_t tile_size = 512;
  double mpp_level0 = 1.20;
  ColorModel background{{242, 242, 244}, 2.0};
  ColorModel tissue{{226, 162, 198}, 8.0};
  ColorModel tumor{{122, 54, 142}, 8.0};
  /// Main tissue blob semi-axes as fractions of slide_dim.
  Range<double> tissue_axis_fraction{0.30, 0.40};
  /// Probability of a second, smaller tissue fragment.
  double fragment_probability = 0.5;
  Range<int> lesions_per_tumor_slide{1, 4};
  Range<double> lesion_radius{260, 400};
  /// Minimum edge-to-edge clearance between lesions.
  double lesion_gap = 512;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (slide_dim < 64 || n_levels < 1 || downsample_step < 2 || tile_size < 1)
      throw Error(Errc::config, "invalid slide geometry");
    if (lesions_per_tumor_slide.lo < 1 || lesions_per_tumor_slide.hi < lesions_per_tumor_slide.lo)
      throw Error(Errc::config, "tumor slides need at least one lesion");
    if (!(lesion_radius.lo > 0) || lesion_radius.hi < lesion_radius.lo)
      throw Error(Errc::config, "invalid lesion radius range");
    if (!(tissue_axis_fraction.lo > 0) || tissue_axis_fraction.hi < tissue_axis_fraction.lo ||
        tissue_axis_fraction.hi > 0.45)
      throw Error(Errc::config, "invalid tissue axis range");
    const double jitter = 3.0 * std::max(tissue.jitter_std, tumor.jitter_std);
    const int dr = std::abs(tissue.mean.r - tumor.mean.r), dg = std::abs(tissue.mean.g - tumor.mean.g),
              db = std::abs(tissue.mean.b - tumor.mean.b);
    if (std::max({dr, dg, db}) < jitter)
      throw Error(Errc::config, "tumor and tissue colors are not separable (need 3x jitter std)");
  }
};

struct Ellipse {
  double cx = 0, cy = 0, a = 1, b = 1, angle = 0;

  /// Squared normalized radius; <= 1 inside.
  [[nodiscard]] double norm2(double x, double y) const noexcept {
    const double c = std::cos(angle), s = std::sin(angle);
    const double dx = x - cx, dy = y - cy;
    const double u = (dx * c + dy * s) / a, v = (-dx * s + dy * c) / b;
    return u * u + v * v;
  }
  [[nodiscard]] Point2 boundary(double t) const noexcept {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = a * std::cos(t), v = b * std::sin(t);
    return {cx + u * c - v * s, cy + u * s + v * c};
  }
  [[nodiscard]] Polygon outline(int vertices = 64) const {
    Polygon p;
    for (int i = 0; i < vertices; ++i)
      p.push_back(boundary(2.0 * std::numbers::pi * i / vertices));
    return p;
  }
};

struct SynthSlide {
  SlideManifest manifest;
  Annotation annotation;
  std::vector<Ellipse> tissue_blobs;
  std::vector<Ellipse> lesions;
  /// Level-0 tissue ground truth (lesions included).
  BinaryGrid tissue_truth;
};

namespace detail {

// Approximately standard normal from a hash: Irwin-Hall with four uniforms.
[[nodiscard]] inline double hashed_normal(std::uint64_t seed, std::int64_t x, std::int64_t y,
                                          int channel) noexcept {
  double s = 0;
  for (int k = 0; k < 4; ++k)
    s += to_unit(hash_coords(seed, static_cast<std::uint64_t>(x), static_cast<std::uint64_t>(y),
                             static_cast<std::uint64_t>(channel * 4 + k)));
  return (s - 2.0) * std::sqrt(3.0);
}

[[nodiscard]] inline Rgb jittered(const ColorModel& m, std::uint64_t seed, std::int64_t x,
                                  std::int64_t y) noexcept {
  auto ch = [&](std::uint8_t mean, int c) {
    const double v = mean + m.jitter_std * hashed_normal(seed, x, y, c);
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
  };
  return {ch(m.mean.r, 0), ch(m.mean.g, 1), ch(m.mean.b, 2)};
}

[[nodiscard]] inline bool in_tissue(const std::vector<Ellipse>& blobs, double x, double y,
                                    double max_norm2 = 1.0) noexcept {
  for (const auto& e : blobs)
    if (e.norm2(x, y) <= max_norm2) return true;
  return false;
}

// Lesion ellipse inside the tissue union with a margin; checked on the
// boundary and on an interior lattice.
[[nodiscard]] inline bool lesion_fits(const std::vector<Ellipse>& blobs, const Ellipse& l) {
  constexpr double kMargin2 = 0.97 * 0.97;
  for (int i = 0; i < 128; ++i) {
    const auto p = l.boundary(2.0 * std::numbers::pi * i / 128);
    if (!in_tissue(blobs, p.x, p.y, kMargin2)) return false;
  }
  for (double f : {0.0, 0.33, 0.66})
    for (int i = 0; i < 16; ++i) {
      const auto p = Ellipse{l.cx, l.cy, l.a * f, l.b * f, l.angle}.boundary(2.0 * std::numbers::pi * i / 16);
      if (!in_tissue(blobs, p.x, p.y, kMargin2)) return false;
    }
  return true;
}

}  // namespace detail

/// Writes one synthetic slide to `dir`. Tissue is a union of random
/// ellipses; tumor slides additionally carry disjoint elliptical lesions
/// whose 64-gon outlines are the annotation and define the tumor pixels.
[[nodiscard]] inline SynthSlide generate_slide(const SynthConfig& cfg, SlideLabel label,
                                               const std::string& slide_id,
                                               const std::filesystem::path& dir, Rng& rng) {
  cfg.validate();
  const double W = static_cast<double>(cfg.slide_dim);
  SynthSlide out;
  bool placed = false;
  for (int layout = 0; layout < 20 && !placed; ++layout) {
    out.tissue_blobs.clear();
    out.lesions.clear();
    Ellipse main;
    main.cx = W * uniform_real(rng, 0.46, 0.54);
    main.cy = W * uniform_real(rng, 0.46, 0.54);
    main.a = W * uniform_real(rng, cfg.tissue_axis_fraction.lo, cfg.tissue_axis_fraction.hi);
    main.b = W * uniform_real(rng, cfg.tissue_axis_fraction.lo, cfg.tissue_axis_fraction.hi);
    main.angle = uniform_real(rng, 0, std::numbers::pi);
    out.tissue_blobs.push_back(main);
    if (uniform01(rng) < cfg.fragment_probability) {
      Ellipse frag;
      frag.a = W * uniform_real(rng, 0.06, 0.10);
      frag.b = W * uniform_real(rng, 0.06, 0.10);
      frag.cx = W * uniform_real(rng, 0.12, 0.88);
      frag.cy = W * uniform_real(rng, 0.12, 0.88);
      frag.angle = uniform_real(rng, 0, std::numbers::pi);
      out.tissue_blobs.push_back(frag);
    }
    if (label == SlideLabel::normal) {
      placed = true;
      break;
    }
    const auto want = uniform_int(rng, cfg.lesions_per_tumor_slide.lo, cfg.lesions_per_tumor_slide.hi);
    for (std::int64_t k = 0; k < want; ++k) {
      bool ok = false;
      for (int attempt = 0; attempt < 400 && !ok; ++attempt) {
        Ellipse l;
        l.a = uniform_real(rng, cfg.lesion_radius.lo, cfg.lesion_radius.hi);
        l.b = uniform_real(rng, cfg.lesion_radius.lo, cfg.lesion_radius.hi);
        l.angle = uniform_real(rng, 0, std::numbers::pi);
        l.cx = uniform_real(rng, main.cx - main.a - main.b, main.cx + main.a + main.b);
        l.cy = uniform_real(rng, main.cy - main.a - main.b, main.cy + main.a + main.b);
        if (!detail::lesion_fits(out.tissue_blobs, l)) continue;
        ok = true;
        for (const auto& o : out.lesions) {
          const double d = std::hypot(l.cx - o.cx, l.cy - o.cy);
          if (d < std::max(l.a, l.b) + std::max(o.a, o.b) + cfg.lesion_gap) {
            ok = false;
            break;
          }
        }
        if (ok) out.lesions.push_back(l);
      }
      if (!ok) break;
    }
    placed = static_cast<std::int64_t>(out.lesions.size()) == want;
  }
  if (!placed) throw Error(Errc::gen, "could not fit lesions into tissue for '" + slide_id + "'");

  out.annotation.slide_id = slide_id;
  for (const auto& l : out.lesions) out.annotation.polygons.push_back(l.outline());

  std::vector<Rect> boxes;
  for (const auto& p : out.annotation.polygons) boxes.push_back(bounding_box(p));

  const auto n = cfg.slide_dim;
  const std::uint64_t noise_seed = rng();
  RgbImage img(n, n);
  out.tissue_truth = BinaryGrid(n, n);
  for (std::int64_t y = 0; y < n; ++y) {
    for (std::int64_t x = 0; x < n; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      bool tumor = false;
      for (std::size_t k = 0; k < boxes.size() && !tumor; ++k)
        tumor = px >= boxes[k].x0 && px <= boxes[k].x1 && py >= boxes[k].y0 && py <= boxes[k].y1 &&
                point_in_polygon(out.annotation.polygons[k], {px, py});
      const bool tissue = tumor || detail::in_tissue(out.tissue_blobs, px, py);
      out.tissue_truth.at(x, y) = tissue ? 1 : 0;
      const auto& model = tumor ? cfg.tumor : (tissue ? cfg.tissue : cfg.background);
      set_pixel(img, x, y, detail::jittered(model, noise_seed, x, y));
    }
  }
  SlideWriteParams params;
  params.slide_id = slide_id;
  params.mpp_level0 = cfg.mpp_level0;
  params.tile_size = cfg.tile_size;
  params.downsample_steps.assign(static_cast<std::size_t>(cfg.n_levels - 1), cfg.downsample_step);
  params.label = label;
  out.manifest = write_slide(img, params, dir);
  return out;
}

/// Block-majority downsample of a binary raster (ties count as 1).
[[nodiscard]] inline BinaryGrid downsample_majority(const BinaryGrid& g, std::int64_t factor) {
  BinaryGrid out(ceil_div(g.width(), factor), ceil_div(g.height(), factor));
  for (std::int64_t by = 0; by < out.height(); ++by)
    for (std::int64_t bx = 0; bx < out.width(); ++bx) {
      std::int64_t ones = 0, total = 0;
      for (auto y = by * factor; y < std::min(g.height(), (by + 1) * factor); ++y)
        for (auto x = bx * factor; x < std::min(g.width(), (bx + 1) * factor); ++x) {
          ones += g.at(x, y);
          ++total;
        }
      out.at(bx, by) = 2 * ones >= total ? 1 : 0;
    }
  return out;
}

// --- Datasets ---------------------------------------------------------------

struct SplitCounts {
  int tumor = 0, normal = 0;
};

struct DatasetCounts {
  SplitCounts train, val, test;
};

/// Reference cohort proportions (train 204/276, val 74/86, test 69/91
/// tumor/normal) scaled to `total` slides by largest remainder, at least
/// one slide per cell.
[[nodiscard]] inline DatasetCounts scaled_reference_counts(int total) {
  constexpr std::array<int, 6> ref = {204, 276, 74, 86, 69, 91};
  constexpr int ref_total = 800;
  if (total < 6) throw Error(Errc::config, "need at least 6 slides");
  std::array<int, 6> out{};
  std::array<std::pair<double, int>, 6> rem{};
  int used = 0;
  for (int i = 0; i < 6; ++i) {
    const double q = static_cast<double>(ref[static_cast<std::size_t>(i)]) * total / ref_total;
    out[static_cast<std::size_t>(i)] = static_cast<int>(std::floor(q));
    rem[static_cast<std::size_t>(i)] = {q - std::floor(q), i};
    used += out[static_cast<std::size_t>(i)];
  }
  std::stable_sort(rem.begin(), rem.end(), [](auto a, auto b) { return a.first > b.first; });
  for (int k = 0; used < total; ++k, ++used) ++out[static_cast<std::size_t>(rem[static_cast<std::size_t>(k)].second)];
  for (auto& v : out) {
    if (v == 0) ++used;
    v = std::max(v, 1);
  }
  // Cells raised to one are paid for by the largest cells.
  for (; used > total; --used) --*std::max_element(out.begin(), out.end());
  return {{out[0], out[1]}, {out[2], out[3]}, {out[4], out[5]}};
}

struct DatasetEntry {
  std::string slide_id;
  std::string path;  // relative to the dataset manifest's directory
  SlideLabel label = SlideLabel::normal;
  std::string split;
};

struct Dataset {
  std::filesystem::path root;
  std::vector<DatasetEntry> entries;

  [[nodiscard]] std::filesystem::path slide_path(const DatasetEntry& e) const { return root / e.path; }
  [[nodiscard]] std::filesystem::path annotation_path(const DatasetEntry& e) const {
    return root / "annotations" / (e.slide_id + ".json");
  }
};

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  auto out = csv::open_out(path);
  out << "slide_id,path,label,split\n";
  for (const auto& e : ds.entries)
    out << e.slide_id << ',' << e.path << ',' << to_string(e.label) << ',' << e.split << '\n';
}

[[nodiscard]] inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.column("slide_id"), c_p = t.column("path"), c_l = t.column("label"),
             c_s = t.column("split");
  Dataset ds;
  ds.root = path.parent_path();
  for (const auto& r : t.rows) ds.entries.push_back({r[c_id], r[c_p], parse_slide_label(r[c_l]), r[c_s]});
  return ds;
}

/// Generates every slide of the cohort under `out_dir` (slides/,
/// annotations/, truth/) and writes `dataset.csv`. Slide i uses the
/// substream (rng_seed, i), so the worker count does not affect output.
inline Dataset generate_dataset(const SynthConfig& cfg, const DatasetCounts& counts,
                                const std::filesystem::path& out_dir, std::size_t workers = 1) {
  cfg.validate();
  for (const auto& c : {counts.train, counts.val, counts.test})
    if (c.tumor < 1 || c.normal < 1) throw Error(Errc::config, "every split needs >= 1 slide per class");
  Dataset ds;
  ds.root = out_dir;
  for (const auto& [name, c] : {std::pair{"train", counts.train}, std::pair{"val", counts.val},
                                std::pair{"test", counts.test}}) {
    for (int i = 0; i < c.tumor; ++i) {
      const auto id = std::string(name) + "_tumor_" + (i < 10 ? "0" : "") + std::to_string(i);
      ds.entries.push_back({id, "slides/" + id, SlideLabel::tumor, name});
    }
    for (int i = 0; i < c.normal; ++i) {
      const auto id = std::string(name) + "_normal_" + (i < 10 ? "0" : "") + std::to_string(i);
      ds.entries.push_back({id, "slides/" + id, SlideLabel::normal, name});
    }
  }
  std::filesystem::create_directories(out_dir / "annotations");
  std::filesystem::create_directories(out_dir / "truth");
  parallel_for(ds.entries.size(), workers, [&](std::size_t i) {
    const auto& e = ds.entries[i];
    Rng rng(derive_seed(cfg.rng_seed, i));
    const auto s = generate_slide(cfg, e.label, e.slide_id, ds.slide_path(e), rng);
    write_annotation(ds.annotation_path(e), s.annotation);
    const auto& lv = s.manifest.level(default_mask_level(s.manifest));
    write_netpbm(out_dir / "truth" / (e.slide_id + "_tissue.pgm"), [&] {
      auto g = downsample_majority(s.tissue_truth, lv.downsample);
      for (auto& v : g.data()) v = v ? 255 : 0;
      return g;
    }());
  });
  write_dataset_csv(out_dir / "dataset.csv", ds);
  return ds;
}

}  // namespace wsi
