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
#include <cstddef>
#include <filesystem>
#include <string>
#include <vector>

#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/heatmap.hpp"

namespace wsi {

// Slide descriptor schema, version 1: a 14-slot block per probability
// threshold, t_low block first (slots 0-13), t_high block second (14-27).
inline constexpr int kFeatureSchemaVersion = 1;
inline constexpr std::size_t kFeatureBlock = 14;
inline constexpr std::size_t kFeatureDim = 2 * kFeatureBlock;

enum BlockSlot : std::size_t {
  kRegionCount = 0,
  kTumorArea,
  kTumorTissueRatio,
  kLargestArea,
  kMeanRegionArea,
  kLargestMajorAxis,
  kLargestEccentricity,
  kLargestExtent,
  kLargestSolidity,
  kLargestPerimeter,
  kMeanPTumor,
  kMaxP,
  kStdP,
  kLargestMeanP,
};

inline constexpr std::array<const char*, kFeatureBlock> kBlockSlotNames = {
    "region_count",      "tumor_area",         "tumor_tissue_ratio", "largest_area",
    "mean_region_area",  "largest_major_axis", "largest_eccentricity", "largest_extent",
    "largest_solidity",  "largest_perimeter",  "mean_p_tumor",       "max_p",
    "std_p",             "largest_mean_p"};

struct FeatureConfig {
  double t_low = 0.5;
  double t_high = 0.9;
  /// The five highest-ranked descriptors: mean region area @t_high, major
  /// axis of the largest region @t_low, its extent @t_low, eccentricity of
  /// the largest region @t_high, tumor/tissue ratio @t_high.
  std::array<std::size_t, 5> top5_indices = {
      kFeatureBlock + kMeanRegionArea, kLargestMajorAxis, kLargestExtent,
      kFeatureBlock + kLargestEccentricity, kFeatureBlock + kTumorTissueRatio};

  void validate() const {
    if (!(0.0 <= t_low && t_low < t_high && t_high <= 1.0))
      throw Error(Errc::config, "need 0 <= t_low < t_high <= 1");
    for (auto i : top5_indices)
      if (i >= kFeatureDim) throw Error(Errc::config, "top5 index out of range");
  }
};

[[nodiscard]] inline std::string threshold_suffix(double t) {
  return "_t" + std::to_string(static_cast<int>(std::lround(t * 100)));
}

[[nodiscard]] inline std::vector<std::string> feature_names(const FeatureConfig& cfg = {}) {
  std::vector<std::string> names;
  for (double t : {cfg.t_low, cfg.t_high})
    for (const char* n : kBlockSlotNames) names.push_back(n + threshold_suffix(t));
  return names;
}

struct FeatureVector {
  std::string slide_id;
  std::array<double, kFeatureDim> values{};
  int schema_version = kFeatureSchemaVersion;
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

namespace detail {

inline void fill_block(const Heatmap& hm, double t, double tissue_cells, double max_p,
                       double std_p, std::span<double> out) {
  const auto regions = heatmap_regions(hm, t);
  std::fill(out.begin(), out.end(), 0.0);
  double tumor_sum = 0;
  std::int64_t tumor_cells = 0;
  for (std::int64_t r = 0; r < hm.rows; ++r)
    for (std::int64_t c = 0; c < hm.cols; ++c)
      if (hm.scored(r, c) && hm.at(r, c) > t) {
        ++tumor_cells;
        tumor_sum += hm.at(r, c);
      }
  out[kRegionCount] = static_cast<double>(regions.size());
  out[kTumorArea] = static_cast<double>(tumor_cells);
  out[kTumorTissueRatio] = static_cast<double>(tumor_cells) / tissue_cells;
  out[kMaxP] = max_p;
  out[kStdP] = std_p;
  if (regions.empty()) return;
  const auto& big = regions.front();
  out[kLargestArea] = static_cast<double>(big.area);
  out[kMeanRegionArea] = static_cast<double>(tumor_cells) / static_cast<double>(regions.size());
  out[kLargestMajorAxis] = big.major_axis_length;
  out[kLargestEccentricity] = big.eccentricity;
  out[kLargestExtent] = big.extent;
  out[kLargestSolidity] = big.solidity;
  out[kLargestPerimeter] = static_cast<double>(big.perimeter);
  out[kMeanPTumor] = tumor_sum / static_cast<double>(tumor_cells);
  out[kLargestMeanP] = big.mean_p;
}

}  // namespace detail

/// Reduces a heatmap to the 28-slot descriptor. `tissue_cells` is the
/// tissue-area denominator and must be at least the scored-cell count.
[[nodiscard]] inline FeatureVector extract_features(const Heatmap& hm, std::size_t tissue_cells,
                                                    const FeatureConfig& cfg = {}) {
  cfg.validate();
  const auto scored = hm.scored_count();
  if (scored == 0) throw Error(Errc::empty_heatmap, "heatmap of '" + hm.slide_id + "' has no scores");
  if (tissue_cells < scored)
    throw Error(Errc::config, "tissue cell count below scored cell count");
  double sum = 0, max_p = 0;
  for (double v : hm.values)
    if (v >= 0) {
      sum += v;
      max_p = std::max(max_p, v);
    }
  const double mean = sum / static_cast<double>(scored);
  double ss = 0;
  for (double v : hm.values)
    if (v >= 0) ss += (v - mean) * (v - mean);
  const double std_p = std::sqrt(ss / static_cast<double>(scored));

  FeatureVector fv;
  fv.slide_id = hm.slide_id;
  const double tissue = static_cast<double>(tissue_cells);
  detail::fill_block(hm, cfg.t_low, tissue, max_p, std_p,
                     std::span<double>(fv.values).subspan(0, kFeatureBlock));
  detail::fill_block(hm, cfg.t_high, tissue, max_p, std_p,
                     std::span<double>(fv.values).subspan(kFeatureBlock, kFeatureBlock));
  return fv;
}

/// Tissue area defaults to the scored cells.
[[nodiscard]] inline FeatureVector extract_features(const Heatmap& hm,
                                                    const FeatureConfig& cfg = {}) {
  return extract_features(hm, hm.scored_count(), cfg);
}

[[nodiscard]] inline std::array<double, 5> top5(const FeatureVector& fv,
                                                const FeatureConfig& cfg = {}) {
  if (fv.schema_version != kFeatureSchemaVersion)
    throw Error(Errc::schema, "feature schema version " + std::to_string(fv.schema_version) +
                                  " != " + std::to_string(kFeatureSchemaVersion));
  std::array<double, 5> out{};
  for (std::size_t i = 0; i < 5; ++i) out[i] = fv.values[cfg.top5_indices[i]];
  return out;
}

[[nodiscard]] inline std::vector<std::string> top5_names(const FeatureConfig& cfg = {}) {
  const auto all = feature_names(cfg);
  std::vector<std::string> out;
  for (auto i : cfg.top5_indices) out.push_back(all[i]);
  return out;
}

// --- Features CSV -----------------------------------------------------------
// Header: slide_id followed by slot names. A top-5 file carries only the
// five selected columns.

inline void write_features_csv(const std::filesystem::path& path,
                               std::span<const FeatureVector> rows, bool only_top5 = false,
                               const FeatureConfig& cfg = {}) {
  auto out = csv::open_out(path);
  const auto names = only_top5 ? top5_names(cfg) : feature_names(cfg);
  out << "slide_id";
  for (const auto& n : names) out << ',' << n;
  out << '\n';
  for (const auto& fv : rows) {
    out << fv.slide_id;
    if (only_top5)
      for (double v : top5(fv, cfg)) out << ',' << csv::fmt(v);
    else
      for (double v : fv.values) out << ',' << csv::fmt(v);
    out << '\n';
  }
}

/// Generic numeric table keyed by slide id (full or top-5 feature files).
struct FeatureTable {
  std::vector<std::string> names;
  std::vector<std::string> slide_ids;
  std::vector<std::vector<double>> rows;
};

[[nodiscard]] inline FeatureTable read_features_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  if (t.header.empty() || t.header.front() != "slide_id")
    throw Error(Errc::schema, "features file must start with slide_id: " + path.string());
  FeatureTable ft;
  ft.names.assign(t.header.begin() + 1, t.header.end());
  for (const auto& r : t.rows) {
    ft.slide_ids.push_back(r[0]);
    std::vector<double> v;
    for (std::size_t i = 1; i < r.size(); ++i) v.push_back(csv::to_double(r[i]));
    ft.rows.push_back(std::move(v));
  }
  return ft;
}

}  // namespace wsi
