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
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "wsi/annotation.hpp"
#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/geometry.hpp"
#include "wsi/heatmap.hpp"

namespace wsi {

// --- Slide-level ROC --------------------------------------------------------

struct ScoredLabel {
  double score = 0;
  int label = 0;  // 1 = tumor
};

struct RocPoint {
  double fpr = 0, tpr = 0;
  friend bool operator==(const RocPoint&, const RocPoint&) = default;
};

struct RocResult {
  /// From (0,0) to (1,1), one point per distinct score in descending order.
  std::vector<RocPoint> points;
  double auc = 0;
};

/// Threshold sweep with tied scores entering together; trapezoidal AUC,
/// which equals the Mann-Whitney statistic with ties counted one half.
[[nodiscard]] inline RocResult roc_auc(std::span<const ScoredLabel> data) {
  std::int64_t pos = 0, neg = 0;
  for (const auto& d : data) {
    if (d.label != 0 && d.label != 1) throw Error(Errc::data, "labels must be 0 or 1");
    (d.label ? pos : neg) += 1;
  }
  if (pos == 0 || neg == 0) throw Error(Errc::config, "ROC needs both classes");
  std::vector<ScoredLabel> sorted(data.begin(), data.end());
  std::sort(sorted.begin(), sorted.end(),
            [](const ScoredLabel& a, const ScoredLabel& b) { return a.score > b.score; });
  RocResult res;
  res.points.push_back({0, 0});
  std::int64_t tp = 0, fp = 0;
  // Accumulate the area in integer units of (1/neg) x (1/(2 pos)).
  std::int64_t area2 = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    std::int64_t dtp = 0, dfp = 0;
    const double s = sorted[i].score;
    for (; i < sorted.size() && sorted[i].score == s; ++i) (sorted[i].label ? dtp : dfp) += 1;
    area2 += dfp * (2 * tp + dtp);
    tp += dtp;
    fp += dfp;
    res.points.push_back({static_cast<double>(fp) / static_cast<double>(neg),
                          static_cast<double>(tp) / static_cast<double>(pos)});
  }
  res.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
  return res;
}

// --- Lesion detections ------------------------------------------------------

struct Detection {
  std::string slide_id;
  std::int64_t x = 0, y = 0;  // level-0 pixel
  double confidence = 0;
  friend bool operator==(const Detection&, const Detection&) = default;
};

/// One detection per connected component of cells with p > t_candidate,
/// placed at the center of the component's highest cell (ties: topmost,
/// then leftmost). Locations are clamped to the slide when its size is given.
[[nodiscard]] inline std::vector<Detection> extract_detections(const Heatmap& hm,
                                                               double t_candidate = 0.5,
                                                               std::int64_t slide_width = 0,
                                                               std::int64_t slide_height = 0) {
  std::vector<Detection> out;
  for (const auto& reg : connected_components(threshold_heatmap(hm, t_candidate))) {
    Cell peak = reg.cells.front();
    for (const auto& c : reg.cells)
      if (hm.at(c.row, c.col) > hm.at(peak.row, peak.col)) peak = c;
    Detection d{hm.slide_id, hm.origin_x + peak.col * hm.cell_size + hm.cell_size / 2,
                hm.origin_y + peak.row * hm.cell_size + hm.cell_size / 2,
                hm.at(peak.row, peak.col)};
    if (slide_width > 0) d.x = std::min(d.x, slide_width - 1);
    if (slide_height > 0) d.y = std::min(d.y, slide_height - 1);
    out.push_back(std::move(d));
  }
  return out;
}

// --- FROC -------------------------------------------------------------------

inline const std::vector<double> kDefaultFpRates = {0.25, 0.5, 1, 2, 4, 8};

/// Detections and lesion outlines of one slide. Slides without lesions
/// still count toward the per-image false-positive average.
struct FrocSlide {
  std::string slide_id;
  std::vector<Detection> detections;
  std::vector<Polygon> lesions;
};

struct FrocPoint {
  double avg_fp = 0;
  double sensitivity = 0;
  friend bool operator==(const FrocPoint&, const FrocPoint&) = default;
};

struct FrocResult {
  /// Starts at (0, 0); one point per distinct confidence, descending.
  std::vector<FrocPoint> curve;
  std::vector<double> fp_rates;
  std::vector<double> sensitivities;  // at each fp rate
  double score = 0;
};

/// Step-function lookup: highest sensitivity reached at or below `rate`.
[[nodiscard]] inline double sensitivity_at(std::span<const FrocPoint> curve, double rate) {
  double best = 0;
  for (const auto& p : curve)
    if (p.avg_fp <= rate) best = std::max(best, p.sensitivity);
  return best;
}

/// A detection inside any lesion hits every lesion containing it and is
/// never a false positive; repeated hits on one lesion count once.
[[nodiscard]] inline FrocResult froc(std::span<const FrocSlide> slides,
                                     std::span<const double> fp_rates = kDefaultFpRates) {
  if (slides.empty()) throw Error(Errc::config, "FROC needs at least one slide");
  struct Entry {
    double confidence;
    std::vector<std::size_t> lesions;  // global ids
  };
  std::vector<Entry> entries;
  std::size_t total_lesions = 0;
  for (const auto& s : slides) {
    for (const auto& d : s.detections) {
      if (d.slide_id != s.slide_id)
        throw Error(Errc::config, "detection of '" + d.slide_id + "' listed under '" + s.slide_id + "'");
      Entry e{d.confidence, {}};
      const Point2 p{static_cast<double>(d.x), static_cast<double>(d.y)};
      for (std::size_t k = 0; k < s.lesions.size(); ++k)
        if (point_in_polygon(s.lesions[k], p)) e.lesions.push_back(total_lesions + k);
      entries.push_back(std::move(e));
    }
    total_lesions += s.lesions.size();
  }
  if (total_lesions == 0) throw Error(Errc::config, "ground truth contains no lesions");
  std::stable_sort(entries.begin(), entries.end(),
                   [](const Entry& a, const Entry& b) { return a.confidence > b.confidence; });

  const double n_slides = static_cast<double>(slides.size());
  const double n_lesions = static_cast<double>(total_lesions);
  FrocResult res;
  res.curve.push_back({0, 0});
  std::vector<std::uint8_t> hit(total_lesions, 0);
  std::size_t hits = 0, fps = 0;
  for (std::size_t i = 0; i < entries.size();) {
    const double c = entries[i].confidence;
    for (; i < entries.size() && entries[i].confidence == c; ++i) {
      if (entries[i].lesions.empty()) ++fps;
      for (auto k : entries[i].lesions)
        if (!hit[k]) {
          hit[k] = 1;
          ++hits;
        }
    }
    res.curve.push_back({static_cast<double>(fps) / n_slides, static_cast<double>(hits) / n_lesions});
  }
  res.fp_rates.assign(fp_rates.begin(), fp_rates.end());
  double sum = 0;
  for (double r : fp_rates) {
    res.sensitivities.push_back(sensitivity_at(res.curve, r));
    sum += res.sensitivities.back();
  }
  res.score = fp_rates.empty() ? 0.0 : sum / static_cast<double>(fp_rates.size());
  return res;
}

// --- Files ------------------------------------------------------------------

inline void write_detections_csv(const std::filesystem::path& path,
                                 std::span<const Detection> dets) {
  auto out = csv::open_out(path);
  out << "slide_id,x,y,confidence\n";
  for (const auto& d : dets)
    out << d.slide_id << ',' << d.x << ',' << d.y << ',' << csv::fmt(d.confidence) << '\n';
}

[[nodiscard]] inline std::vector<Detection> read_detections_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.column("slide_id"), c_x = t.column("x"), c_y = t.column("y"),
             c_c = t.column("confidence");
  std::vector<Detection> out;
  for (const auto& r : t.rows)
    out.push_back({r[c_id], csv::to_int(r[c_x]), csv::to_int(r[c_y]), csv::to_double(r[c_c])});
  return out;
}

/// Builds FROC input from detections and a directory of `<slide_id>.json`
/// annotations; every annotation file is one image.
[[nodiscard]] inline std::vector<FrocSlide> froc_slides_from_dir(
    std::span<const Detection> dets, const std::filesystem::path& gt_dir) {
  std::map<std::string, FrocSlide> by_id;
  if (!std::filesystem::is_directory(gt_dir))
    throw Error(Errc::io, "ground-truth directory missing: " + gt_dir.string());
  for (const auto& e : std::filesystem::directory_iterator(gt_dir)) {
    if (e.path().extension() != ".json") continue;
    auto a = read_annotation(e.path());
    auto& s = by_id[a.slide_id];
    s.slide_id = a.slide_id;
    s.lesions = std::move(a.polygons);
  }
  for (const auto& d : dets) {
    const auto it = by_id.find(d.slide_id);
    if (it == by_id.end()) throw Error(Errc::config, "no ground truth for slide '" + d.slide_id + "'");
    it->second.detections.push_back(d);
  }
  std::vector<FrocSlide> out;
  for (auto& [id, s] : by_id) out.push_back(std::move(s));
  return out;
}

[[nodiscard]] inline std::string roc_table(const RocResult& r) {
  std::string s = "fpr,tpr\n";
  for (const auto& p : r.points) s += csv::fmt(p.fpr) + "," + csv::fmt(p.tpr) + "\n";
  return s;
}

[[nodiscard]] inline std::string froc_table(const FrocResult& r) {
  std::string s = "avg_fp,sensitivity\n";
  for (const auto& p : r.curve) s += csv::fmt(p.avg_fp) + "," + csv::fmt(p.sensitivity) + "\n";
  return s;
}

}  // namespace wsi
