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

#include <gtest/gtest.h>

#include "oracles.hpp"
#include "wsi/annotation.hpp"
#include "wsi/evaluation.hpp"
#include "wsi/rng.hpp"

namespace {

using namespace wsi;

Polygon square(double x0, double y0, double side) {
  return {{x0, y0}, {x0 + side, y0}, {x0 + side, y0 + side}, {x0, y0 + side}};
}

TEST(Roc, PerfectSeparation) {
  const std::vector<ScoredLabel> d{{0.9, 1}, {0.8, 1}, {0.3, 0}, {0.1, 0}};
  const auto r = roc_auc(d);
  EXPECT_EQ(r.auc, 1.0);
  EXPECT_EQ(r.points.front(), (RocPoint{0, 0}));
  EXPECT_EQ(r.points.back(), (RocPoint{1, 1}));
}

TEST(Roc, AllTiedIsHalf) {
  Rng rng(1);
  std::vector<ScoredLabel> d;
  for (int i = 0; i < 50; ++i) d.push_back({0.4, static_cast<int>(uniform_below(rng, 2))});
  d.push_back({0.4, 0});
  d.push_back({0.4, 1});
  EXPECT_EQ(roc_auc(d).auc, 0.5);
}

TEST(Roc, MatchesPairCounting) {
  Rng rng(17);
  for (int trial = 0; trial < 200; ++trial) {
    const auto n = uniform_int(rng, 2, 200);
    const auto levels = uniform_int(rng, 2, 30);
    std::vector<ScoredLabel> d;
    for (std::int64_t i = 0; i < n; ++i)
      d.push_back({static_cast<double>(uniform_below(rng, static_cast<std::uint64_t>(levels))) / levels,
                   static_cast<int>(uniform_below(rng, 2))});
    d[0].label = 0;
    d[1].label = 1;
    EXPECT_NEAR(roc_auc(d).auc, oracle::pair_auc(d), 1e-12);
  }
}

TEST(Roc, SingleClassRejected) {
  const std::vector<ScoredLabel> d{{0.2, 1}, {0.3, 1}};
  try {
    (void)roc_auc(d);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config);
  }
}

TEST(Detections, SingleBlobAtPeak) {
  Heatmap hm("s", 6, 6, 256);
  std::fill(hm.values.begin(), hm.values.end(), 0.1);
  hm.at(2, 2) = 0.7;
  hm.at(2, 3) = 0.95;
  hm.at(3, 3) = 0.8;
  const auto d = extract_detections(hm);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].x, 3 * 256 + 128);
  EXPECT_EQ(d[0].y, 2 * 256 + 128);
  EXPECT_EQ(d[0].confidence, 0.95);
}

TEST(Detections, NothingAboveThreshold) {
  Heatmap hm("s", 4, 4, 256);
  std::fill(hm.values.begin(), hm.values.end(), 0.5);
  EXPECT_TRUE(extract_detections(hm, 0.5).empty());
}

TEST(Detections, PlantedBlobs) {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Heatmap hm("s", 40, 40, 256);
    for (auto& v : hm.values) v = 0.3 * uniform01(rng);
    const int k = static_cast<int>(uniform_int(rng, 1, 6));
    std::set<std::pair<std::int64_t, std::int64_t>> peaks;
    for (int b = 0; b < k; ++b) {
      // Blobs on a coarse lattice so they never touch.
      const auto r = 3 + 8 * (b / 4), c = 3 + 9 * (b % 4);
      for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) hm.at(r + dr, c + dc) = 0.6 + 0.1 * uniform01(rng);
      hm.at(r, c) = 0.99;
      peaks.insert({c * 256 + 128, r * 256 + 128});
    }
    const auto d = extract_detections(hm, 0.5, 40 * 256, 40 * 256);
    ASSERT_EQ(d.size(), static_cast<std::size_t>(k));
    for (const auto& det : d) EXPECT_TRUE(peaks.count({det.x, det.y}));
  }
}

TEST(Detections, ClampedToSlide) {
  Heatmap hm("s", 1, 1, 256);
  hm.values = {0.9};
  const auto d = extract_detections(hm, 0.5, 100, 90);
  ASSERT_EQ(d.size(), 1u);
  EXPECT_EQ(d[0].x, 99);
  EXPECT_EQ(d[0].y, 89);
}

TEST(Froc, PerfectDetections) {
  std::vector<FrocSlide> slides(2);
  slides[0].slide_id = "a";
  slides[0].lesions = {square(0, 0, 100), square(500, 500, 100)};
  slides[0].detections = {{"a", 50, 50, 1.0}, {"a", 550, 550, 1.0}};
  slides[1].slide_id = "b";
  slides[1].lesions = {square(0, 0, 10)};
  slides[1].detections = {{"b", 5, 5, 1.0}};
  const auto r = froc(slides);
  EXPECT_EQ(r.score, 1.0);
  EXPECT_EQ(sensitivity_at(r.curve, 0.0), 1.0);
}

TEST(Froc, NoDetections) {
  std::vector<FrocSlide> slides(1);
  slides[0].slide_id = "a";
  slides[0].lesions = {square(0, 0, 100)};
  EXPECT_EQ(froc(slides).score, 0.0);
}

TEST(Froc, NoLesions) {
  std::vector<FrocSlide> slides(1);
  slides[0].slide_id = "a";
  slides[0].detections = {{"a", 1, 1, 0.9}};
  EXPECT_THROW((void)froc(slides), Error);
}

TEST(Froc, FalsePositivesCostSensitivity) {
  std::vector<FrocSlide> slides(2);
  slides[0].slide_id = "a";
  slides[0].lesions = {square(0, 0, 100)};
  // FP at 0.9 first, then the hit at 0.8: 1 FP over 2 slides = 0.5 before any hit.
  slides[0].detections = {{"a", 500, 500, 0.9}, {"a", 50, 50, 0.8}};
  slides[1].slide_id = "b";
  const std::vector<double> rates{0.25, 0.5, 1.0};
  const auto r = froc(slides, rates);
  EXPECT_EQ(r.sensitivities, (std::vector<double>{0.0, 1.0, 1.0}));
  EXPECT_NEAR(r.score, 2.0 / 3.0, 1e-15);
}

std::vector<FrocSlide> random_instance(Rng& rng) {
  std::vector<FrocSlide> slides(static_cast<std::size_t>(uniform_int(rng, 1, 5)));
  for (std::size_t s = 0; s < slides.size(); ++s) {
    auto& sl = slides[s];
    sl.slide_id = "s" + std::to_string(s);
    const auto nl = uniform_int(rng, 0, 4);
    for (std::int64_t k = 0; k < nl; ++k)
      sl.lesions.push_back(square(static_cast<double>(uniform_int(rng, 0, 60)), static_cast<double>(uniform_int(rng, 0, 60)),
                                  static_cast<double>(uniform_int(rng, 10, 40))));
    const auto nd = uniform_int(rng, 0, 10);
    for (std::int64_t k = 0; k < nd; ++k)
      sl.detections.push_back({sl.slide_id, uniform_int(rng, 0, 100), uniform_int(rng, 0, 100),
                               static_cast<double>(uniform_int(rng, 1, 6)) / 6});
  }
  if (std::all_of(slides.begin(), slides.end(), [](const auto& s) { return s.lesions.empty(); }))
    slides[0].lesions.push_back(square(20, 20, 30));
  return slides;
}

TEST(Froc, MatchesExhaustiveReference) {
  Rng rng(99);
  for (int trial = 0; trial < 200; ++trial) {
    const auto slides = random_instance(rng);
    const auto r = froc(slides);
    const auto ref = oracle::froc(slides, kDefaultFpRates);
    EXPECT_EQ(r.sensitivities, ref.sensitivities) << "trial " << trial;
    EXPECT_EQ(r.score, ref.score);
    for (std::size_t i = 1; i < r.sensitivities.size(); ++i) EXPECT_GE(r.sensitivities[i], r.sensitivities[i - 1]);
  }
}

TEST(Froc, MislabeledDetection) {
  std::vector<FrocSlide> slides(1);
  slides[0].slide_id = "a";
  slides[0].lesions = {square(0, 0, 10)};
  slides[0].detections = {{"b", 1, 1, 0.9}};
  EXPECT_THROW((void)froc(slides), Error);
}

TEST(EvalFiles, DetectionsAndGroundTruthDir) {
  oracle::TempDir dir("eval");
  const std::vector<Detection> dets{{"a", 5, 5, 0.9}, {"b", 500, 5, 0.4}, {"a", 300, 300, 0.2}};
  write_detections_csv(dir.path / "d.csv", dets);
  EXPECT_EQ(read_detections_csv(dir.path / "d.csv"), dets);
  write_annotation(dir.path / "gt" / "a.json", {"a", {square(0, 0, 10)}});
  write_annotation(dir.path / "gt" / "b.json", {"b", {}});
  const auto slides = froc_slides_from_dir(dets, dir.path / "gt");
  ASSERT_EQ(slides.size(), 2u);
  const auto r = froc(slides);
  EXPECT_EQ(r.score, 1.0);
  write_detections_csv(dir.path / "x.csv", {{{"c", 1, 1, 0.5}}});
  EXPECT_THROW((void)froc_slides_from_dir(read_detections_csv(dir.path / "x.csv"), dir.path / "gt"), Error);
}

}  // namespace
