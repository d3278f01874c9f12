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
#include "wsi/features.hpp"
#include "wsi/rng.hpp"

namespace {

using namespace wsi;

Heatmap block_heatmap() {
  Heatmap hm("b", 10, 10, 256);
  std::fill(hm.values.begin(), hm.values.end(), 0.0);
  for (int r = 3; r < 6; ++r)
    for (int c = 4; c < 7; ++c) hm.at(r, c) = 1.0;
  return hm;
}

Heatmap random_heatmap(Rng& rng, std::int64_t side = 32) {
  Heatmap hm("r", side, side, 256);
  const int style = static_cast<int>(uniform_below(rng, 3));
  for (std::int64_t r = 0; r < side; ++r)
    for (std::int64_t c = 0; c < side; ++c) {
      double v = uniform01(rng);
      if (style == 1) v = v * v * v;  // mostly low
      if (style == 2) v = std::sin(r * 0.4) * std::cos(c * 0.3) > 0.3 ? 0.5 + 0.5 * v : 0.3 * v;
      hm.at(r, c) = uniform01(rng) < 0.1 ? -1.0 : v;
    }
  if (hm.scored_count() == 0) hm.at(0, 0) = 0.5;
  return hm;
}

TEST(Features, Names) {
  const auto n = feature_names();
  ASSERT_EQ(n.size(), 28u);
  EXPECT_EQ(n[0], "region_count_t50");
  EXPECT_EQ(n[14 + 4], "mean_region_area_t90");
  EXPECT_EQ(top5_names(), (std::vector<std::string>{"mean_region_area_t90", "largest_major_axis_t50",
                                                    "largest_extent_t50", "largest_eccentricity_t90",
                                                    "tumor_tissue_ratio_t90"}));
}

TEST(Features, AllZeroHeatmap) {
  Heatmap hm("z", 8, 8, 256);
  std::fill(hm.values.begin(), hm.values.end(), 0.0);
  const auto fv = extract_features(hm);
  for (double v : fv.values) EXPECT_EQ(v, 0.0);
  for (double v : top5(fv)) EXPECT_EQ(v, 0.0);
}

TEST(Features, SingleBlock) {
  const auto fv = extract_features(block_heatmap());
  for (std::size_t k = 0; k < kFeatureBlock; ++k) EXPECT_EQ(fv.values[k], fv.values[k + kFeatureBlock]) << k;
  EXPECT_EQ(fv.values[kRegionCount], 1);
  EXPECT_EQ(fv.values[kTumorArea], 9);
  EXPECT_NEAR(fv.values[kTumorTissueRatio], 0.09, 1e-15);
  EXPECT_EQ(fv.values[kLargestExtent], 1.0);
  EXPECT_NEAR(fv.values[kLargestEccentricity], 0.0, 1e-12);
  EXPECT_EQ(fv.values[kLargestSolidity], 1.0);
  EXPECT_EQ(fv.values[kLargestPerimeter], 12);
  EXPECT_EQ(fv.values[kMaxP], 1.0);
  EXPECT_EQ(fv.values[kMeanPTumor], 1.0);
  // 3x3 square: variance (3^2 - 1)/12 + 1/12 = 0.75 on both axes.
  const double axis = 4 * std::sqrt(0.75);
  const auto t5 = top5(fv);
  EXPECT_EQ(t5[0], 9.0);
  EXPECT_NEAR(t5[1], axis, 1e-12);
  EXPECT_EQ(t5[2], 1.0);
  EXPECT_NEAR(t5[3], 0.0, 1e-12);
  EXPECT_NEAR(t5[4], 0.09, 1e-15);
}

TEST(Features, MatchIndependentRecomputation) {
  Rng rng(2024);
  for (int trial = 0; trial < 60; ++trial) {
    const auto hm = random_heatmap(rng);
    const auto fv = extract_features(hm);
    const auto ref = oracle::features(hm, 0.5, 0.9);
    for (std::size_t k = 0; k < kFeatureDim; ++k)
      EXPECT_NEAR(fv.values[k], ref[k], 1e-9) << "trial " << trial << " slot " << k;
    EXPECT_LE(fv.values[kFeatureBlock + kTumorArea], fv.values[kTumorArea]);
  }
}

TEST(Features, TissueDenominator) {
  const auto hm = block_heatmap();
  EXPECT_NEAR(extract_features(hm, 200).values[kTumorTissueRatio], 9.0 / 200, 1e-15);
  EXPECT_THROW((void)extract_features(hm, 50), Error);
}

TEST(Features, EmptyHeatmap) {
  try {
    (void)extract_features(Heatmap("e", 4, 4, 256));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::empty_heatmap);
  }
}

TEST(Features, Top5IsProjection) {
  Rng rng(5);
  const auto a = extract_features(random_heatmap(rng));
  auto b = a;
  b.values[kRegionCount] += 1;  // not a top-5 slot
  EXPECT_EQ(top5(a), top5(b));
  b.values[kFeatureBlock + kMeanRegionArea] += 1;
  EXPECT_NE(top5(a), top5(b));
  b = a;
  b.schema_version = 2;
  try {
    (void)top5(b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::schema);
  }
}

TEST(Features, InvalidThresholds) {
  FeatureConfig c;
  c.t_low = 0.9;
  c.t_high = 0.5;
  EXPECT_THROW((void)extract_features(block_heatmap(), c), Error);
}

TEST(Features, CsvRoundTrip) {
  oracle::TempDir dir("feat");
  Rng rng(9);
  std::vector<FeatureVector> rows;
  for (int i = 0; i < 3; ++i) {
    auto fv = extract_features(random_heatmap(rng));
    fv.slide_id = "s" + std::to_string(i);
    rows.push_back(fv);
  }
  write_features_csv(dir.path / "f.csv", rows);
  write_features_csv(dir.path / "t.csv", rows, true);
  const auto all = read_features_csv(dir.path / "f.csv");
  ASSERT_EQ(all.rows.size(), 3u);
  EXPECT_EQ(all.names, feature_names());
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(all.slide_ids[i], rows[i].slide_id);
    for (std::size_t k = 0; k < kFeatureDim; ++k) EXPECT_EQ(all.rows[i][k], rows[i].values[k]);
  }
  const auto t5 = read_features_csv(dir.path / "t.csv");
  EXPECT_EQ(t5.names, top5_names());
  for (std::size_t i = 0; i < 3; ++i) {
    const auto ref = top5(rows[i]);
    EXPECT_EQ(t5.rows[i], std::vector<double>(ref.begin(), ref.end()));
  }
}

}  // namespace
