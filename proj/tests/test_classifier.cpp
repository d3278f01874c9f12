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

#include <fstream>

#include "oracles.hpp"
#include "wsi/classifier.hpp"
#include "wsi/evaluation.hpp"
#include "wsi/synthgen.hpp"

namespace {

using namespace wsi;

RgbImage noisy_patch(Rgb mean, double jitter, std::int64_t side, Rng& rng) {
  RgbImage img(side, side);
  std::normal_distribution<double> noise(0.0, jitter);
  for (std::int64_t y = 0; y < side; ++y)
    for (std::int64_t x = 0; x < side; ++x) {
      auto ch = [&](int m) { return static_cast<std::uint8_t>(std::clamp(m + noise(rng), 0.0, 255.0)); };
      set_pixel(img, x, y, {ch(mean.r), ch(mean.g), ch(mean.b)});
    }
  return img;
}

TEST(ColorFeatures, UniformGray) {
  const auto f = extract_color_features(RgbImage(16, 16, 128));
  for (std::size_t c = 0; c < 3; ++c) {
    EXPECT_NEAR(f[c * 10], 128.0 / 255.0, 1e-12);
    EXPECT_NEAR(f[c * 10 + 1], 0.0, 1e-12);
    EXPECT_DOUBLE_EQ(f[c * 10 + 2 + 4], 1.0);
  }
  EXPECT_DOUBLE_EQ(f[30], 0.0);
  EXPECT_DOUBLE_EQ(f[31], 0.0);
  EXPECT_DOUBLE_EQ(f[32], 1.0);
}

TEST(ColorFeatures, HistogramsNormalized) {
  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    RgbImage img(uniform_int(rng, 1, 40), uniform_int(rng, 1, 40));
    for (auto& v : img.data()) v = static_cast<std::uint8_t>(uniform_below(rng, 256));
    const auto f = extract_color_features(img);
    for (std::size_t c = 0; c < 4; ++c) {
      double s = 0;
      for (std::size_t b = 0; b < 8; ++b) s += f[c * 10 + 2 + b];
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(ColorFeatures, ToyRasterByHand) {
  Rng rng(77);
  RgbImage img(4, 4);
  for (auto& v : img.data()) v = static_cast<std::uint8_t>(uniform_below(rng, 256));
  std::array<std::vector<double>, 4> ch;
  for (std::int64_t y = 0; y < 4; ++y)
    for (std::int64_t x = 0; x < 4; ++x) {
      const double r = img.at(x, y, 0), g = img.at(x, y, 1), b = img.at(x, y, 2);
      const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
      ch[0].push_back(r / 255);
      ch[1].push_back(g / 255);
      ch[2].push_back(b / 255);
      ch[3].push_back(mx == 0 ? 0 : (mx - mn) / mx);
    }
  const auto f = extract_color_features(img);
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0;
    for (double v : ch[c]) mean += v / 16;
    double var = 0;
    for (double v : ch[c]) var += (v - mean) * (v - mean) / 16;
    EXPECT_NEAR(f[c * 10], mean, 1e-12);
    EXPECT_NEAR(f[c * 10 + 1], std::sqrt(var), 1e-9);
    for (std::size_t b = 0; b < 8; ++b) {
      double cnt = 0;
      for (double v : ch[c]) cnt += std::min(7, static_cast<int>(std::floor(v * 8))) == static_cast<int>(b);
      EXPECT_DOUBLE_EQ(f[c * 10 + 2 + b], cnt / 16) << c << "/" << b;
    }
  }
}

struct Blobs {
  std::vector<ColorFeatures> X;
  std::vector<int> y;
};

Blobs pink_vs_gray(int n, std::uint64_t seed) {
  Rng rng(seed);
  Blobs b;
  for (int i = 0; i < n; ++i) {
    const bool tumor = i % 2 == 0;
    b.X.push_back(extract_color_features(
        noisy_patch(tumor ? Rgb{122, 54, 142} : Rgb{226, 162, 198}, 8.0, 24, rng)));
    b.y.push_back(tumor);
  }
  return b;
}

TEST(Baseline, SeparableBlobs) {
  const auto b = pink_vs_gray(200, 1);
  const auto res = train_baseline(std::span<const ColorFeatures>(b.X), b.y, {});
  int correct = 0;
  for (std::size_t i = 0; i < b.X.size(); ++i) correct += (res.model.predict(b.X[i]) >= 0.5) == (b.y[i] == 1);
  EXPECT_GE(correct / 200.0, 0.99);
  EXPECT_EQ(res.loss_trace.size(), 301u);
}

TEST(Baseline, ZeroEpochs) {
  const auto b = pink_vs_gray(20, 2);
  BaselineHyperparams hp;
  hp.epochs = 0;
  const auto res = train_baseline(std::span<const ColorFeatures>(b.X), b.y, hp);
  for (const auto& x : b.X) EXPECT_DOUBLE_EQ(res.model.predict(x), 0.5);
  ASSERT_EQ(res.loss_trace.size(), 1u);
  EXPECT_NEAR(res.loss_trace[0], std::log(2.0), 1e-12);
}

TEST(Baseline, LossNonIncreasingForSmallStep) {
  const auto b = pink_vs_gray(60, 3);
  BaselineHyperparams hp;
  hp.epochs = 200;
  hp.learn_rate = 0.05;
  const auto res = train_baseline(std::span<const ColorFeatures>(b.X), b.y, hp);
  for (std::size_t i = 1; i < res.loss_trace.size(); ++i) {
    ASSERT_TRUE(std::isfinite(res.loss_trace[i]));
    EXPECT_LE(res.loss_trace[i], res.loss_trace[i - 1] + 1e-15) << i;
  }
}

TEST(Baseline, SingleClassRejected) {
  auto b = pink_vs_gray(10, 4);
  std::fill(b.y.begin(), b.y.end(), 1);
  EXPECT_THROW((void)train_baseline(std::span<const ColorFeatures>(b.X), b.y, {}), Error);
}

TEST(Baseline, FileRoundTrip) {
  oracle::TempDir dir("cls");
  const auto b = pink_vs_gray(40, 5);
  BaselineHyperparams hp;
  hp.seed = 99;
  const auto m = train_baseline(std::span<const ColorFeatures>(b.X), b.y, hp).model;
  write_baseline(dir.path / "m.txt", m);
  const auto r = read_baseline(dir.path / "m.txt");
  EXPECT_EQ(r.weights, m.weights);
  EXPECT_EQ(r.bias, m.bias);
  EXPECT_EQ(r.train_meta.seed, 99u);
  for (const auto& x : b.X) EXPECT_EQ(r.predict(x), m.predict(x));

  std::string text;
  {
    std::ifstream in(dir.path / "m.txt");
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  text.replace(text.find(kColorFeatureSpec), std::string(kColorFeatureSpec).size(), "other-spec");
  std::ofstream(dir.path / "bad.txt") << text;
  try {
    (void)read_baseline(dir.path / "bad.txt");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::schema);
  }
}

TEST(Baseline, RasterOverloadAugments) {
  Rng rng(6);
  std::vector<RgbImage> rasters;
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) {
    rasters.push_back(noisy_patch(i % 2 ? Rgb{122, 54, 142} : Rgb{226, 162, 198}, 8.0, 256, rng));
    y.push_back(i % 2);
  }
  Rng a(1), b(1);
  const auto m1 = train_baseline(std::span<const RgbImage>(rasters), y, {}, a).model;
  const auto m2 = train_baseline(std::span<const RgbImage>(rasters), y, {}, b).model;
  EXPECT_EQ(m1.weights, m2.weights);
}

// A small synthetic slide scored patch by patch.
struct ScoringFixture : ::testing::Test {
  static void SetUpTestSuite() {
    dir = new oracle::TempDir("score");
    SynthConfig c;
    c.slide_dim = 1024;
    c.tile_size = 256;
    c.lesion_radius = {90, 120};
    c.lesion_gap = 64;
    c.lesions_per_tumor_slide = {2, 2};
    Rng g(7);
    ann = new Annotation(generate_slide(c, SlideLabel::tumor, "t", dir->path / "t", g).annotation);
    Rng g2(8);
    ann_u = new Annotation(generate_slide(c, SlideLabel::tumor, "u", dir->path / "u", g2).annotation);
  }
  static void TearDownTestSuite() {
    delete ann;
    delete ann_u;
    delete dir;
  }
  static inline oracle::TempDir* dir = nullptr;
  static inline Annotation* ann = nullptr;
  static inline Annotation* ann_u = nullptr;

  static BaselineModel train_on(const PyramidSlide& slide, const Annotation& a) {
    SamplerConfig s;
    s.patch_size = 32;
    s.crop_size = 28;
    s.tumor_per_slide = 200;
    s.normal_per_tumor_slide = 200;
    Rng rng(1);
    const auto res = sample_training_patches(slide, a, compute_tissue_mask(slide), s, rng);
    std::vector<RgbImage> rasters;
    std::vector<int> y;
    for (const auto& p : res.patches) {
      rasters.push_back(read_patch(slide, p));
      y.push_back(p.label == SlideLabel::tumor);
    }
    return train_baseline(std::span<const RgbImage>(rasters), y, {}, rng, s).model;
  }
};

TEST_F(ScoringFixture, HeldOutPatchAuc) {
  const auto train = open_slide(dir->path / "t");
  const auto test = open_slide(dir->path / "u");
  const BaselineScorer scorer(train_on(train, *ann));
  SamplerConfig s;
  s.patch_size = 32;
  s.crop_size = 28;
  s.stride = 32;
  const auto patches = grid_patches(test, compute_tissue_mask(test), s);
  const auto scores = score_patches(scorer, patches, test);
  std::vector<ScoredLabel> sl;
  for (const auto& ps : scores)
    if (const auto lab = label_patch(*ann_u, ps.patch.x, ps.patch.y, ps.patch.size))
      sl.push_back({ps.p_tumor, *lab == SlideLabel::tumor ? 1 : 0});
  EXPECT_GE(roc_auc(sl).auc, 0.95);
}

TEST_F(ScoringFixture, EmptyAndRepeatable) {
  const auto slide = open_slide(dir->path / "t");
  const BaselineScorer scorer(train_on(slide, *ann));
  EXPECT_TRUE(score_patches(scorer, {}, slide).empty());
  SamplerConfig s;
  s.patch_size = 64;
  s.stride = 64;
  s.crop_size = 64;
  const auto patches = grid_patches(slide, compute_tissue_mask(slide), s);
  ASSERT_FALSE(patches.empty());
  const auto a = score_patches(scorer, patches, slide);
  const auto b = score_patches(scorer, patches, slide, 3, 7);
  ASSERT_EQ(a.size(), patches.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].patch, patches[i]);
    EXPECT_EQ(a[i].p_tumor, b[i].p_tumor);
    EXPECT_EQ(a[i].model_id, "baseline");
  }
}

std::vector<PatchScore> scores_of(std::vector<double> ps, const std::string& id = "m") {
  std::vector<PatchScore> out;
  for (std::size_t i = 0; i < ps.size(); ++i)
    out.push_back({{"s", 0, static_cast<std::int64_t>(i) * 256, 0, 256, std::nullopt}, ps[i], id});
  return out;
}

TEST(Ensemble, IdenticalListsIdempotent) {
  const auto l = scores_of({0.1, 0.7, 0.3});
  const std::vector<std::vector<PatchScore>> lists{l, l, l};
  const auto e = ensemble_scores(lists);
  for (std::size_t i = 0; i < l.size(); ++i) EXPECT_DOUBLE_EQ(e[i].p_tumor, l[i].p_tumor);
  EXPECT_EQ(e[0].model_id, "ensemble");
}

TEST(Ensemble, ArithmeticMeanAndOrderInvariance) {
  std::vector<std::vector<PatchScore>> lists{scores_of({0.2}), scores_of({0.4}), scores_of({0.9})};
  EXPECT_DOUBLE_EQ(ensemble_scores(lists)[0].p_tumor, 0.5);
  Rng rng(2);
  std::vector<std::vector<PatchScore>> many;
  for (int k = 0; k < 4; ++k) {
    std::vector<double> v;
    for (int i = 0; i < 10; ++i) v.push_back(uniform01(rng));
    many.push_back(scores_of(v));
  }
  const auto base = ensemble_scores(many);
  std::reverse(many.begin(), many.end());
  const auto rev = ensemble_scores(many);
  for (std::size_t i = 0; i < base.size(); ++i) EXPECT_NEAR(base[i].p_tumor, rev[i].p_tumor, 1e-15);
}

TEST(Ensemble, MisalignedLists) {
  auto a = scores_of({0.1, 0.2}), b = scores_of({0.1, 0.2});
  b[1].patch.x += 1;
  std::vector<std::vector<PatchScore>> lists{a, b};
  try {
    (void)ensemble_scores(lists);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::alignment);
  }
  lists = {a, scores_of({0.1})};
  EXPECT_THROW((void)ensemble_scores(lists), Error);
}

struct AdapterFixture : ::testing::Test {
  oracle::TempDir dir{"adapter"};
  PyramidSlide slide = [this] {
    (void)write_slide(RgbImage(512, 512, 200), {.slide_id = "s", .tile_size = 256, .downsample_steps = {}},
                      dir.path / "s");
    return open_slide(dir.path / "s");
  }();
  std::vector<PatchRef> patches{{"s", 0, 0, 0, 256, std::nullopt},
                                {"s", 0, 256, 0, 256, std::nullopt},
                                {"s", 0, 0, 256, 256, std::nullopt}};

  Errc code_of(const std::string& cmd) {
    try {
      (void)score_patches(ExternalScorer(cmd), patches, slide);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::stage;
  }
};

TEST_F(AdapterFixture, ProtocolRoundTrip) {
  // Echo x/1000 so the reply depends on the request line.
  const std::string cmd = "while IFS=, read id lv x y s; do echo \"0.$x\" | cut -c1-6; done";
  const auto out = score_patches(ExternalScorer(cmd, "ext"), patches, slide, 2, 2);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_DOUBLE_EQ(out[0].p_tumor, 0.0);
  EXPECT_DOUBLE_EQ(out[1].p_tumor, 0.256);
  EXPECT_DOUBLE_EQ(out[2].p_tumor, 0.0);
  EXPECT_EQ(out[1].model_id, "ext");
}

TEST_F(AdapterFixture, Violations) {
  EXPECT_EQ(code_of("while read l; do echo banana; done"), Errc::adapter);
  EXPECT_EQ(code_of("while read l; do echo 1.5; done"), Errc::adapter);
  EXPECT_EQ(code_of("read l; echo 0.5"), Errc::adapter);
  EXPECT_EQ(code_of("exit 0"), Errc::adapter);
  try {
    (void)score_patches(ExternalScorer("while read l; do echo nope; done"), patches, slide);
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("nope"), std::string::npos);
  }
}

TEST(ScoreCsv, RoundTrip) {
  oracle::TempDir dir("cls");
  const auto s = scores_of({0.125, 1.0 / 3.0, 1.0}, "baseline");
  write_scores_csv(dir.path / "s.csv", s);
  const auto r = read_scores_csv(dir.path / "s.csv");
  ASSERT_EQ(r.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(r[i].patch, s[i].patch);
    EXPECT_EQ(r[i].p_tumor, s[i].p_tumor);
    EXPECT_EQ(r[i].model_id, "baseline");
  }
}

}  // namespace
