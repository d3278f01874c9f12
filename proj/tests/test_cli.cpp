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
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <string>

#include "oracles.hpp"
#include "wsi.hpp"

namespace {

using namespace wsi;

int wsi_cli(const std::string& args) {
  const std::string cmd = std::string(WSI_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(wsi_cli(""), 2);
  EXPECT_EQ(wsi_cli("no-such-command"), 2);
  EXPECT_EQ(wsi_cli("mask --slide x"), 2);
  EXPECT_EQ(wsi_cli("--help"), 0);
}

TEST(Cli, ConfigErrorsExitTwo) {
  oracle::TempDir dir("cli_cfg");
  const auto cfg = dir.path / "c.json";
  std::ofstream(cfg) << R"({"dataset": "d.csv", "output": "out"})";
  EXPECT_EQ(wsi_cli("run --config " + cfg.string()), 2);  // no seed
  std::ofstream(cfg, std::ios::trunc) << R"({"seed": 1, "bogus": 3})";
  EXPECT_EQ(wsi_cli("run --config " + cfg.string()), 2);
  std::ofstream(cfg, std::ios::trunc) << "{not json";
  EXPECT_EQ(wsi_cli("run --config " + cfg.string()), 2);
  std::ofstream(cfg, std::ios::trunc) << R"({"seed": 1, "dataset": "missing.csv", "output": "out"})";
  EXPECT_EQ(wsi_cli("run --config " + cfg.string()), 2);
}

TEST(Cli, BadSlideIsDataError) {
  oracle::TempDir dir("cli_bad");
  std::filesystem::create_directories(dir.path / "s");
  std::ofstream(dir.path / "s" / "manifest.json") << "[1, 2]";
  const int rc = wsi_cli("mask --slide " + (dir.path / "s").string() + " --out " + (dir.path / "m.pgm").string());
  EXPECT_EQ(rc, 3);
}

// Drives every stage through the CLI on a small cohort, then the whole
// pipeline from a config file.
TEST(Cli, StagesComposeEndToEnd) {
  oracle::TempDir dir("cli_e2e");
  const auto d = dir.path.string();
  ASSERT_EQ(wsi_cli("synth --out " + d + "/data --slides 6 --seed 3 --size 1024 --tile 256"), 0);
  const auto ds = read_dataset_csv(dir.path / "data" / "dataset.csv");
  ASSERT_EQ(ds.entries.size(), 6u);

  std::string patch_args;
  for (const auto& e : ds.entries) {
    const auto slide = (dir.path / "data" / e.path).string(), m = d + "/" + e.slide_id + ".pgm";
    ASSERT_EQ(wsi_cli("mask --slide " + slide + " --out " + m), 0);
    if (e.split != "train") continue;
    const auto ann = ds.annotation_path(e).string();
    ASSERT_EQ(wsi_cli("sample --slide " + slide + " --annotation " + ann + " --mask " + m + " --out " + d + "/" +
                      e.slide_id + ".patches.csv --seed 1 --patch-size 64 --crop-size 56 --tumor 40 --normal-tumor-slide 20 "
                      "--normal-normal-slide 20"),
              0);
    patch_args += " " + d + "/" + e.slide_id + ".patches.csv";
  }
  ASSERT_EQ(wsi_cli("train-baseline --dataset " + d + "/data/dataset.csv --patches" + patch_args + " --out " + d +
                    "/baseline.txt --seed 1 --crop-size 56"),
            0);
  std::filesystem::create_directories(dir.path / "hm");
  for (const auto& e : ds.entries) {
    const auto slide = (dir.path / "data" / e.path).string();
    ASSERT_EQ(wsi_cli("score --slide " + slide + " --mask " + d + "/" + e.slide_id + ".pgm --model " + d +
                      "/baseline.txt --patch-size 64 --stride 64 --out " + d + "/" + e.slide_id + ".scores.csv"),
              0);
    ASSERT_EQ(wsi_cli("heatmap build --scores " + d + "/" + e.slide_id + ".scores.csv --slide " + slide +
                      " --stride 64 --out " + d + "/hm/" + e.slide_id + ".hm"),
              0);
  }
  EXPECT_EQ(wsi_cli("heatmap render --heatmap " + d + "/hm/" + ds.entries[0].slide_id + ".hm --out " + d + "/h.png"), 0);
  EXPECT_TRUE(std::filesystem::file_size(dir.path / "h.png") > 0);
  ASSERT_EQ(wsi_cli("features --heatmap " + d + "/hm --out " + d + "/f.csv"), 0);
  ASSERT_EQ(wsi_cli("features --heatmap " + d + "/hm --top5 --out " + d + "/top5.csv"), 0);
  EXPECT_EQ(read_features_csv(dir.path / "top5.csv").names.size(), 5u);
  ASSERT_EQ(wsi_cli("rf train --features " + d + "/top5.csv --dataset " + d + "/data/dataset.csv --out " + d +
                    "/rf.txt --seed 4 --trees 25"),
            0);
  ASSERT_EQ(wsi_cli("rf predict --model " + d + "/rf.txt --features " + d + "/top5.csv --dataset " + d +
                    "/data/dataset.csv --out " + d + "/pred.csv"),
            0);
  EXPECT_EQ(wsi_cli("rf importance --model " + d + "/rf.txt --features " + d + "/top5.csv"), 0);
  EXPECT_EQ(wsi_cli("rf importance --model " + d + "/rf.txt --features " + d + "/f.csv"), 2);
  EXPECT_EQ(wsi_cli("eval roc --predictions " + d + "/pred.csv --plot " + d + "/roc.png"), 0);

  std::filesystem::create_directories(dir.path / "gt");
  std::filesystem::create_directories(dir.path / "hm_test");
  for (const auto& e : ds.entries)
    if (e.split == "test") {
      std::filesystem::copy_file(ds.annotation_path(e), dir.path / "gt" / (e.slide_id + ".json"));
      std::filesystem::copy_file(dir.path / "hm" / (e.slide_id + ".hm"), dir.path / "hm_test" / (e.slide_id + ".hm"));
    }
  ASSERT_EQ(wsi_cli("eval froc --heatmap " + d + "/hm_test --gt " + d + "/gt --table " + d + "/froc.csv --plot " + d +
                    "/froc.png --write-detections " + d + "/dets.csv"),
            0);
  EXPECT_EQ(wsi_cli("eval froc --detections " + d + "/dets.csv --gt " + d + "/gt"), 0);
  const auto t = csv::read(dir.path / "froc.csv");
  ASSERT_FALSE(t.rows.empty());
  EXPECT_GE(csv::to_double(t.rows.back()[1]), 0.5);

  // Flag overrides apply on top of the config file.
  std::ofstream(dir.path / "run.json") << R"({"seed": 1, "dataset": "data/dataset.csv", "output": "run",
    "sampler": {"patch_size": 64, "crop_size": 56, "stride": 64, "tumor_per_slide": 40,
                "normal_per_tumor_slide": 20, "normal_per_normal_slide": 20},
    "forest": {"n_trees": 25}})";
  ASSERT_EQ(wsi_cli("run --config " + d + "/run.json --seed 2 -j 2"), 0);
  EXPECT_TRUE(std::filesystem::exists(dir.path / "run" / "report.json"));
  EXPECT_TRUE(std::filesystem::exists(dir.path / "run" / "heatmaps" / (ds.entries[0].slide_id + ".hm")));
}

}  // namespace
