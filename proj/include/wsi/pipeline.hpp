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
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "wsi/annotation.hpp"
#include "wsi/classifier.hpp"
#include "wsi/error.hpp"
#include "wsi/evaluation.hpp"
#include "wsi/features.hpp"
#include "wsi/forest.hpp"
#include "wsi/heatmap.hpp"
#include "wsi/parallel.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/rng.hpp"
#include "wsi/roi.hpp"
#include "wsi/sampler.hpp"
#include "wsi/synthgen.hpp"

namespace wsi {

enum class RfFeatureMode { top5_preset, top5_ranked, all };

struct PipelineConfig {
  static constexpr int kVersion = 1;

  std::filesystem::path dataset;  // dataset.csv
  std::filesystem::path output;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
  RoiConfig roi;
  SamplerConfig sampler;
  BaselineHyperparams baseline;
  /// "baseline" or "cmd:<shell command>"; several entries are ensembled.
  std::vector<std::string> scorers{"baseline"};
  FeatureConfig features;
  ForestConfig forest;
  RfFeatureMode rf_features = RfFeatureMode::top5_preset;
  double detection_threshold = 0.5;
  std::vector<double> fp_rates = kDefaultFpRates;
};

[[nodiscard]] inline nlohmann::json pipeline_config_to_json(const PipelineConfig& c) {
  nlohmann::json j;
  j["config_version"] = PipelineConfig::kVersion;
  j["dataset"] = c.dataset.string();
  j["output"] = c.output.string();
  j["seed"] = c.seed;
  j["workers"] = c.workers;
  j["roi"] = {{"mask_level", c.roi.mask_level ? nlohmann::json(*c.roi.mask_level) : nlohmann::json(nullptr)},
              {"morph_radius", c.roi.morph_radius},
              {"invert", c.roi.invert}};
  const auto& s = c.sampler;
  j["sampler"] = {{"patch_size", s.patch_size},
                  {"crop_size", s.crop_size},
                  {"stride", s.stride},
                  {"min_tissue_fraction", s.min_tissue_fraction},
                  {"tumor_per_slide", s.tumor_per_slide},
                  {"normal_per_tumor_slide", s.normal_per_tumor_slide},
                  {"normal_per_normal_slide", s.normal_per_normal_slide}};
  j["baseline"] = {{"epochs", c.baseline.epochs},
                   {"learn_rate", c.baseline.learn_rate},
                   {"l2", c.baseline.l2}};
  j["scorers"] = c.scorers;
  j["features"] = {{"t_low", c.features.t_low}, {"t_high", c.features.t_high}};
  j["forest"] = {{"n_trees", c.forest.n_trees},
                 {"max_depth", c.forest.max_depth ? nlohmann::json(*c.forest.max_depth) : nlohmann::json(nullptr)},
                 {"min_samples_leaf", c.forest.min_samples_leaf},
                 {"mtry", c.forest.mtry},
                 {"bootstrap", c.forest.bootstrap}};
  j["rf_features"] = c.rf_features == RfFeatureMode::all
                         ? "all"
                         : (c.rf_features == RfFeatureMode::top5_ranked ? "top5_ranked" : "top5");
  j["detection_threshold"] = c.detection_threshold;
  j["fp_rates"] = c.fp_rates;
  return j;
}

/// Missing keys keep their defaults; unknown keys are rejected.
[[nodiscard]] inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  static const std::set<std::string> known = {
      "config_version", "dataset",  "output",   "seed",       "workers",
      "roi",            "sampler",  "baseline", "scorers",    "features",
      "forest",         "rf_features", "detection_threshold", "fp_rates"};
  try {
    for (auto it = j.begin(); it != j.end(); ++it)
      if (!known.count(it.key())) throw Error(Errc::config, "unknown config key '" + it.key() + "'");
    if (j.value("config_version", PipelineConfig::kVersion) != PipelineConfig::kVersion)
      throw Error(Errc::config, "unsupported config_version");
    if (j.contains("dataset")) c.dataset = j["dataset"].get<std::string>();
    if (j.contains("output")) c.output = j["output"].get<std::string>();
    if (!j.contains("seed")) throw Error(Errc::config, "config needs a seed");
    c.seed = j["seed"].get<std::uint64_t>();
    c.workers = j.value("workers", c.workers);
    if (j.contains("roi")) {
      const auto& r = j["roi"];
      if (r.contains("mask_level") && !r["mask_level"].is_null()) c.roi.mask_level = r["mask_level"].get<int>();
      c.roi.morph_radius = r.value("morph_radius", c.roi.morph_radius);
      c.roi.invert = r.value("invert", c.roi.invert);
    }
    if (j.contains("sampler")) {
      const auto& s = j["sampler"];
      auto& o = c.sampler;
      o.patch_size = s.value("patch_size", o.patch_size);
      o.crop_size = s.value("crop_size", o.crop_size);
      o.stride = s.value("stride", o.stride);
      o.min_tissue_fraction = s.value("min_tissue_fraction", o.min_tissue_fraction);
      o.tumor_per_slide = s.value("tumor_per_slide", o.tumor_per_slide);
      o.normal_per_tumor_slide = s.value("normal_per_tumor_slide", o.normal_per_tumor_slide);
      o.normal_per_normal_slide = s.value("normal_per_normal_slide", o.normal_per_normal_slide);
    }
    if (j.contains("baseline")) {
      const auto& b = j["baseline"];
      c.baseline.epochs = b.value("epochs", c.baseline.epochs);
      c.baseline.learn_rate = b.value("learn_rate", c.baseline.learn_rate);
      c.baseline.l2 = b.value("l2", c.baseline.l2);
    }
    if (j.contains("scorers")) c.scorers = j["scorers"].get<std::vector<std::string>>();
    if (j.contains("features")) {
      c.features.t_low = j["features"].value("t_low", c.features.t_low);
      c.features.t_high = j["features"].value("t_high", c.features.t_high);
    }
    if (j.contains("forest")) {
      const auto& f = j["forest"];
      c.forest.n_trees = f.value("n_trees", c.forest.n_trees);
      if (f.contains("max_depth") && !f["max_depth"].is_null()) c.forest.max_depth = f["max_depth"].get<int>();
      c.forest.min_samples_leaf = f.value("min_samples_leaf", c.forest.min_samples_leaf);
      c.forest.mtry = f.value("mtry", c.forest.mtry);
      c.forest.bootstrap = f.value("bootstrap", c.forest.bootstrap);
    }
    if (j.contains("rf_features")) {
      const auto m = j["rf_features"].get<std::string>();
      if (m == "top5") c.rf_features = RfFeatureMode::top5_preset;
      else if (m == "top5_ranked") c.rf_features = RfFeatureMode::top5_ranked;
      else if (m == "all") c.rf_features = RfFeatureMode::all;
      else throw Error(Errc::config, "rf_features must be top5, top5_ranked or all");
    }
    c.detection_threshold = j.value("detection_threshold", c.detection_threshold);
    if (j.contains("fp_rates")) c.fp_rates = j["fp_rates"].get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config, std::string("bad pipeline config: ") + e.what());
  }
  c.sampler.validate();
  c.features.validate();
  if (c.scorers.empty()) throw Error(Errc::config, "at least one scorer is required");
  if (c.workers < 1) c.workers = 1;
  return c;
}

[[nodiscard]] inline PipelineConfig read_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::config, "cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::config, "unparsable config " + path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

struct SlidePrediction {
  std::string slide_id;
  std::string split;
  SlideLabel label = SlideLabel::normal;
  double p_tumor = 0;
};

struct RunReport {
  std::optional<double> test_auc, val_auc;
  std::optional<double> test_froc;
  std::vector<double> test_froc_sensitivities;
  RocResult test_roc;
  FrocResult test_froc_curve;
  std::vector<SlidePrediction> predictions;
  std::vector<std::string> rf_feature_names;
  std::vector<double> importance;
  std::size_t baseline_training_patches = 0;
  std::size_t skipped_slides = 0;

  [[nodiscard]] nlohmann::json to_json() const {
    nlohmann::json j;
    j["report_version"] = 1;
    j["test_auc"] = test_auc ? nlohmann::json(*test_auc) : nlohmann::json(nullptr);
    j["val_auc"] = val_auc ? nlohmann::json(*val_auc) : nlohmann::json(nullptr);
    j["test_froc_score"] = test_froc ? nlohmann::json(*test_froc) : nlohmann::json(nullptr);
    j["test_froc_sensitivities"] = test_froc_sensitivities;
    j["rf_features"] = rf_feature_names;
    j["importance"] = importance;
    j["baseline_training_patches"] = baseline_training_patches;
    auto& rows = j["predictions"] = nlohmann::json::array();
    for (const auto& p : predictions)
      rows.push_back({{"slide_id", p.slide_id}, {"split", p.split}, {"label", to_string(p.label)},
                      {"p_tumor", p.p_tumor}});
    return j;
  }
};

namespace detail {

[[nodiscard]] inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[nodiscard]] inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

[[nodiscard]] inline std::string hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

class StageGuard {
 public:
  StageGuard(const std::filesystem::path& out, std::string stage) : out_(out), stage_(std::move(stage)) {}

  template <typename Fn>
  auto run(const std::string& slide_id, Fn&& fn) {
    try {
      return fn();
    } catch (const Error& e) {
      fail(slide_id, e.what());
    } catch (const std::exception& e) {
      fail(slide_id, e.what());
    }
  }

 private:
  [[noreturn]] void fail(const std::string& slide_id, const std::string& what) {
    std::ofstream marker(out_ / ".partial", std::ios::trunc);
    marker << "stage " << stage_ << "\nslide " << slide_id << "\n" << what << "\n";
    throw Error(Errc::stage, "stage '" + stage_ + "' failed" +
                                 (slide_id.empty() ? "" : " on slide '" + slide_id + "'") + ": " + what);
  }

  std::filesystem::path out_;
  std::string stage_;
};

}  // namespace detail

/// mask -> sample -> train baseline -> score -> heatmap -> features ->
/// random forest -> ROC/FROC. Writes every intermediate under cfg.output.
/// Per-slide work uses substreams of cfg.seed and is reassembled in
/// manifest order, so the worker count never changes any artifact.
/// Heatmaps whose inputs are unchanged since the last run are reused.
inline RunReport run_pipeline(const PipelineConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::is_regular_file(cfg.dataset))
    throw Error(Errc::config, "dataset manifest not found: " + cfg.dataset.string());
  if (cfg.output.empty()) throw Error(Errc::config, "no output directory configured");
  const auto ds = read_dataset_csv(cfg.dataset);
  const auto& out = cfg.output;
  for (const char* d : {"masks", "patches", "models", "scores", "heatmaps", "features", "eval", ".stamps"})
    fs::create_directories(out / d);
  fs::remove(out / ".partial");
  const auto cfg_json = pipeline_config_to_json(cfg);

  const auto n = ds.entries.size();
  RunReport report;

  // Tissue masks.
  std::vector<TissueMask> masks(n);
  {
    detail::StageGuard guard(out, "mask");
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      const auto& e = ds.entries[i];
      guard.run(e.slide_id, [&] {
        const auto slide = open_slide(ds.slide_path(e));
        masks[i] = compute_tissue_mask(slide, cfg.roi);
        write_mask(out / "masks" / (e.slide_id + ".pgm"), masks[i]);
      });
    });
  }

  // Training patches and the baseline scorer.
  std::vector<std::unique_ptr<PatchScorer>> scorers;
  if (std::find(cfg.scorers.begin(), cfg.scorers.end(), "baseline") != cfg.scorers.end()) {
    detail::StageGuard guard(out, "train-baseline");
    std::vector<std::vector<PatchRef>> patches(n);
    std::vector<std::vector<ColorFeatures>> feats(n);
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      const auto& e = ds.entries[i];
      if (e.split != "train") return;
      guard.run(e.slide_id, [&] {
        const auto slide = open_slide(ds.slide_path(e));
        Annotation ann{e.slide_id, {}};
        if (fs::exists(ds.annotation_path(e))) ann = read_annotation(ds.annotation_path(e));
        else if (e.label == SlideLabel::tumor)
          throw Error(Errc::config, "missing annotation for tumor training slide");
        if (e.label == SlideLabel::tumor && ann.polygons.empty())
          throw Error(Errc::config, "tumor training slide has no annotated lesions");
        Rng rng(derive_seed(cfg.seed, 1000003 + i));
        auto res = sample_training_patches(slide, ann, masks[i], cfg.sampler, rng);
        for (const auto& p : res.patches)
          feats[i].push_back(extract_color_features(
              augment(read_patch(slide, p), rng, cfg.sampler.patch_size, cfg.sampler.crop_size)));
        patches[i] = std::move(res.patches);
      });
    });
    std::vector<PatchRef> all_patches;
    std::vector<ColorFeatures> X;
    std::vector<int> y;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < patches[i].size(); ++k) {
        all_patches.push_back(patches[i][k]);
        X.push_back(feats[i][k]);
        y.push_back(patches[i][k].label == SlideLabel::tumor ? 1 : 0);
      }
    }
    write_patches_csv(out / "patches" / "train_patches.csv", all_patches);
    report.baseline_training_patches = X.size();
    auto hp = cfg.baseline;
    hp.seed = cfg.seed;
    auto model = guard.run("", [&] { return train_baseline(std::span<const ColorFeatures>(X), y, hp).model; });
    write_baseline(out / "models" / "baseline.txt", model);
    scorers.push_back(std::make_unique<BaselineScorer>(std::move(model)));
  }
  for (const auto& s : cfg.scorers) {
    if (s == "baseline") continue;
    if (s.rfind("cmd:", 0) != 0) throw Error(Errc::config, "scorer must be 'baseline' or 'cmd:<command>'");
    scorers.push_back(std::make_unique<ExternalScorer>(s.substr(4), "external" + std::to_string(scorers.size())));
  }

  // Scoring and heatmaps, reusing heatmaps whose inputs are unchanged.
  std::uint64_t model_key = detail::fnv1a(cfg_json.dump());
  model_key = detail::fnv1a(detail::slurp(out / "models" / "baseline.txt"), model_key);
  std::vector<Heatmap> heatmaps(n);
  std::vector<std::uint8_t> reused(n, 0);
  {
    detail::StageGuard guard(out, "score");
    parallel_for(n, cfg.workers, [&](std::size_t i) {
      const auto& e = ds.entries[i];
      guard.run(e.slide_id, [&] {
        const auto slide = open_slide(ds.slide_path(e));
        const auto key = detail::hex(detail::fnv1a(
            manifest_text(slide.manifest()) + detail::slurp(out / "masks" / (e.slide_id + ".pgm")), model_key));
        const auto hm_path = out / "heatmaps" / (e.slide_id + ".hm");
        const auto stamp = out / ".stamps" / (e.slide_id + ".score");
        if (fs::exists(hm_path) && fs::exists(stamp) && detail::slurp(stamp) == key) {
          heatmaps[i] = read_heatmap(hm_path);
          reused[i] = 1;
          return;
        }
        const auto patches = grid_patches(slide, masks[i], cfg.sampler);
        std::vector<std::vector<PatchScore>> lists;
        for (const auto& s : scorers) lists.push_back(score_patches(*s, patches, slide));
        const auto scores = lists.size() == 1 ? lists.front() : ensemble_scores(lists);
        write_scores_csv(out / "scores" / (e.slide_id + ".csv"), scores);
        heatmaps[i] = assemble_heatmap(scores, e.slide_id, slide.width(), slide.height(), cfg.sampler.stride);
        write_heatmap(hm_path, heatmaps[i]);
        std::ofstream(stamp, std::ios::trunc) << key;
      });
    });
  }
  report.skipped_slides = static_cast<std::size_t>(std::count(reused.begin(), reused.end(), 1));

  // Slide features.
  std::vector<FeatureVector> fvs(n);
  {
    detail::StageGuard guard(out, "features");
    for (std::size_t i = 0; i < n; ++i)
      guard.run(ds.entries[i].slide_id, [&] { fvs[i] = extract_features(heatmaps[i], cfg.features); });
    write_features_csv(out / "features" / "features.csv", fvs, false, cfg.features);
    write_features_csv(out / "features" / "top5.csv", fvs, true, cfg.features);
  }

  // Random forest: the full-descriptor forest supplies importances; the
  // classifier itself uses the configured columns.
  {
    detail::StageGuard guard(out, "rf");
    guard.run("", [&] {
      std::vector<std::vector<double>> X_all;
      std::vector<int> y;
      for (std::size_t i = 0; i < n; ++i)
        if (ds.entries[i].split == "train") {
          X_all.emplace_back(fvs[i].values.begin(), fvs[i].values.end());
          y.push_back(ds.entries[i].label == SlideLabel::tumor ? 1 : 0);
        }
      auto fcfg = cfg.forest;
      fcfg.rng_seed = derive_seed(cfg.seed, 77);
      fcfg.workers = cfg.workers;
      const auto full = train_forest(X_all, y, fcfg);
      write_forest(out / "models" / "forest_all.txt", full);
      report.importance = feature_importance(full);
      const auto names = feature_names(cfg.features);
      {
        auto imp = csv::open_out(out / "features" / "importance.csv");
        imp << "feature,importance\n";
        for (std::size_t k = 0; k < names.size(); ++k) imp << names[k] << ',' << csv::fmt(report.importance[k]) << '\n';
      }
      std::vector<std::size_t> cols;
      switch (cfg.rf_features) {
        case RfFeatureMode::all:
          for (std::size_t k = 0; k < kFeatureDim; ++k) cols.push_back(k);
          break;
        case RfFeatureMode::top5_preset:
          cols.assign(cfg.features.top5_indices.begin(), cfg.features.top5_indices.end());
          break;
        case RfFeatureMode::top5_ranked: {
          const auto order = rank_features(report.importance);
          cols.assign(order.begin(), order.begin() + 5);
          break;
        }
      }
      for (auto k : cols) report.rf_feature_names.push_back(names[k]);
      auto select = [&](const FeatureVector& fv) {
        std::vector<double> v;
        for (auto k : cols) v.push_back(fv.values[k]);
        return v;
      };
      std::vector<std::vector<double>> X;
      for (std::size_t i = 0; i < n; ++i)
        if (ds.entries[i].split == "train") X.push_back(select(fvs[i]));
      const auto model = cfg.rf_features == RfFeatureMode::all ? full : train_forest(X, y, fcfg);
      write_forest(out / "models" / "forest.txt", model);
      auto pred = csv::open_out(out / "predictions.csv");
      pred << "slide_id,split,label,p_tumor\n";
      for (std::size_t i = 0; i < n; ++i) {
        const auto& e = ds.entries[i];
        const double p = predict_proba(model, select(fvs[i]));
        report.predictions.push_back({e.slide_id, e.split, e.label, p});
        pred << e.slide_id << ',' << e.split << ',' << to_string(e.label) << ',' << csv::fmt(p) << '\n';
      }
    });
  }

  // Evaluation on the held-out splits.
  {
    detail::StageGuard guard(out, "eval");
    guard.run("", [&] {
      auto auc_for = [&](const std::string& split) -> std::optional<RocResult> {
        std::vector<ScoredLabel> sl;
        for (const auto& p : report.predictions)
          if (p.split == split) sl.push_back({p.p_tumor, p.label == SlideLabel::tumor ? 1 : 0});
        const bool both = std::any_of(sl.begin(), sl.end(), [](auto s) { return s.label == 1; }) &&
                          std::any_of(sl.begin(), sl.end(), [](auto s) { return s.label == 0; });
        if (!both) return std::nullopt;
        return roc_auc(sl);
      };
      if (auto r = auc_for("test")) {
        report.test_auc = r->auc;
        report.test_roc = *r;
        auto f = csv::open_out(out / "eval" / "roc_test.csv");
        f << roc_table(*r);
      }
      if (auto r = auc_for("val")) report.val_auc = r->auc;

      std::vector<FrocSlide> slides;
      std::vector<Detection> all_dets;
      std::size_t lesions = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& e = ds.entries[i];
        if (e.split != "test") continue;
        FrocSlide s;
        s.slide_id = e.slide_id;
        if (fs::exists(ds.annotation_path(e))) s.lesions = read_annotation(ds.annotation_path(e)).polygons;
        lesions += s.lesions.size();
        const auto slide = open_slide(ds.slide_path(e));
        s.detections = extract_detections(heatmaps[i], cfg.detection_threshold, slide.width(), slide.height());
        all_dets.insert(all_dets.end(), s.detections.begin(), s.detections.end());
        slides.push_back(std::move(s));
      }
      write_detections_csv(out / "eval" / "detections_test.csv", all_dets);
      if (lesions > 0) {
        report.test_froc_curve = froc(slides, cfg.fp_rates);
        report.test_froc = report.test_froc_curve.score;
        report.test_froc_sensitivities = report.test_froc_curve.sensitivities;
        auto f = csv::open_out(out / "eval" / "froc_test.csv");
        f << froc_table(report.test_froc_curve);
      }
    });
  }

  std::ofstream rep(out / "report.json", std::ios::trunc);
  rep << report.to_json().dump(2) << "\n";
  if (!rep) throw Error(Errc::io, "cannot write report");
  return report;
}

}  // namespace wsi
