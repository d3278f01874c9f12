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

// wsi: command-line front end for the screening pipeline.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>

#include "CLI11.hpp"
#include "json.hpp"
#include "wsi.hpp"
#include "wsi/png.hpp"

namespace fs = std::filesystem;
using namespace wsi;

namespace {

Dataset load_dataset(const fs::path& p) {
  if (!fs::is_regular_file(p)) throw Error(Errc::config, "dataset manifest not found: " + p.string());
  return read_dataset_csv(p);
}

const DatasetEntry& find_entry(const Dataset& ds, const std::string& id) {
  for (const auto& e : ds.entries)
    if (e.slide_id == id) return e;
  throw Error(Errc::config, "slide '" + id + "' not in dataset");
}

std::vector<std::pair<double, double>> roc_points(const RocResult& r) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : r.points) pts.emplace_back(p.fpr, p.tpr);
  return pts;
}

std::vector<std::pair<double, double>> froc_points(const FrocResult& r) {
  std::vector<std::pair<double, double>> pts;
  for (const auto& p : r.curve) pts.emplace_back(p.avg_fp, p.sensitivity);
  return pts;
}

struct PredictionRow {
  std::string slide_id, split;
  SlideLabel label;
  double p;
};

std::vector<PredictionRow> read_predictions(const fs::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.column("slide_id"), c_s = t.column("split"), c_l = t.column("label"),
             c_p = t.column("p_tumor");
  std::vector<PredictionRow> rows;
  for (const auto& r : t.rows) rows.push_back({r[c_id], r[c_s], parse_slide_label(r[c_l]), csv::to_double(r[c_p])});
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Whole-slide image tumor screening"};
  app.require_subcommand(1);
  app.fallthrough();
  std::size_t workers = 1;
  app.add_option("-j,--workers", workers, "Worker threads")->check(CLI::PositiveNumber);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic slide cohort");
  fs::path synth_out;
  int synth_slides = 48;
  SynthConfig sc;
  synth->add_option("--out", synth_out, "Output directory")->required();
  synth->add_option("--slides", synth_slides, "Total slides, split like the reference cohort")
      ->check(CLI::Range(6, 100000));
  synth->add_option("--seed", sc.rng_seed, "Random seed")->required();
  synth->add_option("--size", sc.slide_dim, "Level-0 side length in pixels");
  synth->add_option("--levels", sc.n_levels, "Pyramid levels");
  synth->add_option("--tile", sc.tile_size, "Tile side length");

  // mask
  auto* mask = app.add_subcommand("mask", "Compute the tissue mask of a slide");
  fs::path mask_slide, mask_out;
  RoiConfig roi;
  mask->add_option("--slide", mask_slide, "Slide directory")->required();
  mask->add_option("--out", mask_out, "Mask file (.pgm)")->required();
  mask->add_option("--level", roi.mask_level, "Pyramid level for the mask");
  mask->add_option("--morph-radius", roi.morph_radius, "Opening/closing radius");
  mask->add_flag("--invert", roi.invert, "Treat low saturation as tissue");

  // sample
  auto* sample = app.add_subcommand("sample", "Sample labeled training patches from one slide");
  fs::path smp_slide, smp_ann, smp_mask, smp_out;
  SamplerConfig sampler;
  std::uint64_t smp_seed = 0;
  sample->add_option("--slide", smp_slide, "Slide directory")->required();
  sample->add_option("--annotation", smp_ann, "Lesion annotation (.json); omit for normal slides");
  sample->add_option("--mask", smp_mask, "Tissue mask (.pgm)")->required();
  sample->add_option("--out", smp_out, "Patch list (.csv)")->required();
  sample->add_option("--seed", smp_seed, "Random seed")->required();
  sample->add_option("--patch-size", sampler.patch_size);
  sample->add_option("--crop-size", sampler.crop_size);
  sample->add_option("--tumor", sampler.tumor_per_slide, "Tumor patches per tumor slide");
  sample->add_option("--normal-tumor-slide", sampler.normal_per_tumor_slide);
  sample->add_option("--normal-normal-slide", sampler.normal_per_normal_slide);

  // train-baseline
  auto* trainb = app.add_subcommand("train-baseline", "Train the color-feature patch classifier");
  fs::path tb_dataset, tb_out;
  std::vector<fs::path> tb_patches;
  BaselineHyperparams hp;
  std::int64_t tb_crop = 224;
  trainb->add_option("--dataset", tb_dataset, "dataset.csv used to resolve slide ids")->required();
  trainb->add_option("--patches", tb_patches, "Patch lists (.csv)")->required();
  trainb->add_option("--out", tb_out, "Model file")->required();
  trainb->add_option("--seed", hp.seed, "Random seed")->required();
  trainb->add_option("--epochs", hp.epochs);
  trainb->add_option("--learn-rate", hp.learn_rate);
  trainb->add_option("--crop-size", tb_crop);

  // score
  auto* score = app.add_subcommand("score", "Score the tissue patches of a slide");
  fs::path sc_slide, sc_mask, sc_out;
  std::vector<fs::path> sc_models;
  std::vector<std::string> sc_cmds;
  SamplerConfig grid;
  score->add_option("--slide", sc_slide, "Slide directory")->required();
  score->add_option("--mask", sc_mask, "Tissue mask (.pgm)")->required();
  score->add_option("--model", sc_models, "Baseline model file(s)");
  score->add_option("--cmd", sc_cmds, "External scorer command(s)");
  score->add_option("--out", sc_out, "Scores (.csv)")->required();
  score->add_option("--patch-size", grid.patch_size);
  score->add_option("--stride", grid.stride);

  // heatmap
  auto* heat = app.add_subcommand("heatmap", "Assemble or render heatmaps");
  heat->require_subcommand(1);
  auto* heat_build = heat->add_subcommand("build", "Place patch scores on a grid");
  fs::path hb_scores, hb_slide, hb_out;
  std::int64_t hb_stride = 256;
  heat_build->add_option("--scores", hb_scores, "Scores (.csv)")->required();
  heat_build->add_option("--slide", hb_slide, "Slide directory")->required();
  heat_build->add_option("--stride", hb_stride, "Grid stride in level-0 pixels");
  heat_build->add_option("--out", hb_out, "Heatmap (.hm)")->required();
  auto* heat_render = heat->add_subcommand("render", "Render a heatmap as PNG");
  fs::path hr_in, hr_slide, hr_out;
  heat_render->add_option("--heatmap", hr_in, "Heatmap (.hm)")->required();
  heat_render->add_option("--slide", hr_slide, "Overlay on this slide's thumbnail");
  heat_render->add_option("--out", hr_out, "Image (.png)")->required();

  // features
  auto* feat = app.add_subcommand("features", "Extract slide descriptors from heatmaps");
  std::vector<fs::path> ft_in;
  fs::path ft_out;
  bool ft_top5 = false;
  FeatureConfig fcfg;
  feat->add_option("--heatmap", ft_in, "Heatmaps (.hm) or directories of them")->required();
  feat->add_option("--out", ft_out, "Features (.csv)")->required();
  feat->add_flag("--top5", ft_top5, "Write only the five selected descriptors");
  feat->add_option("--t-low", fcfg.t_low);
  feat->add_option("--t-high", fcfg.t_high);

  // rf
  auto* rf = app.add_subcommand("rf", "Slide-level random forest");
  rf->require_subcommand(1);
  auto* rf_train = rf->add_subcommand("train", "Train on the labeled slides of one split");
  fs::path rt_features, rt_dataset, rt_out;
  std::string rt_split = "train";
  ForestConfig forest;
  std::size_t rt_mtry = 0;
  rf_train->add_option("--features", rt_features, "Features (.csv)")->required();
  rf_train->add_option("--dataset", rt_dataset, "dataset.csv with labels and splits")->required();
  rf_train->add_option("--split", rt_split, "Split to train on");
  rf_train->add_option("--out", rt_out, "Forest file")->required();
  rf_train->add_option("--seed", forest.rng_seed, "Random seed")->required();
  rf_train->add_option("--trees", forest.n_trees);
  rf_train->add_option("--max-depth", forest.max_depth);
  rf_train->add_option("--min-leaf", forest.min_samples_leaf);
  rf_train->add_option("--mtry", rt_mtry, "Features tried per split (0 = sqrt)");
  auto* rf_pred = rf->add_subcommand("predict", "Slide tumor probabilities");
  fs::path rp_model, rp_features, rp_dataset, rp_out;
  rf_pred->add_option("--model", rp_model, "Forest file")->required();
  rf_pred->add_option("--features", rp_features, "Features (.csv)")->required();
  rf_pred->add_option("--dataset", rp_dataset, "dataset.csv with labels and splits")->required();
  rf_pred->add_option("--out", rp_out, "Predictions (.csv)")->required();
  auto* rf_imp = rf->add_subcommand("importance", "Mean impurity decrease per feature");
  fs::path ri_model, ri_features;
  rf_imp->add_option("--model", ri_model, "Forest file")->required();
  rf_imp->add_option("--features", ri_features, "Features (.csv) supplying column names");

  // eval
  auto* ev = app.add_subcommand("eval", "Slide ROC and lesion FROC");
  ev->require_subcommand(1);
  auto* ev_roc = ev->add_subcommand("roc", "ROC/AUC of slide predictions");
  fs::path er_pred, er_plot, er_table;
  std::string er_split = "test";
  ev_roc->add_option("--predictions", er_pred, "Predictions (.csv)")->required();
  ev_roc->add_option("--split", er_split, "Split to evaluate (empty = all)");
  ev_roc->add_option("--table", er_table, "Curve table (.csv)");
  ev_roc->add_option("--plot", er_plot, "Curve image (.png)");
  auto* ev_froc = ev->add_subcommand("froc", "FROC of lesion detections");
  fs::path ef_dets, ef_gt, ef_plot, ef_table, ef_dets_out;
  std::vector<fs::path> ef_heatmaps;
  double ef_t = 0.5;
  ev_froc->add_option("--detections", ef_dets, "Detections (.csv)");
  ev_froc->add_option("--heatmap", ef_heatmaps, "Derive detections from heatmaps (.hm) or directories");
  ev_froc->add_option("--threshold", ef_t, "Candidate threshold for heatmap detections");
  ev_froc->add_option("--write-detections", ef_dets_out, "Save derived detections (.csv)");
  ev_froc->add_option("--gt", ef_gt, "Directory of <slide_id>.json annotations")->required();
  ev_froc->add_option("--table", ef_table, "Curve table (.csv)");
  ev_froc->add_option("--plot", ef_plot, "Curve image (.png)");

  // run
  auto* run = app.add_subcommand("run", "Run the whole pipeline from a JSON config");
  fs::path run_cfg;
  std::optional<std::uint64_t> run_seed;
  std::optional<std::string> run_out, run_dataset;
  run->add_option("--config", run_cfg, "Pipeline config (.json)")->required();
  run->add_option("--seed", run_seed, "Override the config seed");
  run->add_option("--out", run_out, "Override the output directory");
  run->add_option("--dataset", run_dataset, "Override the dataset manifest");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*synth) {
      // Lesion geometry is tuned for 4096-pixel slides; shrink it with the slide.
      const double f = static_cast<double>(sc.slide_dim) / 4096.0;
      if (f < 1.0) {
        sc.lesion_radius = {sc.lesion_radius.lo * f, sc.lesion_radius.hi * f};
        sc.lesion_gap *= f;
      }
      const auto counts = scaled_reference_counts(synth_slides);
      const auto ds = generate_dataset(sc, counts, synth_out, workers);
      std::cout << "wrote " << ds.entries.size() << " slides to " << synth_out.string() << "\n";
    } else if (*mask) {
      const auto m = compute_tissue_mask(open_slide(mask_slide), roi);
      write_mask(mask_out, m);
      std::cout << m.slide_id << ": level " << m.level << ", " << count_nonzero(m.grid) << " tissue pixels\n";
    } else if (*sample) {
      const auto slide = open_slide(smp_slide);
      const auto ann = smp_ann.empty() ? Annotation{slide.slide_id(), {}} : read_annotation(smp_ann);
      Rng rng(smp_seed);
      const auto res = sample_training_patches(slide, ann, read_mask(smp_mask), sampler, rng);
      write_patches_csv(smp_out, res.patches);
      std::cout << res.patches.size() << " patches";
      if (res.shortfall()) std::cout << " (short by " << res.tumor_shortfall << " tumor, " << res.normal_shortfall << " normal)";
      std::cout << "\n";
    } else if (*trainb) {
      const auto ds = load_dataset(tb_dataset);
      std::map<std::string, PyramidSlide> slides;
      std::vector<ColorFeatures> X;
      std::vector<int> y;
      Rng rng(derive_seed(hp.seed, 1));
      for (const auto& path : tb_patches)
        for (const auto& p : read_patches_csv(path)) {
          if (!p.label) throw Error(Errc::data, "unlabeled patch in " + path.string());
          auto it = slides.find(p.slide_id);
          if (it == slides.end())
            it = slides.emplace(p.slide_id, open_slide(ds.slide_path(find_entry(ds, p.slide_id)))).first;
          X.push_back(extract_color_features(augment(read_patch(it->second, p), rng, p.size, tb_crop)));
          y.push_back(*p.label == SlideLabel::tumor ? 1 : 0);
        }
      const auto res = train_baseline(std::span<const ColorFeatures>(X), y, hp);
      write_baseline(tb_out, res.model);
      std::cout << "trained on " << X.size() << " patches, final loss "
                << (res.loss_trace.empty() ? 0.0 : res.loss_trace.back()) << "\n";
    } else if (*score) {
      if (sc_models.empty() && sc_cmds.empty()) throw Error(Errc::config, "give --model and/or --cmd");
      grid.crop_size = grid.patch_size;  // scoring reads whole patches
      const auto slide = open_slide(sc_slide);
      const auto patches = grid_patches(slide, read_mask(sc_mask), grid);
      std::vector<std::unique_ptr<PatchScorer>> scorers;
      for (const auto& m : sc_models)
        scorers.push_back(std::make_unique<BaselineScorer>(read_baseline(m), m.stem().string()));
      for (const auto& c : sc_cmds) scorers.push_back(std::make_unique<ExternalScorer>(c));
      std::vector<std::vector<PatchScore>> lists;
      for (const auto& s : scorers) lists.push_back(score_patches(*s, patches, slide, workers));
      const auto scores = lists.size() == 1 ? lists.front() : ensemble_scores(lists);
      write_scores_csv(sc_out, scores);
      std::cout << scores.size() << " patches scored\n";
    } else if (*heat_build) {
      const auto slide = open_slide(hb_slide);
      const auto hm = assemble_heatmap(read_scores_csv(hb_scores), slide.slide_id(), slide.width(),
                                       slide.height(), hb_stride);
      write_heatmap(hb_out, hm);
      std::cout << hm.rows << "x" << hm.cols << " heatmap, " << hm.scored_count() << " cells scored\n";
    } else if (*heat_render) {
      const auto hm = read_heatmap(hr_in);
      if (hr_slide.empty()) write_png(hr_out, render_heatmap_gray(hm));
      else write_png(hr_out, render_heatmap_overlay(hm, open_slide(hr_slide)));
    } else if (*feat) {
      std::vector<fs::path> files;
      for (const auto& p : ft_in) {
        if (!fs::is_directory(p)) {
          files.push_back(p);
          continue;
        }
        for (const auto& e : fs::directory_iterator(p))
          if (e.path().extension() == ".hm") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      std::vector<FeatureVector> rows;
      for (const auto& f : files) rows.push_back(extract_features(read_heatmap(f), fcfg));
      write_features_csv(ft_out, rows, ft_top5, fcfg);
      std::cout << rows.size() << " slides\n";
    } else if (*rf_train) {
      const auto ds = load_dataset(rt_dataset);
      const auto ft = read_features_csv(rt_features);
      std::vector<std::vector<double>> X;
      std::vector<int> y;
      for (std::size_t i = 0; i < ft.rows.size(); ++i) {
        const auto& e = find_entry(ds, ft.slide_ids[i]);
        if (!rt_split.empty() && e.split != rt_split) continue;
        X.push_back(ft.rows[i]);
        y.push_back(e.label == SlideLabel::tumor ? 1 : 0);
      }
      if (rt_mtry) forest.mtry = rt_mtry;
      forest.workers = workers;
      const auto m = train_forest(X, y, forest);
      write_forest(rt_out, m);
      std::cout << m.trees.size() << " trees on " << X.size() << " slides, OOB error " << m.oob_error << "\n";
    } else if (*rf_pred) {
      const auto ds = load_dataset(rp_dataset);
      const auto m = read_forest(rp_model);
      const auto ft = read_features_csv(rp_features);
      auto out = csv::open_out(rp_out);
      out << "slide_id,split,label,p_tumor\n";
      for (std::size_t i = 0; i < ft.rows.size(); ++i) {
        const auto& e = find_entry(ds, ft.slide_ids[i]);
        out << e.slide_id << ',' << e.split << ',' << to_string(e.label) << ','
            << csv::fmt(predict_proba(m, ft.rows[i])) << '\n';
      }
    } else if (*rf_imp) {
      const auto m = read_forest(ri_model);
      const auto imp = feature_importance(m);
      std::vector<std::string> names;
      if (!ri_features.empty()) names = read_features_csv(ri_features).names;
      if (!names.empty() && names.size() != imp.size())
        throw Error(Errc::shape, "feature file has " + std::to_string(names.size()) + " columns, forest expects " +
                                     std::to_string(imp.size()));
      std::cout << "feature,importance\n";
      for (auto k : rank_features(imp))
        std::cout << (names.empty() ? "f" + std::to_string(k) : names[k]) << ',' << csv::fmt(imp[k]) << '\n';
    } else if (*ev_roc) {
      std::vector<ScoredLabel> sl;
      for (const auto& r : read_predictions(er_pred))
        if (er_split.empty() || r.split == er_split) sl.push_back({r.p, r.label == SlideLabel::tumor ? 1 : 0});
      const auto res = roc_auc(sl);
      if (!er_table.empty()) csv::open_out(er_table) << roc_table(res);
      if (!er_plot.empty()) write_png(er_plot, plot_curve(roc_points(res), 1.0));
      std::printf("AUC %.6f over %zu slides\n", res.auc, sl.size());
    } else if (*ev_froc) {
      if (ef_dets.empty() == ef_heatmaps.empty()) throw Error(Errc::config, "give exactly one of --detections, --heatmap");
      std::vector<Detection> dets;
      if (!ef_dets.empty()) {
        dets = read_detections_csv(ef_dets);
      } else {
        std::vector<fs::path> files;
        for (const auto& p : ef_heatmaps) {
          if (!fs::is_directory(p)) {
            files.push_back(p);
            continue;
          }
          for (const auto& e : fs::directory_iterator(p))
            if (e.path().extension() == ".hm") files.push_back(e.path());
        }
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          const auto d = extract_detections(read_heatmap(f), ef_t);
          dets.insert(dets.end(), d.begin(), d.end());
        }
        if (!ef_dets_out.empty()) write_detections_csv(ef_dets_out, dets);
      }
      const auto res = froc(froc_slides_from_dir(dets, ef_gt));
      if (!ef_table.empty()) csv::open_out(ef_table) << froc_table(res);
      if (!ef_plot.empty()) write_png(ef_plot, plot_curve(froc_points(res), res.fp_rates.back()));
      for (std::size_t i = 0; i < res.fp_rates.size(); ++i)
        std::printf("FP/image %-5g sensitivity %.4f\n", res.fp_rates[i], res.sensitivities[i]);
      std::printf("FROC score %.6f\n", res.score);
    } else if (*run) {
      std::ifstream in(run_cfg);
      if (!in) throw Error(Errc::config, "cannot open config " + run_cfg.string());
      nlohmann::json j;
      try {
        in >> j;
      } catch (const nlohmann::json::exception& e) {
        throw Error(Errc::config, std::string("config is not valid JSON: ") + e.what());
      }
      if (!j.is_object()) throw Error(Errc::config, "config must be a JSON object");
      if (run_seed) j["seed"] = *run_seed;
      if (run_out) j["output"] = *run_out;
      if (run_dataset) j["dataset"] = *run_dataset;
      if (app.get_option("--workers")->count()) j["workers"] = workers;
      auto cfg = pipeline_config_from_json(j);
      const auto base = run_cfg.parent_path();
      if (cfg.dataset.is_relative() && !run_dataset) cfg.dataset = base / cfg.dataset;
      if (cfg.output.is_relative() && !run_out) cfg.output = base / cfg.output;
      const auto r = run_pipeline(cfg);
      auto show = [](const std::optional<double>& v) { return v ? std::to_string(*v) : std::string("n/a"); };
      std::cout << "test AUC " << show(r.test_auc) << ", val AUC " << show(r.val_auc) << ", test FROC "
                << show(r.test_froc) << "\nreport: " << (cfg.output / "report.json").string() << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "wsi: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "wsi: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
