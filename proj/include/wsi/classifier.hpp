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
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/parallel.hpp"
#include "wsi/pyramid.hpp"
#include "wsi/rng.hpp"
#include "wsi/roi.hpp"
#include "wsi/sampler.hpp"
#include "wsi/subprocess.hpp"

namespace wsi {

// --- Color features ---------------------------------------------------------
//
// Four channels (R, G, B, HSV saturation), each scaled to [0, 1]. Per
// channel: mean, population std, and an 8-bin normalized histogram, giving
// 4 x (2 + 8) = 40 values laid out channel by channel.

inline constexpr std::size_t kColorChannels = 4;
inline constexpr std::size_t kColorBins = 8;
inline constexpr std::size_t kColorFeatureDim = kColorChannels * (2 + kColorBins);
inline constexpr const char* kColorFeatureSpec = "rgbs-mean-std-hist8";

using ColorFeatures = std::array<double, kColorFeatureDim>;

[[nodiscard]] inline ColorFeatures extract_color_features(const RgbImage& patch) {
  if (patch.empty()) throw Error(Errc::shape, "empty patch raster");
  std::array<double, kColorChannels> sum{};
  std::array<std::array<std::uint64_t, kColorBins>, kColorChannels> hist{};
  const auto& d = patch.data();
  std::vector<std::array<double, kColorChannels>> vals;
  vals.reserve(d.size() / 3);
  for (std::size_t i = 0; i + 2 < d.size(); i += 3) {
    const Rgb p{d[i], d[i + 1], d[i + 2]};
    const std::array<double, kColorChannels> v{p.r / 255.0, p.g / 255.0, p.b / 255.0,
                                               rgb_to_hsv(p).s};
    for (std::size_t c = 0; c < kColorChannels; ++c) {
      sum[c] += v[c];
      const auto bin = std::min<std::size_t>(kColorBins - 1, static_cast<std::size_t>(v[c] * kColorBins));
      ++hist[c][bin];
    }
    vals.push_back(v);
  }
  const double n = static_cast<double>(patch.pixel_count());
  ColorFeatures f{};
  for (std::size_t c = 0; c < kColorChannels; ++c) {
    const auto base = c * (2 + kColorBins);
    const double mean = sum[c] / n;
    double ss = 0;
    for (const auto& v : vals) ss += (v[c] - mean) * (v[c] - mean);
    f[base] = mean;
    f[base + 1] = std::sqrt(ss / n);
    for (std::size_t b = 0; b < kColorBins; ++b) f[base + 2 + b] = hist[c][b] / n;
  }
  return f;
}

// --- Baseline logistic model ------------------------------------------------

struct BaselineHyperparams {
  int epochs = 300;
  double learn_rate = 0.5;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
};

/// Linear logistic model over standardized color features.
struct BaselineModel {
  static constexpr int kFormatVersion = 1;

  std::vector<double> weights = std::vector<double>(kColorFeatureDim, 0.0);
  double bias = 0;
  std::vector<double> feature_mean = std::vector<double>(kColorFeatureDim, 0.0);
  std::vector<double> feature_scale = std::vector<double>(kColorFeatureDim, 1.0);
  BaselineHyperparams train_meta;

  [[nodiscard]] double predict(const ColorFeatures& f) const {
    if (weights.size() != kColorFeatureDim) throw Error(Errc::shape, "weight length mismatch");
    double z = bias;
    for (std::size_t i = 0; i < kColorFeatureDim; ++i)
      z += weights[i] * (f[i] - feature_mean[i]) / feature_scale[i];
    return 1.0 / (1.0 + std::exp(-z));
  }

  [[nodiscard]] double predict(const RgbImage& patch) const {
    return predict(extract_color_features(patch));
  }
};

struct BaselineTrainResult {
  BaselineModel model;
  /// Mean logistic loss before each epoch, plus the final loss.
  std::vector<double> loss_trace;
};

namespace detail {

[[nodiscard]] inline double logistic_loss(double p, int y) noexcept {
  constexpr double eps = 1e-15;
  p = std::clamp(p, eps, 1.0 - eps);
  return y ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace detail

/// Full-batch gradient descent from zero weights. Deterministic for a given
/// data order and hyperparameters.
[[nodiscard]] inline BaselineTrainResult train_baseline(std::span<const ColorFeatures> features,
                                                        std::span<const int> labels,
                                                        const BaselineHyperparams& hp) {
  if (features.size() != labels.size()) throw Error(Errc::shape, "feature/label count mismatch");
  if (hp.epochs < 0 || !(hp.learn_rate > 0)) throw Error(Errc::config, "bad hyperparameters");
  std::size_t positives = 0;
  for (int y : labels) positives += y != 0;
  if (positives == 0 || positives == labels.size())
    throw Error(Errc::config, "baseline training needs both classes");

  const auto n = features.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  BaselineTrainResult res;
  auto& m = res.model;
  m.train_meta = hp;
  for (std::size_t j = 0; j < kColorFeatureDim; ++j) {
    double s = 0, ss = 0;
    for (const auto& f : features) s += f[j];
    const double mean = s * inv_n;
    for (const auto& f : features) ss += (f[j] - mean) * (f[j] - mean);
    const double sd = std::sqrt(ss * inv_n);
    m.feature_mean[j] = mean;
    m.feature_scale[j] = sd > 1e-12 ? sd : 1.0;
  }
  std::vector<std::array<double, kColorFeatureDim>> z(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < kColorFeatureDim; ++j)
      z[i][j] = (features[i][j] - m.feature_mean[j]) / m.feature_scale[j];

  std::vector<double> grad(kColorFeatureDim);
  auto pass = [&](bool update) {
    double loss = 0, gb = 0;
    std::fill(grad.begin(), grad.end(), 0.0);
    for (std::size_t i = 0; i < n; ++i) {
      double a = m.bias;
      for (std::size_t j = 0; j < kColorFeatureDim; ++j) a += m.weights[j] * z[i][j];
      const double p = 1.0 / (1.0 + std::exp(-a));
      loss += detail::logistic_loss(p, labels[i]);
      const double r = p - labels[i];
      gb += r;
      for (std::size_t j = 0; j < kColorFeatureDim; ++j) grad[j] += r * z[i][j];
    }
    double penalty = 0;
    for (double w : m.weights) penalty += w * w;
    loss = loss * inv_n + 0.5 * hp.l2 * penalty;
    if (update) {
      for (std::size_t j = 0; j < kColorFeatureDim; ++j)
        m.weights[j] -= hp.learn_rate * (grad[j] * inv_n + hp.l2 * m.weights[j]);
      m.bias -= hp.learn_rate * gb * inv_n;
    }
    return loss;
  };
  for (int e = 0; e < hp.epochs; ++e) res.loss_trace.push_back(pass(true));
  res.loss_trace.push_back(pass(false));
  return res;
}

/// Trains on labeled rasters. Rasters of the configured patch size are
/// augmented (rotation, crop, flip) with `rng` before feature extraction.
[[nodiscard]] inline BaselineTrainResult train_baseline(std::span<const RgbImage> rasters,
                                                        std::span<const int> labels,
                                                        const BaselineHyperparams& hp, Rng& rng,
                                                        const SamplerConfig& sampler = {}) {
  std::vector<ColorFeatures> feats;
  feats.reserve(rasters.size());
  for (const auto& r : rasters) {
    if (r.width() == sampler.patch_size && r.height() == sampler.patch_size)
      feats.push_back(extract_color_features(augment(r, rng, sampler.patch_size, sampler.crop_size)));
    else
      feats.push_back(extract_color_features(r));
  }
  return train_baseline(std::span<const ColorFeatures>(feats), labels, hp);
}

inline void write_baseline(const std::filesystem::path& path, const BaselineModel& m) {
  auto out = csv::open_out(path);
  out << "wsi-baseline " << BaselineModel::kFormatVersion << "\n"
      << "feature_spec " << kColorFeatureSpec << " " << kColorFeatureDim << "\n"
      << "seed " << m.train_meta.seed << "\n"
      << "epochs " << m.train_meta.epochs << "\n"
      << "learn_rate " << csv::fmt(m.train_meta.learn_rate) << "\n"
      << "l2 " << csv::fmt(m.train_meta.l2) << "\n"
      << "bias " << csv::fmt(m.bias) << "\n";
  auto vec = [&](const char* key, const std::vector<double>& v) {
    out << key;
    for (double x : v) out << ' ' << csv::fmt(x);
    out << "\n";
  };
  vec("weights", m.weights);
  vec("mean", m.feature_mean);
  vec("scale", m.feature_scale);
}

[[nodiscard]] inline BaselineModel read_baseline(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open model " + path.string());
  BaselineModel m;
  std::string key, spec;
  int version = 0;
  std::size_t dim = 0;
  in >> key >> version;
  if (key != "wsi-baseline" || version != BaselineModel::kFormatVersion)
    throw Error(Errc::format, "not a baseline model file: " + path.string());
  in >> key >> spec >> dim;
  if (key != "feature_spec" || spec != kColorFeatureSpec || dim != kColorFeatureDim)
    throw Error(Errc::schema, "baseline feature_spec mismatch in " + path.string());
  in >> key >> m.train_meta.seed >> key >> m.train_meta.epochs >> key >> m.train_meta.learn_rate >>
      key >> m.train_meta.l2 >> key >> m.bias;
  auto vec = [&](const char* expect, std::vector<double>& v) {
    in >> key;
    if (key != expect) throw Error(Errc::format, std::string("expected ") + expect);
    for (auto& x : v) in >> x;
  };
  vec("weights", m.weights);
  vec("mean", m.feature_mean);
  vec("scale", m.feature_scale);
  if (!in) throw Error(Errc::format, "truncated model " + path.string());
  return m;
}

// --- Scoring ----------------------------------------------------------------

struct PatchScore {
  PatchRef patch;
  double p_tumor = 0;
  std::string model_id;
};

/// Anything that maps patches of one slide to tumor probabilities, in order.
class PatchScorer {
 public:
  virtual ~PatchScorer() = default;
  [[nodiscard]] virtual std::string model_id() const = 0;
  [[nodiscard]] virtual std::vector<double> score(const PyramidSlide& slide,
                                                  std::span<const PatchRef> patches) const = 0;
};

class BaselineScorer final : public PatchScorer {
 public:
  explicit BaselineScorer(BaselineModel model, std::string id = "baseline")
      : model_(std::move(model)), id_(std::move(id)) {}

  [[nodiscard]] std::string model_id() const override { return id_; }

  [[nodiscard]] std::vector<double> score(const PyramidSlide& slide,
                                          std::span<const PatchRef> patches) const override {
    std::vector<double> out;
    out.reserve(patches.size());
    for (const auto& p : patches) out.push_back(model_.predict(read_patch(slide, p)));
    return out;
  }

  [[nodiscard]] const BaselineModel& model() const noexcept { return model_; }

 private:
  BaselineModel model_;
  std::string id_;
};

/// External scorer process (the stand-in for a CNN runtime). Per connection
/// it receives `slide_id,level,x,y,size` lines and must answer each with one
/// line holding `p_tumor` as a decimal in [0, 1], strictly in order. Each
/// `score` call runs its own process; a worker pool therefore gets one
/// process per worker.
class ExternalScorer final : public PatchScorer {
 public:
  explicit ExternalScorer(std::string command, std::string id = "external")
      : command_(std::move(command)), id_(std::move(id)) {}

  [[nodiscard]] std::string model_id() const override { return id_; }

  [[nodiscard]] std::vector<double> score(const PyramidSlide&,
                                          std::span<const PatchRef> patches) const override {
    std::vector<double> out;
    if (patches.empty()) return out;
    LineProcess proc(command_);
    for (const auto& p : patches) {
      const auto request = p.slide_id + "," + std::to_string(p.level) + "," + std::to_string(p.x) +
                           "," + std::to_string(p.y) + "," + std::to_string(p.size);
      if (!proc.write_line(request))
        throw Error(Errc::adapter, "adapter closed its input before request '" + request + "'");
      const auto reply = proc.read_line();
      if (!reply) throw Error(Errc::adapter, "adapter gave no response to '" + request + "'");
      double v = 0;
      try {
        std::size_t used = 0;
        v = std::stod(*reply, &used);
        while (used < reply->size() && std::isspace(static_cast<unsigned char>((*reply)[used]))) ++used;
        if (used != reply->size()) throw std::invalid_argument(*reply);
      } catch (const std::exception&) {
        throw Error(Errc::adapter, "unparsable adapter response '" + *reply + "'");
      }
      if (!(v >= 0.0 && v <= 1.0))
        throw Error(Errc::adapter, "adapter response out of [0,1]: '" + *reply + "'");
      out.push_back(v);
    }
    proc.close_input();
    return out;
  }

 private:
  std::string command_;
  std::string id_;
};

/// One score per patch, in input order. Batches fan out over `workers`
/// threads and are reassembled by index.
[[nodiscard]] inline std::vector<PatchScore> score_patches(const PatchScorer& scorer,
                                                           std::span<const PatchRef> patches,
                                                           const PyramidSlide& slide,
                                                           std::size_t workers = 1,
                                                           std::size_t batch = 64) {
  for (const auto& p : patches)
    if (p.slide_id != slide.slide_id())
      throw Error(Errc::config, "patch of slide '" + p.slide_id + "' scored against '" +
                                    slide.slide_id() + "'");
  const std::size_t nbatch = (patches.size() + batch - 1) / batch;
  std::vector<std::vector<double>> parts(nbatch);
  parallel_for(nbatch, workers, [&](std::size_t b) {
    const auto first = b * batch;
    parts[b] = scorer.score(slide, patches.subspan(first, std::min(batch, patches.size() - first)));
  });
  std::vector<PatchScore> out;
  out.reserve(patches.size());
  const auto id = scorer.model_id();
  for (std::size_t b = 0; b < nbatch; ++b) {
    if (parts[b].size() != std::min(batch, patches.size() - b * batch))
      throw Error(Errc::adapter, "scorer returned the wrong number of scores");
    for (std::size_t k = 0; k < parts[b].size(); ++k) {
      const double p = parts[b][k];
      if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::adapter, "score outside [0,1]");
      out.push_back({patches[b * batch + k], p, id});
    }
  }
  return out;
}

/// Unweighted mean of aligned score lists.
[[nodiscard]] inline std::vector<PatchScore> ensemble_scores(
    std::span<const std::vector<PatchScore>> lists) {
  if (lists.empty()) throw Error(Errc::alignment, "no score lists to ensemble");
  const auto n = lists.front().size();
  for (const auto& l : lists) {
    if (l.size() != n) throw Error(Errc::alignment, "score lists differ in length");
    for (std::size_t i = 0; i < n; ++i)
      if (!(l[i].patch == lists.front()[i].patch))
        throw Error(Errc::alignment, "score lists disagree at position " + std::to_string(i));
  }
  std::vector<PatchScore> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0;
    for (const auto& l : lists) s += l[i].p_tumor;
    out.push_back({lists.front()[i].patch, s / static_cast<double>(lists.size()), "ensemble"});
  }
  return out;
}

// --- Score CSV: slide_id,level,x,y,size,p_tumor,model_id --------------------

inline void write_scores_csv(const std::filesystem::path& path,
                             std::span<const PatchScore> scores) {
  auto out = csv::open_out(path);
  out << "slide_id,level,x,y,size,p_tumor,model_id\n";
  for (const auto& s : scores)
    out << s.patch.slide_id << ',' << s.patch.level << ',' << s.patch.x << ',' << s.patch.y << ','
        << s.patch.size << ',' << csv::fmt(s.p_tumor) << ',' << s.model_id << '\n';
}

[[nodiscard]] inline std::vector<PatchScore> read_scores_csv(const std::filesystem::path& path) {
  const auto t = csv::read(path);
  const auto c_id = t.column("slide_id"), c_lv = t.column("level"), c_x = t.column("x"),
             c_y = t.column("y"), c_s = t.column("size"), c_p = t.column("p_tumor"),
             c_m = t.column("model_id");
  std::vector<PatchScore> out;
  for (const auto& r : t.rows) {
    PatchScore s;
    s.patch = {r[c_id], static_cast<int>(csv::to_int(r[c_lv])), csv::to_int(r[c_x]),
               csv::to_int(r[c_y]), csv::to_int(r[c_s]), std::nullopt};
    s.p_tumor = csv::to_double(r[c_p]);
    if (!(s.p_tumor >= 0.0 && s.p_tumor <= 1.0))
      throw Error(Errc::data, "p_tumor outside [0,1] in " + path.string());
    s.model_id = r[c_m];
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace wsi
