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
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wsi/csv.hpp"
#include "wsi/error.hpp"
#include "wsi/parallel.hpp"
#include "wsi/rng.hpp"

namespace wsi {

struct ForestConfig {
  int n_trees = 200;
  /// Unset means unlimited.
  std::optional<int> max_depth;
  int min_samples_leaf = 1;
  /// 0 selects ceil(sqrt(d)).
  int mtry = 0;
  bool bootstrap = true;
  std::uint64_t rng_seed = 0;
  std::size_t workers = 1;

  [[nodiscard]] int resolved_mtry(std::size_t d) const {
    return mtry > 0 ? mtry : static_cast<int>(std::ceil(std::sqrt(static_cast<double>(d))));
  }

  void validate(std::size_t d) const {
    if (n_trees < 1) throw Error(Errc::config, "n_trees must be >= 1");
    if (min_samples_leaf < 1) throw Error(Errc::config, "min_samples_leaf must be >= 1");
    if (max_depth && *max_depth < 0) throw Error(Errc::config, "max_depth must be >= 0");
    const int m = resolved_mtry(d);
    if (m < 1 || m > static_cast<int>(d))
      throw Error(Errc::config, "mtry must lie in [1, " + std::to_string(d) + "]");
  }
};

struct TreeNode {
  int feature = -1;  // -1 for leaves
  double threshold = 0;
  int left = -1, right = -1;
  double p_tumor = 0;          // leaf class-1 probability; class-0 is 1 - p_tumor
  std::int64_t n_samples = 0;  // bootstrap multiplicity included
  double impurity_decrease = 0;  // count-weighted Gini decrease at a split

  [[nodiscard]] bool is_leaf() const noexcept { return feature < 0; }
};

/// Nodes in preorder; node 0 is the root.
struct DecisionTree {
  std::vector<TreeNode> nodes;

  [[nodiscard]] double predict(std::span<const double> x) const {
    int i = 0;
    while (!nodes[static_cast<std::size_t>(i)].is_leaf()) {
      const auto& n = nodes[static_cast<std::size_t>(i)];
      i = x[static_cast<std::size_t>(n.feature)] <= n.threshold ? n.left : n.right;
    }
    return nodes[static_cast<std::size_t>(i)].p_tumor;
  }
};

struct ForestModel {
  static constexpr int kFormatVersion = 1;

  std::vector<DecisionTree> trees;
  std::size_t feature_dim = 0;
  ForestConfig config;
  /// NaN when bootstrap is off or no sample was ever out of bag.
  double oob_error = std::numeric_limits<double>::quiet_NaN();
};

namespace detail {

// Sum of squared class counts over child size, the part of the weighted
// Gini decrease that varies between candidate splits. Compared exactly.
struct SplitScore {
  std::int64_t left_sq = 0, left_n = 1, right_sq = 0, right_n = 1;

  [[nodiscard]] unsigned __int128 numer() const noexcept {
    return static_cast<unsigned __int128>(left_sq) * static_cast<unsigned __int128>(right_n) +
           static_cast<unsigned __int128>(right_sq) * static_cast<unsigned __int128>(left_n);
  }
  [[nodiscard]] unsigned __int128 denom() const noexcept {
    return static_cast<unsigned __int128>(left_n) * static_cast<unsigned __int128>(right_n);
  }
  [[nodiscard]] double value() const noexcept {
    return static_cast<double>(left_sq) / static_cast<double>(left_n) +
           static_cast<double>(right_sq) / static_cast<double>(right_n);
  }
};

[[nodiscard]] inline int compare(const SplitScore& a, const SplitScore& b) noexcept {
  const auto l = a.numer() * b.denom(), r = b.numer() * a.denom();
  return l < r ? -1 : (l > r ? 1 : 0);
}

struct TreeBuilder {
  std::span<const std::vector<double>> X;
  std::span<const int> y;
  const ForestConfig& cfg;
  int mtry;
  Rng& rng;
  DecisionTree tree;
  std::vector<int> features;

  int build(std::vector<std::size_t>& idx, int depth) {
    const int id = static_cast<int>(tree.nodes.size());
    tree.nodes.emplace_back();
    std::int64_t pos = 0;
    for (auto i : idx) pos += y[i];
    const auto n = static_cast<std::int64_t>(idx.size());
    auto& node = tree.nodes.back();
    node.n_samples = n;
    node.p_tumor = static_cast<double>(pos) / static_cast<double>(n);

    const bool pure = pos == 0 || pos == n;
    const bool depth_hit = cfg.max_depth && depth >= *cfg.max_depth;
    if (pure || depth_hit || n < 2 * cfg.min_samples_leaf) return id;

    struct Best {
      bool found = false;
      int feature = 0;
      double threshold = 0;
      SplitScore score;
    } best;

    // Visit features in random order until mtry non-constant ones have been
    // evaluated, falling through to further features if some are constant.
    const auto d = features.size();
    int evaluated = 0;
    std::vector<std::pair<double, int>> column(idx.size());
    for (std::size_t k = 0; k < d && evaluated < mtry; ++k) {
      const auto j = k + uniform_below(rng, d - k);
      std::swap(features[k], features[j]);
      const int f = features[k];
      for (std::size_t r = 0; r < idx.size(); ++r)
        column[r] = {X[idx[r]][static_cast<std::size_t>(f)], y[idx[r]]};
      std::sort(column.begin(), column.end());
      if (column.front().first == column.back().first) continue;
      ++evaluated;
      std::int64_t left_pos = 0;
      for (std::size_t r = 0; r + 1 < column.size(); ++r) {
        left_pos += column[r].second;
        if (column[r].first == column[r + 1].first) continue;
        const auto nl = static_cast<std::int64_t>(r + 1), nr = n - nl;
        if (nl < cfg.min_samples_leaf || nr < cfg.min_samples_leaf) continue;
        const auto right_pos = pos - left_pos;
        SplitScore s{left_pos * left_pos + (nl - left_pos) * (nl - left_pos), nl,
                     right_pos * right_pos + (nr - right_pos) * (nr - right_pos), nr};
        double thr = 0.5 * (column[r].first + column[r + 1].first);
        if (!(thr < column[r + 1].first)) thr = column[r].first;
        const int c = best.found ? compare(s, best.score) : 1;
        if (c > 0 || (c == 0 && (f < best.feature || (f == best.feature && thr < best.threshold)))) {
          best = {true, f, thr, s};
        }
      }
    }
    if (!best.found) return id;

    const double parent_sq = static_cast<double>(pos * pos + (n - pos) * (n - pos));
    const double decrease = best.score.value() - parent_sq / static_cast<double>(n);

    std::vector<std::size_t> left, right;
    for (auto i : idx)
      (X[i][static_cast<std::size_t>(best.feature)] <= best.threshold ? left : right).push_back(i);
    idx.clear();
    idx.shrink_to_fit();

    tree.nodes[static_cast<std::size_t>(id)].feature = best.feature;
    tree.nodes[static_cast<std::size_t>(id)].threshold = best.threshold;
    tree.nodes[static_cast<std::size_t>(id)].impurity_decrease = std::max(0.0, decrease);
    const int l = build(left, depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].left = l;
    const int r = build(right, depth + 1);
    tree.nodes[static_cast<std::size_t>(id)].right = r;
    return id;
  }
};

}  // namespace detail

inline void validate_training_data(std::span<const std::vector<double>> X, std::span<const int> y) {
  if (X.size() != y.size()) throw Error(Errc::shape, "X and y differ in length");
  if (X.size() < 2) throw Error(Errc::config, "need at least two samples");
  const auto d = X.front().size();
  if (d == 0) throw Error(Errc::shape, "zero-dimensional features");
  bool has0 = false, has1 = false;
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i].size() != d) throw Error(Errc::shape, "ragged feature matrix");
    for (double v : X[i])
      if (!std::isfinite(v)) throw Error(Errc::data, "non-finite value in row " + std::to_string(i));
    if (y[i] != 0 && y[i] != 1) throw Error(Errc::data, "labels must be 0 or 1");
    (y[i] ? has1 : has0) = true;
  }
  if (!has0 || !has1) throw Error(Errc::config, "training labels contain a single class");
}

/// Random forest with Gini splits. Tree t draws from its own stream seeded by
/// (rng_seed, t), so results do not depend on the worker count.
[[nodiscard]] inline ForestModel train_forest(std::span<const std::vector<double>> X,
                                              std::span<const int> y, const ForestConfig& cfg) {
  validate_training_data(X, y);
  const auto n = X.size(), d = X.front().size();
  cfg.validate(d);
  ForestModel model;
  model.feature_dim = d;
  model.config = cfg;
  model.trees.resize(static_cast<std::size_t>(cfg.n_trees));
  std::vector<std::vector<std::uint32_t>> in_bag(static_cast<std::size_t>(cfg.n_trees));

  parallel_for(model.trees.size(), cfg.workers, [&](std::size_t t) {
    Rng rng(derive_seed(cfg.rng_seed, t));
    std::vector<std::size_t> idx(n);
    auto& bag = in_bag[t];
    bag.assign(n, 0);
    if (cfg.bootstrap) {
      for (auto& i : idx) {
        i = static_cast<std::size_t>(uniform_below(rng, n));
        ++bag[i];
      }
      std::sort(idx.begin(), idx.end());
    } else {
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      std::fill(bag.begin(), bag.end(), 1);
    }
    detail::TreeBuilder b{X, y, cfg, cfg.resolved_mtry(d), rng, {}, {}};
    b.features.resize(d);
    std::iota(b.features.begin(), b.features.end(), 0);
    b.build(idx, 0);
    model.trees[t] = std::move(b.tree);
  });

  if (cfg.bootstrap) {
    std::size_t counted = 0, wrong = 0;
    for (std::size_t i = 0; i < n; ++i) {
      double sum = 0;
      std::size_t k = 0;
      for (std::size_t t = 0; t < model.trees.size(); ++t)
        if (in_bag[t][i] == 0) {
          sum += model.trees[t].predict(X[i]);
          ++k;
        }
      if (k == 0) continue;
      ++counted;
      wrong += ((sum / static_cast<double>(k) >= 0.5) ? 1 : 0) != y[i];
    }
    if (counted) model.oob_error = static_cast<double>(wrong) / static_cast<double>(counted);
  }
  return model;
}

/// Mean of the per-tree leaf probabilities.
[[nodiscard]] inline double predict_proba(const ForestModel& model, std::span<const double> x) {
  if (x.size() != model.feature_dim)
    throw Error(Errc::shape, "feature vector has " + std::to_string(x.size()) + " values, model expects " +
                                 std::to_string(model.feature_dim));
  double s = 0;
  for (const auto& t : model.trees) s += t.predict(x);
  return s / static_cast<double>(model.trees.size());
}

/// Mean decrease in impurity: per tree, normalized to sum 1, then averaged
/// and renormalized. All zeros only if no tree ever split.
[[nodiscard]] inline std::vector<double> feature_importance(const ForestModel& model) {
  std::vector<double> total(model.feature_dim, 0.0);
  for (const auto& t : model.trees) {
    std::vector<double> imp(model.feature_dim, 0.0);
    double s = 0;
    for (const auto& node : t.nodes)
      if (!node.is_leaf()) {
        imp[static_cast<std::size_t>(node.feature)] += node.impurity_decrease;
        s += node.impurity_decrease;
      }
    if (s <= 0) continue;
    for (std::size_t j = 0; j < imp.size(); ++j) total[j] += imp[j] / s;
  }
  const double s = std::accumulate(total.begin(), total.end(), 0.0);
  if (s > 0)
    for (auto& v : total) v /= s;
  return total;
}

/// Feature indices ordered by decreasing importance, ties by index.
[[nodiscard]] inline std::vector<std::size_t> rank_features(const std::vector<double>& importance) {
  std::vector<std::size_t> order(importance.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](auto a, auto b) { return importance[a] > importance[b]; });
  return order;
}

// --- Serialization ----------------------------------------------------------

[[nodiscard]] inline std::string forest_to_text(const ForestModel& m) {
  std::ostringstream out;
  const auto& c = m.config;
  out << "wsi-forest " << ForestModel::kFormatVersion << "\n"
      << "feature_dim " << m.feature_dim << "\n"
      << "config n_trees " << c.n_trees << " max_depth " << (c.max_depth ? *c.max_depth : -1)
      << " min_samples_leaf " << c.min_samples_leaf << " mtry " << c.mtry << " bootstrap "
      << (c.bootstrap ? 1 : 0) << " seed " << c.rng_seed << "\n"
      << "oob_error " << (std::isnan(m.oob_error) ? std::string("nan") : csv::fmt(m.oob_error))
      << "\n";
  for (std::size_t t = 0; t < m.trees.size(); ++t) {
    out << "tree " << t << " " << m.trees[t].nodes.size() << "\n";
    for (const auto& n : m.trees[t].nodes) {
      if (n.is_leaf())
        out << "L " << csv::fmt(n.p_tumor) << " " << n.n_samples << "\n";
      else
        out << "S " << n.feature << " " << csv::fmt(n.threshold) << " " << n.left << " "
            << n.right << " " << n.n_samples << " " << csv::fmt(n.impurity_decrease) << "\n";
    }
  }
  return out.str();
}

[[nodiscard]] inline ForestModel forest_from_text(std::istream& in) {
  ForestModel m;
  std::string key;
  int version = 0;
  in >> key >> version;
  if (key != "wsi-forest" || version != ForestModel::kFormatVersion)
    throw Error(Errc::format, "not a forest model");
  int max_depth = -1, bootstrap = 1;
  std::string oob;
  in >> key >> m.feature_dim >> key >> key >> m.config.n_trees >> key >> max_depth >> key >>
      m.config.min_samples_leaf >> key >> m.config.mtry >> key >> bootstrap >> key >>
      m.config.rng_seed >> key >> oob;
  if (!in) throw Error(Errc::format, "bad forest header");
  if (max_depth >= 0) m.config.max_depth = max_depth;
  m.config.bootstrap = bootstrap != 0;
  m.oob_error = oob == "nan" ? std::numeric_limits<double>::quiet_NaN() : csv::to_double(oob);
  m.trees.resize(static_cast<std::size_t>(m.config.n_trees));
  for (auto& t : m.trees) {
    std::size_t idx = 0, count = 0;
    in >> key >> idx >> count;
    if (!in || key != "tree") throw Error(Errc::format, "bad tree header");
    t.nodes.resize(count);
    for (auto& n : t.nodes) {
      std::string kind, v;
      in >> kind;
      if (kind == "L") {
        in >> v >> n.n_samples;
        n.p_tumor = csv::to_double(v);
      } else if (kind == "S") {
        std::string g;
        in >> n.feature >> v >> n.left >> n.right >> n.n_samples >> g;
        n.threshold = csv::to_double(v);
        n.impurity_decrease = csv::to_double(g);
        if (n.feature < 0 || static_cast<std::size_t>(n.feature) >= m.feature_dim ||
            n.left <= 0 || n.right <= 0 || static_cast<std::size_t>(n.left) >= count ||
            static_cast<std::size_t>(n.right) >= count)
          throw Error(Errc::format, "invalid split node");
      } else {
        throw Error(Errc::format, "unknown node kind '" + kind + "'");
      }
      if (!in) throw Error(Errc::format, "truncated forest model");
    }
    if (t.nodes.empty()) throw Error(Errc::format, "empty tree");
  }
  return m;
}

inline void write_forest(const std::filesystem::path& path, const ForestModel& m) {
  auto out = csv::open_out(path);
  out << forest_to_text(m);
}

[[nodiscard]] inline ForestModel read_forest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::io, "cannot open forest " + path.string());
  return forest_from_text(in);
}

}  // namespace wsi
