#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <vector>

#include "blindrep/errors.hpp"
#include "blindrep/matrix.hpp"
#include "blindrep/rng.hpp"

namespace blindrep {

struct ForestConfig {
  int num_trees = 50;
  int max_depth = 8;
  int min_samples_split = 2;
  int feature_candidates = 0;  // 0 -> floor(sqrt(dim)), at least 1
  uint64_t seed = 1;

  void validate() const {
    if (num_trees < 1) throw ConfigError("forest config: num_trees must be >= 1");
    if (max_depth < 1) throw ConfigError("forest config: max_depth must be >= 1");
    if (min_samples_split < 2) throw ConfigError("forest config: min_samples_split must be >= 2");
  }
};

// Axis-aligned CART tree with Gini impurity; leaves keep class histograms.
class DecisionTree {
 public:
  struct Node {
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::vector<double> histogram;  // class counts at leaves

    bool is_leaf() const { return left < 0; }
  };

  std::vector<Node> nodes;

  const std::vector<double>& leaf_histogram(std::span<const double> x) const {
    int at = 0;
    while (!nodes[static_cast<size_t>(at)].is_leaf()) {
      const Node& node = nodes[static_cast<size_t>(at)];
      at = x[static_cast<size_t>(node.feature)] < node.threshold ? node.left : node.right;
    }
    return nodes[static_cast<size_t>(at)].histogram;
  }

  int predict(std::span<const double> x) const {
    const auto& h = leaf_histogram(x);
    size_t best = 0;
    for (size_t c = 1; c < h.size(); ++c) {
      if (h[c] > h[best]) best = c;  // ties -> lowest class index
    }
    return static_cast<int>(best);
  }
};

class RandomForest {
 public:
  RandomForest() = default;

  static RandomForest fit(const Matrix& x, std::span<const int> y, int num_classes,
                          const ForestConfig& cfg) {
    cfg.validate();
    if (x.rows() == 0) throw DataError("random forest: empty training set");
    if (x.rows() != y.size()) throw ShapeError("random forest: rows vs labels mismatch");
    if (num_classes < 2) throw ArgumentError("random forest: need >= 2 classes");
    for (int v : y) {
      if (v < 0 || v >= num_classes) {
        throw ArgumentError("random forest: label " + std::to_string(v) + " out of range");
      }
    }

    RandomForest f;
    f.num_classes_ = num_classes;
    f.trees_.resize(static_cast<size_t>(cfg.num_trees));
    const size_t n = x.rows();
    const size_t dim = x.cols();
    size_t k = cfg.feature_candidates > 0
                   ? static_cast<size_t>(cfg.feature_candidates)
                   : static_cast<size_t>(std::floor(std::sqrt(static_cast<double>(dim))));
    k = std::clamp<size_t>(k, 1, dim);

    for (int t = 0; t < cfg.num_trees; ++t) {
      Rng rng(sub_seed(cfg.seed, static_cast<uint64_t>(t) + 101));
      std::vector<size_t> bag(n);
      for (size_t i = 0; i < n; ++i) bag[i] = rng.index(n);  // bootstrap
      Builder builder{x, y, num_classes, cfg, k, rng, f.trees_[static_cast<size_t>(t)]};
      builder.build(bag, 0);
    }
    return f;
  }

  int predict(std::span<const double> x) const {
    std::vector<double> votes(static_cast<size_t>(num_classes_), 0.0);
    for (const DecisionTree& tree : trees_) {
      const auto& h = tree.leaf_histogram(x);
      double total = 0.0;
      for (double v : h) total += v;
      for (size_t c = 0; c < votes.size(); ++c) votes[c] += h[c] / total;
    }
    size_t best = 0;
    for (size_t c = 1; c < votes.size(); ++c) {
      if (votes[c] > votes[best]) best = c;
    }
    return static_cast<int>(best);
  }

  const std::vector<DecisionTree>& trees() const { return trees_; }
  int num_classes() const { return num_classes_; }

 private:
  struct Builder {
    const Matrix& x;
    std::span<const int> y;
    int num_classes;
    const ForestConfig& cfg;
    size_t feature_candidates;
    Rng& rng;
    DecisionTree& tree;

    int build(const std::vector<size_t>& idx, int depth) {
      std::vector<double> counts(static_cast<size_t>(num_classes), 0.0);
      for (size_t i : idx) counts[static_cast<size_t>(y[i])] += 1.0;

      const int node_id = static_cast<int>(tree.nodes.size());
      tree.nodes.push_back({});

      bool pure = false;
      for (double c : counts) {
        if (c == static_cast<double>(idx.size())) pure = true;
      }
      if (depth >= cfg.max_depth || pure ||
          idx.size() < static_cast<size_t>(cfg.min_samples_split)) {
        tree.nodes[static_cast<size_t>(node_id)].histogram = std::move(counts);
        return node_id;
      }

      // Candidate features: seeded sample without replacement.
      std::vector<size_t> features(x.cols());
      std::iota(features.begin(), features.end(), size_t{0});
      for (size_t i = 0; i < feature_candidates; ++i) {
        std::swap(features[i], features[i + rng.index(features.size() - i)]);
      }
      features.resize(feature_candidates);

      double best_score = gini(counts, static_cast<double>(idx.size()));
      int best_feature = -1;
      double best_threshold = 0.0;
      std::vector<std::pair<double, int>> ordered(idx.size());
      std::vector<double> left(static_cast<size_t>(num_classes), 0.0);

      for (size_t f : features) {
        for (size_t i = 0; i < idx.size(); ++i) {
          ordered[i] = {x(idx[i], f), y[idx[i]]};
        }
        std::sort(ordered.begin(), ordered.end());
        std::fill(left.begin(), left.end(), 0.0);
        const double total = static_cast<double>(idx.size());
        for (size_t i = 0; i + 1 < ordered.size(); ++i) {
          left[static_cast<size_t>(ordered[i].second)] += 1.0;
          if (ordered[i].first == ordered[i + 1].first) continue;  // split only between distinct values
          const double nl = static_cast<double>(i + 1);
          const double nr = total - nl;
          double gl = 1.0, gr = 1.0;
          for (size_t c = 0; c < left.size(); ++c) {
            const double pl = left[c] / nl;
            const double pr = (counts[c] - left[c]) / nr;
            gl -= pl * pl;
            gr -= pr * pr;
          }
          const double score = (nl * gl + nr * gr) / total;
          if (score + 1e-12 < best_score) {
            best_score = score;
            best_feature = static_cast<int>(f);
            best_threshold = 0.5 * (ordered[i].first + ordered[i + 1].first);
          }
        }
      }

      if (best_feature < 0) {
        tree.nodes[static_cast<size_t>(node_id)].histogram = std::move(counts);
        return node_id;
      }

      std::vector<size_t> left_idx, right_idx;
      for (size_t i : idx) {
        (x(i, static_cast<size_t>(best_feature)) < best_threshold ? left_idx : right_idx)
            .push_back(i);
      }
      if (left_idx.empty() || right_idx.empty()) {
        tree.nodes[static_cast<size_t>(node_id)].histogram = std::move(counts);
        return node_id;
      }
      tree.nodes[static_cast<size_t>(node_id)].feature = best_feature;
      tree.nodes[static_cast<size_t>(node_id)].threshold = best_threshold;
      const int l = build(left_idx, depth + 1);
      tree.nodes[static_cast<size_t>(node_id)].left = l;
      const int r = build(right_idx, depth + 1);
      tree.nodes[static_cast<size_t>(node_id)].right = r;
      return node_id;
    }

    static double gini(const std::vector<double>& counts, double total) {
      double g = 1.0;
      for (double c : counts) {
        const double p = c / total;
        g -= p * p;
      }
      return g;
    }
  };

  std::vector<DecisionTree> trees_;
  int num_classes_ = 0;
};

}  // namespace blindrep
