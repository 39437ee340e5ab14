#include <catch2/catch_amalgamated.hpp>

#include "blindrep/forest.hpp"
#include "blindrep/rng.hpp"

using namespace blindrep;

namespace {

// Two Gaussian blobs separated along one coordinate.
void make_blobs(Matrix& x, std::vector<int>& y, size_t n, size_t dim, double gap, uint64_t seed) {
  Rng rng(seed);
  x = Matrix(n, dim);
  y.resize(n);
  for (size_t i = 0; i < n; ++i) {
    y[i] = static_cast<int>(i % 2);
    for (size_t j = 0; j < dim; ++j) x(i, j) = rng.normal();
    x(i, 2) += y[i] ? gap : -gap;
  }
}

}  // namespace

TEST_CASE("forest: fits cleanly separable data") {
  Matrix x;
  std::vector<int> y;
  make_blobs(x, y, 200, 8, 4.0, 3);
  ForestConfig cfg;
  cfg.num_trees = 20;
  const RandomForest f = RandomForest::fit(x, y, 2, cfg);
  size_t hits = 0;
  for (size_t i = 0; i < x.rows(); ++i) {
    if (f.predict(x.row_span(i)) == y[i]) ++hits;
  }
  CHECK(static_cast<double>(hits) / static_cast<double>(x.rows()) > 0.97);
}

TEST_CASE("forest: fixed seed gives identical trees and predictions") {
  Matrix x;
  std::vector<int> y;
  make_blobs(x, y, 120, 6, 1.0, 11);
  ForestConfig cfg;
  cfg.num_trees = 10;
  cfg.seed = 42;
  const RandomForest a = RandomForest::fit(x, y, 2, cfg);
  const RandomForest b = RandomForest::fit(x, y, 2, cfg);
  REQUIRE(a.trees().size() == b.trees().size());
  for (size_t t = 0; t < a.trees().size(); ++t) {
    const auto& ta = a.trees()[t].nodes;
    const auto& tb = b.trees()[t].nodes;
    REQUIRE(ta.size() == tb.size());
    for (size_t n = 0; n < ta.size(); ++n) {
      CHECK(ta[n].feature == tb[n].feature);
      CHECK(ta[n].threshold == tb[n].threshold);
      CHECK(ta[n].left == tb[n].left);
      CHECK(ta[n].histogram == tb[n].histogram);
    }
  }
  for (size_t i = 0; i < x.rows(); ++i) {
    CHECK(a.predict(x.row_span(i)) == b.predict(x.row_span(i)));
  }
}

TEST_CASE("forest: single split suffices for a 1-d threshold problem") {
  Matrix x(40, 1);
  std::vector<int> y(40);
  for (size_t i = 0; i < 40; ++i) {
    x(i, 0) = static_cast<double>(i);
    y[i] = i < 20 ? 0 : 1;
  }
  ForestConfig cfg;
  cfg.num_trees = 5;
  cfg.feature_candidates = 1;
  const RandomForest f = RandomForest::fit(x, y, 2, cfg);
  for (size_t i = 0; i < 40; ++i) {
    CHECK(f.predict(x.row_span(i)) == y[i]);
  }
}

TEST_CASE("forest: depth limit caps tree size") {
  Matrix x;
  std::vector<int> y;
  make_blobs(x, y, 300, 4, 0.3, 7);
  ForestConfig cfg;
  cfg.num_trees = 4;
  cfg.max_depth = 3;
  const RandomForest f = RandomForest::fit(x, y, 2, cfg);
  for (const DecisionTree& tree : f.trees()) {
    CHECK(tree.nodes.size() <= 15);  // full binary tree of depth 3
  }
}

TEST_CASE("forest: argument validation") {
  Matrix x(4, 2);
  std::vector<int> y{0, 1, 0, 1};
  ForestConfig cfg;
  CHECK_THROWS_AS(RandomForest::fit(Matrix(), {}, 2, cfg), DataError);
  CHECK_THROWS_AS(RandomForest::fit(x, y, 1, cfg), ArgumentError);
  CHECK_THROWS_AS(RandomForest::fit(x, std::vector<int>{0, 1, 0, 5}, 2, cfg), ArgumentError);
}
