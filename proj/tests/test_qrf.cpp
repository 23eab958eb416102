#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <sstream>

#include "test_support.hpp"
#include "uacqr/qrf.hpp"
#include "uacqr/sim.hpp"

using namespace uacqr;
namespace ts = testsupport;

namespace {

Matrix random_features(Rng& g, std::size_t n, std::size_t p) {
  Matrix X(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) X(i, j) = uniform01(g);
  return X;
}

std::vector<double> random_responses(Rng& g, std::size_t n) {
  std::vector<double> y(n);
  for (double& v : y) v = sample_normal(g);
  return y;
}

std::string dump(const ForestModel& m) {
  std::ostringstream out;
  save_forest(m, out);
  return out.str();
}

void walk_leaves(const Tree& t, std::uint32_t id, std::size_t depth,
                 const std::function<void(const TreeNode&, std::size_t)>& fn) {
  const TreeNode& nd = t.nodes[id];
  if (nd.is_leaf()) {
    fn(nd, depth);
    return;
  }
  walk_leaves(t, nd.left, depth + 1, fn);
  walk_leaves(t, nd.right, depth + 1, fn);
}

}  // namespace

TEST_CASE("fit_forest collapses to single leaves when it must") {
  Rng g(2);
  const Matrix X = random_features(g, 4, 2);

  SECTION("min_samples_leaf equal to n") {
    ForestParams p;
    p.n_trees = 5;
    p.min_samples_leaf = 4;
    p.seed = 1;
    const ForestModel m = fit_forest(X, {1, 2, 3, 4}, p);
    for (const Tree& t : m.trees()) {
      REQUIRE(t.nodes.size() == 1);
      CHECK(t.nodes[0].leaf_count == 4);  // bootstrap multiset of size n
    }
  }
  SECTION("constant response") {
    ForestParams p;
    p.n_trees = 5;
    p.seed = 1;
    const ForestModel m = fit_forest(X, {7, 7, 7, 7}, p);
    for (const Tree& t : m.trees()) REQUIRE(t.nodes.size() == 1);
  }
}

TEST_CASE("fit_forest rejects bad input") {
  Rng g(2);
  const Matrix X = random_features(g, 4, 2);
  ForestParams p;
  CHECK_THROWS_AS(fit_forest(Matrix(), {}, p), std::invalid_argument);
  CHECK_THROWS_AS(fit_forest(X, {1, 2}, p), std::invalid_argument);
  p.mtry = 3;
  CHECK_THROWS_AS(fit_forest(X, {1, 2, 3, 4}, p), std::invalid_argument);
}

TEST_CASE("fit_forest is deterministic, also across thread counts") {
  Rng g(11);
  const Matrix X = random_features(g, 60, 3);
  const auto y = random_responses(g, 60);
  ForestParams p;
  p.n_trees = 12;
  p.min_samples_leaf = 2;
  p.seed = 99;
  const std::string one = dump(fit_forest(X, y, p));
  CHECK(one == dump(fit_forest(X, y, p)));
  p.n_threads = 2;
  CHECK(one == dump(fit_forest(X, y, p)));
  p.seed = 100;
  CHECK(one != dump(fit_forest(X, y, p)));
}

TEST_CASE("leaves honor min_samples_leaf and max_depth") {
  Rng g(4);
  const Matrix X = random_features(g, 80, 2);
  const auto y = random_responses(g, 80);
  ForestParams p;
  p.n_trees = 8;
  p.min_samples_leaf = 5;
  p.max_depth = 4;
  p.seed = 17;
  const ForestModel m = fit_forest(X, y, p);
  for (const Tree& t : m.trees()) {
    walk_leaves(t, 0, 0, [&](const TreeNode& leaf, std::size_t depth) {
      CHECK(leaf.leaf_count >= 5);
      CHECK(depth <= 4);
      std::uint32_t total = 0;
      for (std::uint32_t e = leaf.leaf_begin; e < leaf.leaf_end; ++e) total += t.entries[e].mult;
      CHECK(total == leaf.leaf_count);
    });
  }
}

TEST_CASE("mtry subsampling still fits and stays deterministic") {
  Rng g(6);
  const Matrix X = random_features(g, 50, 4);
  const auto y = random_responses(g, 50);
  ForestParams p;
  p.n_trees = 6;
  p.mtry = 1;
  p.seed = 5;
  CHECK(dump(fit_forest(X, y, p)) == dump(fit_forest(X, y, p)));
}

TEST_CASE("forest_weights on hand-built forests") {
  SECTION("one tree, leaf {3,7}") {
    std::vector<double> y = {0, 0, 0, 10, 0, 0, 0, 20};
    const ForestModel m = ts::make_forest({ts::make_leaf_tree({{3, 1}, {7, 1}}, y)}, y);
    const std::vector<double> x{0.0};
    const auto w = forest_weights(m, x);
    CHECK(w[3] == 0.5);
    CHECK(w[7] == 0.5);
    CHECK(w[0] == 0.0);
  }
  SECTION("two trees, leaves {1} and {2}") {
    std::vector<double> y = {0, 5, 9};
    const ForestModel m = ts::make_forest(
        {ts::make_leaf_tree({{1, 1}}, y), ts::make_leaf_tree({{2, 1}}, y)}, y);
    const std::vector<double> x{0.0};
    const auto w = forest_weights(m, x);
    CHECK(w[1] == 0.5);
    CHECK(w[2] == 0.5);
  }
}

TEST_CASE("forest_weights sum to one") {
  Rng g(8);
  for (int rep = 0; rep < 20; ++rep) {
    const std::size_t n = 10 + bounded_uint(g, 40);
    const Matrix X = random_features(g, n, 2);
    ForestParams p;
    p.n_trees = 7;
    p.min_samples_leaf = 1 + bounded_uint(g, 3);
    p.seed = g();
    const ForestModel m = fit_forest(X, random_responses(g, n), p);
    const std::vector<double> x{uniform01(g), uniform01(g)};
    const auto w = forest_weights(m, x);
    double total = 0.0;
    for (const double v : w) total += v;
    REQUIRE(std::abs(total - 1.0) < 1e-12);
  }
}

TEST_CASE("predict_quantile on a single shared leaf") {
  std::vector<double> y = {1, 2, 3, 4};
  const ForestModel m =
      ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 1}, {2, 1}, {3, 1}}, y)}, y);
  const std::vector<double> x{0.0};
  CHECK(predict_quantile(m, x, 0.5) == 2.0);
  CHECK(predict_quantile(m, x, 0.05) == 1.0);
  CHECK(predict_quantile(m, x, 0.9) == 4.0);
  CHECK_THROWS_AS(predict_quantile(m, x, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(predict_quantile(m, x, 1.0), std::invalid_argument);

  std::vector<double> c = {3, 3, 3};
  const ForestModel mc = ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 1}, {2, 1}}, c)}, c);
  for (const double a : {0.01, 0.3, 0.5, 0.99}) CHECK(predict_quantile(mc, x, a) == 3.0);
}

TEST_CASE("predict_quantile equals the brute-force weighted-quantile oracle exactly") {
  Rng g(21);
  for (int rep = 0; rep < 100; ++rep) {
    const std::size_t n = 5 + bounded_uint(g, 45);  // n <= 50
    const Matrix X = random_features(g, n, 2);
    ForestParams p;
    p.n_trees = 1 + bounded_uint(g, 10);
    p.min_samples_leaf = 1 + bounded_uint(g, 4);
    p.seed = g();
    const ForestModel m = fit_forest(X, random_responses(g, n), p);
    const std::vector<double> x{uniform01(g), uniform01(g)};
    const double a = 0.01 + 0.98 * uniform01(g);
    const auto w = forest_weights(m, x);
    const double oracle = ts::brute_weighted_quantile(w, m.train_responses(), a);
    REQUIRE(predict_quantile(m, x, a) == oracle);  // exact, not approximate
  }
}

TEST_CASE("quantiles are monotone in the level and never cross") {
  Rng g(31);
  const Matrix X = random_features(g, 60, 2);
  ForestParams p;
  p.n_trees = 10;
  p.seed = 3;
  const ForestModel m = fit_forest(X, random_responses(g, 60), p);
  for (int rep = 0; rep < 50; ++rep) {
    const std::vector<double> x{uniform01(g), uniform01(g)};
    double a1 = 0.01 + 0.98 * uniform01(g);
    double a2 = 0.01 + 0.98 * uniform01(g);
    if (a1 > a2) std::swap(a1, a2);
    REQUIRE(predict_quantile(m, x, a1) <= predict_quantile(m, x, a2));
    const auto lo = per_tree_quantiles(m, x, a1);
    const auto hi = per_tree_quantiles(m, x, a2);
    for (std::size_t b = 0; b < lo.size(); ++b) REQUIRE(lo[b] <= hi[b]);
  }
}

TEST_CASE("predict_quantile agrees with the CDF superlevel scan") {
  Rng g(41);
  const Matrix X = random_features(g, 40, 1);
  ForestParams p;
  p.n_trees = 6;
  p.seed = 12;
  const ForestModel m = fit_forest(X, random_responses(g, 40), p);
  for (int rep = 0; rep < 30; ++rep) {
    const std::vector<double> x{uniform01(g)};
    const double a = 0.02 + 0.96 * uniform01(g);
    std::vector<double> sorted = m.train_responses();
    std::sort(sorted.begin(), sorted.end());
    double via_cdf = sorted.back();
    for (const double y : sorted)
      if (conditional_cdf(m, x, y) >= a) {
        via_cdf = y;
        break;
      }
    REQUIRE(predict_quantile(m, x, a) == via_cdf);
  }
}

TEST_CASE("per_tree_quantiles on hand-built leaves") {
  std::vector<double> y = {1, 2, 2, 4, 0, 6};
  const ForestModel m = ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 1}}, y),
                                         ts::make_leaf_tree({{2, 1}, {3, 1}}, y),
                                         ts::make_leaf_tree({{4, 1}, {5, 1}}, y)},
                                        y);
  const std::vector<double> x{0.0};
  CHECK(per_tree_quantiles(m, x, 0.5) == std::vector<double>{1, 2, 0});

  std::vector<double> s = {5};
  const ForestModel ms = ts::make_forest({ts::make_leaf_tree({{0, 1}}, s)}, s);
  for (const double a : {0.01, 0.5, 0.99}) CHECK(per_tree_quantiles(ms, x, a)[0] == 5.0);
}

TEST_CASE("per_tree_quantiles match single-tree forests exactly") {
  Rng g(51);
  for (int rep = 0; rep < 10; ++rep) {
    const std::size_t n = 20 + bounded_uint(g, 30);
    const Matrix X = random_features(g, n, 2);
    ForestParams p;
    p.n_trees = 5;
    p.min_samples_leaf = 1 + bounded_uint(g, 3);
    p.seed = g();
    const ForestModel m = fit_forest(X, random_responses(g, n), p);
    for (int q = 0; q < 5; ++q) {
      const std::vector<double> x{uniform01(g), uniform01(g)};
      const double a = 0.05 + 0.9 * uniform01(g);
      const auto per_tree = per_tree_quantiles(m, x, a);
      for (std::size_t b = 0; b < m.n_trees(); ++b)
        REQUIRE(per_tree[b] == predict_quantile(m.single_tree(b), x, a));
    }
  }
}

TEST_CASE("conditional_cdf boundary behavior") {
  std::vector<double> y = {1, 3};
  const ForestModel m = ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 1}}, y)}, y);
  const std::vector<double> x{0.0};
  CHECK(conditional_cdf(m, x, 2.0) == 0.5);
  CHECK(conditional_cdf(m, x, 0.0) == 0.0);
  CHECK(conditional_cdf(m, x, 5.0) == 1.0);
}

TEST_CASE("predict_mean on hand-built leaves") {
  std::vector<double> y = {1, 3};
  const ForestModel m = ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 1}}, y)}, y);
  const std::vector<double> x{0.0};
  CHECK(predict_mean(m, x) == 2.0);

  std::vector<double> y2 = {0, 4};
  const ForestModel m2 = ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 3}}, y2)}, y2);
  CHECK(predict_mean(m2, x) == 3.0);  // weights (0.25, 0.75)

  std::vector<double> c = {5, 5, 5};
  const ForestModel mc = ts::make_forest({ts::make_leaf_tree({{0, 1}, {1, 1}, {2, 1}}, c)}, c);
  CHECK(predict_mean(mc, x) == 5.0);
}

TEST_CASE("frozen-structure monotone transforms map per-tree quantiles exactly") {
  Rng g(61);
  const Matrix X = random_features(g, 50, 2);
  const auto y = random_responses(g, 50);
  ForestParams p;
  p.n_trees = 8;
  p.min_samples_leaf = 2;
  p.seed = 9;
  const ForestModel m = fit_forest(X, y, p);

  auto grow = [](double v) { return std::exp(v) + 2.0 * v; };  // strictly increasing
  std::vector<double> gy(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) gy[i] = grow(y[i]);
  const ForestModel mg = m.with_responses(gy);

  for (int rep = 0; rep < 20; ++rep) {
    const std::vector<double> x{uniform01(g), uniform01(g)};
    const double a = 0.05 + 0.9 * uniform01(g);
    const auto base = per_tree_quantiles(m, x, a);
    const auto mapped = per_tree_quantiles(mg, x, a);
    for (std::size_t b = 0; b < base.size(); ++b) REQUIRE(mapped[b] == grow(base[b]));
    REQUIRE(predict_quantile(mg, x, a) == grow(predict_quantile(m, x, a)));
  }
}

TEST_CASE("forest persistence round-trips losslessly") {
  Rng g(71);
  const Matrix X = random_features(g, 40, 3);
  ForestParams p;
  p.n_trees = 6;
  p.min_samples_leaf = 2;
  p.seed = 77;
  const ForestModel m = fit_forest(X, random_responses(g, 40), p);
  std::stringstream buffer;
  save_forest(m, buffer);
  const ForestModel loaded = load_forest(buffer);
  CHECK(dump(loaded) == dump(m));
  for (int rep = 0; rep < 10; ++rep) {
    const std::vector<double> x{uniform01(g), uniform01(g), uniform01(g)};
    const double a = 0.05 + 0.9 * uniform01(g);
    REQUIRE(predict_quantile(loaded, x, a) == predict_quantile(m, x, a));
    REQUIRE(predict_mean(loaded, x) == predict_mean(m, x));
  }
}
