#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "uacqr/matrix.hpp"
#include "uacqr/parallel.hpp"
#include "uacqr/rng.hpp"
#include "uacqr/weighted_empirical.hpp"

namespace uacqr {

struct ForestParams {
  std::size_t n_trees = 100;
  std::size_t min_samples_leaf = 1;  // counts bootstrap multiplicity
  std::size_t max_depth = 0;         // 0 = unlimited
  std::size_t mtry = 0;              // 0 = all features
  bool bootstrap = true;
  std::uint64_t seed = 0;
  std::size_t n_threads = 1;
};

struct TreeNode {
  std::int32_t feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  std::uint32_t left = 0;
  std::uint32_t right = 0;
  std::uint32_t leaf_begin = 0;  // into Tree::entries
  std::uint32_t leaf_end = 0;
  std::uint32_t leaf_count = 0;  // total multiplicity in the leaf

  bool is_leaf() const { return feature < 0; }
};

// One fitted tree. Leaf entries are (training index, multiplicity) pairs kept
// sorted by (response value, index); the prediction paths below depend on that
// ordering for reproducible weighted sums.
struct Tree {
  struct LeafEntry {
    std::uint32_t index;
    std::uint32_t mult;
  };

  std::vector<TreeNode> nodes;
  std::vector<LeafEntry> entries;

  const TreeNode& leaf_for(std::span<const double> x) const {
    std::uint32_t id = 0;
    while (!nodes[id].is_leaf()) {
      const TreeNode& nd = nodes[id];
      id = (x[static_cast<std::size_t>(nd.feature)] <= nd.threshold) ? nd.left : nd.right;
    }
    return nodes[id];
  }
};

class ForestModel {
 public:
  ForestModel() = default;

  ForestModel(std::vector<Tree> trees, ForestParams params, std::vector<double> train_y,
              std::size_t n_features)
      : trees_(std::move(trees)),
        params_(std::move(params)),
        train_y_(std::move(train_y)),
        n_features_(n_features) {
    rebuild_order();
  }

  const std::vector<Tree>& trees() const { return trees_; }
  const ForestParams& params() const { return params_; }
  const std::vector<double>& train_responses() const { return train_y_; }
  std::size_t n_train() const { return train_y_.size(); }
  std::size_t n_features() const { return n_features_; }
  std::size_t n_trees() const { return trees_.size(); }

  // Training indices ordered by (response value, index); the canonical
  // accumulation order for every weighted sum over the training responses.
  const std::vector<std::uint32_t>& response_order() const { return y_order_; }

  // Same partitions, new stored responses. Leaf entries are re-sorted under
  // the new response values; a strictly increasing transform leaves the order
  // (and hence all leaf weights) untouched.
  ForestModel with_responses(std::vector<double> new_y) const {
    if (new_y.size() != train_y_.size())
      throw std::invalid_argument("with_responses: response count mismatch");
    ForestModel out = *this;
    out.train_y_ = std::move(new_y);
    for (Tree& t : out.trees_) {
      for (const TreeNode& nd : t.nodes) {
        if (!nd.is_leaf()) continue;
        std::sort(t.entries.begin() + nd.leaf_begin, t.entries.begin() + nd.leaf_end,
                  [&](const Tree::LeafEntry& a, const Tree::LeafEntry& b) {
                    const double ya = out.train_y_[a.index], yb = out.train_y_[b.index];
                    if (ya != yb) return ya < yb;
                    return a.index < b.index;
                  });
      }
    }
    out.rebuild_order();
    return out;
  }

  // Forest consisting of tree b alone (shares the stored responses).
  ForestModel single_tree(std::size_t b) const {
    if (b >= trees_.size()) throw std::out_of_range("single_tree: tree index out of range");
    ForestModel out;
    out.trees_ = {trees_[b]};
    out.params_ = params_;
    out.params_.n_trees = 1;
    out.train_y_ = train_y_;
    out.n_features_ = n_features_;
    out.y_order_ = y_order_;
    return out;
  }

 private:
  void rebuild_order() {
    y_order_.resize(train_y_.size());
    std::iota(y_order_.begin(), y_order_.end(), 0u);
    std::sort(y_order_.begin(), y_order_.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (train_y_[a] != train_y_[b]) return train_y_[a] < train_y_[b];
      return a < b;
    });
  }

  std::vector<Tree> trees_;
  ForestParams params_;
  std::vector<double> train_y_;
  std::size_t n_features_ = 0;
  std::vector<std::uint32_t> y_order_;
};

namespace detail {

struct SplitChoice {
  double sse = std::numeric_limits<double>::infinity();
  std::int32_t feature = -1;
  double threshold = 0.0;
};

// Greedy variance-reduction split over the given candidate features.
// Thresholds sit at midpoints between consecutive distinct feature values;
// ties in the criterion resolve to the lowest feature index, then the lowest
// threshold (enforced by scan order + strict improvement).
inline SplitChoice best_split(const Matrix& X, std::span<const double> y,
                              const std::vector<std::uint32_t>& sample,
                              const std::vector<std::int32_t>& candidates,
                              std::size_t min_samples_leaf,
                              std::vector<std::pair<double, std::uint32_t>>& scratch) {
  SplitChoice best;
  const std::size_t m = sample.size();
  for (const std::int32_t f : candidates) {
    scratch.clear();
    scratch.reserve(m);
    for (const std::uint32_t i : sample)
      scratch.emplace_back(X(i, static_cast<std::size_t>(f)), i);
    std::sort(scratch.begin(), scratch.end(),
              [](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return a.second < b.second;
              });
    if (scratch.front().first == scratch.back().first) continue;  // constant feature

    double total_sum = 0.0, total_sq = 0.0;
    for (const auto& [v, i] : scratch) {
      total_sum += y[i];
      total_sq += y[i] * y[i];
    }
    double left_sum = 0.0, left_sq = 0.0;
    for (std::size_t j = 0; j + 1 < m; ++j) {
      const double yi = y[scratch[j].second];
      left_sum += yi;
      left_sq += yi * yi;
      if (scratch[j].first == scratch[j + 1].first) continue;
      const std::size_t n_left = j + 1, n_right = m - n_left;
      if (n_left < min_samples_leaf || n_right < min_samples_leaf) continue;
      const double sse_left = left_sq - left_sum * left_sum / static_cast<double>(n_left);
      const double sse_right = (total_sq - left_sq) -
                               (total_sum - left_sum) * (total_sum - left_sum) /
                                   static_cast<double>(n_right);
      const double sse = sse_left + sse_right;
      if (sse < best.sse) {
        best.sse = sse;
        best.feature = f;
        best.threshold = 0.5 * (scratch[j].first + scratch[j + 1].first);
      }
    }
  }
  return best;
}

inline void grow_node(Tree& tree, std::uint32_t node_id, std::vector<std::uint32_t>& sample,
                      std::size_t depth, const Matrix& X, std::span<const double> y,
                      const ForestParams& params, Rng& rng,
                      std::vector<std::pair<double, std::uint32_t>>& scratch) {
  const std::size_t p = X.cols();
  auto make_leaf = [&]() {
    std::sort(sample.begin(), sample.end(), [&](std::uint32_t a, std::uint32_t b) {
      if (y[a] != y[b]) return y[a] < y[b];
      return a < b;
    });
    TreeNode& nd = tree.nodes[node_id];
    nd.feature = -1;
    nd.leaf_begin = static_cast<std::uint32_t>(tree.entries.size());
    for (std::size_t j = 0; j < sample.size(); ++j) {
      if (j > 0 && sample[j] == sample[j - 1])
        ++tree.entries.back().mult;
      else
        tree.entries.push_back({sample[j], 1});
    }
    nd.leaf_end = static_cast<std::uint32_t>(tree.entries.size());
    nd.leaf_count = static_cast<std::uint32_t>(sample.size());
  };

  double ymin = y[sample[0]], ymax = y[sample[0]];
  for (const std::uint32_t i : sample) {
    ymin = std::min(ymin, y[i]);
    ymax = std::max(ymax, y[i]);
  }
  const bool depth_stop = params.max_depth > 0 && depth >= params.max_depth;
  if (depth_stop || ymin == ymax || sample.size() < 2 * params.min_samples_leaf) {
    make_leaf();
    return;
  }

  std::vector<std::int32_t> candidates;
  const std::size_t mtry = (params.mtry == 0 || params.mtry >= p) ? p : params.mtry;
  if (mtry == p) {
    candidates.resize(p);
    std::iota(candidates.begin(), candidates.end(), 0);
  } else {
    std::vector<std::int32_t> pool(p);
    std::iota(pool.begin(), pool.end(), 0);
    for (std::size_t j = 0; j < mtry; ++j) {
      const std::size_t k = j + static_cast<std::size_t>(bounded_uint(rng, p - j));
      std::swap(pool[j], pool[k]);
    }
    candidates.assign(pool.begin(), pool.begin() + mtry);
    std::sort(candidates.begin(), candidates.end());
  }

  const SplitChoice split =
      best_split(X, y, sample, candidates, params.min_samples_leaf, scratch);
  if (split.feature < 0) {
    make_leaf();
    return;
  }

  std::vector<std::uint32_t> left, right;
  for (const std::uint32_t i : sample) {
    if (X(i, static_cast<std::size_t>(split.feature)) <= split.threshold)
      left.push_back(i);
    else
      right.push_back(i);
  }
  sample.clear();
  sample.shrink_to_fit();

  const std::uint32_t left_id = static_cast<std::uint32_t>(tree.nodes.size());
  const std::uint32_t right_id = left_id + 1;
  tree.nodes.emplace_back();
  tree.nodes.emplace_back();
  {
    TreeNode& nd = tree.nodes[node_id];  // re-fetched: emplace_back may reallocate
    nd.feature = split.feature;
    nd.threshold = split.threshold;
    nd.left = left_id;
    nd.right = right_id;
  }
  grow_node(tree, left_id, left, depth + 1, X, y, params, rng, scratch);
  grow_node(tree, right_id, right, depth + 1, X, y, params, rng, scratch);
}

inline Tree grow_tree(const Matrix& X, std::span<const double> y, const ForestParams& params,
                      std::uint64_t tree_seed) {
  Rng rng(tree_seed);
  const std::size_t n = X.rows();
  std::vector<std::uint32_t> sample(n);
  if (params.bootstrap) {
    for (std::size_t i = 0; i < n; ++i)
      sample[i] = static_cast<std::uint32_t>(bounded_uint(rng, n));
  } else {
    std::iota(sample.begin(), sample.end(), 0u);
  }
  Tree tree;
  tree.nodes.emplace_back();
  std::vector<std::pair<double, std::uint32_t>> scratch;
  grow_node(tree, 0, sample, 0, X, y, params, rng, scratch);
  return tree;
}

}  // namespace detail

inline ForestModel fit_forest(const Matrix& X, const std::vector<double>& y,
                              const ForestParams& params) {
  if (X.rows() == 0 || X.cols() == 0) throw std::invalid_argument("fit_forest: empty input");
  if (y.size() != X.rows()) throw std::invalid_argument("fit_forest: |y| != rows(X)");
  if (params.n_trees == 0) throw std::invalid_argument("fit_forest: n_trees must be >= 1");
  if (params.min_samples_leaf == 0)
    throw std::invalid_argument("fit_forest: min_samples_leaf must be >= 1");
  if (params.mtry > X.cols()) throw std::invalid_argument("fit_forest: mtry exceeds feature count");
  for (const double v : y)
    if (!std::isfinite(v)) throw std::invalid_argument("fit_forest: non-finite response");

  std::vector<Tree> trees(params.n_trees);
  parallel_for(params.n_trees, params.n_threads, [&](std::size_t b) {
    trees[b] = detail::grow_tree(X, y, params, derive_seed(params.seed, b));
  });
  return ForestModel(std::move(trees), params, y, X.cols());
}

// w_i(x) = (1/B) sum_b mult_{b,i}(x) / |leaf_b(x)|; sums to 1.
inline std::vector<double> forest_weights(const ForestModel& model, std::span<const double> x) {
  if (model.n_trees() == 0) throw std::logic_error("forest_weights: model not fitted");
  if (x.size() != model.n_features())
    throw std::invalid_argument("forest_weights: feature vector has wrong length");
  std::vector<double> w(model.n_train(), 0.0);
  const std::size_t B = model.n_trees();
  for (const Tree& t : model.trees()) {
    const TreeNode& leaf = t.leaf_for(x);
    const double denom = static_cast<double>(static_cast<std::size_t>(leaf.leaf_count) * B);
    for (std::uint32_t e = leaf.leaf_begin; e < leaf.leaf_end; ++e)
      w[t.entries[e].index] += static_cast<double>(t.entries[e].mult) / denom;
  }
  return w;
}

namespace detail {

// Weighted empirical over the positive-weight training responses, accumulated
// in the canonical (response, index) order.
inline WeightedEmpirical weighted_empirical_from(const ForestModel& model,
                                                 const std::vector<double>& w) {
  std::vector<double> values, weights;
  values.reserve(w.size());
  weights.reserve(w.size());
  const auto& y = model.train_responses();
  for (const std::uint32_t i : model.response_order()) {
    if (w[i] > 0.0) {
      values.push_back(y[i]);
      weights.push_back(w[i]);
    }
  }
  return WeightedEmpirical(std::move(values), weights);
}

// Left-continuous quantile of one leaf's response multiset. Mirrors the
// arithmetic of forest_weights + WeightedEmpirical on a single-tree forest
// bit for bit (entries are stored in the same order; weights divide by the
// same integer product).
inline double leaf_quantile(const Tree& t, const TreeNode& leaf, std::span<const double> y,
                            double a) {
  const double denom = static_cast<double>(static_cast<std::size_t>(leaf.leaf_count) * 1);
  double cum = 0.0;
  for (std::uint32_t e = leaf.leaf_begin; e < leaf.leaf_end; ++e) {
    cum += static_cast<double>(t.entries[e].mult) / denom;
    if (cum >= a) return y[t.entries[e].index];
  }
  return y[t.entries[leaf.leaf_end - 1].index];
}

}  // namespace detail

// inf{ y_j : sum_i w_i(x) 1[Y_i <= y_j] >= a } over the stored responses.
inline double predict_quantile(const ForestModel& model, std::span<const double> x, double a) {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("predict_quantile: a must be in (0,1)");
  const auto w = forest_weights(model, x);
  const WeightedEmpirical dist = detail::weighted_empirical_from(model, w);
  const double q = dist.quantile(a);
  return std::isinf(q) ? dist.values().back() : q;
}

// Per-tree leaf quantiles; entry b equals predict_quantile on the forest
// consisting of tree b alone.
inline std::vector<double> per_tree_quantiles(const ForestModel& model, std::span<const double> x,
                                              double a) {
  if (!(a > 0.0 && a < 1.0)) throw std::invalid_argument("per_tree_quantiles: a must be in (0,1)");
  if (x.size() != model.n_features())
    throw std::invalid_argument("per_tree_quantiles: feature vector has wrong length");
  std::vector<double> out;
  out.reserve(model.n_trees());
  const auto& y = model.train_responses();
  for (const Tree& t : model.trees())
    out.push_back(detail::leaf_quantile(t, t.leaf_for(x), y, a));
  return out;
}

// F(y|x) = sum_i w_i(x) 1[Y_i <= y].
inline double conditional_cdf(const ForestModel& model, std::span<const double> x, double y) {
  const auto w = forest_weights(model, x);
  return detail::weighted_empirical_from(model, w).cdf(y);
}

// sum_i w_i(x) Y_i.
inline double predict_mean(const ForestModel& model, std::span<const double> x) {
  const auto w = forest_weights(model, x);
  const auto& y = model.train_responses();
  double out = 0.0;
  for (const std::uint32_t i : model.response_order()) out += w[i] * y[i];
  return out;
}

// ---- persistence (versioned text dump, lossless via hex floats) ----

inline void save_forest(const ForestModel& model, std::ostream& out) {
  out << "uacqr-forest v1\n";
  const ForestParams& p = model.params();
  out << "params " << p.n_trees << ' ' << p.min_samples_leaf << ' ' << p.max_depth << ' '
      << p.mtry << ' ' << (p.bootstrap ? 1 : 0) << ' ' << p.seed << '\n';
  out << "shape " << model.n_train() << ' ' << model.n_features() << '\n';
  char buf[48];
  out << "responses";
  for (const double v : model.train_responses()) {
    std::snprintf(buf, sizeof(buf), " %a", v);
    out << buf;
  }
  out << '\n';
  for (const Tree& t : model.trees()) {
    out << "tree " << t.nodes.size() << ' ' << t.entries.size() << '\n';
    for (const TreeNode& nd : t.nodes) {
      if (nd.is_leaf()) {
        out << "L " << nd.leaf_begin << ' ' << nd.leaf_end << ' ' << nd.leaf_count << '\n';
      } else {
        std::snprintf(buf, sizeof(buf), "%a", nd.threshold);
        out << "N " << nd.feature << ' ' << buf << ' ' << nd.left << ' ' << nd.right << '\n';
      }
    }
    for (const Tree::LeafEntry& e : t.entries) out << "E " << e.index << ' ' << e.mult << '\n';
  }
}

inline void save_forest(const ForestModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("save_forest: cannot open '" + path + "'");
  save_forest(model, out);
}

inline ForestModel load_forest(std::istream& in) {
  std::string line;
  auto next_line = [&]() {
    if (!std::getline(in, line)) throw std::runtime_error("load_forest: truncated input");
    return line;
  };
  if (next_line() != "uacqr-forest v1")
    throw std::runtime_error("load_forest: unsupported format or version");

  ForestParams p;
  std::string tag;
  {
    std::istringstream ss(next_line());
    int bs;
    ss >> tag >> p.n_trees >> p.min_samples_leaf >> p.max_depth >> p.mtry >> bs >> p.seed;
    if (!ss || tag != "params") throw std::runtime_error("load_forest: bad params line");
    p.bootstrap = bs != 0;
  }
  std::size_t n = 0, n_features = 0;
  {
    std::istringstream ss(next_line());
    ss >> tag >> n >> n_features;
    if (!ss || tag != "shape") throw std::runtime_error("load_forest: bad shape line");
  }
  std::vector<double> y(n);
  {
    std::istringstream ss(next_line());
    ss >> tag;
    if (tag != "responses") throw std::runtime_error("load_forest: bad responses line");
    std::string tok;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(ss >> tok)) throw std::runtime_error("load_forest: truncated responses");
      y[i] = std::strtod(tok.c_str(), nullptr);
    }
  }
  std::vector<Tree> trees(p.n_trees);
  for (Tree& t : trees) {
    std::size_t n_nodes = 0, n_entries = 0;
    {
      std::istringstream ss(next_line());
      ss >> tag >> n_nodes >> n_entries;
      if (!ss || tag != "tree") throw std::runtime_error("load_forest: bad tree line");
    }
    t.nodes.resize(n_nodes);
    for (TreeNode& nd : t.nodes) {
      std::istringstream ss(next_line());
      ss >> tag;
      if (tag == "L") {
        ss >> nd.leaf_begin >> nd.leaf_end >> nd.leaf_count;
        nd.feature = -1;
      } else if (tag == "N") {
        std::string thr;
        ss >> nd.feature >> thr >> nd.left >> nd.right;
        nd.threshold = std::strtod(thr.c_str(), nullptr);
      } else {
        throw std::runtime_error("load_forest: bad node line");
      }
      if (!ss) throw std::runtime_error("load_forest: bad node line");
    }
    t.entries.resize(n_entries);
    for (Tree::LeafEntry& e : t.entries) {
      std::istringstream ss(next_line());
      ss >> tag >> e.index >> e.mult;
      if (!ss || tag != "E") throw std::runtime_error("load_forest: bad entry line");
    }
  }
  return ForestModel(std::move(trees), p, std::move(y), n_features);
}

inline ForestModel load_forest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_forest: cannot open '" + path + "'");
  return load_forest(in);
}

}  // namespace uacqr
