#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

#include "uacqr/conformal.hpp"
#include "uacqr/ensemble.hpp"
#include "uacqr/matrix.hpp"
#include "uacqr/metrics.hpp"
#include "uacqr/parallel.hpp"
#include "uacqr/qrf.hpp"

namespace uacqr {

// Everything the seven methods need at one evaluation point, computed from a
// forest in a single pass over the trees.
struct PointPrediction {
  WeightedEmpirical dist;       // full-forest weighted empirical distribution
  double q_lo = 0.0;            // full-forest quantiles at the target levels
  double q_hi = 0.0;
  double q_med = 0.0;
  double mu = 0.0;
  EnsembleQuantiles per_tree;   // per-tree leaf quantiles, in tree order
};

inline PointPrediction predict_point(const ForestModel& model, std::span<const double> x,
                                     const TargetQuantiles& tq) {
  PointPrediction out;
  const auto w = forest_weights(model, x);
  out.dist = detail::weighted_empirical_from(model, w);

  auto clamped_quantile = [&](double a) {
    const double q = out.dist.quantile(a);
    return std::isinf(q) ? out.dist.values().back() : q;
  };
  out.q_lo = clamped_quantile(tq.alpha_lo);
  out.q_hi = clamped_quantile(tq.alpha_hi);
  out.q_med = clamped_quantile(0.5);

  const auto& y = model.train_responses();
  double mu = 0.0;
  for (const std::uint32_t i : model.response_order()) mu += w[i] * y[i];
  out.mu = mu;

  out.per_tree.lo.reserve(model.n_trees());
  out.per_tree.hi.reserve(model.n_trees());
  for (const Tree& t : model.trees()) {
    const TreeNode& leaf = t.leaf_for(x);
    out.per_tree.lo.push_back(detail::leaf_quantile(t, leaf, y, tq.alpha_lo));
    out.per_tree.hi.push_back(detail::leaf_quantile(t, leaf, y, tq.alpha_hi));
  }
  return out;
}

struct IngredientDiagnostics {
  std::size_t floored_scales = 0;  // points where a nonpositive scale hit the floor
};

// Assembles the method's ScoreIngredients from a point prediction. For
// uacqr_s the baseline quantiles stay the full-forest predictions (the
// per-tree ensemble only feeds the dispersion estimate).
inline ScoreIngredients ingredients_for(const PointPrediction& pt, const MethodSpec& spec,
                                        IngredientDiagnostics* diag = nullptr) {
  ScoreIngredients ing;
  switch (spec.method) {
    case Method::mean_abs:
      ing.mu = pt.mu;
      break;
    case Method::cqr:
      ing.q_lo = pt.q_lo;
      ing.q_hi = pt.q_hi;
      break;
    case Method::cqr_r:
      ing.q_lo = pt.q_lo;
      ing.q_hi = pt.q_hi;
      if (diag && !(pt.q_hi - pt.q_lo > 0.0)) ++diag->floored_scales;
      break;
    case Method::cqr_m:
      ing.q_lo = pt.q_lo;
      ing.q_hi = pt.q_hi;
      ing.q_med = pt.q_med;
      if (diag && (!(pt.q_med - pt.q_lo > 0.0) || !(pt.q_hi - pt.q_med > 0.0)))
        ++diag->floored_scales;
      break;
    case Method::uacqr_s: {
      ing.q_lo = pt.q_lo;
      ing.q_hi = pt.q_hi;
      const auto [g_lo, g_hi] = dispersion(pt.per_tree, spec.dispersion);
      if (diag && (!(g_lo > 0.0) || !(g_hi > 0.0))) ++diag->floored_scales;
      ing.g_lo = floor_scale(g_lo);
      ing.g_hi = floor_scale(g_hi);
      break;
    }
    case Method::uacqr_p:
      ing.ensemble = pt.per_tree;
      std::sort(ing.ensemble.lo.begin(), ing.ensemble.lo.end());
      std::sort(ing.ensemble.hi.begin(), ing.ensemble.hi.end());
      break;
    case Method::dcp:
      ing.dist = pt.dist;
      break;
  }
  return ing;
}

// Ingredients from an externally produced ensemble (no forest). Supports the
// quantile-pair methods; cqr_m, dcp and mean_abs need model internals that a
// bare ensemble does not carry.
inline ScoreIngredients ingredients_from_external(const EnsembleQuantiles& e,
                                                  const MethodSpec& spec,
                                                  EnsembleAggregate aggregate,
                                                  IngredientDiagnostics* diag = nullptr) {
  if (spec.method == Method::cqr_m || spec.method == Method::dcp ||
      spec.method == Method::mean_abs)
    throw std::invalid_argument(
        "ingredients_from_external: method needs model internals beyond an ensemble");
  if (e.lo.empty() || e.lo.size() != e.hi.size())
    throw std::invalid_argument("ingredients_from_external: invalid ensemble");

  ScoreIngredients ing;
  if (spec.method == Method::uacqr_p) {
    ing.ensemble = e;
    std::sort(ing.ensemble.lo.begin(), ing.ensemble.lo.end());
    std::sort(ing.ensemble.hi.begin(), ing.ensemble.hi.end());
    return ing;
  }
  if (aggregate == EnsembleAggregate::mean) {
    const auto [q_lo, q_hi] = aggregate_mean(e);
    ing.q_lo = q_lo;
    ing.q_hi = q_hi;
  } else {
    ing.q_lo = e.lo.back();
    ing.q_hi = e.hi.back();
  }
  if (spec.method == Method::uacqr_s) {
    const auto [g_lo, g_hi] = dispersion(e, spec.dispersion);
    if (diag && (!(g_lo > 0.0) || !(g_hi > 0.0))) ++diag->floored_scales;
    ing.g_lo = floor_scale(g_lo);
    ing.g_hi = floor_scale(g_hi);
  } else if (diag && spec.method == Method::cqr_r && !(ing.q_hi - ing.q_lo > 0.0)) {
    ++diag->floored_scales;
  }
  return ing;
}

struct EvalOptions {
  std::vector<MethodSpec> methods;
  double alpha = 0.1;
  bool randomized = true;
  std::uint64_t seed = 0;  // drives the randomized cutoff draws
};

struct MethodEval {
  MethodSpec method;
  CalibratedModel calibrated;
  std::vector<IntervalBand> bands;  // one per test row
  IngredientDiagnostics diag;
};

// Calibrates every method on (X_cal, y_cal) and produces test bands. The
// per-point forest work is shared across methods.
inline std::vector<MethodEval> conformal_evaluate(const ForestModel& model, const Matrix& X_cal,
                                                  std::span<const double> y_cal,
                                                  const Matrix& X_test, const EvalOptions& opts) {
  if (X_cal.rows() != y_cal.size())
    throw std::invalid_argument("conformal_evaluate: calibration size mismatch");
  if (X_cal.rows() == 0) throw std::invalid_argument("conformal_evaluate: empty calibration set");
  const TargetQuantiles tq = TargetQuantiles::symmetric(opts.alpha);

  std::vector<PointPrediction> cal_pts(X_cal.rows());
  for (std::size_t i = 0; i < X_cal.rows(); ++i)
    cal_pts[i] = predict_point(model, X_cal.row(i), tq);
  std::vector<PointPrediction> test_pts(X_test.rows());
  for (std::size_t i = 0; i < X_test.rows(); ++i)
    test_pts[i] = predict_point(model, X_test.row(i), tq);

  std::vector<MethodEval> out;
  out.reserve(opts.methods.size());
  for (std::size_t mi = 0; mi < opts.methods.size(); ++mi) {
    const MethodSpec& spec = opts.methods[mi];
    MethodEval ev;
    ev.method = spec;

    std::vector<double> scores(cal_pts.size());
    for (std::size_t i = 0; i < cal_pts.size(); ++i)
      scores[i] = score(spec, ingredients_for(cal_pts[i], spec, &ev.diag), y_cal[i]);

    Rng rng(derive_seed(opts.seed, 0xC0DE0000ULL + mi));
    ev.calibrated = make_calibrated(spec, scores, opts.alpha, opts.randomized, &rng,
                                    model.n_trees());

    ev.bands.resize(test_pts.size());
    for (std::size_t i = 0; i < test_pts.size(); ++i)
      ev.bands[i] = predict_interval(spec, ingredients_for(test_pts[i], spec, &ev.diag),
                                     ev.calibrated);
    out.push_back(std::move(ev));
  }
  return out;
}

}  // namespace uacqr
