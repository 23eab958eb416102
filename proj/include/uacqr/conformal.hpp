#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "uacqr/ensemble.hpp"
#include "uacqr/rng.hpp"
#include "uacqr/weighted_empirical.hpp"

namespace uacqr {

enum class Method { mean_abs, cqr, cqr_r, cqr_m, dcp, uacqr_s, uacqr_p };

struct MethodSpec {
  Method method = Method::cqr;
  DispersionKind dispersion = DispersionKind::stddev;  // used by uacqr_s only
};

inline std::string to_string(Method m) {
  switch (m) {
    case Method::mean_abs: return "mean-abs";
    case Method::cqr: return "cqr";
    case Method::cqr_r: return "cqr-r";
    case Method::cqr_m: return "cqr-m";
    case Method::dcp: return "dcp";
    case Method::uacqr_s: return "uacqr-s";
    case Method::uacqr_p: return "uacqr-p";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "mean-abs" || s == "mean_abs") return Method::mean_abs;
  if (s == "cqr") return Method::cqr;
  if (s == "cqr-r" || s == "cqr_r") return Method::cqr_r;
  if (s == "cqr-m" || s == "cqr_m") return Method::cqr_m;
  if (s == "dcp") return Method::dcp;
  if (s == "uacqr-s" || s == "uacqr_s") return Method::uacqr_s;
  if (s == "uacqr-p" || s == "uacqr_p") return Method::uacqr_p;
  throw std::invalid_argument("unknown method '" + s + "'");
}

constexpr double kScaleFloor = 1e-8;

// Nonpositive scaling factors (degenerate widths / zero dispersion) are
// floored so scores stay finite.
inline double floor_scale(double s) { return s > 0.0 ? s : kScaleFloor; }

// Per-point inputs for scoring and interval construction. Only the fields the
// active method reads need to be populated. The uacqr_p ensemble is kept
// sorted ascending per side; dist carries the full conditional distribution
// for dcp.
struct ScoreIngredients {
  double q_lo = std::numeric_limits<double>::quiet_NaN();
  double q_hi = std::numeric_limits<double>::quiet_NaN();
  double q_med = std::numeric_limits<double>::quiet_NaN();
  double mu = std::numeric_limits<double>::quiet_NaN();
  double g_lo = std::numeric_limits<double>::quiet_NaN();
  double g_hi = std::numeric_limits<double>::quiet_NaN();
  EnsembleQuantiles ensemble;  // sorted ascending per side
  WeightedEmpirical dist;
};

struct RandomizedCutoff {
  std::size_t k = 0;
  double delta = 0.0;
  std::size_t T0 = 0;
  std::size_t T1 = 0;
  double chosen_t = 0.0;  // extended real; may be -inf (k=1) or +inf (k=n1+1)
  bool lower_open = false;
  bool upper_open = false;
};

struct CalibratedModel {
  MethodSpec method;
  double t_hat = 0.0;  // extended real; integer-valued in [0, B+1] for uacqr_p
  std::optional<RandomizedCutoff> randomized;
};

struct IntervalBand {
  double lower = 0.0;
  double upper = 0.0;
  bool lower_open = false;
  bool upper_open = false;

  bool is_empty() const { return !(lower <= upper); }
};

inline bool contains(const IntervalBand& b, double y) {
  const bool above = b.lower_open ? (y > b.lower) : (y >= b.lower);
  const bool below = b.upper_open ? (y < b.upper) : (y <= b.upper);
  return above && below;
}

namespace detail {

inline void require(bool cond, const char* msg) {
  if (!cond) throw std::invalid_argument(msg);
}

inline bool finite(double v) { return std::isfinite(v); }

// b-th order statistic of a pre-sorted side with the usual sentinels.
inline double sorted_orderstat(const std::vector<double>& sorted, long b) {
  const long B = static_cast<long>(sorted.size());
  if (b <= 0) return -std::numeric_limits<double>::infinity();
  if (b >= B + 1) return std::numeric_limits<double>::infinity();
  return sorted[static_cast<std::size_t>(b - 1)];
}

// The sublevel set {y : S_dcp(y) < t} (or <= t), computed with the same float
// expression |2*cum - 1| the score path uses, so points that share a leaf
// distribution (score atoms) land on the correct side exactly. The set is a
// contiguous run of support intervals: closed at its leftmost support value,
// open at the first excluded one.
inline IntervalBand dcp_score_set(const WeightedEmpirical& dist, double t, bool strict) {
  const double inf = std::numeric_limits<double>::infinity();
  const auto& vals = dist.values();
  const auto& cums = dist.cumulative();
  auto qualifies = [&](double s) { return strict ? (s < t) : (s <= t); };
  long j_lo = -1, j_hi = -1;
  for (std::size_t j = 0; j < cums.size(); ++j) {
    if (qualifies(std::abs(2.0 * cums[j] - 1.0))) {
      if (j_lo < 0) j_lo = static_cast<long>(j);
      j_hi = static_cast<long>(j);
    }
  }
  const bool below = qualifies(1.0);  // the region left of the support, F = 0
  IntervalBand band;
  if (j_lo < 0 && !below) {
    band.lower = inf;
    band.upper = -inf;
    return band;
  }
  band.lower_open = false;
  band.upper_open = true;
  band.lower = below ? -inf : vals[static_cast<std::size_t>(j_lo)];
  if (j_hi == static_cast<long>(vals.size()) - 1)
    band.upper = inf;
  else if (j_hi >= 0)
    band.upper = vals[static_cast<std::size_t>(j_hi) + 1];
  else
    band.upper = vals[0];  // only the below-support region qualifies
  return band;
}

inline void check_ingredients(const MethodSpec& spec, const ScoreIngredients& ing) {
  switch (spec.method) {
    case Method::mean_abs:
      require(finite(ing.mu), "ingredients: mu required for mean-abs");
      break;
    case Method::cqr:
    case Method::cqr_r:
      require(finite(ing.q_lo) && finite(ing.q_hi), "ingredients: q_lo/q_hi required");
      break;
    case Method::cqr_m:
      require(finite(ing.q_lo) && finite(ing.q_hi) && finite(ing.q_med),
              "ingredients: q_lo/q_med/q_hi required for cqr-m");
      break;
    case Method::uacqr_s:
      require(finite(ing.q_lo) && finite(ing.q_hi) && ing.g_lo > 0.0 && ing.g_hi > 0.0,
              "ingredients: q_lo/q_hi and positive g_lo/g_hi required for uacqr-s");
      break;
    case Method::uacqr_p:
      require(!ing.ensemble.lo.empty() && ing.ensemble.lo.size() == ing.ensemble.hi.size(),
              "ingredients: ensemble required for uacqr-p");
      break;
    case Method::dcp:
      require(!ing.dist.empty(), "ingredients: conditional distribution required for dcp");
      break;
  }
}

}  // namespace detail

// Smallest index t whose closed band contains y. Finite for every real y
// except uacqr_p, which may return B+1.
inline double score(const MethodSpec& spec, const ScoreIngredients& ing, double y) {
  if (!std::isfinite(y)) throw std::invalid_argument("score: y must be finite");
  detail::check_ingredients(spec, ing);
  switch (spec.method) {
    case Method::mean_abs:
      return std::abs(y - ing.mu);
    case Method::cqr:
      return std::max(ing.q_lo - y, y - ing.q_hi);
    case Method::cqr_r: {
      const double w = floor_scale(ing.q_hi - ing.q_lo);
      return std::max((ing.q_lo - y) / w, (y - ing.q_hi) / w);
    }
    case Method::cqr_m: {
      const double w_lo = floor_scale(ing.q_med - ing.q_lo);
      const double w_hi = floor_scale(ing.q_hi - ing.q_med);
      return std::max((ing.q_lo - y) / w_lo, (y - ing.q_hi) / w_hi);
    }
    case Method::uacqr_s:
      return std::max((ing.q_lo - y) / floor_scale(ing.g_lo),
                      (y - ing.q_hi) / floor_scale(ing.g_hi));
    case Method::uacqr_p: {
      // min{t : orderstat(lo, B+1-t) <= y <= orderstat(hi, t)}. Both
      // membership conditions are upward closed in t, so the minimum is the
      // larger of the two per-side thresholds.
      const auto& lo = ing.ensemble.lo;
      const auto& hi = ing.ensemble.hi;
      const long B = static_cast<long>(lo.size());
      const long cnt_lo_le = std::upper_bound(lo.begin(), lo.end(), y) - lo.begin();
      const long cnt_hi_lt = std::lower_bound(hi.begin(), hi.end(), y) - hi.begin();
      return static_cast<double>(std::max(B + 1 - cnt_lo_le, cnt_hi_lt + 1));
    }
    case Method::dcp:
      return std::abs(2.0 * ing.dist.cdf(y) - 1.0);
  }
  throw std::logic_error("score: unreachable");
}

namespace detail {

struct CalibrationRank {
  std::size_t k;
  double delta;
};

// k = ceil((1-alpha)(n1+1)) and delta = k - (1-alpha)(n1+1), guarded so a
// product that is an integer up to rounding noise is treated as exact.
inline CalibrationRank calibration_rank(double alpha, std::size_t n1) {
  const double q = (1.0 - alpha) * static_cast<double>(n1 + 1);
  const double rounded = std::floor(q + 0.5);
  if (std::abs(q - rounded) <= 1e-9 * (1.0 + std::abs(q)))
    return {static_cast<std::size_t>(rounded), 0.0};
  const double k = std::ceil(q);
  return {static_cast<std::size_t>(k), k - q};
}

}  // namespace detail

// t_hat = k-th smallest score with k = ceil((1-alpha)(n1+1)); +inf when
// k > n1.
inline double calibrate(std::vector<double> scores, double alpha) {
  if (scores.empty()) throw std::invalid_argument("calibrate: empty scores");
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("calibrate: alpha must be in (0,1)");
  const auto [k, delta] = detail::calibration_rank(alpha, scores.size());
  (void)delta;
  if (k > scores.size()) return std::numeric_limits<double>::infinity();
  std::nth_element(scores.begin(), scores.begin() + (k - 1), scores.end());
  return scores[k - 1];
}

// Smoothed (randomized) conformal cutoff: picks between the (k-1)-th and k-th
// order statistics with open/closed band boundaries, which removes both the
// rounding slack (delta) and tie-induced overcoverage, giving exactly 1-alpha
// marginal coverage. t_(n1+1) is taken to be +inf; t_(0) is -inf.
inline RandomizedCutoff calibrate_randomized(std::vector<double> scores, double alpha, Rng& rng) {
  if (scores.empty()) throw std::invalid_argument("calibrate_randomized: empty scores");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("calibrate_randomized: alpha must be in (0,1)");
  const std::size_t n1 = scores.size();
  std::sort(scores.begin(), scores.end());

  RandomizedCutoff cut;
  const auto [k, delta] = detail::calibration_rank(alpha, n1);
  cut.k = k;
  cut.delta = delta;

  const double inf = std::numeric_limits<double>::infinity();
  const double t_k = (k <= n1) ? scores[k - 1] : inf;
  const double t_km1 = (k >= 2) ? scores[k - 2] : -inf;

  cut.T0 = 0;
  if (k >= 2)
    for (std::size_t i = 0; i < k - 1; ++i)
      if (scores[i] == t_km1) ++cut.T0;
  cut.T1 = 0;
  if (k <= n1) {
    for (std::size_t i = k - 1; i < n1; ++i)
      if (scores[i] == t_k) ++cut.T1;
  } else {
    cut.T1 = 1;  // only the +inf sentinel occupies position n1+1
  }

  const double u = uniform01(rng);
  bool open;
  double chosen;
  if (t_km1 < t_k) {
    const double p1 = delta / static_cast<double>(cut.T0 + 1);               // open at t_(k-1)
    const double p2 = delta * static_cast<double>(cut.T0) / (cut.T0 + 1.0);  // closed at t_(k-1)
    const double p3 = (1.0 - delta) * static_cast<double>(cut.T1) / (cut.T1 + 1.0);  // open at t_(k)
    if (u < p1) {
      chosen = t_km1;
      open = true;
    } else if (u < p1 + p2) {
      chosen = t_km1;
      open = false;
    } else if (u < p1 + p2 + p3) {
      chosen = t_k;
      open = true;
    } else {
      chosen = t_k;
      open = false;
    }
  } else {
    const double p_open =
        (static_cast<double>(cut.T1) + delta) / static_cast<double>(cut.T0 + cut.T1 + 1);
    open = u < p_open;
    chosen = t_k;
  }
  cut.chosen_t = chosen;
  cut.lower_open = open;
  cut.upper_open = open;
  return cut;
}

// Convenience wrapper producing a CalibratedModel; ensemble_size is only
// consulted for uacqr_p (clamps the stored t_hat into {0..B+1}).
inline CalibratedModel make_calibrated(const MethodSpec& spec, const std::vector<double>& scores,
                                       double alpha, bool randomized, Rng* rng,
                                       std::size_t ensemble_size = 0) {
  CalibratedModel cal;
  cal.method = spec;
  if (randomized) {
    if (rng == nullptr) throw std::invalid_argument("make_calibrated: randomized needs an rng");
    cal.randomized = calibrate_randomized(scores, alpha, *rng);
    cal.t_hat = cal.randomized->chosen_t;
  } else {
    cal.t_hat = calibrate(scores, alpha);
  }
  if (spec.method == Method::uacqr_p) {
    const double cap = static_cast<double>(ensemble_size + 1);
    if (cal.t_hat > cap) cal.t_hat = cap;
    if (cal.t_hat < 0.0) cal.t_hat = 0.0;
  }
  return cal;
}

inline IntervalBand predict_interval(const MethodSpec& spec, const ScoreIngredients& ing,
                                     const CalibratedModel& cal) {
  if (cal.method.method != spec.method)
    throw std::invalid_argument("predict_interval: calibration/method mismatch");
  detail::check_ingredients(spec, ing);

  const double t = cal.randomized ? cal.randomized->chosen_t : cal.t_hat;
  bool lo_open = false, hi_open = false;
  if (cal.randomized) {
    lo_open = cal.randomized->lower_open;
    hi_open = cal.randomized->upper_open;
  }

  IntervalBand band;
  band.lower_open = lo_open;
  band.upper_open = hi_open;
  const double inf = std::numeric_limits<double>::infinity();

  switch (spec.method) {
    case Method::mean_abs:
      band.lower = ing.mu - t;
      band.upper = ing.mu + t;
      break;
    case Method::cqr:
      band.lower = ing.q_lo - t;
      band.upper = ing.q_hi + t;
      break;
    case Method::cqr_r: {
      const double w = floor_scale(ing.q_hi - ing.q_lo);
      band.lower = ing.q_lo - t * w;
      band.upper = ing.q_hi + t * w;
      break;
    }
    case Method::cqr_m: {
      const double w_lo = floor_scale(ing.q_med - ing.q_lo);
      const double w_hi = floor_scale(ing.q_hi - ing.q_med);
      band.lower = ing.q_lo - t * w_lo;
      band.upper = ing.q_hi + t * w_hi;
      break;
    }
    case Method::uacqr_s:
      band.lower = ing.q_lo - t * floor_scale(ing.g_lo);
      band.upper = ing.q_hi + t * floor_scale(ing.g_hi);
      break;
    case Method::uacqr_p: {
      // Integer-indexed family. An "open" randomized cutoff encodes the
      // strict event {score < t}, which for integer scores is the closed band
      // at t-1; the +inf sentinel gives the full line under either flag.
      const long B = static_cast<long>(ing.ensemble.lo.size());
      band.lower_open = band.upper_open = false;
      if (std::isinf(t) && t > 0) {
        band.lower = -inf;
        band.upper = inf;
        break;
      }
      long ti;
      if (std::isinf(t)) {
        ti = 0;  // -inf cutoff: empty band
      } else {
        ti = static_cast<long>(std::floor(t + 0.5));
        if (lo_open || hi_open) --ti;
        ti = std::clamp(ti, 0L, B + 1);
      }
      band.lower = detail::sorted_orderstat(ing.ensemble.lo, B + 1 - ti);
      band.upper = detail::sorted_orderstat(ing.ensemble.hi, ti);
      break;
    }
    case Method::dcp: {
      if (cal.randomized) {
        // Randomized cutoffs: realize {score < t} (open draw) or {score <= t}
        // (closed draw) exactly; dcp scores carry atoms, so an ordinary open
        // interval would not encode strictness and ties would overcover.
        band = detail::dcp_score_set(ing.dist, t, lo_open || hi_open);
        break;
      }
      if (std::isinf(t) && t < 0) {  // empty member of the family
        band.lower = inf;
        band.upper = -inf;
        break;
      }
      const double a_lo = (1.0 - t) / 2.0;
      const double a_hi = (1.0 + t) / 2.0;
      band.lower = (a_lo <= 0.0) ? -inf : ing.dist.quantile(a_lo);
      // Conjugate (right-continuous) inverse on the upper side so that
      // y <= upper(t) <=> 2F(y)-1 <= t holds with closed comparisons.
      band.upper = (a_hi >= 1.0) ? inf : ing.dist.quantile_upper(a_hi);
      break;
    }
  }
  return band;
}

}  // namespace uacqr
