#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "uacqr/conformal.hpp"

namespace uacqr {

inline bool has_infinite_endpoint(const IntervalBand& b) {
  return std::isinf(b.lower) || std::isinf(b.upper);
}

inline double band_width(const IntervalBand& b) { return b.upper - b.lower; }

inline double coverage(std::span<const IntervalBand> bands, std::span<const double> ys) {
  if (bands.size() != ys.size()) throw std::invalid_argument("coverage: length mismatch");
  if (bands.empty()) throw std::invalid_argument("coverage: empty input");
  std::size_t covered = 0;
  for (std::size_t i = 0; i < bands.size(); ++i)
    if (contains(bands[i], ys[i])) ++covered;
  return static_cast<double>(covered) / static_cast<double>(bands.size());
}

// (u-l) + (2/alpha)(l-y)1[y<l] + (2/alpha)(y-u)1[y>u]; finite endpoints only.
inline double interval_score_loss(const IntervalBand& band, double y, double alpha) {
  if (has_infinite_endpoint(band))
    throw std::invalid_argument("interval_score_loss: infinite endpoint");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("interval_score_loss: alpha must be in (0,1)");
  double loss = band.upper - band.lower;
  if (y < band.lower) loss += (2.0 / alpha) * (band.lower - y);
  if (y > band.upper) loss += (2.0 / alpha) * (y - band.upper);
  return loss;
}

struct CorrelationResult {
  double value = 0.0;
  bool degenerate = false;
};

// |Pearson correlation| of the coverage indicator against the band width;
// zero variance on either side reports 0 with the degeneracy flag set.
inline CorrelationResult coverage_width_correlation(std::span<const IntervalBand> bands,
                                                    std::span<const double> ys) {
  if (bands.size() != ys.size())
    throw std::invalid_argument("coverage_width_correlation: length mismatch");
  if (bands.size() < 2)
    throw std::invalid_argument("coverage_width_correlation: need at least 2 points");
  const double n = static_cast<double>(bands.size());
  double mean_c = 0.0, mean_w = 0.0;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    mean_c += contains(bands[i], ys[i]) ? 1.0 : 0.0;
    mean_w += band_width(bands[i]);
  }
  mean_c /= n;
  mean_w /= n;
  double scc = 0.0, sww = 0.0, scw = 0.0;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    const double dc = (contains(bands[i], ys[i]) ? 1.0 : 0.0) - mean_c;
    const double dw = band_width(bands[i]) - mean_w;
    scc += dc * dc;
    sww += dw * dw;
    scw += dc * dw;
  }
  if (scc <= 0.0 || sww <= 0.0) return {0.0, true};
  return {std::abs(scw / std::sqrt(scc * sww)), false};
}

struct BinRow {
  double lo = 0.0;
  double hi = 0.0;
  double coverage = std::numeric_limits<double>::quiet_NaN();    // NaN when empty
  double mean_width = std::numeric_limits<double>::quiet_NaN();  // finite bands only
  std::size_t count = 0;
};

// Equal-width bins over [range_lo, range_hi]; values at the right edge land in
// the last bin.
inline std::vector<BinRow> binned_conditional_coverage(std::span<const double> xs,
                                                       std::span<const IntervalBand> bands,
                                                       std::span<const double> ys,
                                                       std::size_t n_bins, double range_lo,
                                                       double range_hi) {
  if (xs.size() != bands.size() || xs.size() != ys.size())
    throw std::invalid_argument("binned_conditional_coverage: length mismatch");
  if (n_bins == 0) throw std::invalid_argument("binned_conditional_coverage: n_bins must be >= 1");
  if (!(range_hi >= range_lo))
    throw std::invalid_argument("binned_conditional_coverage: bad range");

  const double span = range_hi - range_lo;
  std::vector<BinRow> bins(n_bins);
  std::vector<std::size_t> covered(n_bins, 0), finite(n_bins, 0);
  std::vector<double> width_sum(n_bins, 0.0);
  for (std::size_t b = 0; b < n_bins; ++b) {
    bins[b].lo = range_lo + span * static_cast<double>(b) / static_cast<double>(n_bins);
    bins[b].hi = range_lo + span * static_cast<double>(b + 1) / static_cast<double>(n_bins);
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (xs[i] < range_lo || xs[i] > range_hi) continue;
    std::size_t b =
        (span == 0.0) ? 0
                      : static_cast<std::size_t>((xs[i] - range_lo) / span *
                                                 static_cast<double>(n_bins));
    if (b >= n_bins) b = n_bins - 1;
    ++bins[b].count;
    if (contains(bands[i], ys[i])) ++covered[b];
    if (!has_infinite_endpoint(bands[i])) {
      ++finite[b];
      width_sum[b] += band_width(bands[i]);
    }
  }
  for (std::size_t b = 0; b < n_bins; ++b) {
    if (bins[b].count > 0)
      bins[b].coverage = static_cast<double>(covered[b]) / static_cast<double>(bins[b].count);
    if (finite[b] > 0) bins[b].mean_width = width_sum[b] / static_cast<double>(finite[b]);
  }
  return bins;
}

inline std::vector<BinRow> binned_conditional_coverage(std::span<const double> xs,
                                                       std::span<const IntervalBand> bands,
                                                       std::span<const double> ys,
                                                       std::size_t n_bins) {
  if (xs.empty()) throw std::invalid_argument("binned_conditional_coverage: empty input");
  const auto [mn, mx] = std::minmax_element(xs.begin(), xs.end());
  return binned_conditional_coverage(xs, bands, ys, n_bins, *mn, *mx);
}

struct EvaluationReport {
  double coverage = 0.0;
  double avg_width = std::numeric_limits<double>::quiet_NaN();  // finite bands only
  double frac_infinite_width = 0.0;
  double mean_isl = std::numeric_limits<double>::quiet_NaN();   // finite bands only
  double cw_correlation = 0.0;
  bool cw_degenerate = false;
  std::size_t n = 0;
  std::size_t n_covered = 0;
  std::size_t n_infinite = 0;
  std::vector<BinRow> per_bin;  // filled by the binned overload
};

// Aggregate report; infinite-width bands count toward coverage but are
// excluded from width/ISL/correlation and tallied in frac_infinite_width.
inline EvaluationReport evaluate_bands(std::span<const IntervalBand> bands,
                                       std::span<const double> ys, double alpha) {
  if (bands.size() != ys.size()) throw std::invalid_argument("evaluate_bands: length mismatch");
  if (bands.empty()) throw std::invalid_argument("evaluate_bands: empty input");
  EvaluationReport rep;
  rep.n = bands.size();
  double width_sum = 0.0, isl_sum = 0.0;
  std::vector<IntervalBand> finite_bands;
  std::vector<double> finite_ys;
  for (std::size_t i = 0; i < bands.size(); ++i) {
    if (contains(bands[i], ys[i])) ++rep.n_covered;
    if (has_infinite_endpoint(bands[i])) {
      ++rep.n_infinite;
      continue;
    }
    width_sum += band_width(bands[i]);
    isl_sum += interval_score_loss(bands[i], ys[i], alpha);
    finite_bands.push_back(bands[i]);
    finite_ys.push_back(ys[i]);
  }
  rep.coverage = static_cast<double>(rep.n_covered) / static_cast<double>(rep.n);
  rep.frac_infinite_width = static_cast<double>(rep.n_infinite) / static_cast<double>(rep.n);
  const std::size_t n_finite = rep.n - rep.n_infinite;
  if (n_finite > 0) {
    rep.avg_width = width_sum / static_cast<double>(n_finite);
    rep.mean_isl = isl_sum / static_cast<double>(n_finite);
  }
  if (finite_bands.size() >= 2) {
    const auto corr = coverage_width_correlation(finite_bands, finite_ys);
    rep.cw_correlation = corr.value;
    rep.cw_degenerate = corr.degenerate;
  } else {
    rep.cw_degenerate = true;
  }
  return rep;
}

// Report with per-bin conditional coverage over a 1-D feature.
inline EvaluationReport evaluate_bands(std::span<const IntervalBand> bands,
                                       std::span<const double> ys, double alpha,
                                       std::span<const double> xs, std::size_t n_bins,
                                       double range_lo, double range_hi) {
  EvaluationReport rep = evaluate_bands(bands, ys, alpha);
  rep.per_bin = binned_conditional_coverage(xs, bands, ys, n_bins, range_lo, range_hi);
  return rep;
}

}  // namespace uacqr
