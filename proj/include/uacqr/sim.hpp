#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "uacqr/data.hpp"
#include "uacqr/metrics.hpp"
#include "uacqr/pipeline.hpp"
#include "uacqr/rng.hpp"

namespace uacqr {

struct SimConfig {
  std::size_t n_train = 100;
  std::size_t n_cal = 100;
  std::size_t n_test = 200;
  std::size_t trials = 150;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  ForestParams forest;  // seed field is re-derived per trial
  std::vector<MethodSpec> methods;
  bool randomized = true;
  std::size_t n_bins = 20;  // equal bins over [0,1] for conditional coverage
  std::size_t n_threads = 1;
};

// X ~ Beta(1.2, 0.8); Y | X ~ N(sin(X^-3), X^4). A draw that underflows to 0
// is redrawn.
inline Dataset sample_sim(std::size_t n, Rng& rng) {
  if (n == 0) throw std::invalid_argument("sample_sim: n must be >= 1");
  Dataset ds;
  ds.features = Matrix(n, 1);
  ds.response.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    double x = sample_beta(rng, 1.2, 0.8);
    while (x <= 0.0) x = sample_beta(rng, 1.2, 0.8);
    const double z = sample_normal(rng);
    ds.features(i, 0) = x;
    ds.response[i] = std::sin(1.0 / (x * x * x)) + x * x * z;
  }
  return ds;
}

// sin(x^-3) +/- x^2 * z_{1-alpha/2}.
inline IntervalBand oracle_interval(double x, double alpha) {
  if (!(x > 0.0)) throw std::invalid_argument("oracle_interval: x must be positive");
  if (!(alpha > 0.0 && alpha < 1.0))
    throw std::invalid_argument("oracle_interval: alpha must be in (0,1)");
  const double center = std::sin(1.0 / (x * x * x));
  const double margin = x * x * normal_quantile(1.0 - alpha / 2.0);
  return {center - margin, center + margin, false, false};
}

struct SimTrialRow {
  std::size_t trial = 0;
  MethodSpec method;
  EvaluationReport report;
  std::size_t floored_scales = 0;
};

struct SimMethodSummary {
  MethodSpec method;
  std::size_t trials = 0;
  double pooled_coverage = 0.0;  // sum covered / sum n across trials
  double mean_coverage = 0.0;
  double se_coverage = 0.0;
  double mean_width = 0.0;  // over trials with any finite band
  double se_width = 0.0;
  double mean_isl = 0.0;
  double se_isl = 0.0;
  double mean_cw_correlation = 0.0;
  double frac_infinite_width = 0.0;  // pooled
};

struct SimBinSummary {
  MethodSpec method;
  double lo = 0.0, hi = 0.0;
  double avg_coverage = std::numeric_limits<double>::quiet_NaN();  // trial-averaged
  double avg_width = std::numeric_limits<double>::quiet_NaN();
  std::size_t total_count = 0;
  std::size_t trials_with_data = 0;
};

struct SimResult {
  std::vector<SimTrialRow> rows;  // trial-major, then method order
  std::vector<SimMethodSummary> summary;
  std::vector<SimBinSummary> bins;
};

namespace detail {

struct TrialOutput {
  std::vector<EvaluationReport> reports;  // per method, with per_bin filled
  std::vector<std::size_t> floored;       // per method
};

inline TrialOutput run_one_trial(const SimConfig& cfg, std::size_t trial) {
  const std::uint64_t base = derive_seed(cfg.seed, trial);
  Rng data_rng(derive_seed(base, 1));

  const Dataset train = sample_sim(cfg.n_train, data_rng);
  const Dataset cal = sample_sim(cfg.n_cal, data_rng);
  const Dataset test = sample_sim(cfg.n_test, data_rng);

  ForestParams fp = cfg.forest;
  fp.seed = derive_seed(base, 2);
  fp.n_threads = 1;  // trials are already parallel
  const ForestModel model = fit_forest(train.features, train.response, fp);

  EvalOptions opts;
  opts.methods = cfg.methods;
  opts.alpha = cfg.alpha;
  opts.randomized = cfg.randomized;
  opts.seed = derive_seed(base, 3);
  const auto evals = conformal_evaluate(model, cal.features, cal.response, test.features, opts);

  std::vector<double> xs(test.n());
  for (std::size_t i = 0; i < test.n(); ++i) xs[i] = test.features(i, 0);

  TrialOutput out;
  for (const MethodEval& ev : evals) {
    out.reports.push_back(
        evaluate_bands(ev.bands, test.response, cfg.alpha, xs, cfg.n_bins, 0.0, 1.0));
    out.floored.push_back(ev.diag.floored_scales);
  }
  return out;
}

}  // namespace detail

// Multi-trial experiment: fresh draws per trial, forest fit on train, every
// method calibrated on cal and evaluated on test. Per-trial seeds are derived
// from (seed, trial), so output is identical for any thread count.
inline SimResult run_trials(const SimConfig& cfg) {
  if (cfg.trials == 0) throw std::invalid_argument("run_trials: trials must be >= 1");
  if (cfg.methods.empty()) throw std::invalid_argument("run_trials: no methods selected");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw std::invalid_argument("run_trials: alpha must be in (0,1)");

  std::vector<detail::TrialOutput> outputs(cfg.trials);
  parallel_for(cfg.trials, cfg.n_threads,
               [&](std::size_t t) { outputs[t] = detail::run_one_trial(cfg, t); });

  SimResult result;
  const std::size_t M = cfg.methods.size();
  result.rows.reserve(cfg.trials * M);
  for (std::size_t t = 0; t < cfg.trials; ++t)
    for (std::size_t m = 0; m < M; ++m)
      result.rows.push_back({t, cfg.methods[m], outputs[t].reports[m], outputs[t].floored[m]});

  for (std::size_t m = 0; m < M; ++m) {
    SimMethodSummary s;
    s.method = cfg.methods[m];
    s.trials = cfg.trials;
    std::size_t covered = 0, total = 0, infinite = 0;
    std::vector<double> covs, widths, isls, corrs;
    for (std::size_t t = 0; t < cfg.trials; ++t) {
      const EvaluationReport& r = outputs[t].reports[m];
      covered += r.n_covered;
      total += r.n;
      infinite += r.n_infinite;
      covs.push_back(r.coverage);
      if (r.n_infinite < r.n) {
        widths.push_back(r.avg_width);
        isls.push_back(r.mean_isl);
      }
      corrs.push_back(r.cw_correlation);
    }
    auto mean_se = [](const std::vector<double>& v, double& mean, double& se) {
      mean = std::numeric_limits<double>::quiet_NaN();
      se = 0.0;
      if (v.empty()) return;
      mean = 0.0;
      for (const double x : v) mean += x;
      mean /= static_cast<double>(v.size());
      if (v.size() < 2) return;
      double ss = 0.0;
      for (const double x : v) ss += (x - mean) * (x - mean);
      se = std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
    };
    s.pooled_coverage = static_cast<double>(covered) / static_cast<double>(total);
    s.frac_infinite_width = static_cast<double>(infinite) / static_cast<double>(total);
    mean_se(covs, s.mean_coverage, s.se_coverage);
    mean_se(widths, s.mean_width, s.se_width);
    mean_se(isls, s.mean_isl, s.se_isl);
    double dummy;
    mean_se(corrs, s.mean_cw_correlation, dummy);
    result.summary.push_back(s);
  }

  for (std::size_t m = 0; m < M; ++m) {
    for (std::size_t b = 0; b < cfg.n_bins; ++b) {
      SimBinSummary bs;
      bs.method = cfg.methods[m];
      bs.lo = outputs[0].reports[m].per_bin[b].lo;
      bs.hi = outputs[0].reports[m].per_bin[b].hi;
      double cov_sum = 0.0, width_sum = 0.0;
      std::size_t cov_trials = 0, width_trials = 0;
      for (std::size_t t = 0; t < cfg.trials; ++t) {
        const BinRow& row = outputs[t].reports[m].per_bin[b];
        bs.total_count += row.count;
        if (row.count > 0) {
          cov_sum += row.coverage;
          ++cov_trials;
        }
        if (!std::isnan(row.mean_width)) {
          width_sum += row.mean_width;
          ++width_trials;
        }
      }
      bs.trials_with_data = cov_trials;
      if (cov_trials > 0) bs.avg_coverage = cov_sum / static_cast<double>(cov_trials);
      if (width_trials > 0) bs.avg_width = width_sum / static_cast<double>(width_trials);
      result.bins.push_back(bs);
    }
  }
  return result;
}

}  // namespace uacqr
