#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "uacqr/data.hpp"
#include "uacqr/pipeline.hpp"
#include "uacqr/sim.hpp"

namespace uacqr {

struct RunConfig {
  std::string mode;          // simulate | evaluate | crossval
  std::string data_path;     // evaluate / crossval
  std::string response_col;  // name, 0-based index, or empty for last column
  double alpha = 0.1;
  std::uint64_t seed = 0;
  std::vector<std::string> methods = {"mean-abs", "cqr",     "cqr-r",  "cqr-m",
                                      "dcp",      "uacqr-s", "uacqr-p"};
  std::string dispersion = "stddev";
  bool randomized = true;
  std::string transform = "none";
  std::size_t trees = 100;
  std::size_t min_samples_leaf = 1;
  std::size_t max_depth = 0;
  std::size_t mtry = 0;
  bool bootstrap = true;
  std::vector<std::size_t> cv_grid;
  std::string out_dir = "uacqr-out";
  // simulate mode
  std::size_t trials = 150;
  std::size_t n_train = 100;
  std::size_t n_cal = 100;
  std::size_t n_test = 200;
  std::size_t bins = 20;
  // evaluate / crossval split
  double train_frac = 0.4;
  double cal_frac = 0.4;
  double test_frac = 0.2;
  std::size_t threads = 1;
};

namespace detail {

inline std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline bool parse_bool(const std::string& v, const std::string& key) {
  if (v == "on" || v == "true" || v == "1") return true;
  if (v == "off" || v == "false" || v == "0") return false;
  throw std::invalid_argument("config: key '" + key + "': expected on/off, got '" + v + "'");
}

inline std::size_t parse_size(const std::string& v, const std::string& key) {
  try {
    return static_cast<std::size_t>(std::stoull(v));
  } catch (const std::exception&) {
    throw std::invalid_argument("config: key '" + key + "': expected a count, got '" + v + "'");
  }
}

inline double parse_real(const std::string& v, const std::string& key) {
  double out;
  if (!parse_double(v, out))
    throw std::invalid_argument("config: key '" + key + "': expected a real, got '" + v + "'");
  return out;
}

inline std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  for (const std::string& tok : split_commas(v))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

}  // namespace detail

// Applies one key=value setting; throws on unknown keys or bad values.
inline void apply_config_kv(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "mode") cfg.mode = value;
  else if (key == "data") cfg.data_path = value;
  else if (key == "response-col") cfg.response_col = value;
  else if (key == "alpha") cfg.alpha = detail::parse_real(value, key);
  else if (key == "seed") cfg.seed = static_cast<std::uint64_t>(std::stoull(value));
  else if (key == "methods") {
    cfg.methods.clear();
    for (const std::string& tok : detail::parse_list(value)) {
      if (tok == "all") {
        cfg.methods = {"mean-abs", "cqr", "cqr-r", "cqr-m", "dcp", "uacqr-s", "uacqr-p"};
        break;
      }
      (void)parse_method(tok);  // validate
      cfg.methods.push_back(tok);
    }
    if (cfg.methods.empty()) throw std::invalid_argument("config: key 'methods': empty list");
  }
  else if (key == "dispersion") { (void)parse_dispersion(value); cfg.dispersion = value; }
  else if (key == "randomized") cfg.randomized = detail::parse_bool(value, key);
  else if (key == "transform") { (void)parse_transform(value); cfg.transform = value; }
  else if (key == "trees") cfg.trees = detail::parse_size(value, key);
  else if (key == "min-samples-leaf") cfg.min_samples_leaf = detail::parse_size(value, key);
  else if (key == "max-depth") cfg.max_depth = detail::parse_size(value, key);
  else if (key == "mtry") cfg.mtry = detail::parse_size(value, key);
  else if (key == "bootstrap") cfg.bootstrap = detail::parse_bool(value, key);
  else if (key == "cv-grid") {
    cfg.cv_grid.clear();
    for (const std::string& tok : detail::parse_list(value))
      cfg.cv_grid.push_back(detail::parse_size(tok, key));
  }
  else if (key == "out") cfg.out_dir = value;
  else if (key == "trials") cfg.trials = detail::parse_size(value, key);
  else if (key == "n-train") cfg.n_train = detail::parse_size(value, key);
  else if (key == "n-cal") cfg.n_cal = detail::parse_size(value, key);
  else if (key == "n-test") cfg.n_test = detail::parse_size(value, key);
  else if (key == "bins") cfg.bins = detail::parse_size(value, key);
  else if (key == "train-frac") cfg.train_frac = detail::parse_real(value, key);
  else if (key == "cal-frac") cfg.cal_frac = detail::parse_real(value, key);
  else if (key == "test-frac") cfg.test_frac = detail::parse_real(value, key);
  else if (key == "threads") cfg.threads = detail::parse_size(value, key);
  else throw std::invalid_argument("config: unknown key '" + key + "'");
}

// Flat key=value config; '#' starts a comment, blank lines are ignored.
inline void parse_config_file(const std::string& path, RunConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open '" + path + "'");
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: line " + std::to_string(line_no) +
                               ": expected key=value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    apply_config_kv(cfg, key, value);
  }
}

inline std::string resolved_config_text(const RunConfig& c) {
  std::ostringstream out;
  out << "# resolved configuration\n";
  out << "mode = " << c.mode << '\n';
  if (!c.data_path.empty()) out << "data = " << c.data_path << '\n';
  if (!c.response_col.empty()) out << "response-col = " << c.response_col << '\n';
  out << "alpha = " << detail::fmt(c.alpha) << '\n';
  out << "seed = " << c.seed << '\n';
  out << "methods = ";
  for (std::size_t i = 0; i < c.methods.size(); ++i)
    out << (i ? "," : "") << c.methods[i];
  out << '\n';
  out << "dispersion = " << c.dispersion << '\n';
  out << "randomized = " << (c.randomized ? "on" : "off") << '\n';
  out << "transform = " << c.transform << '\n';
  out << "trees = " << c.trees << '\n';
  out << "min-samples-leaf = " << c.min_samples_leaf << '\n';
  out << "max-depth = " << c.max_depth << '\n';
  out << "mtry = " << c.mtry << '\n';
  out << "bootstrap = " << (c.bootstrap ? "on" : "off") << '\n';
  if (!c.cv_grid.empty()) {
    out << "cv-grid = ";
    for (std::size_t i = 0; i < c.cv_grid.size(); ++i)
      out << (i ? "," : "") << c.cv_grid[i];
    out << '\n';
  }
  out << "out = " << c.out_dir << '\n';
  out << "trials = " << c.trials << '\n';
  out << "n-train = " << c.n_train << '\n';
  out << "n-cal = " << c.n_cal << '\n';
  out << "n-test = " << c.n_test << '\n';
  out << "bins = " << c.bins << '\n';
  out << "train-frac = " << detail::fmt(c.train_frac) << '\n';
  out << "cal-frac = " << detail::fmt(c.cal_frac) << '\n';
  out << "test-frac = " << detail::fmt(c.test_frac) << '\n';
  out << "threads = " << c.threads << '\n';
  return out.str();
}

struct CvResult {
  std::size_t chosen = 0;
  std::vector<std::pair<std::size_t, double>> grid_isl;  // (min_samples_leaf, mean ISL)
};

// Cross-validates min_samples_leaf for one method by 40/40/20 sub-splitting
// the training block; the outer calibration and test blocks are never read.
// Ties break toward the smaller leaf size.
inline CvResult crossval_min_samples_leaf(const Dataset& ds, const DataSplit& split,
                                          std::vector<std::size_t> grid, const MethodSpec& method,
                                          double alpha, std::uint64_t seed,
                                          bool randomized = true) {
  if (grid.empty()) throw std::invalid_argument("crossval: empty grid");
  std::sort(grid.begin(), grid.end());
  grid.erase(std::unique(grid.begin(), grid.end()), grid.end());

  const std::size_t n_tr = split.train_idx.size();
  const DataSplit sub = split_dataset(n_tr, {0.4, 0.4, 0.2}, derive_seed(seed, 0x5B));
  auto remap = [&](const std::vector<std::size_t>& sub_idx) {
    std::vector<std::size_t> out;
    out.reserve(sub_idx.size());
    for (const std::size_t i : sub_idx) out.push_back(split.train_idx[i]);
    return out;
  };
  const auto tr_idx = remap(sub.train_idx);
  const auto cal_idx = remap(sub.cal_idx);
  const auto te_idx = remap(sub.test_idx);

  auto gather_y = [&](const std::vector<std::size_t>& idx) {
    std::vector<double> out;
    out.reserve(idx.size());
    for (const std::size_t i : idx) out.push_back(ds.response[i]);
    return out;
  };
  const Matrix X_tr = ds.features.select_rows(tr_idx);
  const std::vector<double> y_tr = gather_y(tr_idx);
  const Matrix X_cal = ds.features.select_rows(cal_idx);
  const std::vector<double> y_cal = gather_y(cal_idx);
  const Matrix X_te = ds.features.select_rows(te_idx);
  const std::vector<double> y_te = gather_y(te_idx);

  CvResult result;
  result.chosen = grid.front();  // smallest leaf size wins ties (and all-infinite grids)
  double best = std::numeric_limits<double>::infinity();
  for (const std::size_t msl : grid) {
    ForestParams fp;
    fp.min_samples_leaf = msl;
    fp.seed = derive_seed(seed, 0xF0);
    const ForestModel model = fit_forest(X_tr, y_tr, fp);

    EvalOptions opts;
    opts.methods = {method};
    opts.alpha = alpha;
    opts.randomized = randomized;
    opts.seed = derive_seed(seed, 0xE7);
    const auto evals = conformal_evaluate(model, X_cal, y_cal, X_te, opts);
    const EvaluationReport rep = evaluate_bands(evals[0].bands, y_te, alpha);
    const double isl = (rep.n_infinite == rep.n) ? std::numeric_limits<double>::infinity()
                                                 : rep.mean_isl;
    result.grid_isl.emplace_back(msl, isl);
    if (isl < best) {
      best = isl;
      result.chosen = msl;
    }
  }
  return result;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
}

inline std::vector<MethodSpec> method_specs(const RunConfig& cfg) {
  const DispersionKind d = parse_dispersion(cfg.dispersion);
  std::vector<MethodSpec> specs;
  for (const std::string& tok : cfg.methods) specs.push_back({parse_method(tok), d});
  return specs;
}

inline ForestParams forest_params(const RunConfig& cfg) {
  ForestParams fp;
  fp.n_trees = cfg.trees;
  fp.min_samples_leaf = cfg.min_samples_leaf;
  fp.max_depth = cfg.max_depth;
  fp.mtry = cfg.mtry;
  fp.bootstrap = cfg.bootstrap;
  fp.seed = derive_seed(cfg.seed, 0xF0857);
  fp.n_threads = cfg.threads;
  return fp;
}

inline std::string report_csv_header() {
  return "coverage,avg_width,frac_infinite_width,mean_isl,cw_correlation,cw_degenerate,"
         "floored_scales";
}

inline std::string report_csv_row(const EvaluationReport& r, std::size_t floored) {
  std::ostringstream out;
  out << fmt(r.coverage) << ',' << fmt(r.avg_width) << ',' << fmt(r.frac_infinite_width) << ','
      << fmt(r.mean_isl) << ',' << fmt(r.cw_correlation) << ',' << (r.cw_degenerate ? 1 : 0)
      << ',' << floored;
  return out.str();
}

inline void run_simulate(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  SimConfig sc;
  sc.n_train = cfg.n_train;
  sc.n_cal = cfg.n_cal;
  sc.n_test = cfg.n_test;
  sc.trials = cfg.trials;
  sc.alpha = cfg.alpha;
  sc.seed = cfg.seed;
  sc.forest = forest_params(cfg);
  sc.methods = method_specs(cfg);
  sc.randomized = cfg.randomized;
  sc.n_bins = cfg.bins;
  sc.n_threads = cfg.threads;
  const SimResult res = run_trials(sc);

  std::ostringstream results;
  results << "method,trial,n_test," << report_csv_header() << '\n';
  for (const SimTrialRow& row : res.rows)
    results << to_string(row.method.method) << ',' << row.trial << ',' << row.report.n << ','
            << report_csv_row(row.report, row.floored_scales) << '\n';
  write_file(out_dir / "results.csv", results.str());

  std::ostringstream summary;
  summary << "method,trials,pooled_coverage,mean_coverage,se_coverage,mean_width,se_width,"
             "mean_isl,se_isl,mean_cw_correlation,frac_infinite_width\n";
  for (const SimMethodSummary& s : res.summary)
    summary << to_string(s.method.method) << ',' << s.trials << ',' << fmt(s.pooled_coverage)
            << ',' << fmt(s.mean_coverage) << ',' << fmt(s.se_coverage) << ',' << fmt(s.mean_width)
            << ',' << fmt(s.se_width) << ',' << fmt(s.mean_isl) << ',' << fmt(s.se_isl) << ','
            << fmt(s.mean_cw_correlation) << ',' << fmt(s.frac_infinite_width) << '\n';
  write_file(out_dir / "summary.csv", summary.str());

  std::ostringstream bins;
  bins << "method,bin_lo,bin_hi,coverage,mean_width,count\n";
  for (const SimBinSummary& b : res.bins)
    bins << to_string(b.method.method) << ',' << fmt(b.lo) << ',' << fmt(b.hi) << ','
         << fmt(b.avg_coverage) << ',' << fmt(b.avg_width) << ',' << b.total_count << '\n';
  write_file(out_dir / "bins.csv", bins.str());
}

struct LoadedSplit {
  Dataset ds;
  DataSplit split;
  TransformSpec transform;
  Matrix X_train, X_cal, X_test;
  std::vector<double> y_train, y_cal, y_test;
};

inline LoadedSplit load_and_split(const RunConfig& cfg) {
  if (cfg.data_path.empty()) throw std::invalid_argument("mode requires --data");
  LoadedSplit out;
  Dataset raw = load_csv(cfg.data_path, cfg.response_col);
  out.split = split_dataset(raw.n(), {cfg.train_frac, cfg.cal_frac, cfg.test_frac},
                            derive_seed(cfg.seed, 0x517));
  auto [ds, spec] = fit_apply_transform(raw, out.split, parse_transform(cfg.transform));
  out.ds = std::move(ds);
  out.transform = spec;
  auto gather = [&](const std::vector<std::size_t>& idx, Matrix& X, std::vector<double>& y) {
    X = out.ds.features.select_rows(idx);
    y.clear();
    for (const std::size_t i : idx) y.push_back(out.ds.response[i]);
  };
  gather(out.split.train_idx, out.X_train, out.y_train);
  gather(out.split.cal_idx, out.X_cal, out.y_cal);
  gather(out.split.test_idx, out.X_test, out.y_test);
  return out;
}

inline void write_evaluation_outputs(const RunConfig& cfg, const std::filesystem::path& out_dir,
                                     const LoadedSplit& data,
                                     const std::vector<MethodEval>& evals,
                                     const std::vector<std::size_t>* chosen_msl) {
  std::ostringstream results;
  results << "method,n_train,n_cal,n_test,";
  if (chosen_msl) results << "min_samples_leaf,";
  results << "t_hat," << report_csv_header() << '\n';
  for (std::size_t m = 0; m < evals.size(); ++m) {
    const MethodEval& ev = evals[m];
    const EvaluationReport rep = evaluate_bands(ev.bands, data.y_test, cfg.alpha);
    results << to_string(ev.method.method) << ',' << data.split.train_idx.size() << ','
            << data.split.cal_idx.size() << ',' << data.split.test_idx.size() << ',';
    if (chosen_msl) results << (*chosen_msl)[m] << ',';
    results << fmt(ev.calibrated.t_hat) << ',' << report_csv_row(rep, ev.diag.floored_scales)
            << '\n';
  }
  write_file(out_dir / "results.csv", results.str());

  std::ostringstream preds;
  preds << "method,row,lower,upper,lower_open,upper_open,response,covered\n";
  for (const MethodEval& ev : evals)
    for (std::size_t i = 0; i < ev.bands.size(); ++i)
      preds << to_string(ev.method.method) << ',' << data.split.test_idx[i] << ','
            << fmt(ev.bands[i].lower) << ',' << fmt(ev.bands[i].upper) << ','
            << (ev.bands[i].lower_open ? 1 : 0) << ',' << (ev.bands[i].upper_open ? 1 : 0) << ','
            << fmt(data.y_test[i]) << ',' << (contains(ev.bands[i], data.y_test[i]) ? 1 : 0)
            << '\n';
  write_file(out_dir / "predictions.csv", preds.str());

  if (data.ds.p() == 1) {
    std::vector<double> xs;
    for (std::size_t i = 0; i < data.X_test.rows(); ++i) xs.push_back(data.X_test(i, 0));
    std::ostringstream bins;
    bins << "method,bin_lo,bin_hi,coverage,mean_width,count\n";
    for (const MethodEval& ev : evals) {
      const auto rows = binned_conditional_coverage(xs, ev.bands, data.y_test, cfg.bins);
      for (const BinRow& b : rows)
        bins << to_string(ev.method.method) << ',' << fmt(b.lo) << ',' << fmt(b.hi) << ','
             << fmt(b.coverage) << ',' << fmt(b.mean_width) << ',' << b.count << '\n';
    }
    write_file(out_dir / "bins.csv", bins.str());
  }
}

inline void run_evaluate(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  const LoadedSplit data = load_and_split(cfg);
  const ForestModel model = fit_forest(data.X_train, data.y_train, forest_params(cfg));
  EvalOptions opts;
  opts.methods = method_specs(cfg);
  opts.alpha = cfg.alpha;
  opts.randomized = cfg.randomized;
  opts.seed = derive_seed(cfg.seed, 0xE7A1);
  const auto evals = conformal_evaluate(model, data.X_cal, data.y_cal, data.X_test, opts);
  write_evaluation_outputs(cfg, out_dir, data, evals, nullptr);
}

inline void run_crossval(const RunConfig& cfg, const std::filesystem::path& out_dir) {
  if (cfg.cv_grid.empty()) throw std::invalid_argument("crossval mode requires --cv-grid");
  const LoadedSplit data = load_and_split(cfg);
  const auto specs = method_specs(cfg);

  std::ostringstream cv;
  cv << "method,min_samples_leaf,mean_isl,chosen\n";
  std::vector<std::size_t> chosen(specs.size());
  std::map<std::size_t, ForestModel> models;  // refits cached by leaf size
  std::vector<MethodEval> evals;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    const CvResult res = crossval_min_samples_leaf(data.ds, data.split, cfg.cv_grid, specs[m],
                                                   cfg.alpha, derive_seed(cfg.seed, 0xC7 + m),
                                                   cfg.randomized);
    chosen[m] = res.chosen;
    for (const auto& [msl, isl] : res.grid_isl)
      cv << to_string(specs[m].method) << ',' << msl << ',' << fmt(isl) << ','
         << (msl == res.chosen ? 1 : 0) << '\n';

    if (!models.count(res.chosen)) {
      ForestParams fp = forest_params(cfg);
      fp.min_samples_leaf = res.chosen;
      models.emplace(res.chosen, fit_forest(data.X_train, data.y_train, fp));
    }
    EvalOptions opts;
    opts.methods = {specs[m]};
    opts.alpha = cfg.alpha;
    opts.randomized = cfg.randomized;
    opts.seed = derive_seed(cfg.seed, 0xE7A1 + m);
    auto ev = conformal_evaluate(models.at(res.chosen), data.X_cal, data.y_cal, data.X_test, opts);
    evals.push_back(std::move(ev[0]));
  }
  write_file(out_dir / "cv.csv", cv.str());
  write_evaluation_outputs(cfg, out_dir, data, evals, &chosen);
}

}  // namespace detail

// Executes a resolved configuration; outputs land in cfg.out_dir together with
// the re-runnable resolved_config.txt.
inline int run(const RunConfig& cfg) {
  if (cfg.mode != "simulate" && cfg.mode != "evaluate" && cfg.mode != "crossval")
    throw std::invalid_argument("mode must be simulate, evaluate or crossval (got '" + cfg.mode +
                                "')");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0))
    throw std::invalid_argument("alpha must be in (0,1)");
  (void)detail::method_specs(cfg);  // validate method/dispersion tokens up front

  const std::filesystem::path out_dir(cfg.out_dir);
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec) throw std::runtime_error("cannot create output directory '" + cfg.out_dir + "'");

  if (cfg.mode == "simulate") detail::run_simulate(cfg, out_dir);
  else if (cfg.mode == "evaluate") detail::run_evaluate(cfg, out_dir);
  else detail::run_crossval(cfg, out_dir);

  detail::write_file(out_dir / "resolved_config.txt", resolved_config_text(cfg));
  return 0;
}

}  // namespace uacqr
