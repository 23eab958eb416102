#include <cstdlib>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "uacqr/cli.hpp"

namespace {

struct Flag {
  std::string key;
  std::string value;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "uacqr: uncertainty-aware conformalized quantile regression experiments\n"
      "(quantile regression forest base learner; methods: mean-abs, cqr, cqr-r,\n"
      "cqr-m, dcp, uacqr-s, uacqr-p)"};
  app.option_defaults()->take_last();

  std::string config_path;
  app.add_option("--config", config_path, "flat key=value config file ('#' comments)");

  // Every flag funnels through the same key=value channel as the config file;
  // flags override file values, UACQR_OUT overrides the file's out directory.
  std::vector<Flag> flags;
  auto add = [&](const std::string& flag, const std::string& key, const std::string& help) {
    app.add_option_function<std::string>(
           flag, [&flags, key](const std::string& v) { flags.push_back({key, v}); }, help)
        ->expected(1);
  };
  add("--mode", "mode", "simulate | evaluate | crossval");
  add("--data", "data", "CSV dataset path (evaluate/crossval)");
  add("--response-col", "response-col", "response column name or 0-based index (default: last)");
  add("--alpha", "alpha", "miscoverage level (default 0.1)");
  add("--seed", "seed", "master seed");
  add("--methods,--method", "methods",
      "comma list of mean-abs,cqr,cqr-r,cqr-m,dcp,uacqr-s,uacqr-p (or 'all')");
  add("--dispersion", "dispersion", "uacqr-s dispersion: stddev | iqr");
  add("--randomized", "randomized", "randomized cutoffs: on | off");
  add("--transform", "transform", "response transform: none | mean-abs-normalize | log1p");
  add("--trees", "trees", "number of trees (B)");
  add("--min-samples-leaf", "min-samples-leaf", "minimum leaf size (bootstrap multiplicity)");
  add("--max-depth", "max-depth", "maximum tree depth (0 = unlimited)");
  add("--mtry", "mtry", "candidate features per split (0 = all)");
  add("--bootstrap", "bootstrap", "bootstrap resampling: on | off");
  add("--cv-grid", "cv-grid", "comma list of min-samples-leaf values (crossval)");
  add("--out", "out", "output directory");
  add("--trials", "trials", "number of simulation trials");
  add("--n-train", "n-train", "simulation training size");
  add("--n-cal", "n-cal", "simulation calibration size");
  add("--n-test", "n-test", "simulation test size");
  add("--bins", "bins", "conditional-coverage bin count");
  add("--train-frac", "train-frac", "train fraction (evaluate/crossval)");
  add("--cal-frac", "cal-frac", "calibration fraction");
  add("--test-frac", "test-frac", "test fraction");
  add("--threads", "threads", "worker threads (results are thread-count independent)");

  CLI11_PARSE(app, argc, argv);

  try {
    uacqr::RunConfig cfg;
    if (!config_path.empty()) uacqr::parse_config_file(config_path, cfg);
    if (const char* env_out = std::getenv("UACQR_OUT"); env_out && *env_out)
      cfg.out_dir = env_out;
    for (const Flag& f : flags) uacqr::apply_config_kv(cfg, f.key, f.value);
    if (cfg.mode.empty()) {
      std::cerr << "error: --mode is required (simulate | evaluate | crossval)\n";
      return 1;
    }
    return uacqr::run(cfg);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
