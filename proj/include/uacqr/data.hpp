#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uacqr/matrix.hpp"
#include "uacqr/rng.hpp"

namespace uacqr {

struct Dataset {
  Matrix features;               // n x p
  std::vector<double> response;  // length n

  std::size_t n() const { return response.size(); }
  std::size_t p() const { return features.cols(); }
};

struct DataSplit {
  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> cal_idx;
  std::vector<std::size_t> test_idx;
};

enum class TransformKind { none, mean_abs_normalize, log1p };

struct TransformSpec {
  TransformKind kind = TransformKind::none;
  std::optional<double> fitted_scale;  // set for mean_abs_normalize only
};

struct SplitFractions {
  double train = 0.4;
  double cal = 0.4;
  double test = 0.2;
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return s.substr(b, e - b);
}

inline std::vector<std::string> split_commas(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  for (;;) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      cells.push_back(trim(line.substr(start)));
      break;
    }
    cells.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return cells;
}

inline bool parse_double(const std::string& cell, double& out) {
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  const auto res = std::from_chars(first, last, out);
  return res.ec == std::errc{} && res.ptr == last && !cell.empty();
}

}  // namespace detail

// Loads a numeric CSV. A header row is auto-detected (first row with any
// non-numeric cell). response_column is a 0-based index, a header name, or
// empty for the last column.
inline Dataset load_csv(const std::string& path, const std::string& response_column = "") {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_csv: cannot open file '" + path + "'");

  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  while (!lines.empty() && detail::trim(lines.back()).empty()) lines.pop_back();
  if (lines.empty()) throw std::runtime_error("load_csv: '" + path + "' is empty");

  std::vector<std::string> header;
  std::size_t first_data_row = 0;
  {
    const auto cells = detail::split_commas(lines[0]);
    bool all_numeric = true;
    for (const auto& c : cells) {
      double v;
      if (!detail::parse_double(c, v)) {
        all_numeric = false;
        break;
      }
    }
    if (!all_numeric) {
      header = cells;
      first_data_row = 1;
    }
  }
  if (first_data_row >= lines.size())
    throw std::runtime_error("load_csv: '" + path + "' has a header but no data rows");

  const std::size_t n_cols = detail::split_commas(lines[first_data_row]).size();
  if (!header.empty() && header.size() != n_cols)
    throw std::runtime_error("load_csv: header has " + std::to_string(header.size()) +
                             " columns but row " + std::to_string(first_data_row + 1) + " has " +
                             std::to_string(n_cols));
  if (n_cols < 2)
    throw std::runtime_error("load_csv: need at least two columns (features + response)");

  std::size_t resp_col = n_cols - 1;
  if (!response_column.empty()) {
    bool numeric = !response_column.empty() &&
                   response_column.find_first_not_of("0123456789") == std::string::npos;
    if (numeric) {
      resp_col = static_cast<std::size_t>(std::stoull(response_column));
      if (resp_col >= n_cols)
        throw std::runtime_error("load_csv: response column index " + response_column +
                                 " out of range (" + std::to_string(n_cols) + " columns)");
    } else {
      const auto it = std::find(header.begin(), header.end(), response_column);
      if (it == header.end())
        throw std::runtime_error("load_csv: response column '" + response_column +
                                 "' not found in header");
      resp_col = static_cast<std::size_t>(it - header.begin());
    }
  }

  const std::size_t n_rows = lines.size() - first_data_row;
  Dataset ds;
  ds.features = Matrix(n_rows, n_cols - 1);
  ds.response.resize(n_rows);

  for (std::size_t r = 0; r < n_rows; ++r) {
    const std::size_t line_no = first_data_row + r + 1;  // 1-based for messages
    const auto cells = detail::split_commas(lines[first_data_row + r]);
    if (cells.size() != n_cols)
      throw std::runtime_error("load_csv: row " + std::to_string(line_no) + " has " +
                               std::to_string(cells.size()) + " cells, expected " +
                               std::to_string(n_cols));
    std::size_t fj = 0;
    for (std::size_t c = 0; c < n_cols; ++c) {
      double v;
      if (!detail::parse_double(cells[c], v))
        throw std::runtime_error("load_csv: row " + std::to_string(line_no) + ", column " +
                                 std::to_string(c + 1) + ": cannot parse '" + cells[c] + "'");
      if (!std::isfinite(v))
        throw std::runtime_error("load_csv: row " + std::to_string(line_no) + ", column " +
                                 std::to_string(c + 1) + ": non-finite value '" + cells[c] + "'");
      if (c == resp_col)
        ds.response[r] = v;
      else
        ds.features(r, fj++) = v;
    }
  }
  return ds;
}

// Seeded exchangeable split. Block sizes are floor(n * fraction); when the
// fractions sum to 1 the rounding remainder goes to train, otherwise the
// leftover rows are simply unused (subsampling).
inline DataSplit split_dataset(std::size_t n, const SplitFractions& f, std::uint64_t seed) {
  if (n < 3) throw std::invalid_argument("split_dataset: need n >= 3");
  if (!(f.train > 0.0 && f.cal > 0.0 && f.test > 0.0))
    throw std::invalid_argument("split_dataset: fractions must be positive");
  const double sum = f.train + f.cal + f.test;
  if (sum > 1.0 + 1e-9) throw std::invalid_argument("split_dataset: fractions sum above 1");

  const double dn = static_cast<double>(n);
  std::size_t n_train = static_cast<std::size_t>(std::floor(dn * f.train + 1e-9));
  const std::size_t n_cal = static_cast<std::size_t>(std::floor(dn * f.cal + 1e-9));
  const std::size_t n_test = static_cast<std::size_t>(std::floor(dn * f.test + 1e-9));
  if (std::abs(sum - 1.0) <= 1e-9) n_train = n - n_cal - n_test;

  if (n_train == 0) throw std::invalid_argument("split_dataset: empty train block after rounding");
  if (n_cal == 0) throw std::invalid_argument("split_dataset: empty calibration block after rounding");
  if (n_test == 0) throw std::invalid_argument("split_dataset: empty test block after rounding");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(bounded_uint(rng, n - i));
    std::swap(idx[i], idx[j]);
  }

  DataSplit split;
  split.train_idx.assign(idx.begin(), idx.begin() + n_train);
  split.cal_idx.assign(idx.begin() + n_train, idx.begin() + n_train + n_cal);
  split.test_idx.assign(idx.begin() + n_train + n_cal, idx.begin() + n_train + n_cal + n_test);
  return split;
}

inline TransformKind parse_transform(const std::string& s) {
  if (s == "none") return TransformKind::none;
  if (s == "mean-abs-normalize" || s == "mean_abs_normalize") return TransformKind::mean_abs_normalize;
  if (s == "log1p") return TransformKind::log1p;
  throw std::invalid_argument("unknown transform '" + s + "'");
}

inline std::string to_string(TransformKind k) {
  switch (k) {
    case TransformKind::none: return "none";
    case TransformKind::mean_abs_normalize: return "mean-abs-normalize";
    case TransformKind::log1p: return "log1p";
  }
  return "none";
}

// Response transforms. mean_abs_normalize fits its scale on the train block
// only and divides every response by it; log1p is fit-free.
inline std::pair<Dataset, TransformSpec> fit_apply_transform(const Dataset& ds,
                                                             const DataSplit& split,
                                                             TransformKind kind) {
  Dataset out = ds;
  TransformSpec spec;
  spec.kind = kind;
  switch (kind) {
    case TransformKind::none:
      break;
    case TransformKind::mean_abs_normalize: {
      if (split.train_idx.empty())
        throw std::invalid_argument("fit_apply_transform: empty train block");
      double sum = 0.0;
      for (const std::size_t i : split.train_idx) sum += std::abs(ds.response[i]);
      const double scale = sum / static_cast<double>(split.train_idx.size());
      if (!(scale > 0.0))
        throw std::runtime_error("fit_apply_transform: train mean |y| is zero, cannot normalize");
      spec.fitted_scale = scale;
      for (double& y : out.response) y /= scale;
      break;
    }
    case TransformKind::log1p: {
      for (const double y : ds.response)
        if (!(y > -1.0))
          throw std::runtime_error("fit_apply_transform: log1p requires all responses > -1");
      for (double& y : out.response) y = std::log1p(y);
      break;
    }
  }
  return {std::move(out), spec};
}

}  // namespace uacqr
