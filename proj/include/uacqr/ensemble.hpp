#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "uacqr/data.hpp"

namespace uacqr {

struct TargetQuantiles {
  double alpha_lo = 0.05;
  double alpha_hi = 0.95;

  static TargetQuantiles symmetric(double alpha) { return {alpha / 2.0, 1.0 - alpha / 2.0}; }
};

// B quantile estimates per side at one evaluation point.
struct EnsembleQuantiles {
  std::vector<double> lo;
  std::vector<double> hi;

  std::size_t size() const { return lo.size(); }
};

enum class DispersionKind { stddev, iqr };

inline DispersionKind parse_dispersion(const std::string& s) {
  if (s == "stddev") return DispersionKind::stddev;
  if (s == "iqr") return DispersionKind::iqr;
  throw std::invalid_argument("unknown dispersion kind '" + s + "'");
}

inline std::string to_string(DispersionKind k) {
  return k == DispersionKind::stddev ? "stddev" : "iqr";
}

inline std::pair<double, double> aggregate_mean(const EnsembleQuantiles& e) {
  if (e.lo.empty() || e.lo.size() != e.hi.size())
    throw std::invalid_argument("aggregate_mean: invalid ensemble");
  double slo = 0.0, shi = 0.0;
  for (const double v : e.lo) slo += v;
  for (const double v : e.hi) shi += v;
  const double b = static_cast<double>(e.lo.size());
  return {slo / b, shi / b};
}

namespace detail {

// Population (1/B) standard deviation.
inline double stddev_1overB(const std::vector<double>& v) {
  double mean = 0.0;
  for (const double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

// Left-continuous type-1 quantile of an equally weighted sample; same
// convention as the forest's weighted quantiles.
inline double equal_weight_quantile(std::vector<double> v, double a) {
  std::sort(v.begin(), v.end());
  const double w = 1.0 / static_cast<double>(v.size());
  double cum = 0.0;
  for (const double x : v) {
    cum += w;
    if (cum >= a) return x;
  }
  return v.back();
}

inline double iqr(const std::vector<double>& v) {
  return equal_weight_quantile(v, 0.75) - equal_weight_quantile(v, 0.25);
}

}  // namespace detail

inline std::pair<double, double> dispersion(const EnsembleQuantiles& e, DispersionKind kind) {
  if (e.lo.empty() || e.lo.size() != e.hi.size())
    throw std::invalid_argument("dispersion: invalid ensemble");
  if (kind == DispersionKind::stddev)
    return {detail::stddev_1overB(e.lo), detail::stddev_1overB(e.hi)};
  return {detail::iqr(e.lo), detail::iqr(e.hi)};
}

enum class Side { lo, hi };

// b-th order statistic of the chosen side, with sentinels at b = 0 (-inf)
// and b = B+1 (+inf).
inline double order_statistic(const EnsembleQuantiles& e, Side side, std::size_t b) {
  const std::size_t B = e.size();
  if (b > B + 1) throw std::out_of_range("order_statistic: b out of range [0, B+1]");
  if (b == 0) return -std::numeric_limits<double>::infinity();
  if (b == B + 1) return std::numeric_limits<double>::infinity();
  std::vector<double> v = (side == Side::lo) ? e.lo : e.hi;
  std::nth_element(v.begin(), v.begin() + (b - 1), v.end());
  return v[b - 1];
}

// Quantile-crossing repair: a crossed pair collapses to its midpoint.
inline std::pair<double, double> isotonize(double q_lo, double q_hi) {
  if (q_lo > q_hi) {
    const double mid = 0.5 * (q_lo + q_hi);
    return {mid, mid};
  }
  return {q_lo, q_hi};
}

// ---- externally produced ensembles (long-format CSV) ----

struct ExternalEnsembleTable {
  std::size_t members = 0;                           // B
  std::map<long long, EnsembleQuantiles> points;     // keyed by point_id
};

// CSV schema: header "point_id,member_id,side,value"; one row per
// (point, member, side); side is "lo" or "hi"; members ordered by member_id.
// The B x 2 grid must be complete and consistent across points.
inline ExternalEnsembleTable load_external_ensemble(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_external_ensemble: cannot open '" + path + "'");

  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("load_external_ensemble: '" + path + "' is empty");
  {
    const auto header = detail::split_commas(line);
    const std::vector<std::string> expected = {"point_id", "member_id", "side", "value"};
    if (std::vector<std::string>(header.begin(), header.end()) != expected)
      throw std::runtime_error(
          "load_external_ensemble: expected header 'point_id,member_id,side,value'");
  }

  // point -> member -> (lo value, hi value) with presence flags
  struct Cell {
    double lo = 0, hi = 0;
    bool has_lo = false, has_hi = false;
  };
  std::map<long long, std::map<long long, Cell>> grid;

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto cells = detail::split_commas(line);
    if (cells.size() != 4)
      throw std::runtime_error("load_external_ensemble: line " + std::to_string(line_no) +
                               ": expected 4 cells");
    long long point_id = 0, member_id = 0;
    try {
      point_id = std::stoll(cells[0]);
      member_id = std::stoll(cells[1]);
    } catch (const std::exception&) {
      throw std::runtime_error("load_external_ensemble: line " + std::to_string(line_no) +
                               ": bad point_id/member_id");
    }
    double value;
    if (!detail::parse_double(cells[3], value) || !std::isfinite(value))
      throw std::runtime_error("load_external_ensemble: line " + std::to_string(line_no) +
                               ": non-finite value '" + cells[3] + "'");
    Cell& cell = grid[point_id][member_id];
    if (cells[2] == "lo") {
      if (cell.has_lo)
        throw std::runtime_error("load_external_ensemble: duplicate (point " +
                                 std::to_string(point_id) + ", member " +
                                 std::to_string(member_id) + ", lo)");
      cell.lo = value;
      cell.has_lo = true;
    } else if (cells[2] == "hi") {
      if (cell.has_hi)
        throw std::runtime_error("load_external_ensemble: duplicate (point " +
                                 std::to_string(point_id) + ", member " +
                                 std::to_string(member_id) + ", hi)");
      cell.hi = value;
      cell.has_hi = true;
    } else {
      throw std::runtime_error("load_external_ensemble: line " + std::to_string(line_no) +
                               ": side must be 'lo' or 'hi', got '" + cells[2] + "'");
    }
  }
  if (grid.empty()) throw std::runtime_error("load_external_ensemble: no data rows");

  std::vector<long long> member_ids;
  for (const auto& [mid, cell] : grid.begin()->second) member_ids.push_back(mid);

  ExternalEnsembleTable table;
  table.members = member_ids.size();
  for (const auto& [pid, row] : grid) {
    std::vector<long long> ids;
    for (const auto& [mid, cell] : row) ids.push_back(mid);
    if (ids != member_ids)
      throw std::runtime_error("load_external_ensemble: point " + std::to_string(pid) +
                               " has an inconsistent member set (B=" + std::to_string(ids.size()) +
                               " vs B=" + std::to_string(member_ids.size()) + ")");
    EnsembleQuantiles e;
    for (const long long mid : member_ids) {
      const Cell& cell = row.at(mid);
      if (!cell.has_lo)
        throw std::runtime_error("load_external_ensemble: missing (point " + std::to_string(pid) +
                                 ", member " + std::to_string(mid) + ", lo)");
      if (!cell.has_hi)
        throw std::runtime_error("load_external_ensemble: missing (point " + std::to_string(pid) +
                                 ", member " + std::to_string(mid) + ", hi)");
      e.lo.push_back(cell.lo);
      e.hi.push_back(cell.hi);
    }
    table.points.emplace(pid, std::move(e));
  }
  return table;
}

// How an external ensemble collapses to baseline quantile estimates:
// member-wise mean, or the last member (highest member_id, e.g. the final
// training epoch).
enum class EnsembleAggregate { mean, last_member };

}  // namespace uacqr
