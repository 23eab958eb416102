#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace uacqr {

// Weighted empirical distribution over a sorted list of values. Quantiles use
// the left-continuous type-1 convention: quantile(a) is the first value whose
// cumulative weight reaches a. Cumulative weights are plain running sums, so
// two builds that feed identical (value, weight) sequences produce bitwise
// identical quantiles; the brute-force oracles in the tests rely on that.
class WeightedEmpirical {
 public:
  WeightedEmpirical() = default;

  // values must be ascending; weights positive and aligned with values.
  WeightedEmpirical(std::vector<double> values, const std::vector<double>& weights)
      : values_(std::move(values)) {
    if (values_.size() != weights.size())
      throw std::invalid_argument("WeightedEmpirical: size mismatch");
    cum_.resize(values_.size());
    double running = 0.0;
    for (std::size_t i = 0; i < values_.size(); ++i) {
      running += weights[i];
      cum_[i] = running;
    }
  }

  bool empty() const { return values_.empty(); }
  std::size_t size() const { return values_.size(); }
  double total_weight() const { return cum_.empty() ? 0.0 : cum_.back(); }

  // inf{ v : F(v) >= a }; +inf when no value qualifies.
  double quantile(double a) const {
    require_nonempty();
    const auto it = std::lower_bound(cum_.begin(), cum_.end(), a);
    if (it == cum_.end()) return std::numeric_limits<double>::infinity();
    return values_[static_cast<std::size_t>(it - cum_.begin())];
  }

  // inf{ v : F(v) > b }; +inf when no value qualifies (conjugate inverse).
  double quantile_upper(double b) const {
    require_nonempty();
    const auto it = std::upper_bound(cum_.begin(), cum_.end(), b);
    if (it == cum_.end()) return std::numeric_limits<double>::infinity();
    return values_[static_cast<std::size_t>(it - cum_.begin())];
  }

  // F(y) = sum of weights of values <= y.
  double cdf(double y) const {
    require_nonempty();
    const auto it = std::upper_bound(values_.begin(), values_.end(), y);
    if (it == values_.begin()) return 0.0;
    return cum_[static_cast<std::size_t>(it - values_.begin()) - 1];
  }

  const std::vector<double>& values() const { return values_; }
  const std::vector<double>& cumulative() const { return cum_; }

 private:
  void require_nonempty() const {
    if (values_.empty()) throw std::logic_error("WeightedEmpirical: empty distribution");
  }

  std::vector<double> values_;
  std::vector<double> cum_;
};

}  // namespace uacqr
