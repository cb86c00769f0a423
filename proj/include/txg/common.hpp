#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace txg {

using NodeId = std::uint32_t;
using TxId = std::int64_t;
using Timestamp = std::int64_t;

/// Row-major dense matrix used for every feature table in the pipeline.
template <typename Scalar>
using DenseRows = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixXdr = DenseRows<double>;

inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();
inline constexpr std::size_t kUnlimited = std::numeric_limits<std::size_t>::max();

inline bool is_missing(double v) { return std::isnan(v); }

// Error hierarchy. The CLI maps these onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SchemaError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Neumaier compensated accumulator. Makes sums insensitive to summation order
/// up to the final rounding for the magnitudes seen in transaction data.
template <typename Scalar = double>
class CompensatedSum {
 public:
  void add(Scalar x) {
    const Scalar t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x))
      comp_ += (sum_ - t) + x;
    else
      comp_ += (x - t) + sum_;
    sum_ = t;
  }
  Scalar value() const { return sum_ + comp_; }

 private:
  Scalar sum_ = 0;
  Scalar comp_ = 0;
};

/// Compensated sum over any Eigen dense expression.
template <typename Derived>
typename Derived::Scalar compensated_sum(const Eigen::DenseBase<Derived>& x) {
  CompensatedSum<typename Derived::Scalar> acc;
  for (Eigen::Index i = 0; i < x.size(); ++i) acc.add(x.derived().coeff(i));
  return acc.value();
}

template <typename Range>
double compensated_sum_range(const Range& r) {
  CompensatedSum<double> acc;
  for (double v : r) acc.add(v);
  return acc.value();
}

/// min/max/mean/population-std of a sample; zeros for an empty sample.
struct Summary {
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
  double std = 0.0;
  double sum = 0.0;
};

template <typename Derived>
Summary summarize(const Eigen::DenseBase<Derived>& x) {
  Summary s;
  if (x.size() == 0) return s;
  s.min = static_cast<double>(x.minCoeff());
  s.max = static_cast<double>(x.maxCoeff());
  s.sum = static_cast<double>(compensated_sum(x.template cast<double>()));
  s.mean = s.sum / static_cast<double>(x.size());
  CompensatedSum<double> sq;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(x.derived().coeff(i)) - s.mean;
    sq.add(d * d);
  }
  s.std = std::sqrt(sq.value() / static_cast<double>(x.size()));
  return s;
}

inline Summary summarize(const std::vector<double>& v) {
  return summarize(Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())));
}

}  // namespace txg
