#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>

#include "crsae/errors.hpp"

namespace crsae {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// Sparse-code array for one window: one row per filter channel, N_e = N - K + 1
// columns. Kept as a plain matrix; shape checks live next to the operators.
using CodeMap = Eigen::MatrixXd;

// The convolutional dictionary: C filters of length K, one per row. The
// implied synthesis operator is never materialized as a dense matrix.
struct FilterBank {
  Mat filters;  // C x K

  FilterBank() = default;
  explicit FilterBank(Mat f) : filters(std::move(f)) {
    if (filters.rows() < 1 || filters.cols() < 1)
      throw DimensionError("FilterBank requires C >= 1 and K >= 1");
    if (!filters.allFinite()) throw NumericalError("FilterBank entries must be finite");
  }

  Eigen::Index num_filters() const { return filters.rows(); }
  Eigen::Index filter_length() const { return filters.cols(); }

  // Code length for a signal of length n.
  Eigen::Index code_length(Eigen::Index n) const {
    if (n < filter_length())
      throw DimensionError("signal shorter than filter: N=" + std::to_string(n) +
                           " K=" + std::to_string(filter_length()));
    return n - filter_length() + 1;
  }

  bool rows_unit_norm(double tol = 1e-9) const {
    for (Eigen::Index c = 0; c < filters.rows(); ++c)
      if (std::abs(filters.row(c).norm() - 1.0) > tol) return false;
    return true;
  }

  // Scales each row to unit l2 norm. Rows already within 1e-13 of unit norm
  // are left untouched so renormalization is exactly idempotent.
  void renormalize() {
    for (Eigen::Index c = 0; c < filters.rows(); ++c) {
      const double n = filters.row(c).norm();
      if (n == 0.0) throw DomainError("cannot renormalize a zero filter");
      if (std::abs(n - 1.0) > 1e-13) filters.row(c) /= n;
    }
  }
};

inline void check_code_shape(const FilterBank& bank, const CodeMap& code, Eigen::Index n) {
  if (code.rows() != bank.num_filters() || code.cols() != bank.code_length(n))
    throw DimensionError("CodeMap shape " + std::to_string(code.rows()) + "x" +
                         std::to_string(code.cols()) + " does not match C=" +
                         std::to_string(bank.num_filters()) + ", N_e=" +
                         std::to_string(bank.code_length(n)));
}

}  // namespace crsae
