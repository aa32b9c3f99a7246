#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "crsae/errors.hpp"

namespace crsae {

// Plain ADAM with bias correction. One instance per parameter group; the
// trainer keeps separate instances for the filters and for lambda.
struct AdamOptimizer {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  Eigen::ArrayXd m;
  Eigen::ArrayXd v;
  long steps = 0;

  AdamOptimizer() = default;
  AdamOptimizer(double lr_, double b1, double b2, double e, Eigen::Index size)
      : lr(lr_), beta1(b1), beta2(b2), eps(e), m(Eigen::ArrayXd::Zero(size)),
        v(Eigen::ArrayXd::Zero(size)) {
    if (lr < 0.0 || b1 < 0.0 || b1 >= 1.0 || b2 < 0.0 || b2 >= 1.0 || e <= 0.0)
      throw ParamError("invalid ADAM hyperparameters");
  }

  void step(Eigen::Ref<Eigen::ArrayXd> params, const Eigen::ArrayXd& grad) {
    if (params.size() != m.size() || grad.size() != m.size())
      throw DimensionError("ADAM parameter/gradient size mismatch");
    ++steps;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.square();
    const double mc = 1.0 - std::pow(beta1, static_cast<double>(steps));
    const double vc = 1.0 - std::pow(beta2, static_cast<double>(steps));
    params -= lr * (m / mc) / ((v / vc).sqrt() + eps);
  }
};

}  // namespace crsae
