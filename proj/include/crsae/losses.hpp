#pragma once

#include <cmath>

#include "crsae/encoder.hpp"
#include "crsae/errors.hpp"
#include "crsae/types.hpp"

namespace crsae {

// Gamma hyper-prior on the regularization parameter, shape r and rate delta.
struct GammaPrior {
  double r = 1.0;
  double delta = 1.0;

  void check() const {
    if (r <= 0.0 || delta <= 0.0) throw ParamError("GammaPrior requires r > 0 and delta > 0");
  }
  double mean() const { return r / delta; }
};

// Reconstruction loss of the tied autoencoder: (1/2) ||y - H enc(y)||^2.
inline double loss_h(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg) {
  const CodeMap x = encode(y, bank, cfg).code;
  return 0.5 * (y - apply_dict(bank, x)).squaredNorm();
}

// The lambda loss given a code l1-norm value, with the log-prior term that
// keeps lambda away from zero. include_log_prior = false is an ablation knob.
inline double lambda_objective(double code_l1, double lambda, Eigen::Index C, Eigen::Index ne,
                               const GammaPrior& prior, bool include_log_prior = true) {
  prior.check();
  if (lambda <= 0.0) throw DomainError("lambda loss requires lambda > 0");
  const double cd = static_cast<double>(C);
  double v = lambda * (code_l1 + cd * prior.delta);
  if (include_log_prior) v -= (static_cast<double>(ne) + prior.r - 1.0) * cd * std::log(lambda);
  return v;
}

// lambda (||enc(y)||_1 + C delta) - (N_e + r - 1) C log lambda.
inline double loss_lambda(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                          const GammaPrior& prior, bool include_log_prior = true) {
  const CodeMap x = encode(y, bank, cfg).code;
  return lambda_objective(x.cwiseAbs().sum(), cfg.lambda, bank.num_filters(),
                          bank.code_length(y.size()), prior, include_log_prior);
}

// Closed-form minimizer of the lambda loss for a frozen code l1 norm:
// lambda* = (N_e + r - 1) C / (||x||_1 + C delta).
inline double lambda_stationary_point(double code_l1, Eigen::Index C, Eigen::Index ne,
                                      const GammaPrior& prior) {
  prior.check();
  const double cd = static_cast<double>(C);
  return (static_cast<double>(ne) + prior.r - 1.0) * cd / (code_l1 + cd * prior.delta);
}

// Textbook starting point for the regularization parameter,
// sqrt(2 log(C N_e)) / sigma.
inline double suggested_lambda(Eigen::Index C, Eigen::Index ne, double sigma) {
  if (sigma <= 0.0) throw ParamError("suggested_lambda requires sigma > 0");
  return std::sqrt(2.0 * std::log(static_cast<double>(C) * static_cast<double>(ne))) / sigma;
}

}  // namespace crsae
