#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>

#include "crsae/errors.hpp"
#include "crsae/rng.hpp"
#include "crsae/types.hpp"

namespace crsae {

// Forward synthesis H x: sum over channels of the full linear convolution of
// each code row with its filter. Output length N = N_e + K - 1.
inline Vec apply_dict(const FilterBank& bank, const CodeMap& code) {
  const Eigen::Index C = bank.num_filters();
  const Eigen::Index K = bank.filter_length();
  if (code.rows() != C) throw DimensionError("code channel count != filter count");
  const Eigen::Index ne = code.cols();
  if (ne < 1) throw DimensionError("empty code");
  const Eigen::Index n = ne + K - 1;
  Vec out = Vec::Zero(n);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index k = 0; k < K; ++k)
      out.segment(k, ne) += bank.filters(c, k) * code.row(c).transpose();
  return out;
}

// Adjoint H^T y: valid correlation of the signal with each filter,
// out(c, n) = sum_k h_c[k] y[n + k]. Exact adjoint of apply_dict.
inline CodeMap apply_dict_adjoint(const FilterBank& bank, const Vec& y) {
  const Eigen::Index C = bank.num_filters();
  const Eigen::Index K = bank.filter_length();
  const Eigen::Index ne = bank.code_length(y.size());
  CodeMap out = CodeMap::Zero(C, ne);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index k = 0; k < K; ++k)
      out.row(c) += bank.filters(c, k) * y.segment(k, ne).transpose();
  return out;
}

// Gradient-shaped correlation: G(c, k) = sum_n code(c, n) sig[n + k].
// This is d<sig, H code>/dh, the building block of every filter gradient.
inline Mat filter_grad_correlate(const FilterBank& bank, const CodeMap& code, const Vec& sig) {
  const Eigen::Index C = bank.num_filters();
  const Eigen::Index K = bank.filter_length();
  if (code.rows() != C) throw DimensionError("code channel count != filter count");
  const Eigen::Index ne = code.cols();
  if (sig.size() != ne + K - 1) throw DimensionError("signal length != N_e + K - 1");
  Mat g(C, K);
  for (Eigen::Index c = 0; c < C; ++c)
    for (Eigen::Index k = 0; k < K; ++k)
      g(c, k) = code.row(c).dot(sig.segment(k, ne).transpose());
  return g;
}

// Two-sided soft threshold: ReLU(|v| - b) * sgn(v). Entries with |v| <= b map
// to exactly zero.
inline double shrink(double v, double b) {
  if (b < 0.0) throw ParamError("shrink threshold must be nonnegative");
  const double m = std::abs(v) - b;
  return m > 0.0 ? (v > 0.0 ? m : -m) : 0.0;
}

template <typename Derived>
inline auto shrink(const Eigen::MatrixBase<Derived>& v, double b) {
  if (b < 0.0) throw ParamError("shrink threshold must be nonnegative");
  using Plain = typename Derived::PlainObject;
  Plain out = v.derived();
  auto* d = out.data();
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    const double m = std::abs(d[i]) - b;
    d[i] = m > 0.0 ? (d[i] > 0.0 ? m : -m) : 0.0;
  }
  return out;
}

struct LipschitzEstimate {
  double value = 0.0;      // safety-scaled estimate, 1.05 * raw
  double raw = 0.0;        // power-iteration estimate of sigma_max(H^T H)
  bool converged = false;  // Rayleigh quotient stabilized within tol
  int iterations = 0;
};

// Largest eigenvalue of H^T H for signals of length n, by power iteration on
// the composed operator. The returned value carries a 1.05 safety factor
// since power iteration approaches the eigenvalue from below and FISTA needs
// L >= sigma_max. Stops when the relative Rayleigh-quotient change drops
// below tol; otherwise reports converged = false with the last iterate.
inline LipschitzEstimate estimate_lipschitz(const FilterBank& bank, Eigen::Index n,
                                            double tol = 1e-6, int max_iter = 500) {
  if (tol <= 0.0) throw ParamError("estimate_lipschitz requires tol > 0");
  const Eigen::Index C = bank.num_filters();
  const Eigen::Index ne = bank.code_length(n);

  std::mt19937_64 rng = make_rng(0x715cu, static_cast<std::uint64_t>(C),
                                 static_cast<std::uint64_t>(ne));
  std::normal_distribution<double> gauss(0.0, 1.0);
  CodeMap v(C, ne);
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = gauss(rng);
  v /= v.norm();

  LipschitzEstimate est;
  double rho_prev = 0.0;
  for (int it = 1; it <= max_iter; ++it) {
    CodeMap gv = apply_dict_adjoint(bank, apply_dict(bank, v));
    const double rho = (v.array() * gv.array()).sum();  // Rayleigh quotient, ||v|| = 1
    est.raw = rho;
    est.iterations = it;
    const double gn = gv.norm();
    if (gn == 0.0) {  // H annihilates v; operator is zero on this cycle
      est.raw = 0.0;
      est.converged = true;
      break;
    }
    v = gv / gn;
    if (it > 1 && std::abs(rho - rho_prev) <= tol * std::abs(rho)) {
      est.converged = true;
      break;
    }
    rho_prev = rho;
  }
  est.value = 1.05 * est.raw;
  return est;
}

}  // namespace crsae
