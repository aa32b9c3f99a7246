#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "crsae/conv_ops.hpp"
#include "crsae/errors.hpp"
#include "crsae/types.hpp"

namespace crsae {

enum class SolverMode { fista, ista };

inline std::string to_string(SolverMode m) { return m == SolverMode::fista ? "fista" : "ista"; }

// Unrolled-solver settings. The shrinkage bias is b = lambda * sigma^2 / L.
struct EncoderConfig {
  int T = 100;
  double L = 1.0;
  double lambda = 1.0;
  double sigma = 1.0;
  SolverMode mode = SolverMode::fista;

  double bias() const { return lambda * sigma * sigma / L; }

  void check() const {
    if (T < 1) throw ParamError("encoder requires T >= 1");
    if (L <= 0.0) throw ParamError("encoder requires L > 0");
    if (lambda <= 0.0) throw DomainError("encoder requires lambda > 0");
    if (sigma <= 0.0) throw ParamError("encoder requires sigma > 0");
  }
};

// Rejects step constants below the spectral norm of H^T H (divergence risk).
// Called explicitly: the trainer validates against the initial filters and
// then holds L fixed while the filters move.
inline void validate_encoder_config(const EncoderConfig& cfg, const FilterBank& bank,
                                    Eigen::Index n) {
  cfg.check();
  const LipschitzEstimate est = estimate_lipschitz(bank, n);
  if (cfg.L < est.raw * (1.0 - 1e-9))
    throw ParamError("encoder step constant L=" + std::to_string(cfg.L) +
                     " is below the estimated sigma_max(H^T H)=" + std::to_string(est.raw));
}

// Per-iteration cache of the unrolled forward pass, consumed by the gradient
// recursions. Arrays are 1-based in t (index 0 unused except s[0] = 0);
// z2(t) = z1(t-1) by construction, with z2(1) = 0.
struct FistaTrace {
  std::vector<double> s;   // s[0..T], s[0] = 0
  std::vector<CodeMap> w;  // w[1..T]
  std::vector<CodeMap> c;  // c[1..T], pre-shrinkage
  std::vector<CodeMap> z1; // z1[1..T], post-shrinkage

  // Fingerprint of the inputs that produced the trace.
  int T = 0;
  Eigen::Index channels = 0;
  Eigen::Index code_len = 0;
  double L = 0.0, lambda = 0.0, sigma = 0.0;
  SolverMode mode = SolverMode::fista;

  const CodeMap& z2(int t) const {
    return t <= 1 ? zero_ : z1[static_cast<std::size_t>(t) - 1];
  }

  CodeMap zero_;  // all-zero map matching the code shape, backs z2(1)

  bool matches(const EncoderConfig& cfg, const FilterBank& bank, Eigen::Index n) const {
    return T == cfg.T && L == cfg.L && lambda == cfg.lambda && sigma == cfg.sigma &&
           mode == cfg.mode && channels == bank.num_filters() &&
           code_len == bank.code_length(n);
  }

  // Smallest distance of any pre-shrinkage entry to the threshold; gradient
  // checks use it to stay away from the shrinkage kink.
  double kink_margin() const {
    const double b = lambda * sigma * sigma / L;
    double m = std::numeric_limits<double>::infinity();
    for (int t = 1; t <= T; ++t) {
      const auto& ct = c[static_cast<std::size_t>(t)];
      for (Eigen::Index i = 0; i < ct.size(); ++i)
        m = std::min(m, std::abs(std::abs(ct.data()[i]) - b));
    }
    return m;
  }
};

struct EncodeResult {
  CodeMap code;
  std::optional<FistaTrace> trace;
};

// T unrolled iterations of FISTA (or ISTA when the momentum ratio is pinned
// to zero), starting from the zero code:
//   s_t = (1 + sqrt(1 + 4 s_{t-1}^2)) / 2
//   w_t = z1_{t-1} + (s_{t-1} - 1)/s_t * (z1_{t-1} - z2_{t-1})
//   c_t = w_t + (1/L) H^T (y - H w_t)
//   z1_t = shrink(c_t, lambda sigma^2 / L),  z2_t = z1_{t-1}
// Returns z1_T, plus the full iteration cache when keep_trace is set.
inline EncodeResult encode(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                           bool keep_trace = false) {
  cfg.check();
  const Eigen::Index C = bank.num_filters();
  const Eigen::Index ne = bank.code_length(y.size());
  const double b = cfg.bias();

  EncodeResult res;
  FistaTrace trace;
  if (keep_trace) {
    trace.s.resize(static_cast<std::size_t>(cfg.T) + 1);
    trace.w.resize(static_cast<std::size_t>(cfg.T) + 1);
    trace.c.resize(static_cast<std::size_t>(cfg.T) + 1);
    trace.z1.resize(static_cast<std::size_t>(cfg.T) + 1);
    trace.s[0] = 0.0;
    trace.T = cfg.T;
    trace.channels = C;
    trace.code_len = ne;
    trace.L = cfg.L;
    trace.lambda = cfg.lambda;
    trace.sigma = cfg.sigma;
    trace.mode = cfg.mode;
    trace.zero_ = CodeMap::Zero(C, ne);
  }

  CodeMap z_prev = CodeMap::Zero(C, ne);   // z1_{t-1}
  CodeMap z_prev2 = CodeMap::Zero(C, ne);  // z2_{t-1} = z1_{t-2}
  double s_prev = 0.0;
  for (int t = 1; t <= cfg.T; ++t) {
    const double s_t = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * s_prev * s_prev));
    const double gamma = cfg.mode == SolverMode::ista ? 0.0 : (s_prev - 1.0) / s_t;
    CodeMap w_t = z_prev + gamma * (z_prev - z_prev2);
    const Vec residual = y - apply_dict(bank, w_t);
    CodeMap c_t = w_t + apply_dict_adjoint(bank, residual) / cfg.L;
    CodeMap z_t = shrink(c_t, b);
    if (keep_trace) {
      const auto ti = static_cast<std::size_t>(t);
      trace.s[ti] = s_t;
      trace.w[ti] = std::move(w_t);
      trace.c[ti] = std::move(c_t);
      trace.z1[ti] = z_t;
    }
    z_prev2 = std::move(z_prev);
    z_prev = std::move(z_t);
    s_prev = s_t;
  }

  res.code = std::move(z_prev);
  if (keep_trace) res.trace = std::move(trace);
  return res;
}

// The E-step objective: (1/2 sigma^2) ||y - H x||^2 + lambda ||x||_1.
inline double objective(const Vec& y, const FilterBank& bank, const CodeMap& x, double lambda,
                        double sigma) {
  check_code_shape(bank, x, y.size());
  if (sigma <= 0.0) throw ParamError("objective requires sigma > 0");
  const double resid = (y - apply_dict(bank, x)).squaredNorm();
  return 0.5 * resid / (sigma * sigma) + lambda * x.cwiseAbs().sum();
}

}  // namespace crsae
