#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "crsae/conv_ops.hpp"
#include "crsae/encoder.hpp"
#include "crsae/errors.hpp"
#include "crsae/losses.hpp"
#include "crsae/rng.hpp"
#include "crsae/types.hpp"

namespace crsae {

namespace detail {

// 1 where |c| is strictly above the threshold, 0 elsewhere (including at the
// kink itself). This is shrink'(c, b) wherever the derivative exists.
inline Mat active_mask(const CodeMap& c, double b) {
  return (c.cwiseAbs().array() > b).cast<double>().matrix();
}

inline void require_fresh(const FistaTrace& trace, const EncoderConfig& cfg,
                          const FilterBank& bank, Eigen::Index n) {
  if (!trace.matches(cfg, bank, n))
    throw StaleTraceError("trace does not match the given encoder config/filter bank");
}

}  // namespace detail

// Gradient of loss_h with respect to the filters, accumulated over all T + 1
// uses of the shared bank (every encoder layer plus the decoder). Reverse
// sweep over the cached iterates:
//   dyhat = yhat - y            seeds the decoder,
//   dz1_T = H^T dyhat,
//   dc_t  = shrink'(c_t) .* dz1_t,
//   layer t adds (1/L) [corr(dc_t, y - H w_t) - corr(w_t, H dc_t)],
//   dw_t  = (I - (1/L) H^T H) dc_t,
//   dz1_{t-1} = (1 + g_t) dw_t + dz2_t,   dz2_{t-1} = -g_t dw_t,
// where g_t is the momentum ratio of the forward pass and the dz2 path
// carries the z2_t = z1_{t-1} copy.
inline Mat grad_h(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                  const FistaTrace& trace) {
  detail::require_fresh(trace, cfg, bank, y.size());
  const double b = cfg.bias();
  const double invL = 1.0 / cfg.L;

  const CodeMap& z_T = trace.z1[static_cast<std::size_t>(cfg.T)];
  const Vec yhat = apply_dict(bank, z_T);
  const Vec dyhat = yhat - y;

  Mat grad = filter_grad_correlate(bank, z_T, dyhat);
  CodeMap dz1 = apply_dict_adjoint(bank, dyhat);
  CodeMap dz2 = CodeMap::Zero(dz1.rows(), dz1.cols());

  for (int t = cfg.T; t >= 1; --t) {
    const auto ti = static_cast<std::size_t>(t);
    const CodeMap& c_t = trace.c[ti];
    const CodeMap& w_t = trace.w[ti];
    const CodeMap dc = detail::active_mask(c_t, b).cwiseProduct(dz1);

    const Vec resid = y - apply_dict(bank, w_t);
    const Vec h_dc = apply_dict(bank, dc);
    grad += invL * (filter_grad_correlate(bank, dc, resid) -
                    filter_grad_correlate(bank, w_t, h_dc));

    const CodeMap dw = dc - invL * apply_dict_adjoint(bank, h_dc);
    const double gamma =
        cfg.mode == SolverMode::ista ? 0.0 : (trace.s[ti - 1] - 1.0) / trace.s[ti];
    CodeMap dz1_next = (1.0 + gamma) * dw + dz2;
    dz2 = -gamma * dw;
    dz1 = std::move(dz1_next);
  }
  return grad;
}

// Gradient of loss_lambda with respect to lambda. The explicit terms come
// from the loss itself; the chain term sums, over layers, the direct effect
// of the threshold b = lambda sigma^2 / L on each shrinkage against the
// adjoint of ||z1_T||_1 propagated by the same recursion as grad_h:
//   d z1_t / d lambda |_direct = -(sigma^2/L) sgn(c_t) on |c_t| >= b.
inline double grad_lambda(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                          const GammaPrior& prior, const FistaTrace& trace,
                          bool include_log_prior = true) {
  prior.check();
  detail::require_fresh(trace, cfg, bank, y.size());
  const double b = cfg.bias();
  const double invL = 1.0 / cfg.L;
  const double dbias = cfg.sigma * cfg.sigma / cfg.L;  // db/dlambda

  const CodeMap& z_T = trace.z1[static_cast<std::size_t>(cfg.T)];
  const Eigen::Index C = bank.num_filters();
  const Eigen::Index ne = z_T.cols();

  // l1 subgradient at the output: sign with 0 at exact zeros.
  CodeMap dz1 = z_T.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
  CodeMap dz2 = CodeMap::Zero(C, ne);

  double chain = 0.0;
  for (int t = cfg.T; t >= 1; --t) {
    const auto ti = static_cast<std::size_t>(t);
    const CodeMap& c_t = trace.c[ti];

    // Direct threshold path at this layer, inclusive at |c| = b.
    for (Eigen::Index i = 0; i < c_t.size(); ++i) {
      const double ci = c_t.data()[i];
      if (std::abs(ci) >= b && ci != 0.0)
        chain -= dbias * (ci > 0.0 ? 1.0 : -1.0) * dz1.data()[i];
    }

    const CodeMap dc = detail::active_mask(c_t, b).cwiseProduct(dz1);
    const CodeMap dw = dc - invL * apply_dict_adjoint(bank, apply_dict(bank, dc));
    const double gamma =
        cfg.mode == SolverMode::ista ? 0.0 : (trace.s[ti - 1] - 1.0) / trace.s[ti];
    CodeMap dz1_next = (1.0 + gamma) * dw + dz2;
    dz2 = -gamma * dw;
    dz1 = std::move(dz1_next);
  }

  const double cd = static_cast<double>(C);
  double g = z_T.cwiseAbs().sum() + cd * prior.delta + cfg.lambda * chain;
  if (include_log_prior) g -= (static_cast<double>(ne) + prior.r - 1.0) * cd / cfg.lambda;
  return g;
}

// Finite-difference cross-check of the analytic gradients. The central
// differences re-run the encoder per perturbation, so they share nothing
// with the trace recursions above.
struct GradReport {
  Mat analytic_h;        // C x K
  Mat fd_h;              // C x K
  Mat rel_err_h;         // per-entry
  double analytic_lambda = 0.0;
  double fd_lambda = 0.0;
  double rel_err_lambda = 0.0;
  double kink_margin = 0.0;  // distance of the trace to the shrinkage kink

  double max_rel_err_h() const { return rel_err_h.size() ? rel_err_h.maxCoeff() : 0.0; }
};

namespace detail {

inline double rel_err(double a, double f, double scale) {
  const double denom = std::max(std::abs(f), std::max(1e-6 * scale, 1e-300));
  return std::abs(a - f) / denom;
}

}  // namespace detail

// Central finite differences of loss_h w.r.t. every filter entry, step per
// entry in absolute units (filters are unit-norm scaled).
inline Mat fd_grad_h(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                     double step = 1e-6) {
  if (step <= 0.0) throw ParamError("finite-difference step must be positive");
  Mat g(bank.num_filters(), bank.filter_length());
  FilterBank pert = bank;
  for (Eigen::Index c = 0; c < g.rows(); ++c)
    for (Eigen::Index k = 0; k < g.cols(); ++k) {
      const double h0 = bank.filters(c, k);
      pert.filters(c, k) = h0 + step;
      const double fp = loss_h(y, pert, cfg);
      pert.filters(c, k) = h0 - step;
      const double fm = loss_h(y, pert, cfg);
      pert.filters(c, k) = h0;
      g(c, k) = (fp - fm) / (2.0 * step);
    }
  return g;
}

// Central finite differences of loss_lambda w.r.t. lambda, relative step.
inline double fd_grad_lambda(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                             const GammaPrior& prior, double rel_step = 1e-6,
                             bool include_log_prior = true) {
  if (rel_step <= 0.0) throw ParamError("finite-difference step must be positive");
  const double step = rel_step * cfg.lambda;
  EncoderConfig up = cfg, dn = cfg;
  up.lambda = cfg.lambda + step;
  dn.lambda = cfg.lambda - step;
  return (loss_lambda(y, bank, up, prior, include_log_prior) -
          loss_lambda(y, bank, dn, prior, include_log_prior)) /
         (2.0 * step);
}

// Runs both analytic gradients against their finite-difference counterparts
// on one instance and reports per-parameter relative errors. The differences
// re-run the encoder per perturbation, so they share nothing with the trace
// recursions.
inline GradReport fd_gradient(const Vec& y, const FilterBank& bank, const EncoderConfig& cfg,
                              const GammaPrior& prior, double step_h = 1e-6,
                              double rel_step_lambda = 1e-6) {
  const EncodeResult enc = encode(y, bank, cfg, true);
  const FistaTrace& trace = *enc.trace;

  GradReport rep;
  rep.kink_margin = trace.kink_margin();
  rep.analytic_h = grad_h(y, bank, cfg, trace);
  rep.fd_h = fd_grad_h(y, bank, cfg, step_h);
  const double scale = std::max(rep.fd_h.cwiseAbs().maxCoeff(), 0.0);
  rep.rel_err_h.resize(rep.fd_h.rows(), rep.fd_h.cols());
  for (Eigen::Index i = 0; i < rep.fd_h.size(); ++i)
    rep.rel_err_h.data()[i] =
        detail::rel_err(rep.analytic_h.data()[i], rep.fd_h.data()[i], scale);

  rep.analytic_lambda = grad_lambda(y, bank, cfg, prior, trace);
  rep.fd_lambda = fd_grad_lambda(y, bank, cfg, prior, rel_step_lambda);
  rep.rel_err_lambda =
      detail::rel_err(rep.analytic_lambda, rep.fd_lambda, std::abs(rep.fd_lambda));
  return rep;
}

struct GradcheckInstance {
  Vec y;
  FilterBank bank;
  EncoderConfig cfg;
  GammaPrior prior;
};

// Seeded small instance for gradient validation: random unit-norm filters, a
// planted sparse code, mild noise, lambda in [0.1, 10], sigma in [0.05, 1].
// Instances whose trace comes within 1e-7 of the shrinkage kink are redrawn
// so the loss is differentiable at every tested coordinate.
inline GradcheckInstance make_gradcheck_instance(std::uint64_t seed) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    auto rng = make_rng(seed, attempt + 1, 0x67u);
    std::uniform_int_distribution<int> ci(1, 3), ki(2, 6), ti(3, 15);
    std::uniform_real_distribution<double> lam(0.1, 10.0), sig(0.05, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const int C = ci(rng), K = ki(rng);
    const int N = std::uniform_int_distribution<int>(4 * K, 40)(rng);
    Mat f(C, K);
    for (Eigen::Index i = 0; i < f.size(); ++i) f.data()[i] = gauss(rng);
    for (int c = 0; c < C; ++c) f.row(c).normalize();
    FilterBank bank(f);

    const Eigen::Index ne = bank.code_length(N);
    CodeMap code = CodeMap::Zero(C, ne);
    std::uniform_int_distribution<int> pos(0, static_cast<int>(ne) - 1);
    for (int c = 0; c < C; ++c)
      for (int s = 0; s < 2; ++s) code(c, pos(rng)) = 2.0 * gauss(rng);

    GradcheckInstance inst;
    inst.bank = bank;
    inst.cfg.T = ti(rng);
    inst.cfg.L = estimate_lipschitz(bank, N).value;
    inst.cfg.lambda = lam(rng);
    inst.cfg.sigma = sig(rng);
    inst.cfg.mode = SolverMode::fista;
    inst.prior.r = std::uniform_real_distribution<double>(0.5, 5.0)(rng);
    inst.prior.delta = std::uniform_real_distribution<double>(0.5, 5.0)(rng);
    inst.y = apply_dict(bank, code);
    for (Eigen::Index i = 0; i < inst.y.size(); ++i) inst.y(i) += 0.1 * gauss(rng);

    const EncodeResult er = encode(inst.y, inst.bank, inst.cfg, true);
    if (er.trace->kink_margin() > 1e-7) return inst;
  }
}

inline std::vector<GradReport> run_gradcheck(std::uint64_t seed, int count) {
  if (count < 1) throw ParamError("gradcheck needs at least one instance");
  std::vector<GradReport> reports;
  reports.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const GradcheckInstance inst = make_gradcheck_instance(seed + static_cast<std::uint64_t>(i));
    reports.push_back(fd_gradient(inst.y, inst.bank, inst.cfg, inst.prior));
  }
  return reports;
}

}  // namespace crsae
