#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "crsae/adam.hpp"
#include "crsae/errors.hpp"
#include "crsae/eval.hpp"
#include "crsae/gradients.hpp"
#include "crsae/parallel.hpp"
#include "crsae/rng.hpp"
#include "crsae/simulate.hpp"

namespace crsae {

constexpr double kLambdaClampLo = 1e-6;
constexpr double kLambdaClampHi = 1e9;

struct TrainConfig {
  double eta_h = 0.01;
  double eta_lambda = 1.0;
  int batch_size = 32;
  int epochs = 10;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  bool augment_flip = false;
  bool augment_rotate = false;
  bool augment_precompute = false;  // pre-triple the training set instead of on-the-fly
  std::uint64_t seed = 0;
  bool deterministic = false;
  double validation_fraction = 0.1;
  bool lambda_log_prior = true;       // ablation knob for the -(N_e+r-1)C log(lambda) term
  bool reestimate_lipschitz = false;  // default: L fixed from the initial filters

  void check() const {
    if (eta_h < 0.0 || eta_lambda < 0.0) throw ParamError("learning rates must be >= 0");
    if (batch_size < 1) throw ParamError("batch_size must be >= 1");
    if (epochs < 1) throw ParamError("epochs must be >= 1");
    if (validation_fraction < 0.0 || validation_fraction >= 1.0)
      throw ParamError("validation_fraction must be in [0, 1)");
  }
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double lambda = 0.0;
  std::vector<double> filter_err_db;  // empty when the dataset carries no truth
  double seconds = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  Eigen::Index filter_count = 0;
  int best_epoch = 0;  // 1-based epoch whose parameters were returned
  std::vector<std::string> warnings;
};

struct TrainResult {
  FilterBank filters;
  double lambda = 0.0;
  double L = 0.0;
  TrainHistory history;
};

inline Vec flip_window(const Vec& y) { return -y; }

inline Vec rotate_window(const Vec& y, int shift) {
  const Eigen::Index n = y.size();
  if (n == 0) return y;
  const Eigen::Index s = ((shift % n) + n) % n;
  Vec out(n);
  out.head(n - s) = y.tail(n - s);
  out.tail(s) = y.head(s);
  return out;
}

// Random sign flip and/or circular rotation by a delay in [1, N], each
// applied only when its flag is set. Both transforms stay inside the
// generative family.
inline Vec augment_window(const Vec& y, bool flip, bool rotate, std::mt19937_64& rng) {
  Vec out = y;
  if (flip && std::uniform_int_distribution<int>(0, 1)(rng) == 1) out = flip_window(out);
  if (rotate) {
    const int s = std::uniform_int_distribution<int>(1, static_cast<int>(y.size()))(rng);
    out = rotate_window(out, s);
  }
  return out;
}

// Perturbs each true filter with scaled Gaussian noise until its recovery
// error lands in [target - 0.5, target + 0.5] dB.
inline FilterBank init_filters_perturbed(const FilterBank& h_true, double target_err_db,
                                         std::mt19937_64& rng) {
  if (target_err_db >= 0.0) throw ParamError("target_err_db must be negative");
  const double sine = std::pow(10.0, target_err_db / 10.0);
  if (sine >= 1.0) throw ParamError("target_err_db out of range");
  const double scale = sine / std::sqrt(1.0 - sine * sine);  // tan of the target angle
  const Eigen::Index K = h_true.filter_length();
  std::normal_distribution<double> gauss(0.0, 1.0);

  Mat out = h_true.filters;
  for (Eigen::Index c = 0; c < h_true.num_filters(); ++c) {
    const Vec h = h_true.filters.row(c).transpose().normalized();
    bool done = false;
    for (int attempt = 0; attempt < 1000 && !done; ++attempt) {
      Vec g(K);
      for (Eigen::Index k = 0; k < K; ++k) g(k) = gauss(rng);
      const double gn = g.norm();
      if (gn == 0.0) continue;
      Vec cand = (h + scale * (g / gn)).normalized();
      const double err = filter_err(h, cand);
      if (err >= target_err_db - 0.5 && err <= target_err_db + 0.5) {
        out.row(c) = cand.transpose();
        done = true;
      }
    }
    if (!done)
      throw ParamError("init_filters_perturbed: target error unreachable after 1000 draws");
  }
  return FilterBank(out);
}

namespace detail {

// Top eigenvector of a symmetric matrix by power iteration.
inline Vec power_eigvec(const Mat& S, std::mt19937_64& rng, double& eigval, int iters = 200) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vec v(S.rows());
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = gauss(rng);
  v.normalize();
  eigval = 0.0;
  for (int it = 0; it < iters; ++it) {
    Vec sv = S * v;
    const double n = sv.norm();
    if (n == 0.0) return v;
    v = sv / n;
    eigval = v.dot(S * v);
  }
  return v;
}

}  // namespace detail

// Standard waveform-clustering initialization: threshold detection, length-K
// snippets around each peak, projection onto the top-2 principal components
// (power iteration with deflation), then k-means with k-means++ seeding.
// Cluster-mean waveforms come back renormalized to unit norm.
inline FilterBank init_filters_kmeans(const Dataset& data, int C, int K, double threshold) {
  if (C < 1 || K < 1) throw ParamError("init_filters_kmeans requires C, K >= 1");
  if (threshold < 0.0) throw ParamError("threshold must be >= 0");

  std::vector<Vec> snippets;
  const int half = K / 2;
  for (const auto& y : data.windows) {
    const Eigen::Index n = y.size();
    // Local maxima of |y| above threshold, spaced at least K apart.
    std::vector<std::pair<double, Eigen::Index>> peaks;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double v = std::abs(y(i));
      if (v <= threshold) continue;
      const double prev = i > 0 ? std::abs(y(i - 1)) : 0.0;
      const double next = i + 1 < n ? std::abs(y(i + 1)) : 0.0;
      if (v >= prev && v > next) peaks.emplace_back(v, i);
    }
    std::stable_sort(peaks.begin(), peaks.end(),
                     [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<Eigen::Index> kept;
    for (const auto& [v, i] : peaks) {
      bool ok = true;
      for (Eigen::Index k : kept)
        if (std::abs(static_cast<long>(k - i)) < K) {
          ok = false;
          break;
        }
      if (ok) kept.push_back(i);
    }
    for (Eigen::Index i : kept)
      if (i - half >= 0 && i - half + K <= n) snippets.push_back(y.segment(i - half, K));
  }

  if (snippets.empty())
    throw ParamError("init_filters_kmeans: no events detected above the threshold");
  const int n_snip = static_cast<int>(snippets.size());

  Mat X(n_snip, K);
  for (int i = 0; i < n_snip; ++i) X.row(i) = snippets[static_cast<std::size_t>(i)].transpose();
  const Vec mean = X.colwise().mean().transpose();
  Mat Xc = X.rowwise() - mean.transpose();
  Mat S = Xc.transpose() * Xc / std::max(1, n_snip - 1);

  auto rng = make_rng(0x6b6du, static_cast<std::uint64_t>(n_snip));
  double l1 = 0.0, l2 = 0.0;
  const Vec v1 = detail::power_eigvec(S, rng, l1);
  S -= l1 * v1 * v1.transpose();
  const Vec v2 = detail::power_eigvec(S, rng, l2);

  Mat P(n_snip, 2);
  P.col(0) = Xc * v1;
  P.col(1) = Xc * v2;

  // k-means++ seeding.
  std::vector<int> centers_idx;
  std::uniform_int_distribution<int> first(0, n_snip - 1);
  centers_idx.push_back(first(rng));
  Vec d2 = Vec::Constant(n_snip, std::numeric_limits<double>::infinity());
  while (static_cast<int>(centers_idx.size()) < C) {
    const auto& last = P.row(centers_idx.back());
    for (int i = 0; i < n_snip; ++i)
      d2(i) = std::min(d2(i), (P.row(i) - last).squaredNorm());
    const double total = d2.sum();
    if (total <= 0.0) {
      // All points coincide with a center; spread the remaining seeds uniformly.
      centers_idx.push_back(first(rng));
      continue;
    }
    std::uniform_real_distribution<double> u(0.0, total);
    double target = u(rng), acc = 0.0;
    int pick = n_snip - 1;
    for (int i = 0; i < n_snip; ++i) {
      acc += d2(i);
      if (acc >= target) {
        pick = i;
        break;
      }
    }
    centers_idx.push_back(pick);
  }

  Mat centers(C, 2);
  for (int c = 0; c < C; ++c) centers.row(c) = P.row(centers_idx[static_cast<std::size_t>(c)]);

  std::vector<int> label(static_cast<std::size_t>(n_snip), 0);
  for (int iter = 0; iter < 50; ++iter) {
    bool changed = false;
    for (int i = 0; i < n_snip; ++i) {
      int best = 0;
      double bd = std::numeric_limits<double>::infinity();
      for (int c = 0; c < C; ++c) {
        const double d = (P.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (label[static_cast<std::size_t>(i)] != best) {
        label[static_cast<std::size_t>(i)] = best;
        changed = true;
      }
    }
    Mat sums = Mat::Zero(C, 2);
    std::vector<int> counts(static_cast<std::size_t>(C), 0);
    for (int i = 0; i < n_snip; ++i) {
      sums.row(label[static_cast<std::size_t>(i)]) += P.row(i);
      ++counts[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < C; ++c)
      if (counts[static_cast<std::size_t>(c)] > 0)
        centers.row(c) = sums.row(c) / counts[static_cast<std::size_t>(c)];
    if (!changed) break;
  }

  Mat filters = Mat::Zero(C, K);
  std::vector<int> counts(static_cast<std::size_t>(C), 0);
  for (int i = 0; i < n_snip; ++i) {
    filters.row(label[static_cast<std::size_t>(i)]) += X.row(i);
    ++counts[static_cast<std::size_t>(label[static_cast<std::size_t>(i)])];
  }
  for (int c = 0; c < C; ++c) {
    if (counts[static_cast<std::size_t>(c)] == 0)
      throw ParamError("init_filters_kmeans: only " +
                       std::to_string(std::count_if(counts.begin(), counts.end(),
                                                    [](int v) { return v > 0; })) +
                       " clusters populated; try a lower threshold");
    filters.row(c) /= counts[static_cast<std::size_t>(c)];
    const double nrm = filters.row(c).norm();
    if (nrm == 0.0) throw ParamError("init_filters_kmeans: degenerate zero cluster mean");
    filters.row(c) /= nrm;
  }
  return FilterBank(filters);
}

namespace detail {

struct TrainItem {
  std::size_t window = 0;
  int transform = 0;  // 0 none, 1 flip, 2 rotate
  int rotate_by = 0;
};

inline Vec materialize(const Dataset& data, const TrainItem& it) {
  const Vec& y = data.windows[it.window];
  switch (it.transform) {
    case 1: return flip_window(y);
    case 2: return rotate_window(y, it.rotate_by);
    default: return y;
  }
}

}  // namespace detail

// Two-stage mini-batch training: per batch, ADAM on the filters from the
// reconstruction loss (then per-filter renormalization), followed by ADAM on
// lambda from the Bayesian loss evaluated with the just-updated filters.
// Per-window gradients are computed in parallel into indexed slots and
// reduced in window order, so results are reproducible for a fixed seed
// regardless of the worker count. Returns the parameters from the epoch with
// the smallest validation reconstruction loss.
inline TrainResult train(const Dataset& data, const FilterBank& h0, double lambda0,
                         const TrainConfig& cfg, EncoderConfig enc, const GammaPrior& prior,
                         const std::function<void(const EpochRecord&)>& on_epoch = {}) {
  cfg.check();
  prior.check();
  if (lambda0 <= 0.0) throw DomainError("lambda0 must be > 0");
  if (data.windows.empty()) throw DimensionError("empty dataset");
  const Eigen::Index N = data.window_length();
  const Eigen::Index C = h0.num_filters();
  const Eigen::Index K = h0.filter_length();

  FilterBank bank = h0;
  bank.renormalize();
  double lambda = lambda0;

  if (enc.L <= 0.0) enc.L = estimate_lipschitz(bank, N).value;
  enc.lambda = lambda;
  if (enc.sigma <= 0.0) enc.sigma = data.sigma;
  validate_encoder_config(enc, bank, N);

  const std::size_t J = data.windows.size();
  const auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction *
                                                         static_cast<double>(J)));
  const std::size_t n_train = J - n_val;
  if (n_train == 0) throw DimensionError("no training windows after validation split");

  std::vector<detail::TrainItem> items;
  for (std::size_t j = 0; j < n_train; ++j) items.push_back({j, 0, 0});
  if (cfg.augment_precompute && (cfg.augment_flip || cfg.augment_rotate)) {
    for (std::size_t j = 0; j < n_train; ++j) {
      if (cfg.augment_flip) items.push_back({j, 1, 0});
      if (cfg.augment_rotate) {
        auto rng = make_rng(cfg.seed, j + 1, rng_tag::augment);
        items.push_back(
            {j, 2, std::uniform_int_distribution<int>(1, static_cast<int>(N))(rng)});
      }
    }
  }
  const bool on_the_fly =
      !cfg.augment_precompute && (cfg.augment_flip || cfg.augment_rotate);

  TrainResult result;
  result.history.filter_count = C;
  AdamOptimizer adam_h(cfg.eta_h, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, C * K);
  AdamOptimizer adam_l(cfg.eta_lambda, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps, 1);

  Mat best_filters = bank.filters;
  double best_lambda = lambda;
  double best_val = std::numeric_limits<double>::infinity();
  int best_epoch = 1;
  bool lambda_clamped_warned = false;

  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (cfg.reestimate_lipschitz && epoch > 1) {
      enc.L = estimate_lipschitz(bank, N).value;
      if (epoch == 2)
        result.history.warnings.push_back(
            "reestimate_lipschitz is on; the reference behavior holds L fixed");
    }

    auto shuffle_rng = make_rng(cfg.seed, rng_tag::shuffle, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double epoch_loss_sum = 0.0;
    std::size_t epoch_loss_count = 0;

    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const std::size_t bsz = stop - start;

      std::vector<Vec> batch(bsz);
      for (std::size_t i = 0; i < bsz; ++i) {
        const detail::TrainItem& it = items[order[start + i]];
        Vec y = detail::materialize(data, it);
        if (on_the_fly) {
          auto rng = make_rng(cfg.seed, it.window + 1,
                              rng_tag::augment + (static_cast<std::uint64_t>(epoch) << 3));
          y = augment_window(y, cfg.augment_flip, cfg.augment_rotate, rng);
        }
        batch[i] = std::move(y);
      }

      // Stage 1: filter gradient at the current (h, lambda).
      enc.lambda = lambda;
      std::vector<Mat> grads(bsz);
      std::vector<double> losses(bsz);
      parallel_for(bsz, [&](std::size_t i) {
        const EncodeResult er = encode(batch[i], bank, enc, true);
        grads[i] = grad_h(batch[i], bank, enc, *er.trace);
        losses[i] =
            0.5 * (batch[i] - apply_dict(bank, er.trace->z1[static_cast<std::size_t>(enc.T)]))
                      .squaredNorm();
      });
      Mat gh = Mat::Zero(C, K);
      for (std::size_t i = 0; i < bsz; ++i) {
        gh += grads[i];
        epoch_loss_sum += losses[i];
      }
      epoch_loss_count += bsz;
      gh /= static_cast<double>(bsz);
      if (!gh.allFinite())
        throw NumericalError("non-finite filter gradient at epoch " + std::to_string(epoch));

      Eigen::Map<Eigen::ArrayXd> params(bank.filters.data(), bank.filters.size());
      Eigen::Map<const Eigen::ArrayXd> gmap(gh.data(), gh.size());
      adam_h.step(params, gmap);
      bank.renormalize();

      // Stage 2: lambda gradient with the updated filters, pre-update lambda.
      std::vector<double> lgrads(bsz);
      parallel_for(bsz, [&](std::size_t i) {
        const EncodeResult er = encode(batch[i], bank, enc, true);
        lgrads[i] = grad_lambda(batch[i], bank, enc, prior, *er.trace, cfg.lambda_log_prior);
      });
      double gl = 0.0;
      for (std::size_t i = 0; i < bsz; ++i) gl += lgrads[i];
      gl /= static_cast<double>(bsz);
      if (!std::isfinite(gl))
        throw NumericalError("non-finite lambda gradient at epoch " + std::to_string(epoch));

      Eigen::ArrayXd lam(1), lgrad(1);
      lam(0) = lambda;
      lgrad(0) = gl;
      adam_l.step(lam, lgrad);
      lambda = lam(0);
      if (lambda < kLambdaClampLo || lambda > kLambdaClampHi) {
        lambda = std::clamp(lambda, kLambdaClampLo, kLambdaClampHi);
        if (!lambda_clamped_warned) {
          result.history.warnings.push_back("lambda hit its clamp boundary at epoch " +
                                            std::to_string(epoch));
          lambda_clamped_warned = true;
        }
      }
    }

    // End-of-epoch bookkeeping with the post-epoch parameters.
    enc.lambda = lambda;
    double val_loss = std::numeric_limits<double>::quiet_NaN();
    if (n_val > 0) {
      std::vector<double> vloss(n_val);
      parallel_for(n_val, [&](std::size_t i) {
        vloss[i] = loss_h(data.windows[n_train + i], bank, enc);
      });
      val_loss = std::accumulate(vloss.begin(), vloss.end(), 0.0) / static_cast<double>(n_val);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss_sum / static_cast<double>(epoch_loss_count);
    rec.val_loss = val_loss;
    rec.lambda = lambda;
    if (data.truth) {
      const MatchResult m =
          match_filters(data.truth->filters, bank, static_cast<int>(K) / 2);
      rec.filter_err_db = m.err_db;
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);

    const double selector = n_val > 0 ? val_loss : rec.train_loss;
    if (selector < best_val) {
      best_val = selector;
      best_filters = bank.filters;
      best_lambda = lambda;
      best_epoch = epoch;
    }
  }

  result.filters = FilterBank(best_filters);
  result.lambda = best_lambda;
  result.L = enc.L;
  result.history.best_epoch = best_epoch;
  return result;
}

}  // namespace crsae
