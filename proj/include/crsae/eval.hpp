#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "crsae/encoder.hpp"
#include "crsae/errors.hpp"
#include "crsae/parallel.hpp"
#include "crsae/simulate.hpp"
#include "crsae/types.hpp"

namespace crsae {

constexpr double kFilterErrFloorDb = -150.0;

// Recovery error between two filters: 10 log10 of the sine of the angle
// between them. Sign- and scale-invariant; clamped at -150 dB when the
// filters are numerically collinear.
inline double filter_err(const Vec& h_true, const Vec& h_hat) {
  if (h_true.size() != h_hat.size()) throw DimensionError("filter_err length mismatch");
  const double na = h_true.norm(), nb = h_hat.norm();
  if (na == 0.0 || nb == 0.0) throw DomainError("filter_err of a zero vector");
  const double cosine2 = std::min(1.0, std::pow(h_true.dot(h_hat) / (na * nb), 2.0));
  const double sine = std::sqrt(std::max(0.0, 1.0 - cosine2));
  if (sine <= 1e-15) return kFilterErrFloorDb;
  return std::max(10.0 * std::log10(sine), kFilterErrFloorDb);
}

// Zero-padded integer shift; positive s delays the filter.
inline Vec shift_filter(const Vec& h, int s) {
  const Eigen::Index K = h.size();
  Vec out = Vec::Zero(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    const Eigen::Index src = k - s;
    if (src >= 0 && src < K) out(k) = h(src);
  }
  return out;
}

// Learned-to-true assignment minimizing the summed recovery error over
// permutations, integer shifts and signs. Signs are display-only since the
// error itself is sign-invariant.
struct MatchResult {
  std::vector<int> permutation;  // permutation[learned] = matched true index
  std::vector<int> shifts;       // applied to the learned filter
  std::vector<int> signs;        // sign of the aligned inner product
  std::vector<double> err_db;    // per learned filter
  bool exhaustive = true;

  double total_err() const { return std::accumulate(err_db.begin(), err_db.end(), 0.0); }
  double worst_err() const { return *std::max_element(err_db.begin(), err_db.end()); }
};

inline MatchResult match_filters(const FilterBank& h_true, const FilterBank& h_hat,
                                 int max_shift, bool force_greedy = false) {
  if (h_true.num_filters() != h_hat.num_filters() ||
      h_true.filter_length() != h_hat.filter_length())
    throw DimensionError("match_filters requires equal C and K");
  if (max_shift < 0) throw ParamError("max_shift must be >= 0");
  const int C = static_cast<int>(h_true.num_filters());

  Mat cost(C, C);
  Eigen::MatrixXi best_shift(C, C), best_sign(C, C);
  for (int i = 0; i < C; ++i) {
    const Vec t = h_true.filters.row(i).transpose();
    for (int j = 0; j < C; ++j) {
      double best = std::numeric_limits<double>::infinity();
      int bs = 0, sg = 1;
      for (int s = -max_shift; s <= max_shift; ++s) {
        const Vec shifted = shift_filter(h_hat.filters.row(j).transpose(), s);
        if (shifted.norm() == 0.0) continue;
        const double e = filter_err(t, shifted);
        if (e < best) {
          best = e;
          bs = s;
          sg = t.dot(shifted) >= 0.0 ? 1 : -1;
        }
      }
      cost(i, j) = best;
      best_shift(i, j) = bs;
      best_sign(i, j) = sg;
    }
  }

  MatchResult res;
  res.permutation.assign(C, -1);
  std::vector<int> assign(C);  // assign[learned] = true index
  if (C <= 8 && !force_greedy) {
    std::vector<int> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    double best_total = std::numeric_limits<double>::infinity();
    std::vector<int> best_perm = perm;
    do {
      double total = 0.0;
      for (int j = 0; j < C; ++j) total += cost(perm[j], j);
      if (total < best_total) {
        best_total = total;
        best_perm = perm;
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    assign = best_perm;
    res.exhaustive = true;
  } else {
    // Greedy fallback: repeatedly take the globally cheapest unused pair.
    std::vector<bool> used_true(C, false), used_hat(C, false);
    assign.assign(C, -1);
    for (int picked = 0; picked < C; ++picked) {
      double best = std::numeric_limits<double>::infinity();
      int bi = -1, bj = -1;
      for (int i = 0; i < C; ++i)
        for (int j = 0; j < C; ++j)
          if (!used_true[i] && !used_hat[j] && cost(i, j) < best) {
            best = cost(i, j);
            bi = i;
            bj = j;
          }
      used_true[bi] = true;
      used_hat[bj] = true;
      assign[bj] = bi;
    }
    res.exhaustive = false;
  }

  res.permutation = assign;
  res.shifts.resize(C);
  res.signs.resize(C);
  res.err_db.resize(C);
  for (int j = 0; j < C; ++j) {
    const int i = assign[j];
    res.shifts[j] = best_shift(i, j);
    res.signs[j] = best_sign(i, j);
    res.err_db[j] = cost(i, j);
  }
  return res;
}

// Miss/false-alarm trade-off over a threshold sweep.
struct SortReport {
  std::vector<double> thresholds;   // ascending
  std::vector<double> true_miss;    // proportion of true events unmatched
  std::vector<double> false_alarm;  // proportion of detections unmatched
  int tolerance_samples = 10;
  // Indices where the expected monotone trend is violated; flagged, not fixed.
  std::vector<int> monotonicity_violations;
};

// Local maxima of |x_c| per channel, sorted by descending magnitude.
inline std::vector<SpikeEvent> code_local_maxima(const CodeMap& x) {
  std::vector<SpikeEvent> cand;
  for (Eigen::Index c = 0; c < x.rows(); ++c) {
    const auto row = x.row(c);
    for (Eigen::Index n = 0; n < row.size(); ++n) {
      const double v = std::abs(row(n));
      if (v == 0.0) continue;
      const double prev = n > 0 ? std::abs(row(n - 1)) : 0.0;
      const double next = n + 1 < row.size() ? std::abs(row(n + 1)) : 0.0;
      if (v >= prev && v > next)
        cand.push_back({static_cast<int>(c), static_cast<int>(n), row(n)});
    }
  }
  std::stable_sort(cand.begin(), cand.end(), [](const SpikeEvent& a, const SpikeEvent& b) {
    return std::abs(a.amplitude) > std::abs(b.amplitude);
  });
  return cand;
}

// Keeps candidates strictly above the threshold with per-channel spacing of
// at least min_separation samples; bigger peaks win ties for space. The
// kept set at a higher threshold is always a subset of a lower one.
inline std::vector<SpikeEvent> select_events(const std::vector<SpikeEvent>& sorted_candidates,
                                             double threshold, int min_separation,
                                             Eigen::Index channels) {
  if (min_separation < 1) throw ParamError("min_separation must be >= 1");
  std::vector<std::vector<int>> kept(static_cast<std::size_t>(channels));
  std::vector<SpikeEvent> res;
  for (const auto& e : sorted_candidates) {
    if (std::abs(e.amplitude) <= threshold) continue;
    auto& ch = kept[static_cast<std::size_t>(e.channel)];
    bool ok = true;
    for (int k : ch)
      if (std::abs(k - e.sample) < min_separation) {
        ok = false;
        break;
      }
    if (ok) {
      ch.push_back(e.sample);
      res.push_back(e);
    }
  }
  std::sort(res.begin(), res.end(), [](const SpikeEvent& a, const SpikeEvent& b) {
    return a.channel != b.channel ? a.channel < b.channel : a.sample < b.sample;
  });
  return res;
}

// One encoding pass for the whole dataset, returning per-window candidate
// peaks ready for threshold sweeps.
inline std::vector<std::vector<SpikeEvent>> collect_code_peaks(const Dataset& data,
                                                               const FilterBank& bank,
                                                               const EncoderConfig& enc) {
  enc.check();
  std::vector<std::vector<SpikeEvent>> candidates(data.windows.size());
  parallel_for(data.windows.size(), [&](std::size_t j) {
    candidates[j] = code_local_maxima(encode(data.windows[j], bank, enc).code);
  });
  return candidates;
}

// Detections for every window at every threshold, from a single encoding
// pass: candidate events are local maxima of |code| kept by descending-
// amplitude suppression with the given minimum spacing.
inline std::vector<std::vector<std::vector<SpikeEvent>>> spike_sort(
    const Dataset& data, const FilterBank& bank, const EncoderConfig& enc,
    const std::vector<double>& thresholds, int min_separation) {
  const auto candidates = collect_code_peaks(data, bank, enc);
  const Eigen::Index C = bank.num_filters();
  std::vector<std::vector<std::vector<SpikeEvent>>> out(thresholds.size());
  for (std::size_t ti = 0; ti < thresholds.size(); ++ti) {
    out[ti].resize(candidates.size());
    for (std::size_t j = 0; j < candidates.size(); ++j)
      out[ti][j] = select_events(candidates[j], thresholds[ti], min_separation, C);
  }
  return out;
}

// Greedy closest-first one-to-one matching of detections to true events
// within the sample tolerance, per window and channel. Returns
// (true_miss, false_alarm); empty denominators count as zero.
inline std::pair<double, double> roc_point(
    const std::vector<std::vector<SpikeEvent>>& estimated,
    const std::vector<std::vector<SpikeEvent>>& truth, int tolerance_samples) {
  if (tolerance_samples < 0) throw ParamError("tolerance_samples must be >= 0");
  if (estimated.size() != truth.size())
    throw DimensionError("estimated/truth window counts differ");
  std::size_t total_true = 0, total_est = 0, matched = 0;
  for (std::size_t j = 0; j < truth.size(); ++j) {
    total_true += truth[j].size();
    total_est += estimated[j].size();
    struct Pair {
      int dist;
      std::size_t e, t;
    };
    std::vector<Pair> pairs;
    for (std::size_t e = 0; e < estimated[j].size(); ++e)
      for (std::size_t t = 0; t < truth[j].size(); ++t) {
        if (estimated[j][e].channel != truth[j][t].channel) continue;
        const int d = std::abs(estimated[j][e].sample - truth[j][t].sample);
        if (d <= tolerance_samples) pairs.push_back({d, e, t});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.dist != b.dist) return a.dist < b.dist;
      if (a.e != b.e) return a.e < b.e;
      return a.t < b.t;
    });
    std::vector<bool> used_e(estimated[j].size(), false), used_t(truth[j].size(), false);
    for (const auto& p : pairs)
      if (!used_e[p.e] && !used_t[p.t]) {
        used_e[p.e] = true;
        used_t[p.t] = true;
        ++matched;
      }
  }
  const double miss =
      total_true == 0 ? 0.0 : static_cast<double>(total_true - matched) / total_true;
  const double fa =
      total_est == 0 ? 0.0 : static_cast<double>(total_est - matched) / total_est;
  return {miss, fa};
}

inline SortReport roc_curve(
    const std::vector<std::vector<std::vector<SpikeEvent>>>& detections_per_threshold,
    const std::vector<std::vector<SpikeEvent>>& truth, const std::vector<double>& thresholds,
    int tolerance_samples) {
  if (detections_per_threshold.size() != thresholds.size())
    throw DimensionError("one detection set per threshold required");
  SortReport rep;
  rep.thresholds = thresholds;
  rep.tolerance_samples = tolerance_samples;
  for (std::size_t i = 0; i < thresholds.size(); ++i) {
    const auto [miss, fa] = roc_point(detections_per_threshold[i], truth, tolerance_samples);
    rep.true_miss.push_back(miss);
    rep.false_alarm.push_back(fa);
  }
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (rep.true_miss[i] < rep.true_miss[i - 1] - 1e-12 ||
        rep.false_alarm[i] > rep.false_alarm[i - 1] + 1e-12)
      rep.monotonicity_violations.push_back(static_cast<int>(i));
  }
  return rep;
}

}  // namespace crsae
