#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "crsae/conv_ops.hpp"
#include "crsae/errors.hpp"
#include "crsae/parallel.hpp"
#include "crsae/rng.hpp"
#include "crsae/types.hpp"

namespace crsae {

namespace rng_tag {
constexpr std::uint64_t filters = 1;
constexpr std::uint64_t events = 2;
constexpr std::uint64_t noise = 3;
constexpr std::uint64_t augment = 4;
constexpr std::uint64_t shuffle = 5;
constexpr std::uint64_t init = 6;
}  // namespace rng_tag

struct SimConfig {
  int C = 4;
  int K = 18;
  int N = 1000;
  int J = 100;
  double firing_rate_hz = 30.0;
  double fs_hz = 10000.0;
  double amp_mean = 180.0;
  double amp_std = 30.0;
  double snr_db = std::numeric_limits<double>::infinity();  // +inf: noise disabled
  std::uint64_t seed = 0;
  std::optional<FilterBank> filter_source;  // absent: synthesized smooth filters

  void check() const {
    if (C < 1 || K < 1 || N < 1 || J < 1) throw ParamError("SimConfig sizes must be >= 1");
    if (K > N) throw DimensionError("SimConfig requires K <= N");
    if (firing_rate_hz < 0.0) throw ParamError("firing_rate_hz must be >= 0");
    if (fs_hz <= 0.0) throw ParamError("fs_hz must be > 0");
    if (amp_std < 0.0) throw ParamError("amp_std must be >= 0");
    if (filter_source &&
        (filter_source->num_filters() != C || filter_source->filter_length() != K))
      throw DimensionError("supplied filter bank does not match SimConfig C/K");
  }

  bool noiseless() const { return std::isinf(snr_db) && snr_db > 0.0; }
};

// One planted occurrence of a filter: onset sample within the window and a
// signed amplitude. Amplitudes are in pre-normalization units.
struct SpikeEvent {
  int channel = 0;
  int sample = 0;
  double amplitude = 0.0;
};

struct Dataset {
  std::vector<Vec> windows;          // J windows of length N
  double sigma = 0.0;                // noise std after normalization, 0 when noiseless
  double fs_hz = 0.0;
  double normalization_scale = 1.0;  // max-abs divisor applied to every sample

  struct Truth {
    FilterBank filters;
    std::vector<std::vector<SpikeEvent>> events;  // per window
  };
  std::optional<Truth> truth;

  Eigen::Index window_count() const { return static_cast<Eigen::Index>(windows.size()); }
  Eigen::Index window_length() const { return windows.empty() ? 0 : windows.front().size(); }
};

// sigma such that mean(clean^2) / sigma^2 hits the requested SNR in dB.
inline double snr_to_sigma(const std::vector<Vec>& clean, double snr_db) {
  double sumsq = 0.0;
  std::size_t count = 0;
  for (const auto& w : clean) {
    sumsq += w.squaredNorm();
    count += static_cast<std::size_t>(w.size());
  }
  if (count == 0 || sumsq == 0.0)
    throw DomainError("SNR is undefined for an all-zero clean signal");
  return std::sqrt(sumsq / static_cast<double>(count) / std::pow(10.0, snr_db / 10.0));
}

inline double snr_to_sigma(const Vec& clean, double snr_db) {
  return snr_to_sigma(std::vector<Vec>{clean}, snr_db);
}

// Largest absolute normalized cross-correlation over all integer lags.
inline double max_cross_correlation(const Vec& a, const Vec& b) {
  const Eigen::Index K = a.size();
  const double scale = a.norm() * b.norm();
  if (scale == 0.0) throw DomainError("cross-correlation of a zero vector");
  double best = 0.0;
  for (Eigen::Index k = -(K - 1); k < K; ++k) {
    double s = 0.0;
    for (Eigen::Index n = std::max<Eigen::Index>(0, -k); n < K && n + k < K; ++n)
      s += a(n + k) * b(n);
    best = std::max(best, std::abs(s) / scale);
  }
  return best;
}

// Smooth random unit-norm filters: Gaussian noise passed through a width-3
// moving average, rejection-sampled so every pair has max |cross-correlation|
// in [0.5, 0.95].
inline FilterBank synthesize_filters(int C, int K, std::mt19937_64& rng) {
  if (C < 1 || K < 1) throw ParamError("synthesize_filters requires C, K >= 1");
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto draw = [&] {
    Vec g(K);
    for (int k = 0; k < K; ++k) g(k) = gauss(rng);
    Vec f(K);
    for (int k = 0; k < K; ++k) {
      const int lo = std::max(0, k - 1), hi = std::min(K - 1, k + 1);
      f(k) = g.segment(lo, hi - lo + 1).mean();
    }
    const double n = f.norm();
    if (n == 0.0) f(0) = 1.0;  // measure-zero fallback
    return Vec(n == 0.0 ? f : (f / n).eval());
  };

  Mat filters(C, K);
  for (int restart = 0; restart < 100; ++restart) {
    int accepted = 0;
    for (int c = 0; c < C && accepted == c; ++c) {
      for (int attempt = 0; attempt < 20000; ++attempt) {
        const Vec f = draw();
        bool ok = true;
        for (int p = 0; p < c && ok; ++p) {
          const double xc = max_cross_correlation(f, filters.row(p).transpose());
          ok = xc >= 0.5 && xc <= 0.95;
        }
        if (ok) {
          filters.row(c) = f.transpose();
          ++accepted;
          break;
        }
      }
    }
    if (accepted == C) return FilterBank(filters);
  }
  throw ParamError("could not synthesize filters meeting the cross-correlation band");
}

// Poisson-process onsets (exponential gaps at firing_rate_hz, floored to
// samples), restricted to [0, N-K] and sequentially thinned so kept onsets on
// the same channel are at least K samples apart.
inline std::vector<SpikeEvent> draw_window_events(const SimConfig& cfg, std::mt19937_64& rng) {
  std::vector<SpikeEvent> events;
  if (cfg.firing_rate_hz <= 0.0) return events;
  std::exponential_distribution<double> gap(cfg.firing_rate_hz);
  std::normal_distribution<double> amp(cfg.amp_mean, cfg.amp_std);
  const int last_onset = cfg.N - cfg.K;
  const double horizon = static_cast<double>(last_onset) / cfg.fs_hz;
  for (int c = 0; c < cfg.C; ++c) {
    double t = gap(rng);
    int last_kept = std::numeric_limits<int>::min();
    while (t <= horizon) {
      const int onset = static_cast<int>(std::floor(t * cfg.fs_hz));
      if (onset <= last_onset &&
          (last_kept == std::numeric_limits<int>::min() || onset - last_kept >= cfg.K)) {
        events.push_back({c, onset, cfg.amp_std > 0.0 ? amp(rng) : cfg.amp_mean});
        last_kept = onset;
      }
      t += gap(rng);
    }
  }
  return events;
}

inline CodeMap events_to_code(const std::vector<SpikeEvent>& events, Eigen::Index C,
                              Eigen::Index ne) {
  CodeMap code = CodeMap::Zero(C, ne);
  for (const auto& e : events) {
    if (e.channel < 0 || e.channel >= C || e.sample < 0 || e.sample >= ne)
      throw DimensionError("event outside the code map");
    code(e.channel, e.sample) += e.amplitude;
  }
  return code;
}

// Draws a dataset from the convolutional generative model. Every window uses
// its own (seed, window, purpose) generator so results do not depend on
// scheduling; the whole dataset is divided by its maximum absolute value.
inline Dataset simulate(const SimConfig& cfg) {
  cfg.check();
  FilterBank filters = cfg.filter_source
                           ? *cfg.filter_source
                           : [&] {
                               auto rng = make_rng(cfg.seed, rng_tag::filters);
                               return synthesize_filters(cfg.C, cfg.K, rng);
                             }();

  const Eigen::Index ne = filters.code_length(cfg.N);
  std::vector<std::vector<SpikeEvent>> events(static_cast<std::size_t>(cfg.J));
  std::vector<Vec> windows(static_cast<std::size_t>(cfg.J));

  parallel_for(static_cast<std::size_t>(cfg.J), [&](std::size_t j) {
    auto rng = make_rng(cfg.seed, j + 1, rng_tag::events);
    events[j] = draw_window_events(cfg, rng);
    windows[j] = apply_dict(filters, events_to_code(events[j], cfg.C, ne));
  });

  double sigma_raw = 0.0;
  if (!cfg.noiseless()) {
    sigma_raw = snr_to_sigma(windows, cfg.snr_db);
    parallel_for(static_cast<std::size_t>(cfg.J), [&](std::size_t j) {
      auto rng = make_rng(cfg.seed, j + 1, rng_tag::noise);
      std::normal_distribution<double> gauss(0.0, sigma_raw);
      for (Eigen::Index i = 0; i < windows[j].size(); ++i) windows[j](i) += gauss(rng);
    });
  }

  double scale = 0.0;
  for (const auto& w : windows) scale = std::max(scale, w.cwiseAbs().maxCoeff());
  if (scale == 0.0) scale = 1.0;
  for (auto& w : windows) w /= scale;

  Dataset data;
  data.windows = std::move(windows);
  data.sigma = sigma_raw / scale;
  data.fs_hz = cfg.fs_hz;
  data.normalization_scale = scale;
  data.truth = Dataset::Truth{std::move(filters), std::move(events)};
  return data;
}

}  // namespace crsae
