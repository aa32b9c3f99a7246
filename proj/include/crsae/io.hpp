#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "crsae/encoder.hpp"
#include "crsae/errors.hpp"
#include "crsae/eval.hpp"
#include "crsae/gradients.hpp"
#include "crsae/losses.hpp"
#include "crsae/simulate.hpp"
#include "crsae/trainer.hpp"
#include "crsae/types.hpp"

namespace crsae {

// All binary formats are little-endian with self-describing headers.
namespace detail {

constexpr std::uint16_t kDatasetVersion = 1;
constexpr std::uint16_t kFilterVersion = 1;
constexpr std::uint16_t kCodeVersion = 1;

inline void put_bytes(std::ostream& os, const void* p, std::size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("write failed");
}

template <typename T>
inline void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i)
    buf[i] = static_cast<unsigned char>((static_cast<std::make_unsigned_t<T>>(v) >> (8 * i)) & 0xff);
  put_bytes(os, buf, sizeof(T));
}

inline void put_f64(std::ostream& os, double v) {
  put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
}

inline void get_bytes(std::istream& is, void* p, std::size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(is.gcount()) != n)
    throw TruncationError(std::string("file truncated while reading ") + what);
}

template <typename T>
inline T get_le(std::istream& is, const char* what) {
  static_assert(std::is_integral_v<T>);
  unsigned char buf[sizeof(T)];
  get_bytes(is, buf, sizeof(T), what);
  std::make_unsigned_t<T> v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<std::make_unsigned_t<T>>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

inline double get_f64(std::istream& is, const char* what) {
  return std::bit_cast<double>(get_le<std::uint64_t>(is, what));
}

inline void expect_magic(std::istream& is, const char magic[4], const char* kind) {
  char buf[4];
  get_bytes(is, buf, 4, "magic");
  if (std::memcmp(buf, magic, 4) != 0)
    throw FormatError(std::string("bad magic: not a ") + kind + " file");
}

inline void expect_eof(std::istream& is, const char* kind) {
  if (is.peek() != std::char_traits<char>::eof())
    throw FormatError(std::string(kind) + " file has trailing bytes beyond the declared payload");
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open for writing: " + path);
  return os;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open for reading: " + path);
  return is;
}

}  // namespace detail

// ---- dataset files ("CRSD") -------------------------------------------------

inline void write_dataset(const std::string& path, const Dataset& data) {
  using namespace detail;
  auto os = open_out(path);
  put_bytes(os, "CRSD", 4);
  put_le<std::uint16_t>(os, kDatasetVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.windows.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(data.window_length()));
  put_f64(os, data.fs_hz);
  put_f64(os, data.sigma);
  put_f64(os, data.normalization_scale);
  put_le<std::uint8_t>(os, data.truth ? 1 : 0);
  for (const auto& w : data.windows)
    for (Eigen::Index i = 0; i < w.size(); ++i) put_f64(os, w(i));
  if (data.truth) {
    const auto& t = *data.truth;
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.filters.num_filters()));
    put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.filters.filter_length()));
    for (Eigen::Index c = 0; c < t.filters.num_filters(); ++c)
      for (Eigen::Index k = 0; k < t.filters.filter_length(); ++k)
        put_f64(os, t.filters.filters(c, k));
    if (t.events.size() != data.windows.size())
      throw DimensionError("truth event lists do not match the window count");
    for (const auto& ev : t.events) {
      put_le<std::uint32_t>(os, static_cast<std::uint32_t>(ev.size()));
      for (const auto& e : ev) {
        put_le<std::uint16_t>(os, static_cast<std::uint16_t>(e.channel));
        put_le<std::uint32_t>(os, static_cast<std::uint32_t>(e.sample));
        put_f64(os, e.amplitude);
      }
    }
  }
}

inline Dataset read_dataset(const std::string& path) {
  using namespace detail;
  auto is = open_in(path);
  expect_magic(is, "CRSD", "dataset");
  const auto version = get_le<std::uint16_t>(is, "version");
  if (version != kDatasetVersion)
    throw VersionError("unsupported dataset version " + std::to_string(version) +
                       " (expected " + std::to_string(kDatasetVersion) + ")");
  const auto J = get_le<std::uint32_t>(is, "window count");
  const auto N = get_le<std::uint32_t>(is, "window length");
  Dataset data;
  data.fs_hz = get_f64(is, "fs_hz");
  data.sigma = get_f64(is, "sigma");
  data.normalization_scale = get_f64(is, "normalization_scale");
  const auto truth_flag = get_le<std::uint8_t>(is, "truth flag");
  data.windows.resize(J);
  for (auto& w : data.windows) {
    w.resize(N);
    for (std::uint32_t i = 0; i < N; ++i) w(i) = get_f64(is, "window samples");
  }
  if (truth_flag) {
    const auto C = get_le<std::uint32_t>(is, "truth C");
    const auto K = get_le<std::uint32_t>(is, "truth K");
    if (C == 0 || K == 0) throw FormatError("truth block declares empty filters");
    Mat f(C, K);
    for (std::uint32_t c = 0; c < C; ++c)
      for (std::uint32_t k = 0; k < K; ++k) f(c, k) = get_f64(is, "truth filters");
    Dataset::Truth truth{FilterBank(f), {}};
    truth.events.resize(J);
    for (auto& ev : truth.events) {
      const auto count = get_le<std::uint32_t>(is, "event count");
      ev.resize(count);
      for (auto& e : ev) {
        e.channel = get_le<std::uint16_t>(is, "event channel");
        e.sample = static_cast<int>(get_le<std::uint32_t>(is, "event sample"));
        e.amplitude = get_f64(is, "event amplitude");
      }
    }
    data.truth = std::move(truth);
  }
  expect_eof(is, "dataset");
  return data;
}

// Headerless raw sample stream (f64 or f32 little-endian), cut into windows
// of the given length; trailing samples that do not fill a window are
// dropped. Values are divided by the stream's max absolute value.
inline Dataset read_raw_recording(const std::string& path, Eigen::Index window_length,
                                  double fs_hz, double sigma, bool dtype_f32 = false,
                                  bool normalize = true) {
  using namespace detail;
  if (window_length < 1) throw ParamError("window length must be >= 1");
  auto is = open_in(path);
  std::vector<double> samples;
  for (;;) {
    if (dtype_f32) {
      unsigned char buf[4];
      is.read(reinterpret_cast<char*>(buf), 4);
      if (is.gcount() == 0) break;
      if (is.gcount() != 4) throw TruncationError("raw stream ends mid-sample");
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[i]) << (8 * i);
      samples.push_back(static_cast<double>(std::bit_cast<float>(v)));
    } else {
      unsigned char buf[8];
      is.read(reinterpret_cast<char*>(buf), 8);
      if (is.gcount() == 0) break;
      if (is.gcount() != 8) throw TruncationError("raw stream ends mid-sample");
      std::uint64_t v = 0;
      for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
      samples.push_back(std::bit_cast<double>(v));
    }
  }
  const std::size_t J = samples.size() / static_cast<std::size_t>(window_length);
  if (J == 0) throw TruncationError("raw stream shorter than one window");
  Dataset data;
  data.fs_hz = fs_hz;
  double scale = 1.0;
  if (normalize) {
    scale = 0.0;
    for (double v : samples) scale = std::max(scale, std::abs(v));
    if (scale == 0.0) scale = 1.0;
  }
  data.normalization_scale = scale;
  data.sigma = sigma;
  data.windows.resize(J);
  for (std::size_t j = 0; j < J; ++j) {
    data.windows[j].resize(window_length);
    for (Eigen::Index i = 0; i < window_length; ++i)
      data.windows[j](i) = samples[j * static_cast<std::size_t>(window_length) +
                                   static_cast<std::size_t>(i)] /
                           scale;
  }
  return data;
}

// ---- filter files ("CRSF") --------------------------------------------------

struct FilterFileData {
  FilterBank bank;
  double lambda = 0.0;
  double L = 0.0;
  double sigma = 0.0;
  bool unit_norm_warning = false;  // set on read when a row is off unit norm
};

inline void write_filters(const std::string& path, const FilterBank& bank, double lambda,
                          double L, double sigma) {
  using namespace detail;
  auto os = open_out(path);
  put_bytes(os, "CRSF", 4);
  put_le<std::uint16_t>(os, kFilterVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.num_filters()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(bank.filter_length()));
  put_f64(os, lambda);
  put_f64(os, L);
  put_f64(os, sigma);
  for (Eigen::Index c = 0; c < bank.num_filters(); ++c)
    for (Eigen::Index k = 0; k < bank.filter_length(); ++k) put_f64(os, bank.filters(c, k));
}

inline FilterFileData read_filters(const std::string& path) {
  using namespace detail;
  auto is = open_in(path);
  expect_magic(is, "CRSF", "filter");
  const auto version = get_le<std::uint16_t>(is, "version");
  if (version != kFilterVersion)
    throw VersionError("unsupported filter version " + std::to_string(version) +
                       " (expected " + std::to_string(kFilterVersion) + ")");
  const auto C = get_le<std::uint32_t>(is, "C");
  const auto K = get_le<std::uint32_t>(is, "K");
  if (C == 0 || K == 0) throw FormatError("filter file declares empty bank");
  FilterFileData out{FilterBank(Mat::Ones(C, K)), 0, 0, 0, false};
  out.lambda = get_f64(is, "lambda");
  out.L = get_f64(is, "L");
  out.sigma = get_f64(is, "sigma");
  for (std::uint32_t c = 0; c < C; ++c)
    for (std::uint32_t k = 0; k < K; ++k) out.bank.filters(c, k) = get_f64(is, "filters");
  expect_eof(is, "filter");
  out.unit_norm_warning = !out.bank.rows_unit_norm(1e-9);
  return out;
}

// ---- code dumps ("CRSX") ----------------------------------------------------

inline void write_codes(const std::string& path, const std::vector<CodeMap>& codes) {
  using namespace detail;
  if (codes.empty()) throw ParamError("no codes to write");
  auto os = open_out(path);
  put_bytes(os, "CRSX", 4);
  put_le<std::uint16_t>(os, kCodeVersion);
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(codes.size()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(codes.front().rows()));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(codes.front().cols()));
  for (const auto& x : codes) {
    if (x.rows() != codes.front().rows() || x.cols() != codes.front().cols())
      throw DimensionError("inconsistent code shapes");
    for (Eigen::Index c = 0; c < x.rows(); ++c)
      for (Eigen::Index n = 0; n < x.cols(); ++n) put_f64(os, x(c, n));
  }
}

inline std::vector<CodeMap> read_codes(const std::string& path) {
  using namespace detail;
  auto is = open_in(path);
  expect_magic(is, "CRSX", "code");
  const auto version = get_le<std::uint16_t>(is, "version");
  if (version != kCodeVersion)
    throw VersionError("unsupported code version " + std::to_string(version));
  const auto count = get_le<std::uint32_t>(is, "count");
  const auto C = get_le<std::uint32_t>(is, "C");
  const auto ne = get_le<std::uint32_t>(is, "N_e");
  std::vector<CodeMap> codes(count, CodeMap(C, ne));
  for (auto& x : codes)
    for (std::uint32_t c = 0; c < C; ++c)
      for (std::uint32_t n = 0; n < ne; ++n) x(c, n) = get_f64(is, "codes");
  expect_eof(is, "code");
  return codes;
}

// ---- CSV --------------------------------------------------------------------

namespace detail {

inline std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline std::string csv_num(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline void write_history_csv(const std::string& path, const TrainHistory& hist) {
  auto os = detail::open_out(path);
  os << "epoch,train_loss,val_loss,lambda,seconds";
  for (Eigen::Index c = 0; c < hist.filter_count; ++c) os << ",err_f" << c;
  os << "\r\n";
  for (const auto& e : hist.epochs) {
    os << e.epoch << ',' << detail::csv_num(e.train_loss) << ',' << detail::csv_num(e.val_loss)
       << ',' << detail::csv_num(e.lambda) << ',' << detail::csv_num(e.seconds);
    for (Eigen::Index c = 0; c < hist.filter_count; ++c)
      os << ','
         << (static_cast<std::size_t>(c) < e.filter_err_db.size()
                 ? detail::csv_num(e.filter_err_db[static_cast<std::size_t>(c)])
                 : "");
    os << "\r\n";
  }
  if (!os) throw IoError("failed writing " + path);
}

inline void write_sort_csv(const std::string& path, const SortReport& rep) {
  auto os = detail::open_out(path);
  os << "threshold,true_miss,false_alarm\r\n";
  for (std::size_t i = 0; i < rep.thresholds.size(); ++i)
    os << detail::csv_num(rep.thresholds[i]) << ',' << detail::csv_num(rep.true_miss[i]) << ','
       << detail::csv_num(rep.false_alarm[i]) << "\r\n";
  if (!os) throw IoError("failed writing " + path);
}

inline void write_match_csv(const std::string& path, const MatchResult& m) {
  auto os = detail::open_out(path);
  os << "learned,true,shift,sign,err_db\r\n";
  for (std::size_t j = 0; j < m.permutation.size(); ++j)
    os << j << ',' << m.permutation[j] << ',' << m.shifts[j] << ',' << m.signs[j] << ','
       << detail::csv_num(m.err_db[j]) << "\r\n";
  if (!os) throw IoError("failed writing " + path);
}

inline void write_gradreport_csv(const std::string& path, const std::vector<GradReport>& reps) {
  auto os = detail::open_out(path);
  os << "instance,parameter,analytic,finite_difference,rel_err\r\n";
  for (std::size_t i = 0; i < reps.size(); ++i) {
    const auto& r = reps[i];
    for (Eigen::Index c = 0; c < r.analytic_h.rows(); ++c)
      for (Eigen::Index k = 0; k < r.analytic_h.cols(); ++k)
        os << i << ",h[" << c << "][" << k << "]," << detail::csv_num(r.analytic_h(c, k)) << ','
           << detail::csv_num(r.fd_h(c, k)) << ',' << detail::csv_num(r.rel_err_h(c, k))
           << "\r\n";
    os << i << ",lambda," << detail::csv_num(r.analytic_lambda) << ','
       << detail::csv_num(r.fd_lambda) << ',' << detail::csv_num(r.rel_err_lambda) << "\r\n";
  }
  if (!os) throw IoError("failed writing " + path);
}

// ---- JSON configuration -----------------------------------------------------

namespace detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                           const char* what) {
  for (const auto& [key, value] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) {
        ok = true;
        break;
      }
    if (!ok) throw ParamError(std::string("unknown key \"") + key + "\" in " + what + " config");
  }
}

}  // namespace detail

// snr_db accepts a number, null, or absence; the latter two disable noise.
// filter_source is null/"synthesized" or the path of a filter file.
inline SimConfig sim_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j,
                         {"C", "K", "N", "J", "firing_rate_hz", "fs_hz", "amp_mean", "amp_std",
                          "snr_db", "seed", "filter_source"},
                         "simulation");
  SimConfig cfg;
  cfg.C = j.value("C", cfg.C);
  cfg.K = j.value("K", cfg.K);
  cfg.N = j.value("N", cfg.N);
  cfg.J = j.value("J", cfg.J);
  cfg.firing_rate_hz = j.value("firing_rate_hz", cfg.firing_rate_hz);
  cfg.fs_hz = j.value("fs_hz", cfg.fs_hz);
  cfg.amp_mean = j.value("amp_mean", cfg.amp_mean);
  cfg.amp_std = j.value("amp_std", cfg.amp_std);
  if (j.contains("snr_db") && !j["snr_db"].is_null()) cfg.snr_db = j["snr_db"].get<double>();
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  if (j.contains("filter_source") && !j["filter_source"].is_null()) {
    const auto src = j["filter_source"].get<std::string>();
    if (src != "synthesized") cfg.filter_source = read_filters(src).bank;
  }
  return cfg;
}

// L, lambda, sigma may each be null/absent, meaning: estimate L from the
// initial filters, use the sqrt(2 log(C N_e))/sigma rule, and take the
// dataset noise level, respectively.
inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"T", "L", "lambda", "sigma", "mode"}, "encoder");
  EncoderConfig cfg;
  cfg.T = j.value("T", cfg.T);
  cfg.L = j.contains("L") && !j["L"].is_null() ? j["L"].get<double>() : 0.0;
  cfg.lambda = j.contains("lambda") && !j["lambda"].is_null() ? j["lambda"].get<double>() : 0.0;
  cfg.sigma = j.contains("sigma") && !j["sigma"].is_null() ? j["sigma"].get<double>() : 0.0;
  if (j.contains("mode")) {
    const auto m = j["mode"].get<std::string>();
    if (m == "fista")
      cfg.mode = SolverMode::fista;
    else if (m == "ista")
      cfg.mode = SolverMode::ista;
    else
      throw ParamError("encoder mode must be \"fista\" or \"ista\"");
  }
  return cfg;
}

inline TrainConfig train_config_from_json(const nlohmann::json& j) {
  detail::reject_unknown(
      j,
      {"eta_h", "eta_lambda", "batch_size", "epochs", "adam_beta1", "adam_beta2", "adam_eps",
       "augment_flip", "augment_rotate", "augment_precompute", "seed", "deterministic",
       "validation_fraction", "lambda_log_prior", "reestimate_lipschitz"},
      "train");
  TrainConfig cfg;
  cfg.eta_h = j.value("eta_h", cfg.eta_h);
  cfg.eta_lambda = j.value("eta_lambda", cfg.eta_lambda);
  cfg.batch_size = j.value("batch_size", cfg.batch_size);
  cfg.epochs = j.value("epochs", cfg.epochs);
  cfg.adam_beta1 = j.value("adam_beta1", cfg.adam_beta1);
  cfg.adam_beta2 = j.value("adam_beta2", cfg.adam_beta2);
  cfg.adam_eps = j.value("adam_eps", cfg.adam_eps);
  cfg.augment_flip = j.value("augment_flip", cfg.augment_flip);
  cfg.augment_rotate = j.value("augment_rotate", cfg.augment_rotate);
  cfg.augment_precompute = j.value("augment_precompute", cfg.augment_precompute);
  if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
  cfg.deterministic = j.value("deterministic", cfg.deterministic);
  cfg.validation_fraction = j.value("validation_fraction", cfg.validation_fraction);
  cfg.lambda_log_prior = j.value("lambda_log_prior", cfg.lambda_log_prior);
  cfg.reestimate_lipschitz = j.value("reestimate_lipschitz", cfg.reestimate_lipschitz);
  return cfg;
}

inline GammaPrior gamma_prior_from_json(const nlohmann::json& j) {
  detail::reject_unknown(j, {"r", "delta"}, "prior");
  GammaPrior prior;
  prior.r = j.value("r", prior.r);
  prior.delta = j.value("delta", prior.delta);
  return prior;
}

inline nlohmann::json load_json_file(const std::string& path) {
  auto is = detail::open_in(path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("invalid JSON in " + path + ": " + e.what());
  }
  return j;
}

}  // namespace crsae
