// Command-line frontend for the CRsAE convolutional dictionary learning
// engine: simulation, training, encoding, gradient checking, filter
// evaluation, spike sorting and artifact inspection.

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "crsae/crsae.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumerical = 3;

struct CommonOpts {
  int threads = 0;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, CommonOpts& opts, bool with_seed = true) {
  cmd->add_option("--threads", opts.threads, "Worker thread count (default: all cores)")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("--deterministic", opts.deterministic,
                "Fixed-seed reproducible run (outputs are byte-identical)");
  if (with_seed) cmd->add_option("--seed", opts.seed, "Override the configured RNG seed");
}

void apply_common(const CommonOpts& opts) {
  if (opts.threads > 0) crsae::set_default_threads(opts.threads);
}

std::string format_err_list(const std::vector<double>& errs) {
  std::ostringstream os;
  for (std::size_t i = 0; i < errs.size(); ++i) {
    if (i) os << ' ';
    os << errs[i];
  }
  return os.str();
}

int cmd_simulate(const std::string& config_path, const std::string& out_path,
                 const CommonOpts& common, const std::optional<double>& snr_override) {
  apply_common(common);
  crsae::SimConfig cfg = crsae::sim_config_from_json(crsae::load_json_file(config_path));
  if (common.seed) cfg.seed = *common.seed;
  if (snr_override) cfg.snr_db = *snr_override;
  const crsae::Dataset data = crsae::simulate(cfg);
  crsae::write_dataset(out_path, data);
  std::cout << "simulate: wrote " << data.window_count() << " windows of length "
            << data.window_length() << " to " << out_path << " (sigma=" << data.sigma
            << ", scale=" << data.normalization_scale << ")\n";
  return kExitOk;
}

crsae::FilterBank resolve_initial_filters(const nlohmann::json& root,
                                          const crsae::Dataset& data,
                                          std::uint64_t seed) {
  std::string mode;
  nlohmann::json init = root.value("init", nlohmann::json::object());
  if (init.contains("mode"))
    mode = init["mode"].get<std::string>();
  else
    mode = data.truth ? "perturb-truth" : "kmeans";

  if (mode == "file") {
    if (!init.contains("path")) throw crsae::ParamError("init mode \"file\" needs \"path\"");
    return crsae::read_filters(init["path"].get<std::string>()).bank;
  }
  if (mode == "perturb-truth") {
    if (!data.truth)
      throw crsae::ParamError("init mode \"perturb-truth\" needs a dataset with ground truth");
    const double target = init.value("target_err_db", -3.5);
    auto rng = crsae::make_rng(seed, crsae::rng_tag::init);
    return crsae::init_filters_perturbed(data.truth->filters, target, rng);
  }
  if (mode == "kmeans") {
    if (!init.contains("C") || !init.contains("K"))
      if (!data.truth)
        throw crsae::ParamError("init mode \"kmeans\" needs \"C\" and \"K\" (no truth to infer from)");
    const int C = init.contains("C") ? init["C"].get<int>()
                                     : static_cast<int>(data.truth->filters.num_filters());
    const int K = init.contains("K") ? init["K"].get<int>()
                                     : static_cast<int>(data.truth->filters.filter_length());
    double threshold;
    if (init.contains("threshold"))
      threshold = init["threshold"].get<double>();
    else if (data.sigma > 0.0)
      threshold = 4.0 * data.sigma;
    else
      throw crsae::ParamError("init mode \"kmeans\" needs \"threshold\" for noiseless data");
    return crsae::init_filters_kmeans(data, C, K, threshold);
  }
  throw crsae::ParamError("unknown init mode \"" + mode + "\"");
}

int cmd_train(const std::string& dataset_path, const std::string& config_path,
              const std::string& out_path, std::string history_path, const CommonOpts& common,
              const std::optional<int>& epochs_override) {
  apply_common(common);
  const nlohmann::json root = crsae::load_json_file(config_path);
  for (const auto& [key, value] : root.items())
    if (key != "train" && key != "encoder" && key != "prior" && key != "init" &&
        key != "lambda0")
      throw crsae::ParamError("unknown top-level key \"" + key + "\" in train config");

  crsae::TrainConfig tc =
      crsae::train_config_from_json(root.value("train", nlohmann::json::object()));
  crsae::EncoderConfig enc =
      crsae::encoder_config_from_json(root.value("encoder", nlohmann::json::object()));
  crsae::GammaPrior prior;
  bool prior_r_from_rule = true;
  if (root.contains("prior")) {
    const auto& pj = root["prior"];
    prior.delta = pj.value("delta", prior.delta);
    if (pj.contains("r") && !pj["r"].is_null()) {
      prior.r = pj["r"].get<double>();
      prior_r_from_rule = false;
    }
    for (const auto& [key, value] : pj.items())
      if (key != "r" && key != "delta")
        throw crsae::ParamError("unknown key \"" + key + "\" in prior config");
  }
  if (common.seed) tc.seed = *common.seed;
  if (common.deterministic) tc.deterministic = true;
  if (epochs_override) tc.epochs = *epochs_override;

  const crsae::Dataset data = crsae::read_dataset(dataset_path);
  const crsae::FilterBank h0 = resolve_initial_filters(root, data, tc.seed);

  if (enc.sigma <= 0.0) {
    if (data.sigma <= 0.0)
      throw crsae::ParamError("dataset has no noise level; set encoder.sigma explicitly");
    enc.sigma = data.sigma;
  }
  double lambda0;
  if (root.contains("lambda0") && !root["lambda0"].is_null())
    lambda0 = root["lambda0"].get<double>();
  else if (enc.lambda > 0.0)
    lambda0 = enc.lambda;
  else
    lambda0 = crsae::suggested_lambda(h0.num_filters(),
                                      h0.code_length(data.window_length()), enc.sigma);
  if (prior_r_from_rule) prior.r = prior.delta * lambda0;

  const crsae::TrainResult res =
      crsae::train(data, h0, lambda0, tc, enc, prior, [&](const crsae::EpochRecord& r) {
        std::cout << "epoch " << r.epoch << ": train_loss=" << r.train_loss
                  << " val_loss=" << r.val_loss << " lambda=" << r.lambda;
        if (!r.filter_err_db.empty())
          std::cout << " err_db=[" << format_err_list(r.filter_err_db) << "]";
        std::cout << " (" << r.seconds << " s)\n";
      });

  crsae::write_filters(out_path, res.filters, res.lambda, res.L, enc.sigma);
  if (history_path.empty()) history_path = out_path + ".history.csv";
  crsae::write_history_csv(history_path, res.history);
  for (const auto& w : res.history.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "train: best epoch " << res.history.best_epoch << ", lambda " << lambda0
            << " -> " << res.lambda << "; filters written to " << out_path << ", history to "
            << history_path << "\n";
  return kExitOk;
}

int cmd_encode(const std::string& dataset_path, const std::string& filters_path,
               const std::string& out_path, int iters, const std::string& mode,
               const CommonOpts& common) {
  apply_common(common);
  const crsae::Dataset data = crsae::read_dataset(dataset_path);
  const crsae::FilterFileData ff = crsae::read_filters(filters_path);
  if (ff.unit_norm_warning)
    std::cerr << "warning: filter rows deviate from unit norm beyond 1e-9\n";

  crsae::EncoderConfig enc;
  enc.T = iters;
  enc.L = ff.L > 0.0 ? ff.L : 0.0;
  enc.lambda = ff.lambda;
  enc.sigma = ff.sigma > 0.0 ? ff.sigma : data.sigma;
  enc.mode = mode == "ista" ? crsae::SolverMode::ista : crsae::SolverMode::fista;
  if (enc.L <= 0.0)
    enc.L = crsae::estimate_lipschitz(ff.bank, data.window_length()).value;
  crsae::validate_encoder_config(enc, ff.bank, data.window_length());

  std::vector<crsae::CodeMap> codes(data.windows.size());
  crsae::parallel_for(data.windows.size(), [&](std::size_t j) {
    codes[j] = crsae::encode(data.windows[j], ff.bank, enc).code;
  });
  crsae::write_codes(out_path, codes);
  std::size_t nnz = 0, total = 0;
  for (const auto& x : codes) {
    nnz += static_cast<std::size_t>((x.array() != 0.0).count());
    total += static_cast<std::size_t>(x.size());
  }
  std::cout << "encode: wrote " << codes.size() << " code maps to " << out_path
            << " (nonzero fraction " << static_cast<double>(nnz) / static_cast<double>(total)
            << ")\n";
  return kExitOk;
}

int cmd_gradcheck(std::uint64_t seed, int count, const std::string& out_path,
                  const CommonOpts& common) {
  apply_common(common);
  const std::vector<crsae::GradReport> reports = crsae::run_gradcheck(seed, count);
  double max_h = 0.0, max_l = 0.0;
  for (const auto& r : reports) {
    max_h = std::max(max_h, r.max_rel_err_h());
    max_l = std::max(max_l, r.rel_err_lambda);
  }
  if (!out_path.empty()) crsae::write_gradreport_csv(out_path, reports);
  const bool pass = max_h <= 1e-5 && max_l <= 1e-4;
  std::cout << "gradcheck: instances=" << count << " max_rel_err_h=" << max_h
            << " max_rel_err_lambda=" << max_l << " -> " << (pass ? "PASS" : "FAIL") << "\n";
  return pass ? kExitOk : kExitData;
}

int cmd_eval_filters(const std::string& true_path, const std::string& learned_path,
                     int max_shift, const std::string& out_path) {
  const crsae::FilterBank h_true = crsae::read_filters(true_path).bank;
  const crsae::FilterBank h_hat = crsae::read_filters(learned_path).bank;
  if (max_shift < 0) max_shift = static_cast<int>(h_true.filter_length()) / 2;
  const crsae::MatchResult m = crsae::match_filters(h_true, h_hat, max_shift);
  if (!out_path.empty()) crsae::write_match_csv(out_path, m);
  for (std::size_t j = 0; j < m.err_db.size(); ++j)
    std::cout << "filter " << j << " -> true " << m.permutation[j] << ": shift "
              << m.shifts[j] << ", sign " << m.signs[j] << ", err " << m.err_db[j] << " dB\n";
  std::cout << "eval-filters: worst err " << m.worst_err() << " dB"
            << (m.exhaustive ? "" : " (greedy matching)") << "\n";
  return kExitOk;
}

int cmd_sort(const std::string& dataset_path, const std::string& filters_path,
             const std::string& out_path, const std::string& thresholds_arg,
             int threshold_count, int tolerance, int min_separation, int iters,
             const CommonOpts& common) {
  apply_common(common);
  const crsae::Dataset data = crsae::read_dataset(dataset_path);
  if (!data.truth)
    throw crsae::ParamError("sort needs a dataset with ground-truth events (simulated)");
  const crsae::FilterFileData ff = crsae::read_filters(filters_path);

  crsae::EncoderConfig enc;
  enc.T = iters;
  enc.lambda = ff.lambda;
  enc.sigma = ff.sigma > 0.0 ? ff.sigma : data.sigma;
  enc.L = ff.L > 0.0 ? ff.L
                     : crsae::estimate_lipschitz(ff.bank, data.window_length()).value;
  crsae::validate_encoder_config(enc, ff.bank, data.window_length());
  if (min_separation <= 0) min_separation = static_cast<int>(ff.bank.filter_length());

  const auto peaks = crsae::collect_code_peaks(data, ff.bank, enc);

  std::vector<double> thresholds;
  if (!thresholds_arg.empty()) {
    std::stringstream ss(thresholds_arg);
    std::string tok;
    while (std::getline(ss, tok, ',')) thresholds.push_back(std::stod(tok));
    std::sort(thresholds.begin(), thresholds.end());
  } else {
    double max_amp = 0.0;
    for (const auto& w : peaks)
      for (const auto& e : w) max_amp = std::max(max_amp, std::abs(e.amplitude));
    for (int i = 0; i < threshold_count; ++i)
      thresholds.push_back(max_amp * static_cast<double>(i) /
                           static_cast<double>(threshold_count));
  }

  const Eigen::Index C = ff.bank.num_filters();
  std::vector<std::vector<std::vector<crsae::SpikeEvent>>> detections(thresholds.size());
  for (std::size_t t = 0; t < thresholds.size(); ++t) {
    detections[t].resize(peaks.size());
    for (std::size_t j = 0; j < peaks.size(); ++j)
      detections[t][j] = crsae::select_events(peaks[j], thresholds[t], min_separation, C);
  }
  const crsae::SortReport rep =
      crsae::roc_curve(detections, data.truth->events, thresholds, tolerance);
  crsae::write_sort_csv(out_path, rep);

  double best = 2.0;
  std::size_t best_i = 0;
  for (std::size_t i = 0; i < rep.thresholds.size(); ++i) {
    const double m = std::max(rep.true_miss[i], rep.false_alarm[i]);
    if (m < best) {
      best = m;
      best_i = i;
    }
  }
  std::cout << "sort: " << rep.thresholds.size() << " thresholds to " << out_path
            << "; best threshold " << rep.thresholds[best_i] << " (miss "
            << rep.true_miss[best_i] << ", false alarm " << rep.false_alarm[best_i] << ")\n";
  if (!rep.monotonicity_violations.empty())
    std::cerr << "warning: " << rep.monotonicity_violations.size()
              << " monotonicity violations in the sweep\n";
  return kExitOk;
}

int cmd_report(const std::string& input_path) {
  auto is = crsae::detail::open_in(input_path);
  char magic[4] = {0, 0, 0, 0};
  is.read(magic, 4);
  is.close();
  const std::string m(magic, 4);
  if (m == "CRSD") {
    const crsae::Dataset d = crsae::read_dataset(input_path);
    std::cout << "dataset: J=" << d.window_count() << " N=" << d.window_length()
              << " fs_hz=" << d.fs_hz << " sigma=" << d.sigma
              << " scale=" << d.normalization_scale << " truth="
              << (d.truth ? "yes" : "no") << "\n";
    if (d.truth) {
      std::size_t events = 0;
      for (const auto& ev : d.truth->events) events += ev.size();
      std::cout << "truth: C=" << d.truth->filters.num_filters()
                << " K=" << d.truth->filters.filter_length() << " events=" << events << "\n";
    }
  } else if (m == "CRSF") {
    const crsae::FilterFileData f = crsae::read_filters(input_path);
    std::cout << "filters: C=" << f.bank.num_filters() << " K=" << f.bank.filter_length()
              << " lambda=" << f.lambda << " L=" << f.L << " sigma=" << f.sigma
              << " unit_norm=" << (f.unit_norm_warning ? "no" : "yes") << "\n";
  } else if (m == "CRSX") {
    const auto codes = crsae::read_codes(input_path);
    std::cout << "codes: count=" << codes.size() << " C=" << codes.front().rows()
              << " N_e=" << codes.front().cols() << "\n";
  } else {
    throw crsae::FormatError("unrecognized file (expected CRSD/CRSF/CRSX magic)");
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CRsAE: convolutional dictionary learning with an unrolled FISTA autoencoder"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Draw a dataset from the generative model");
  std::string sim_config, sim_out;
  CommonOpts sim_common;
  std::optional<double> sim_snr;
  sim->add_option("--config", sim_config, "Simulation config JSON")->required();
  sim->add_option("--out", sim_out, "Output dataset file (.crsd)")->required();
  sim->add_option("--snr-db", sim_snr, "Override the configured SNR in dB");
  add_common(sim, sim_common);

  // train
  auto* tr = app.add_subcommand("train", "Learn filters and lambda from a dataset");
  std::string tr_dataset, tr_config, tr_out, tr_history;
  CommonOpts tr_common;
  std::optional<int> tr_epochs;
  tr->add_option("--dataset", tr_dataset, "Input dataset file (.crsd)")->required();
  tr->add_option("--config", tr_config, "Train config JSON (train/encoder/prior/init sections)")
      ->required();
  tr->add_option("--out", tr_out, "Output filter file (.crsf)")->required();
  tr->add_option("--history", tr_history, "History CSV path (default: <out>.history.csv)");
  tr->add_option("--epochs", tr_epochs, "Override the configured epoch count")
      ->check(CLI::PositiveNumber);
  add_common(tr, tr_common);

  // encode
  auto* en = app.add_subcommand("encode", "Run the encoder over a dataset and dump codes");
  std::string en_dataset, en_filters, en_out, en_mode = "fista";
  int en_iters = 300;
  CommonOpts en_common;
  en->add_option("--dataset", en_dataset, "Input dataset file (.crsd)")->required();
  en->add_option("--filters", en_filters, "Filter file (.crsf)")->required();
  en->add_option("--out", en_out, "Output code dump (.crsx)")->required();
  en->add_option("--iters", en_iters, "Unrolled iteration count T")->check(CLI::PositiveNumber);
  en->add_option("--mode", en_mode, "Solver mode: fista or ista")
      ->check(CLI::IsMember({"fista", "ista"}));
  add_common(en, en_common, false);

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Validate analytic gradients by finite differences");
  std::uint64_t gc_seed = 0;
  int gc_count = 20;
  std::string gc_out;
  CommonOpts gc_common;
  gc->add_option("--seed", gc_seed, "Base seed for the random instances");
  gc->add_option("--count", gc_count, "Number of instances")->check(CLI::PositiveNumber);
  gc->add_option("--out", gc_out, "Optional GradReport CSV path");
  add_common(gc, gc_common, false);

  // eval-filters
  auto* ev = app.add_subcommand("eval-filters", "Match learned filters to a reference bank");
  std::string ev_true, ev_learned, ev_out;
  int ev_shift = -1;
  ev->add_option("--true-filters", ev_true, "Reference filter file (.crsf)")->required();
  ev->add_option("--learned", ev_learned, "Learned filter file (.crsf)")->required();
  ev->add_option("--max-shift", ev_shift, "Max alignment shift (default: K/2)");
  ev->add_option("--out", ev_out, "Optional MatchResult CSV path");

  // sort
  auto* so = app.add_subcommand("sort", "Spike-sort a dataset and score against ground truth");
  std::string so_dataset, so_filters, so_out, so_thresholds;
  int so_count = 50, so_tol = 10, so_minsep = 0, so_iters = 300;
  CommonOpts so_common;
  so->add_option("--dataset", so_dataset, "Input dataset file with truth (.crsd)")->required();
  so->add_option("--filters", so_filters, "Filter file (.crsf)")->required();
  so->add_option("--out", so_out, "SortReport CSV path")->required();
  so->add_option("--thresholds", so_thresholds, "Comma-separated threshold list");
  so->add_option("--threshold-count", so_count, "Sweep size when no list is given")
      ->check(CLI::PositiveNumber);
  so->add_option("--tolerance", so_tol, "Matching tolerance in samples")
      ->check(CLI::NonNegativeNumber);
  so->add_option("--min-separation", so_minsep, "Min spacing between kept events (default: K)");
  so->add_option("--iters", so_iters, "Encoder iteration count T")->check(CLI::PositiveNumber);
  add_common(so, so_common, false);

  // report
  auto* re = app.add_subcommand("report", "Summarize a dataset/filter/code artifact");
  std::string re_input;
  re->add_option("--input", re_input, "Artifact path (.crsd/.crsf/.crsx)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_name() == "CallForHelp" || e.get_name() == "CallForAllHelp")
      return app.exit(e);
    std::cerr << app.get_name() << ": " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (sim->parsed()) return cmd_simulate(sim_config, sim_out, sim_common, sim_snr);
    if (tr->parsed())
      return cmd_train(tr_dataset, tr_config, tr_out, tr_history, tr_common, tr_epochs);
    if (en->parsed())
      return cmd_encode(en_dataset, en_filters, en_out, en_iters, en_mode, en_common);
    if (gc->parsed()) return cmd_gradcheck(gc_seed, gc_count, gc_out, gc_common);
    if (ev->parsed()) return cmd_eval_filters(ev_true, ev_learned, ev_shift, ev_out);
    if (so->parsed())
      return cmd_sort(so_dataset, so_filters, so_out, so_thresholds, so_count, so_tol,
                      so_minsep, so_iters, so_common);
    if (re->parsed()) return cmd_report(re_input);
  } catch (const crsae::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const crsae::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  }
  return kExitUsage;
}
