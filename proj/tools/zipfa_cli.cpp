#include "zipfa/zipfa.h"

#include "CLI11.hpp"

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>

namespace {

enum Exit { kOk = 0, kFailure = 1, kUsage = 2, kNotConverged = 3, kNoValidRank = 4 };

int report(zipfa_status status, const char* what) {
  std::cerr << "zipfa: " << what << ": " << zipfa_status_name(status) << ": " << zipfa_last_error()
            << "\n";
  switch (status) {
    case ZIPFA_ERR_INPUT:
    case ZIPFA_ERR_ARGUMENT:
    case ZIPFA_ERR_DEGENERATE:
    case ZIPFA_ERR_CALIBRATION:
    case ZIPFA_ERR_PARTITION:
      return kUsage;
    case ZIPFA_ERR_SELECTION:
      return kNoValidRank;
    default:
      return kFailure;
  }
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct FitFlags {
  int max_iter = 100;
  double tol = 1e-3;
  std::string offsets = "empirical";

  void add(CLI::App* cmd) {
    cmd->add_option("--max-iter", max_iter, "Outer iteration cap")
        ->check(CLI::Range(1, 1000000))
        ->capture_default_str();
    cmd->add_option("--tol", tol, "Relative log-likelihood tolerance")
        ->check(CLI::PositiveNumber)
        ->capture_default_str();
    cmd->add_option("--offsets", offsets, "Library size offsets")
        ->check(CLI::IsMember({"empirical", "unit"}))
        ->capture_default_str();
  }
  zipfa_fit_options options() const {
    zipfa_fit_options o;
    zipfa_fit_options_init(&o);
    o.max_iter = max_iter;
    o.tol = tol;
    o.offsets = offsets == "unit" ? ZIPFA_OFFSETS_UNIT : ZIPFA_OFFSETS_EMPIRICAL;
    return o;
  }
};

int load(const std::string& path, zipfa_counts** counts) {
  const zipfa_status s = zipfa_counts_load(path.c_str(), counts);
  return s == ZIPFA_OK ? kOk : report(s, "reading counts");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Zero-inflated Poisson factor analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(zipfa_version()));

  // fit
  auto* fit = app.add_subcommand("fit", "Fit a rank-K factor model");
  std::string fit_input, fit_output;
  int fit_rank = 0;
  FitFlags fit_flags;
  fit->add_option("--input", fit_input, "Counts CSV")->required();
  fit->add_option("--rank", fit_rank, "Factor rank")->required()->check(CLI::Range(1, 1000000));
  fit->add_option("--output", fit_output, "Model JSON path");
  fit_flags.add(fit);

  // cv
  auto* cv = app.add_subcommand("cv", "Select the rank by cross-validated likelihood");
  std::string cv_input, cv_ranks, cv_output = "cv.csv";
  int cv_folds = 5, cv_repeats = 1, cv_threads = 0;
  std::uint64_t cv_seed = 0;
  FitFlags cv_flags;
  cv->add_option("--input", cv_input, "Counts CSV")->required();
  cv->add_option("--ranks", cv_ranks, "Candidate ranks a:b")->required();
  cv->add_option("--folds", cv_folds, "Number of folds")->check(CLI::Range(2, 1000000));
  cv->add_option("--repeats", cv_repeats, "Fold assignments to draw")->check(CLI::Range(1, 1000000));
  cv->add_option("--seed", cv_seed, "Root seed");
  cv->add_option("--threads", cv_threads, "Worker threads (0 = all)")->check(CLI::NonNegativeNumber);
  cv->add_option("--output", cv_output, "CV CSV path");
  cv_flags.add(cv);

  // simulate
  auto* sim = app.add_subcommand("simulate", "Generate a simulated dataset");
  std::string sim_setting, sim_output;
  double sim_zero = 0.0, sim_tau = 0.0;
  std::uint64_t sim_seed = 0;
  std::size_t sim_n = 200, sim_m = 100;
  sim->add_option("--setting", sim_setting, "1|2|3|4|5|6.1|6.2")->required();
  sim->add_option("--zero-pct", sim_zero, "Target inflated-zero fraction")->required();
  sim->add_option("--seed", sim_seed, "Root seed");
  auto* tau_opt = sim->add_option("--tau", sim_tau, "Use this tau instead of calibrating");
  sim->add_option("--n", sim_n, "Samples")->check(CLI::Range(4, 1000000));
  sim->add_option("--m", sim_m, "Taxa")->check(CLI::Range(4, 1000000));
  sim->add_option("--output", sim_output, "Output directory")->required();

  // benchmark
  auto* bench = app.add_subcommand("benchmark", "Run the simulation benchmark grid");
  std::string b_settings = "1", b_zero = "0,0.2,0.4", b_methods = "zipfa,logsvd",
              b_output = "benchmark.csv";
  int b_replicates = 1, b_threads = 0, b_rank = 3;
  std::uint64_t b_seed = 0;
  bool b_timing = false;
  FitFlags b_flags;
  b_flags.offsets = "unit";
  bench->add_option("--settings", b_settings, "Comma-separated settings");
  bench->add_option("--zero-pcts", b_zero, "Comma-separated zero fractions");
  bench->add_option("--replicates", b_replicates, "Replicates per cell")->check(CLI::Range(1, 1000000));
  bench->add_option("--methods", b_methods, "zipfa,logsvd");
  bench->add_option("--seed", b_seed, "Root seed");
  bench->add_option("--rank", b_rank, "Factor rank")->check(CLI::Range(1, 1000000));
  bench->add_option("--threads", b_threads, "Worker threads (0 = all)")->check(CLI::NonNegativeNumber);
  bench->add_flag("--timing", b_timing, "Record wall-clock runtime (output no longer reproducible)");
  bench->add_option("--output", b_output, "Results CSV path");
  b_flags.add(bench);

  // diagnose
  auto* diag = app.add_subcommand("diagnose", "Per-taxon zero pattern and logistic fits");
  std::string d_input, d_output;
  diag->add_option("--input", d_input, "Counts CSV")->required();
  diag->add_option("--output", d_output, "Diagnostic CSV path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsage;
  }

  if (fit->parsed()) {
    zipfa_counts* counts = nullptr;
    if (int rc = load(fit_input, &counts)) return rc;
    const zipfa_fit_options options = fit_flags.options();
    zipfa_model* model = nullptr;
    zipfa_status s = zipfa_fit(counts, static_cast<std::size_t>(fit_rank), &options, &model);
    zipfa_counts_free(counts);
    if (s != ZIPFA_OK) return report(s, "fit");
    if (!fit_output.empty()) {
      s = zipfa_model_save(model, fit_output.c_str());
      if (s != ZIPFA_OK) {
        zipfa_model_free(model);
        return report(s, "writing model");
      }
    }
    const bool converged = zipfa_model_converged(model) != 0;
    std::cout << "rank=" << zipfa_model_rank(model) << "\n"
              << "tau=" << fmt(zipfa_model_tau(model)) << "\n"
              << "loglik=" << fmt(zipfa_model_loglik(model)) << "\n"
              << "iterations=" << zipfa_model_iterations(model) << "\n"
              << "converged=" << (converged ? "true" : "false") << "\n";
    zipfa_model_free(model);
    if (!converged) {
      std::cerr << "zipfa: fit did not converge\n";
      return kNotConverged;
    }
    return kOk;
  }

  if (cv->parsed()) {
    std::size_t lo = 0, hi = 0;
    {
      std::istringstream in(cv_ranks);
      char colon = 0;
      std::string rest;
      long long a = 0, b = 0;
      bool ok = static_cast<bool>(in >> a);
      if (ok && in.peek() == ':') ok = static_cast<bool>(in >> colon >> b);
      else b = a;
      ok = ok && !(in >> rest) && a >= 1 && b >= a;
      if (!ok) {
        std::cerr << "zipfa: invalid --ranks '" << cv_ranks << "' (expected a:b with 1 <= a <= b)\n"
                  << cv->help();
        return kUsage;
      }
      lo = static_cast<std::size_t>(a);
      hi = static_cast<std::size_t>(b);
    }
    zipfa_counts* counts = nullptr;
    if (int rc = load(cv_input, &counts)) return rc;
    zipfa_cv_options options;
    zipfa_cv_options_init(&options);
    options.rank_min = lo;
    options.rank_max = hi;
    options.folds = cv_folds;
    options.repeats = cv_repeats;
    options.seed = cv_seed;
    options.threads = cv_threads;
    options.fit = cv_flags.options();
    zipfa_cv_result* result = nullptr;
    zipfa_status s = zipfa_cv_run(counts, &options, &result);
    zipfa_counts_free(counts);
    if (s != ZIPFA_OK) return report(s, "cross-validation");
    s = zipfa_cv_write_csv(result, cv_output.c_str());
    const std::size_t selected = zipfa_cv_selected_rank(result);
    zipfa_cv_free(result);
    if (s != ZIPFA_OK) return report(s, "writing CV table");
    std::cout << selected << "\n";
    return kOk;
  }

  if (sim->parsed()) {
    zipfa_sim_options options;
    zipfa_sim_options_init(&options);
    options.setting = sim_setting.c_str();
    options.zero_pct = sim_zero;
    options.seed = sim_seed;
    options.n = sim_n;
    options.m = sim_m;
    if (tau_opt->count() > 0) {
      options.has_tau = 1;
      options.tau = sim_tau;
    }
    zipfa_dataset* data = nullptr;
    zipfa_status s = zipfa_simulate(&options, &data);
    if (s != ZIPFA_OK) return report(s, "simulate");
    s = zipfa_dataset_write(data, sim_output.c_str());
    if (s == ZIPFA_OK) {
      std::cout << "tau=" << (zipfa_dataset_has_tau(data) ? fmt(zipfa_dataset_tau(data)) : "NA")
                << "\n"
                << "realized_inflation=" << fmt(zipfa_dataset_realized_inflation(data)) << "\n";
    }
    zipfa_dataset_free(data);
    return s == ZIPFA_OK ? kOk : report(s, "writing dataset");
  }

  if (bench->parsed()) {
    zipfa_benchmark_options options;
    zipfa_benchmark_options_init(&options);
    options.settings = b_settings.c_str();
    options.zero_pcts = b_zero.c_str();
    options.methods = b_methods.c_str();
    options.replicates = b_replicates;
    options.seed = b_seed;
    options.rank = static_cast<std::size_t>(b_rank);
    options.threads = b_threads;
    options.timing = b_timing ? 1 : 0;
    options.fit = b_flags.options();
    std::size_t records = 0;
    const zipfa_status s = zipfa_benchmark_run(&options, b_output.c_str(), &records);
    if (s != ZIPFA_OK) return report(s, "benchmark");
    std::cout << "records=" << records << "\n";
    return kOk;
  }

  if (diag->parsed()) {
    zipfa_counts* counts = nullptr;
    if (int rc = load(d_input, &counts)) return rc;
    const zipfa_status s = zipfa_diagnose(counts, d_output.c_str());
    zipfa_counts_free(counts);
    return s == ZIPFA_OK ? kOk : report(s, "diagnose");
  }
  return kUsage;
}
