#include "zipfa/zipfa.h"

#include "text_util.hpp"
#include "zipfa/data.hpp"
#include "zipfa/error.hpp"
#include "zipfa/factorize.hpp"
#include "zipfa/rankcv.hpp"
#include "zipfa/sim.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <new>
#include <string>

struct zipfa_counts {
  zipfa::CountMatrix value;
};

struct zipfa_model {
  zipfa::FactorModel value;
};

struct zipfa_cv_result {
  zipfa::CvResult value;
};

struct zipfa_dataset {
  zipfa::SimulatedDataset value;
  zipfa_counts counts;
};

namespace {

thread_local std::string last_error;

zipfa_status status_of(zipfa::ErrorKind kind) {
  using zipfa::ErrorKind;
  switch (kind) {
    case ErrorKind::Input: return ZIPFA_ERR_INPUT;
    case ErrorKind::Argument: return ZIPFA_ERR_ARGUMENT;
    case ErrorKind::DegenerateColumn: return ZIPFA_ERR_DEGENERATE;
    case ErrorKind::Numeric: return ZIPFA_ERR_NUMERIC;
    case ErrorKind::NoConvergence: return ZIPFA_ERR_NO_CONVERGENCE;
    case ErrorKind::Calibration: return ZIPFA_ERR_CALIBRATION;
    case ErrorKind::Partition: return ZIPFA_ERR_PARTITION;
    case ErrorKind::Selection: return ZIPFA_ERR_SELECTION;
    case ErrorKind::Io: return ZIPFA_ERR_IO;
  }
  return ZIPFA_ERR_INTERNAL;
}

template <class Fn>
zipfa_status guarded(Fn&& fn) {
  try {
    fn();
    last_error.clear();
    return ZIPFA_OK;
  } catch (const zipfa::Error& e) {
    last_error = e.what();
    return status_of(e.kind());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
  } catch (const std::exception& e) {
    last_error = e.what();
  } catch (...) {
    last_error = "unknown error";
  }
  return ZIPFA_ERR_INTERNAL;
}

void require(const void* p, const char* name) {
  if (!p) zipfa::fail(zipfa::ErrorKind::Argument, std::string(name) + " is null");
}

zipfa::FitOptions to_fit_options(const zipfa_fit_options* in) {
  zipfa_fit_options defaults;
  zipfa_fit_options_init(&defaults);
  const zipfa_fit_options& o = in ? *in : defaults;
  zipfa::FitOptions out;
  out.max_outer_iterations = o.max_iter;
  out.rel_loglik_tol = o.tol;
  out.inner.max_em_iterations = o.max_em_iter;
  out.inner.beta_rel_tol = o.em_tol;
  if (o.offsets != ZIPFA_OFFSETS_EMPIRICAL && o.offsets != ZIPFA_OFFSETS_UNIT)
    zipfa::fail(zipfa::ErrorKind::Argument, "unknown offsets mode");
  out.offsets = o.offsets == ZIPFA_OFFSETS_UNIT ? zipfa::OffsetMode::Unit
                                                : zipfa::OffsetMode::Empirical;
  out.warm_start = o.warm_start != 0;
  out.validate();
  return out;
}

void copy_matrix(const Eigen::MatrixXd& m, double* out, size_t len) {
  require(out, "output buffer");
  if (len != static_cast<size_t>(m.size()))
    zipfa::fail(zipfa::ErrorKind::Argument,
                "buffer holds " + std::to_string(len) + " values, need " + std::to_string(m.size()));
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out[i * m.cols() + j] = m(i, j);
}

std::vector<std::string> list_of(const char* text) {
  std::vector<std::string> items;
  if (!text) return items;
  for (auto part : zipfa::text::split(text, ',')) {
    part = zipfa::text::trim(part);
    if (part.empty()) zipfa::fail(zipfa::ErrorKind::Argument, "empty item in list '" + std::string(text) + "'");
    items.emplace_back(part);
  }
  return items;
}

}  // namespace

extern "C" {

const char* zipfa_last_error(void) { return last_error.c_str(); }

const char* zipfa_status_name(zipfa_status status) {
  switch (status) {
    case ZIPFA_OK: return "ok";
    case ZIPFA_ERR_INPUT: return "input error";
    case ZIPFA_ERR_ARGUMENT: return "argument error";
    case ZIPFA_ERR_DEGENERATE: return "degenerate column";
    case ZIPFA_ERR_NUMERIC: return "numeric error";
    case ZIPFA_ERR_NO_CONVERGENCE: return "no convergence";
    case ZIPFA_ERR_CALIBRATION: return "calibration error";
    case ZIPFA_ERR_PARTITION: return "partition error";
    case ZIPFA_ERR_SELECTION: return "selection error";
    case ZIPFA_ERR_IO: return "i/o error";
    case ZIPFA_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* zipfa_version(void) { return "0.1.0"; }

zipfa_status zipfa_counts_load(const char* path, zipfa_counts** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new zipfa_counts{zipfa::load_counts(path)};
  });
}

zipfa_status zipfa_counts_from_array(const int64_t* values, size_t rows, size_t cols,
                                     zipfa_counts** out) {
  return guarded([&] {
    require(values, "values");
    require(out, "out");
    *out = nullptr;
    zipfa::CountArray a(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (size_t i = 0; i < rows; ++i)
      for (size_t j = 0; j < cols; ++j)
        a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = values[i * cols + j];
    *out = new zipfa_counts{zipfa::CountMatrix(std::move(a))};
  });
}

zipfa_status zipfa_counts_save(const zipfa_counts* counts, const char* path) {
  return guarded([&] {
    require(counts, "counts");
    require(path, "path");
    zipfa::save_counts(counts->value, path);
  });
}

void zipfa_counts_free(zipfa_counts* counts) { delete counts; }
size_t zipfa_counts_rows(const zipfa_counts* c) { return c ? static_cast<size_t>(c->value.rows()) : 0; }
size_t zipfa_counts_cols(const zipfa_counts* c) { return c ? static_cast<size_t>(c->value.cols()) : 0; }

int64_t zipfa_counts_value(const zipfa_counts* c, size_t row, size_t col) {
  if (!c || row >= static_cast<size_t>(c->value.rows()) || col >= static_cast<size_t>(c->value.cols()))
    return -1;
  return c->value(static_cast<Eigen::Index>(row), static_cast<Eigen::Index>(col));
}

void zipfa_fit_options_init(zipfa_fit_options* o) {
  if (!o) return;
  const zipfa::FitOptions d;
  o->max_iter = d.max_outer_iterations;
  o->tol = d.rel_loglik_tol;
  o->max_em_iter = d.inner.max_em_iterations;
  o->em_tol = d.inner.beta_rel_tol;
  o->offsets = ZIPFA_OFFSETS_EMPIRICAL;
  o->warm_start = d.warm_start ? 1 : 0;
}

zipfa_status zipfa_fit(const zipfa_counts* counts, size_t rank, const zipfa_fit_options* options,
                       zipfa_model** out) {
  return guarded([&] {
    require(counts, "counts");
    require(out, "out");
    *out = nullptr;
    const auto opts = to_fit_options(options);
    *out = new zipfa_model{
        zipfa::zipfa_fit(counts->value, static_cast<zipfa::Index>(rank), opts)};
  });
}

zipfa_status zipfa_model_save(const zipfa_model* model, const char* path) {
  return guarded([&] {
    require(model, "model");
    require(path, "path");
    zipfa::save_model(model->value, path);
  });
}

zipfa_status zipfa_model_load(const char* path, zipfa_model** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = nullptr;
    *out = new zipfa_model{zipfa::load_model(path)};
  });
}

void zipfa_model_free(zipfa_model* model) { delete model; }
size_t zipfa_model_rank(const zipfa_model* m) { return m ? static_cast<size_t>(m->value.rank) : 0; }
size_t zipfa_model_rows(const zipfa_model* m) { return m ? static_cast<size_t>(m->value.scores.rows()) : 0; }
size_t zipfa_model_cols(const zipfa_model* m) { return m ? static_cast<size_t>(m->value.loadings.rows()) : 0; }
double zipfa_model_tau(const zipfa_model* m) { return m ? m->value.tau : std::nan(""); }
double zipfa_model_loglik(const zipfa_model* m) { return m ? m->value.final_loglik() : std::nan(""); }
int zipfa_model_iterations(const zipfa_model* m) { return m ? m->value.iterations : 0; }
int zipfa_model_converged(const zipfa_model* m) { return m && m->value.converged ? 1 : 0; }

zipfa_status zipfa_model_scores(const zipfa_model* m, double* out, size_t len) {
  return guarded([&] {
    require(m, "model");
    copy_matrix(m->value.scores, out, len);
  });
}

zipfa_status zipfa_model_loadings(const zipfa_model* m, double* out, size_t len) {
  return guarded([&] {
    require(m, "model");
    copy_matrix(m->value.loadings, out, len);
  });
}

zipfa_status zipfa_model_offsets(const zipfa_model* m, double* out, size_t len) {
  return guarded([&] {
    require(m, "model");
    copy_matrix(m->value.offsets.values(), out, len);
  });
}

void zipfa_cv_options_init(zipfa_cv_options* o) {
  if (!o) return;
  const zipfa::CvConfig d;
  o->rank_min = 1;
  o->rank_max = 1;
  o->folds = d.folds;
  o->repeats = d.repeats;
  o->seed = 0;
  o->threads = 0;
  zipfa_fit_options_init(&o->fit);
  o->fit.offsets = ZIPFA_OFFSETS_UNIT;
}

zipfa_status zipfa_cv_run(const zipfa_counts* counts, const zipfa_cv_options* options,
                          zipfa_cv_result** out) {
  return guarded([&] {
    require(counts, "counts");
    require(options, "options");
    require(out, "out");
    *out = nullptr;
    if (options->rank_min < 1 || options->rank_max < options->rank_min)
      zipfa::fail(zipfa::ErrorKind::Argument, "invalid rank range");
    zipfa::CvConfig config;
    for (size_t k = options->rank_min; k <= options->rank_max; ++k)
      config.ranks.push_back(static_cast<zipfa::Index>(k));
    config.folds = options->folds;
    config.repeats = options->repeats;
    config.seed = options->seed;
    config.threads = options->threads;
    config.fit = to_fit_options(&options->fit);
    *out = new zipfa_cv_result{zipfa::select_rank(counts->value, config)};
  });
}

size_t zipfa_cv_selected_rank(const zipfa_cv_result* r) {
  return r ? static_cast<size_t>(r->value.selected_rank) : 0;
}

double zipfa_cv_total(const zipfa_cv_result* r, size_t rank) {
  if (!r) return std::nan("");
  double sum = 0.0;
  bool found = false;
  for (const auto& t : r->value.totals)
    if (t.rank == static_cast<zipfa::Index>(rank)) {
      sum += t.total_loglik;
      found = true;
    }
  return found ? sum : std::nan("");
}

zipfa_status zipfa_cv_write_csv(const zipfa_cv_result* r, const char* path) {
  return guarded([&] {
    require(r, "result");
    require(path, "path");
    zipfa::write_cv_csv(r->value, path);
  });
}

void zipfa_cv_free(zipfa_cv_result* r) { delete r; }

void zipfa_sim_options_init(zipfa_sim_options* o) {
  if (!o) return;
  const zipfa::SimulationSpec d;
  o->setting = "1";
  o->zero_pct = 0.0;
  o->has_tau = 0;
  o->tau = 0.0;
  o->seed = 0;
  o->n = static_cast<size_t>(d.n);
  o->m = static_cast<size_t>(d.m);
}

zipfa_status zipfa_simulate(const zipfa_sim_options* o, zipfa_dataset** out) {
  return guarded([&] {
    require(o, "options");
    require(out, "out");
    *out = nullptr;
    zipfa::SimulationSpec spec;
    spec.setting = zipfa::parse_setting(o->setting ? o->setting : "");
    if (!(o->zero_pct >= 0.0 && o->zero_pct < 1.0))
      zipfa::fail(zipfa::ErrorKind::Calibration, "zero-pct must lie in [0, 1)");
    spec.target_zero_fraction = o->zero_pct;
    if (o->has_tau) spec.tau = o->tau;
    spec.seed = o->seed;
    spec.n = static_cast<zipfa::Index>(o->n);
    spec.m = static_cast<zipfa::Index>(o->m);
    auto* data = new zipfa_dataset{zipfa::generate_counts(spec), {}};
    data->counts.value = data->value.counts;
    *out = data;
  });
}

int zipfa_dataset_has_tau(const zipfa_dataset* d) { return d && d->value.tau ? 1 : 0; }
double zipfa_dataset_tau(const zipfa_dataset* d) {
  return d && d->value.tau ? *d->value.tau : std::nan("");
}
double zipfa_dataset_realized_inflation(const zipfa_dataset* d) {
  return d ? d->value.realized_inflation() : std::nan("");
}
const zipfa_counts* zipfa_dataset_counts(const zipfa_dataset* d) { return d ? &d->counts : nullptr; }

zipfa_status zipfa_dataset_write(const zipfa_dataset* d, const char* dir) {
  return guarded([&] {
    require(d, "dataset");
    require(dir, "dir");
    zipfa::save_dataset(d->value, dir);
  });
}

void zipfa_dataset_free(zipfa_dataset* d) { delete d; }

void zipfa_benchmark_options_init(zipfa_benchmark_options* o) {
  if (!o) return;
  o->settings = "1";
  o->zero_pcts = "0,0.2,0.4";
  o->methods = "zipfa,logsvd";
  o->replicates = 1;
  o->seed = 0;
  o->rank = 3;
  o->threads = 0;
  o->timing = 0;
  zipfa_fit_options_init(&o->fit);
}

zipfa_status zipfa_benchmark_run(const zipfa_benchmark_options* o, const char* out_csv,
                                 size_t* n_records) {
  return guarded([&] {
    require(o, "options");
    require(out_csv, "output path");
    zipfa::BenchmarkConfig config;
    config.settings.clear();
    for (const auto& s : list_of(o->settings)) config.settings.push_back(zipfa::parse_setting(s));
    config.zero_fractions.clear();
    for (const auto& s : list_of(o->zero_pcts)) {
      const double f = zipfa::text::parse_double(s);
      if (!(f >= 0.0 && f < 1.0))
        zipfa::fail(zipfa::ErrorKind::Argument, "zero-pct '" + s + "' outside [0, 1)");
      config.zero_fractions.push_back(f);
    }
    config.methods.clear();
    for (const auto& s : list_of(o->methods)) config.methods.push_back(zipfa::parse_method(s));
    config.replicates = o->replicates;
    config.seed = o->seed;
    config.rank = static_cast<zipfa::Index>(o->rank);
    if (config.rank < 1 || config.rank > 100)
      zipfa::fail(zipfa::ErrorKind::Argument, "benchmark rank out of range");
    config.threads = o->threads;
    config.timing = o->timing != 0;
    config.fit = to_fit_options(&o->fit);
    const auto records = zipfa::run_benchmark(config);
    zipfa::write_benchmark_csv(records, out_csv);
    zipfa::text::write_file(std::string(out_csv) + ".meta.json",
                            zipfa::benchmark_conventions_json(config));
    if (n_records) *n_records = records.size();
  });
}

zipfa_status zipfa_diagnose(const zipfa_counts* counts, const char* out_csv) {
  return guarded([&] {
    require(counts, "counts");
    require(out_csv, "output path");
    zipfa::write_diagnostic_csv(zipfa::zero_pattern_diagnostic(counts->value), out_csv);
  });
}

}  // extern "C"
