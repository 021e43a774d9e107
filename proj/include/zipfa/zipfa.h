#ifndef ZIPFA_ZIPFA_H
#define ZIPFA_ZIPFA_H

#include <stddef.h>
#include <stdint.h>

#if defined(ZIPFA_BUILDING_LIBRARY)
#define ZIPFA_API __attribute__((visibility("default")))
#else
#define ZIPFA_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum zipfa_status {
  ZIPFA_OK = 0,
  ZIPFA_ERR_INPUT = 1,
  ZIPFA_ERR_ARGUMENT = 2,
  ZIPFA_ERR_DEGENERATE = 3,
  ZIPFA_ERR_NUMERIC = 4,
  ZIPFA_ERR_NO_CONVERGENCE = 5,
  ZIPFA_ERR_CALIBRATION = 6,
  ZIPFA_ERR_PARTITION = 7,
  ZIPFA_ERR_SELECTION = 8,
  ZIPFA_ERR_IO = 9,
  ZIPFA_ERR_INTERNAL = 10
} zipfa_status;

/* Message for the most recent failure on the calling thread. */
ZIPFA_API const char* zipfa_last_error(void);
ZIPFA_API const char* zipfa_status_name(zipfa_status status);
ZIPFA_API const char* zipfa_version(void);

/* Count matrices */
typedef struct zipfa_counts zipfa_counts;

ZIPFA_API zipfa_status zipfa_counts_load(const char* path, zipfa_counts** out);
/* values are row-major, rows x cols */
ZIPFA_API zipfa_status zipfa_counts_from_array(const int64_t* values, size_t rows, size_t cols,
                                               zipfa_counts** out);
ZIPFA_API zipfa_status zipfa_counts_save(const zipfa_counts* counts, const char* path);
ZIPFA_API void zipfa_counts_free(zipfa_counts* counts);
ZIPFA_API size_t zipfa_counts_rows(const zipfa_counts* counts);
ZIPFA_API size_t zipfa_counts_cols(const zipfa_counts* counts);
ZIPFA_API int64_t zipfa_counts_value(const zipfa_counts* counts, size_t row, size_t col);

/* Factorization */
typedef enum zipfa_offsets { ZIPFA_OFFSETS_EMPIRICAL = 0, ZIPFA_OFFSETS_UNIT = 1 } zipfa_offsets;

typedef struct zipfa_fit_options {
  int max_iter;        /* outer iterations, default 100 */
  double tol;          /* relative log-likelihood change, default 1e-3 */
  int max_em_iter;     /* per block regression, default 500 */
  double em_tol;       /* relative coefficient change, default 1e-3 */
  zipfa_offsets offsets;
  int warm_start;      /* nonzero: seed block regressions from the previous pass */
} zipfa_fit_options;

ZIPFA_API void zipfa_fit_options_init(zipfa_fit_options* options);

typedef struct zipfa_model zipfa_model;

/* Returns ZIPFA_OK with a model whose converged flag is 0 when the outer loop
   stopped early; the model is still usable. */
ZIPFA_API zipfa_status zipfa_fit(const zipfa_counts* counts, size_t rank,
                                 const zipfa_fit_options* options, zipfa_model** out);
ZIPFA_API zipfa_status zipfa_model_save(const zipfa_model* model, const char* path);
ZIPFA_API zipfa_status zipfa_model_load(const char* path, zipfa_model** out);
ZIPFA_API void zipfa_model_free(zipfa_model* model);
ZIPFA_API size_t zipfa_model_rank(const zipfa_model* model);
ZIPFA_API size_t zipfa_model_rows(const zipfa_model* model);
ZIPFA_API size_t zipfa_model_cols(const zipfa_model* model);
ZIPFA_API double zipfa_model_tau(const zipfa_model* model);
ZIPFA_API double zipfa_model_loglik(const zipfa_model* model);
ZIPFA_API int zipfa_model_iterations(const zipfa_model* model);
ZIPFA_API int zipfa_model_converged(const zipfa_model* model);
/* Copy U (rows x rank) or V (cols x rank) row-major into out[len]. */
ZIPFA_API zipfa_status zipfa_model_scores(const zipfa_model* model, double* out, size_t len);
ZIPFA_API zipfa_status zipfa_model_loadings(const zipfa_model* model, double* out, size_t len);
ZIPFA_API zipfa_status zipfa_model_offsets(const zipfa_model* model, double* out, size_t len);

/* Rank selection */
typedef struct zipfa_cv_options {
  size_t rank_min;
  size_t rank_max;
  int folds;    /* default 5 */
  int repeats;  /* default 1 */
  uint64_t seed;
  int threads;  /* 0 = available parallelism */
  zipfa_fit_options fit;
} zipfa_cv_options;

ZIPFA_API void zipfa_cv_options_init(zipfa_cv_options* options);

typedef struct zipfa_cv_result zipfa_cv_result;

ZIPFA_API zipfa_status zipfa_cv_run(const zipfa_counts* counts, const zipfa_cv_options* options,
                                    zipfa_cv_result** out);
ZIPFA_API size_t zipfa_cv_selected_rank(const zipfa_cv_result* result);
/* Sum over repeats of the per-repeat totals; -inf for an invalid rank. */
ZIPFA_API double zipfa_cv_total(const zipfa_cv_result* result, size_t rank);
ZIPFA_API zipfa_status zipfa_cv_write_csv(const zipfa_cv_result* result, const char* path);
ZIPFA_API void zipfa_cv_free(zipfa_cv_result* result);

/* Simulation */
typedef struct zipfa_sim_options {
  const char* setting; /* "1".."5", "6.1", "6.2" */
  double zero_pct;     /* target inflated-zero fraction in [0, 1) */
  int has_tau;         /* nonzero: use tau instead of calibrating */
  double tau;
  uint64_t seed;
  size_t n;            /* default 200 */
  size_t m;            /* default 100 */
} zipfa_sim_options;

ZIPFA_API void zipfa_sim_options_init(zipfa_sim_options* options);

typedef struct zipfa_dataset zipfa_dataset;

ZIPFA_API zipfa_status zipfa_simulate(const zipfa_sim_options* options, zipfa_dataset** out);
ZIPFA_API int zipfa_dataset_has_tau(const zipfa_dataset* data);
ZIPFA_API double zipfa_dataset_tau(const zipfa_dataset* data);
ZIPFA_API double zipfa_dataset_realized_inflation(const zipfa_dataset* data);
/* Borrowed; valid until zipfa_dataset_free. */
ZIPFA_API const zipfa_counts* zipfa_dataset_counts(const zipfa_dataset* data);
ZIPFA_API zipfa_status zipfa_dataset_write(const zipfa_dataset* data, const char* dir);
ZIPFA_API void zipfa_dataset_free(zipfa_dataset* data);

/* Benchmark grid; list fields are comma separated. */
typedef struct zipfa_benchmark_options {
  const char* settings;   /* default "1" */
  const char* zero_pcts;  /* default "0,0.2,0.4" */
  const char* methods;    /* default "zipfa,logsvd" */
  int replicates;         /* default 1 */
  uint64_t seed;
  size_t rank;            /* default 3 */
  int threads;
  int timing;             /* nonzero: record wall-clock seconds */
  zipfa_fit_options fit;  /* default offsets: unit (simulated library sizes are 1) */
} zipfa_benchmark_options;

ZIPFA_API void zipfa_benchmark_options_init(zipfa_benchmark_options* options);
/* Writes out_csv plus out_csv.meta.json describing the loss conventions. */
ZIPFA_API zipfa_status zipfa_benchmark_run(const zipfa_benchmark_options* options,
                                           const char* out_csv, size_t* n_records);

/* Zero-pattern diagnostic table and logistic fits. */
ZIPFA_API zipfa_status zipfa_diagnose(const zipfa_counts* counts, const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif
