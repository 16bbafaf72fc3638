#ifndef TALLFIT_H
#define TALLFIT_H

/* C interface to the tallfit library: load clustered data, describe a
 * random-intercept model, fit it by any of the size-reduction strategies,
 * and read the results back. Every call returns a tf_status; on failure
 * tf_last_error() describes what went wrong (thread-local, valid until the
 * next failing call on the same thread). Handles are created by tf_* calls
 * and released with the matching tf_*_free. */

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum tf_status {
  TF_OK = 0,
  TF_ERR_INVALID = 1, /* bad arguments or options */
  TF_ERR_DATA = 2,    /* schema or data violations */
  TF_ERR_NUMERIC = 3, /* fitting or numerical failure */
  TF_ERR_IO = 4       /* file read/write failure */
} tf_status;

typedef struct tf_dataset tf_dataset;
typedef struct tf_model tf_model;
typedef struct tf_result tf_result;

const char* tf_last_error(void);

/* ---- data ---- */

tf_status tf_dataset_load_csv(const char* csv_path, const char* schema_path,
                              tf_dataset** out);
tf_status tf_dataset_n_rows(const tf_dataset* ds, int64_t* out);
tf_status tf_dataset_n_clusters(const tf_dataset* ds, int32_t* out);
tf_status tf_dataset_write_csv(const tf_dataset* ds, const char* path);

/* New dataset with the named continuous columns centered and scaled. */
tf_status tf_dataset_standardize(const tf_dataset* ds,
                                 const char* const* columns, size_t n_columns,
                                 tf_dataset** out);

/* Deduplicate into the weighted representation and write it as CSV.
 * options_json may carry {"cutpoints": {"col": [c1, c2, ...]}}; continuous
 * covariates without explicit cutpoints are quartile-binned. Pass NULL or
 * "{}" for the defaults. */
tf_status tf_collapse_csv(const tf_dataset* ds, const char* options_json,
                          const char* out_csv);

void tf_dataset_free(tf_dataset* ds);

/* ---- model ---- */

/* family: "bernoulli", "poisson", "negative_binomial" (theta > 0), or
 * "gaussian" (sigma2 > 0); theta/sigma2 are ignored by the others. terms are
 * covariate products like "case:time"; offset_column may be NULL or "". */
tf_status tf_model_create(const char* family, double theta, double sigma2,
                          const char* const* terms, size_t n_terms,
                          int intercept, const char* offset_column,
                          tf_model** out);
void tf_model_free(tf_model* m);

/* ---- fitting ---- */

/* method: "full", "weighted", "meta_uni", "meta_mv", "meta_fixed",
 * "subsample", or "subsample_modified". options_json (NULL or "{}" for
 * defaults) may set: quad_points, grad_tol, max_iter, tau2_init, theta_init,
 * estimate_theta, tau2_method ("reml"|"mom"), center,
 * cluster_estimates_in/out (CSV paths),
 * initial_size, target_size, target_fraction, step_fraction, seed,
 * max_grid_levels, cutpoints (as in tf_collapse_csv), and grid — either
 * {"plan": "itsa"|"consults"} or {"covariates": [...], "levels": [[...],
 * ...], "exclusive_groups": [[...], ...]}. */
tf_status tf_fit(const tf_dataset* ds, const tf_model* m, const char* method,
                 const char* options_json, tf_result** out);

/* Result document as JSON; the pointer stays owned by the result. */
tf_status tf_result_json(const tf_result* r, const char** out);

/* name: "tau2", "theta", "loglik", "n_obs", "n_source_rows",
 * "runtime_seconds", "converged" (1/0), or "steps". */
tf_status tf_result_scalar(const tf_result* r, const char* name, double* out);

tf_status tf_result_n_coefs(const tf_result* r, int* out);
/* Link-scale estimate and SE (NaN when unavailable); name stays owned by
 * the result. Any output pointer may be NULL. */
tf_status tf_result_coef(const tf_result* r, int i, const char** name,
                         double* estimate, double* se);

/* Subsampling methods only: the per-iteration design trace. */
tf_status tf_result_history_csv(const tf_result* r, const char* path);

/* Full-data fits only: per-row conditional means at the cluster modes,
 * written as CSV against the dataset the fit was run on. */
tf_status tf_result_fitted_csv(const tf_result* r, const tf_dataset* ds,
                               const char* path);

void tf_result_free(tf_result* r);

/* ---- comparison ---- */

/* methods: comma-separated list, at least two. Runs each `repeats` times
 * (runtime averaged) and writes the side-by-side report. */
tf_status tf_compare_csv(const tf_dataset* ds, const tf_model* m,
                         const char* methods, const char* options_json,
                         int repeats, const char* out_csv);

/* ---- simulation ---- */

/* plan: "itsa" (logistic interrupted time series) or "consults" (negative
 * binomial counts with exposure). config_json (NULL or "{}" for defaults)
 * may set n_rows, n_clusters, seed, tau2, size_sigma, beta (full coefficient
 * array), and for consults also theta, morbidity_probs, exposure_min,
 * exposure_max. Writes the dataset CSV, its schema, and the ground-truth
 * sidecar. */
tf_status tf_simulate(const char* plan, const char* config_json,
                      const char* csv_out, const char* schema_out,
                      const char* truth_out);

/* ---- design grids ---- */

/* grid_json: {"plan": "itsa"|"consults"} or explicit covariates/levels/
 * exclusive_groups as in tf_fit. Writes one row per candidate design. */
tf_status tf_designs_csv(const char* grid_json, const char* out_csv);

/* Grid enumerated from the distinct data values of the model covariates. */
tf_status tf_designs_data_csv(const tf_dataset* ds, const tf_model* m,
                              int max_levels, const char* out_csv);

#ifdef __cplusplus
}
#endif

#endif /* TALLFIT_H */
