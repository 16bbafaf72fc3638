#include "tallfit/tallfit.h"

#include <cmath>
#include <cstdio>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "tallfit/common.hpp"
#include "tallfit/csvio.hpp"
#include "tallfit/pipeline.hpp"
#include "tallfit/simulate.hpp"

using nlohmann::json;

struct tf_dataset {
  tallfit::Dataset data;
};

struct tf_model {
  tallfit::ModelSpec spec;
};

struct tf_result {
  tallfit::MethodResult result;
  tallfit::ModelSpec spec;  // for the fitted-values export
  mutable std::string json_cache;
};

namespace {

thread_local std::string g_last_error;

tf_status fail(tf_status code, const std::string& message) {
  g_last_error = message;
  return code;
}

tf_status fail_invalid(const std::string& message) {
  return fail(TF_ERR_INVALID, message);
}

// Every entry point funnels through here so C++ exceptions never cross the
// library boundary.
template <typename Fn>
tf_status guarded(Fn&& fn) {
  try {
    fn();
    return TF_OK;
  } catch (const tallfit::TfError& e) {
    switch (e.kind()) {
      case tallfit::ErrorKind::InvalidArgument:
        return fail(TF_ERR_INVALID, e.what());
      case tallfit::ErrorKind::Data:
        return fail(TF_ERR_DATA, e.what());
      case tallfit::ErrorKind::Numeric:
        return fail(TF_ERR_NUMERIC, e.what());
      case tallfit::ErrorKind::Io:
        return fail(TF_ERR_IO, e.what());
    }
    return fail(TF_ERR_NUMERIC, e.what());
  } catch (const json::parse_error& e) {
    return fail(TF_ERR_INVALID, std::string("options JSON: ") + e.what());
  } catch (const json::exception& e) {
    return fail(TF_ERR_INVALID, std::string("options JSON: ") + e.what());
  } catch (const std::exception& e) {
    return fail(TF_ERR_NUMERIC, e.what());
  }
}

json parse_options(const char* options_json) {
  if (options_json == nullptr || options_json[0] == '\0')
    return json::object();
  json j = json::parse(options_json);
  if (!j.is_object())
    throw tallfit::UsageError("options JSON must be an object");
  return j;
}

std::vector<std::pair<std::string, std::vector<double>>> parse_cutpoints(
    const json& j) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  if (!j.contains("cutpoints")) return out;
  const json& c = j.at("cutpoints");
  if (!c.is_object())
    throw tallfit::UsageError("options JSON: cutpoints must map column names "
                              "to arrays of cut values");
  for (auto it = c.begin(); it != c.end(); ++it)
    out.emplace_back(it.key(), it.value().get<std::vector<double>>());
  return out;
}

tallfit::DesignGrid parse_grid(const json& g) {
  if (g.contains("plan")) {
    std::string plan = g.at("plan").get<std::string>();
    if (plan == "itsa") return tallfit::itsa_design_grid();
    if (plan == "consults") return tallfit::consults_design_grid();
    throw tallfit::UsageError("grid plan must be 'itsa' or 'consults', got '" +
                              plan + "'");
  }
  auto covariates = g.at("covariates").get<std::vector<std::string>>();
  auto levels = g.at("levels").get<std::vector<std::vector<double>>>();
  std::vector<std::vector<std::string>> groups;
  if (g.contains("exclusive_groups"))
    groups = g.at("exclusive_groups")
                 .get<std::vector<std::vector<std::string>>>();
  return tallfit::enumerate_designs(std::move(covariates), std::move(levels),
                                    std::move(groups));
}

tallfit::MethodOptions parse_method_options(const char* options_json) {
  json j = parse_options(options_json);
  tallfit::MethodOptions o;
  if (j.contains("quad_points")) o.glmm.quad_points = j.at("quad_points");
  if (j.contains("grad_tol")) o.glmm.grad_tol = j.at("grad_tol");
  if (j.contains("max_iter")) o.glmm.max_iter = j.at("max_iter");
  if (j.contains("tau2_init")) o.glmm.tau2_init = j.at("tau2_init");
  if (j.contains("theta_init")) o.glmm.theta_init = j.at("theta_init");
  if (j.contains("estimate_theta"))
    o.glmm.estimate_theta = j.at("estimate_theta");
  if (j.contains("tau2_method")) {
    std::string m = j.at("tau2_method");
    if (m == "reml") {
      o.tau2_method = tallfit::Tau2Method::Reml;
    } else if (m == "mom") {
      o.tau2_method = tallfit::Tau2Method::MethodOfMoments;
    } else {
      throw tallfit::UsageError("tau2_method must be 'reml' or 'mom', got '" +
                                m + "'");
    }
  }
  if (j.contains("center")) o.center = j.at("center");
  if (j.contains("cluster_estimates_in"))
    o.cluster_estimates_in = j.at("cluster_estimates_in");
  if (j.contains("cluster_estimates_out"))
    o.cluster_estimates_out = j.at("cluster_estimates_out");
  if (j.contains("initial_size")) o.initial_size = j.at("initial_size");
  if (j.contains("target_size")) o.target_size = j.at("target_size");
  if (j.contains("target_fraction"))
    o.target_fraction = j.at("target_fraction");
  if (j.contains("step_fraction")) o.step_fraction = j.at("step_fraction");
  if (j.contains("seed")) o.seed = j.at("seed");
  if (j.contains("max_grid_levels"))
    o.max_grid_levels = j.at("max_grid_levels");
  o.cutpoints = parse_cutpoints(j);
  if (j.contains("grid")) o.grid = parse_grid(j.at("grid"));
  return o;
}

}  // namespace

extern "C" {

const char* tf_last_error(void) { return g_last_error.c_str(); }

tf_status tf_dataset_load_csv(const char* csv_path, const char* schema_path,
                              tf_dataset** out) {
  if (!csv_path || !schema_path || !out)
    return fail_invalid("tf_dataset_load_csv: null argument");
  *out = nullptr;
  return guarded([&] {
    tallfit::Schema schema = tallfit::load_schema_file(schema_path);
    auto handle = std::make_unique<tf_dataset>(
        tf_dataset{tallfit::Dataset::load_csv(csv_path, schema)});
    *out = handle.release();
  });
}

tf_status tf_dataset_n_rows(const tf_dataset* ds, int64_t* out) {
  if (!ds || !out) return fail_invalid("tf_dataset_n_rows: null argument");
  *out = ds->data.n_rows();
  return TF_OK;
}

tf_status tf_dataset_n_clusters(const tf_dataset* ds, int32_t* out) {
  if (!ds || !out) return fail_invalid("tf_dataset_n_clusters: null argument");
  *out = ds->data.n_clusters();
  return TF_OK;
}

tf_status tf_dataset_write_csv(const tf_dataset* ds, const char* path) {
  if (!ds || !path) return fail_invalid("tf_dataset_write_csv: null argument");
  return guarded([&] { tallfit::write_dataset_csv(ds->data, path); });
}

tf_status tf_dataset_standardize(const tf_dataset* ds,
                                 const char* const* columns, size_t n_columns,
                                 tf_dataset** out) {
  if (!ds || !out || (n_columns > 0 && !columns))
    return fail_invalid("tf_dataset_standardize: null argument");
  *out = nullptr;
  return guarded([&] {
    std::vector<std::string> names;
    for (size_t i = 0; i < n_columns; ++i) {
      if (!columns[i])
        throw tallfit::UsageError("tf_dataset_standardize: null column name");
      names.emplace_back(columns[i]);
    }
    auto handle = std::make_unique<tf_dataset>(
        tf_dataset{tallfit::standardize(ds->data, names)});
    *out = handle.release();
  });
}

tf_status tf_collapse_csv(const tf_dataset* ds, const char* options_json,
                          const char* out_csv) {
  if (!ds || !out_csv) return fail_invalid("tf_collapse_csv: null argument");
  return guarded([&] {
    json j = parse_options(options_json);
    auto collapsed =
        tallfit::collapse_prepared(ds->data, parse_cutpoints(j));
    tallfit::write_collapsed_csv(collapsed, out_csv);
  });
}

void tf_dataset_free(tf_dataset* ds) { delete ds; }

tf_status tf_model_create(const char* family, double theta, double sigma2,
                          const char* const* terms, size_t n_terms,
                          int intercept, const char* offset_column,
                          tf_model** out) {
  if (!family || !out || (n_terms > 0 && !terms))
    return fail_invalid("tf_model_create: null argument");
  *out = nullptr;
  return guarded([&] {
    std::string f = family;
    tallfit::ModelSpec spec;
    if (f == "bernoulli") {
      spec.family = tallfit::Family::bernoulli();
    } else if (f == "poisson") {
      spec.family = tallfit::Family::poisson();
    } else if (f == "negative_binomial") {
      spec.family = tallfit::Family::neg_binomial(theta);
    } else if (f == "gaussian") {
      spec.family = tallfit::Family::gaussian(sigma2);
    } else {
      throw tallfit::UsageError(
          "family must be bernoulli, poisson, negative_binomial, or "
          "gaussian; got '" + f + "'");
    }
    for (size_t i = 0; i < n_terms; ++i) {
      if (!terms[i]) throw tallfit::UsageError("tf_model_create: null term");
      spec.terms.push_back(tallfit::parse_term(terms[i]));
    }
    spec.intercept = intercept != 0;
    if (offset_column) spec.offset_column = offset_column;
    *out = new tf_model{std::move(spec)};
  });
}

void tf_model_free(tf_model* m) { delete m; }

tf_status tf_fit(const tf_dataset* ds, const tf_model* m, const char* method,
                 const char* options_json, tf_result** out) {
  if (!ds || !m || !method || !out) return fail_invalid("tf_fit: null argument");
  *out = nullptr;
  return guarded([&] {
    tallfit::Method meth = tallfit::parse_method(method);
    tallfit::MethodOptions options = parse_method_options(options_json);
    auto handle = std::make_unique<tf_result>();
    handle->result = tallfit::run_method(ds->data, m->spec, meth, options);
    handle->spec = m->spec;
    *out = handle.release();
  });
}

tf_status tf_result_json(const tf_result* r, const char** out) {
  if (!r || !out) return fail_invalid("tf_result_json: null argument");
  return guarded([&] {
    r->json_cache = tallfit::method_result_to_json(r->result);
    *out = r->json_cache.c_str();
  });
}

tf_status tf_result_scalar(const tf_result* r, const char* name, double* out) {
  if (!r || !name || !out) return fail_invalid("tf_result_scalar: null argument");
  const tallfit::MethodResult& res = r->result;
  std::string n = name;
  if (n == "tau2") {
    *out = res.tau2;
  } else if (n == "theta") {
    *out = res.theta;
  } else if (n == "loglik") {
    *out = res.loglik;
  } else if (n == "n_obs") {
    *out = static_cast<double>(res.n_obs);
  } else if (n == "n_source_rows") {
    *out = static_cast<double>(res.n_source_rows);
  } else if (n == "runtime_seconds") {
    *out = res.runtime_seconds;
  } else if (n == "converged") {
    *out = res.converged ? 1.0 : 0.0;
  } else if (n == "steps") {
    *out = static_cast<double>(res.history.size());
  } else {
    return fail_invalid("tf_result_scalar: unknown scalar '" + n + "'");
  }
  return TF_OK;
}

tf_status tf_result_n_coefs(const tf_result* r, int* out) {
  if (!r || !out) return fail_invalid("tf_result_n_coefs: null argument");
  *out = static_cast<int>(r->result.coef_names.size());
  return TF_OK;
}

tf_status tf_result_coef(const tf_result* r, int i, const char** name,
                         double* estimate, double* se) {
  if (!r) return fail_invalid("tf_result_coef: null result");
  const tallfit::MethodResult& res = r->result;
  if (i < 0 || i >= static_cast<int>(res.coef_names.size()))
    return fail_invalid("tf_result_coef: index out of range");
  if (name) *name = res.coef_names[static_cast<size_t>(i)].c_str();
  if (estimate) *estimate = res.beta(i);
  if (se)
    *se = res.se.size() == res.beta.size()
              ? res.se(i)
              : std::numeric_limits<double>::quiet_NaN();
  return TF_OK;
}

tf_status tf_result_history_csv(const tf_result* r, const char* path) {
  if (!r || !path) return fail_invalid("tf_result_history_csv: null argument");
  if (r->result.history.empty())
    return fail_invalid("tf_result_history_csv: this result has no "
                        "subsampling history");
  return guarded([&] {
    tallfit::write_history_csv(r->result.history, r->result.grid, path);
  });
}

tf_status tf_result_fitted_csv(const tf_result* r, const tf_dataset* ds,
                               const char* path) {
  if (!r || !ds || !path)
    return fail_invalid("tf_result_fitted_csv: null argument");
  if (r->result.method != tallfit::Method::Full || !r->result.glmm)
    return fail_invalid("tf_result_fitted_csv: fitted values are exported "
                        "for full-data fits only");
  return guarded([&] {
    const tallfit::GlmmFit& fit = *r->result.glmm;
    tallfit::ModelFrame frame = tallfit::build_frame(r->spec, ds->data);
    if (frame.n_clusters != fit.eb_modes.size())
      throw tallfit::UsageError(
          "tf_result_fitted_csv: dataset does not match the fitted one");
    Eigen::VectorXd mu = tallfit::glmm_fitted_values(r->spec.family, frame,
                                                     fit.beta, fit.eb_modes);
    tallfit::csv::Table t;
    t.header = {"row", "cluster", "outcome", "fitted"};
    char buf[40];
    const auto& labels = ds->data.cluster_labels();
    for (int64_t i = 0; i < ds->data.n_rows(); ++i) {
      std::vector<std::string> row(4);
      row[0] = std::to_string(i);
      row[1] = labels[static_cast<size_t>(ds->data.cluster_of(i))];
      std::snprintf(buf, sizeof buf, "%.15g", frame.y(i));
      row[2] = buf;
      std::snprintf(buf, sizeof buf, "%.15g", mu(i));
      row[3] = buf;
      t.rows.push_back(std::move(row));
    }
    tallfit::csv::write_file(path, t);
  });
}

void tf_result_free(tf_result* r) { delete r; }

tf_status tf_compare_csv(const tf_dataset* ds, const tf_model* m,
                         const char* methods, const char* options_json,
                         int repeats, const char* out_csv) {
  if (!ds || !m || !methods || !out_csv)
    return fail_invalid("tf_compare_csv: null argument");
  return guarded([&] {
    std::vector<tallfit::Method> list;
    std::string cur;
    for (const char* p = methods;; ++p) {
      if (*p == ',' || *p == '\0') {
        if (!cur.empty()) list.push_back(tallfit::parse_method(cur));
        cur.clear();
        if (*p == '\0') break;
      } else if (*p != ' ') {
        cur += *p;
      }
    }
    tallfit::MethodOptions options = parse_method_options(options_json);
    auto report =
        tallfit::compare_methods(ds->data, m->spec, list, options, repeats);
    tallfit::write_comparison_csv(report, out_csv);
  });
}

tf_status tf_simulate(const char* plan, const char* config_json,
                      const char* csv_out, const char* schema_out,
                      const char* truth_out) {
  if (!plan || !csv_out || !schema_out || !truth_out)
    return fail_invalid("tf_simulate: null argument");
  return guarded([&] {
    json j = parse_options(config_json);
    uint64_t seed = j.value("seed", uint64_t{1});
    std::string p = plan;
    tallfit::Simulated sim = [&] {
      if (p == "itsa") {
        tallfit::ItsaParams params = tallfit::ItsaParams::defaults();
        if (j.contains("n_rows")) params.n_rows = j.at("n_rows");
        if (j.contains("n_clusters")) params.n_clusters = j.at("n_clusters");
        if (j.contains("tau2")) params.tau2 = j.at("tau2");
        if (j.contains("size_sigma")) params.size_sigma = j.at("size_sigma");
        if (j.contains("beta"))
          params.beta = j.at("beta").get<std::vector<double>>();
        return tallfit::simulate_itsa_logistic(params, seed);
      }
      if (p == "consults") {
        tallfit::ConsultParams params = tallfit::ConsultParams::defaults();
        if (j.contains("n_rows")) params.n_rows = j.at("n_rows");
        if (j.contains("n_clusters")) params.n_clusters = j.at("n_clusters");
        if (j.contains("tau2")) params.tau2 = j.at("tau2");
        if (j.contains("theta")) params.theta = j.at("theta");
        if (j.contains("size_sigma")) params.size_sigma = j.at("size_sigma");
        if (j.contains("beta"))
          params.beta = j.at("beta").get<std::vector<double>>();
        if (j.contains("morbidity_probs"))
          params.morbidity_probs =
              j.at("morbidity_probs").get<std::vector<double>>();
        if (j.contains("exposure_min")) params.exposure_min = j.at("exposure_min");
        if (j.contains("exposure_max")) params.exposure_max = j.at("exposure_max");
        return tallfit::simulate_negbin_consults(params, seed);
      }
      throw tallfit::UsageError("plan must be 'itsa' or 'consults', got '" +
                                p + "'");
    }();
    tallfit::write_dataset_csv(sim.data, csv_out);
    tallfit::write_schema_file(sim.data.schema(), schema_out);
    tallfit::write_truth_json(sim.truth, truth_out);
  });
}

tf_status tf_designs_csv(const char* grid_json, const char* out_csv) {
  if (!grid_json || !out_csv) return fail_invalid("tf_designs_csv: null argument");
  return guarded([&] {
    json j = json::parse(grid_json);
    tallfit::write_designs_csv(parse_grid(j), out_csv);
  });
}

tf_status tf_designs_data_csv(const tf_dataset* ds, const tf_model* m,
                              int max_levels, const char* out_csv) {
  if (!ds || !m || !out_csv)
    return fail_invalid("tf_designs_data_csv: null argument");
  return guarded([&] {
    tallfit::write_designs_csv(
        tallfit::grid_from_data(ds->data, m->spec, max_levels), out_csv);
  });
}

}  // extern "C"
