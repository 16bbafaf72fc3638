// Command-line front end over the tallfit C API. Subcommands: simulate, fit,
// compare, collapse, designs. Exit codes: 0 success, 1 usage, 2 data or I/O,
// 3 numerical failure. Output files appear atomically (written to a .tmp
// sibling, renamed on success) so a nonzero exit never leaves partial
// artifacts behind.

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "tallfit/tallfit.h"

using nlohmann::json;

namespace {

int exit_code(tf_status status) {
  switch (status) {
    case TF_OK: return 0;
    case TF_ERR_INVALID: return 1;
    case TF_ERR_DATA: return 2;
    case TF_ERR_IO: return 2;
    case TF_ERR_NUMERIC: return 3;
  }
  return 3;
}

// Thrown instead of exiting so staged .tmp outputs get cleaned up on the way
// out.
struct CliError {
  int code;
};

[[noreturn]] void die(tf_status status) {
  std::fprintf(stderr, "tallfit: %s\n", tf_last_error());
  throw CliError{exit_code(status)};
}

void check(tf_status status) {
  if (status != TF_OK) die(status);
}

// Pending output files: everything lands in <path>.tmp until commit() makes
// the batch visible; abandoned tmps are removed on destruction.
class OutputBatch {
 public:
  ~OutputBatch() {
    for (const auto& p : pending_) std::remove((p + ".tmp").c_str());
  }
  std::string stage(const std::string& path) {
    pending_.push_back(path);
    return path + ".tmp";
  }
  void commit() {
    for (const auto& p : pending_)
      if (std::rename((p + ".tmp").c_str(), p.c_str()) != 0) {
        std::fprintf(stderr, "tallfit: cannot move %s.tmp to %s\n", p.c_str(),
                     p.c_str());
        throw CliError{2};
      }
    pending_.clear();
  }

 private:
  std::vector<std::string> pending_;
};

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) {
    std::fprintf(stderr, "tallfit: cannot write %s\n", path.c_str());
    throw CliError{2};
  }
}

std::vector<double> parse_number_list(const std::string& text,
                                      const std::string& flag) {
  std::vector<double> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cur, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != cur.size())
      throw CLI::ValidationError(flag, "'" + cur + "' is not a number");
    out.push_back(v);
    cur.clear();
  };
  for (char c : text) {
    if (c == ',') {
      flush();
    } else if (c != ' ') {
      cur += c;
    }
  }
  flush();
  if (out.empty()) throw CLI::ValidationError(flag, "empty number list");
  return out;
}

// "col=1,2,3" pairs used by --levels and --cuts.
std::pair<std::string, std::vector<double>> parse_named_list(
    const std::string& text, const std::string& flag) {
  auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0)
    throw CLI::ValidationError(flag, "expected col=v1,v2,... in '" + text + "'");
  return {text.substr(0, eq), parse_number_list(text.substr(eq + 1), flag)};
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : text) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else if (c != ' ') {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

// Flags shared by fit, compare, collapse, and designs.
struct ModelArgs {
  std::string data_path;
  std::string schema_path;
  std::string family = "bernoulli";
  double theta = 1.0;
  double sigma2 = 1.0;
  std::vector<std::string> terms;
  bool no_intercept = false;
  std::string offset;
  std::vector<std::string> standardize;
};

void add_data_flags(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("--data", args.data_path, "Input CSV")->required();
  cmd->add_option("--schema", args.schema_path, "Schema config for the CSV")
      ->required();
}

void add_model_flags(CLI::App* cmd, ModelArgs& args) {
  cmd->add_option("--family", args.family,
                  "bernoulli, poisson, negative_binomial, or gaussian")
      ->capture_default_str();
  cmd->add_option("--theta", args.theta,
                  "Negative binomial dispersion (start value when estimated)")
      ->capture_default_str();
  cmd->add_option("--sigma2", args.sigma2, "Gaussian residual variance")
      ->capture_default_str();
  cmd->add_option("--terms", args.terms,
                  "Covariate term, e.g. time or case:time (repeatable)");
  cmd->add_flag("--no-intercept", args.no_intercept, "Drop the intercept");
  cmd->add_option("--offset", args.offset, "Exposure column (log links)");
  cmd->add_option("--standardize", args.standardize,
                  "Continuous column to center and scale first (repeatable)");
}

struct FitArgs {
  std::string method = "full";
  int quad_points = 15;
  double grad_tol = 1e-6;
  std::string tau2_method = "reml";
  bool center = false;
  bool fix_theta = false;
  uint64_t seed = 1;
  int64_t initial_size = 1000;
  int64_t target_size = 0;
  double target_fraction = 0.10;
  double step_fraction = 0.25;
  int max_grid_levels = 25;
  std::string grid_plan;
  std::vector<std::string> levels;
  std::vector<std::string> exclusive;
  std::vector<std::string> cuts;
  std::string cluster_estimates_in;
  std::string cluster_estimates_out;
};

void add_fit_flags(CLI::App* cmd, FitArgs& args, bool with_method) {
  if (with_method)
    cmd->add_option("--method", args.method,
                    "full, weighted, meta_uni, meta_mv, meta_fixed, "
                    "subsample, or subsample_modified")
        ->capture_default_str();
  cmd->add_option("--quad-points", args.quad_points,
                  "Quadrature nodes (1 = Laplace)")
      ->capture_default_str();
  cmd->add_option("--grad-tol", args.grad_tol, "Convergence tolerance")
      ->capture_default_str();
  cmd->add_option("--tau2-method", args.tau2_method,
                  "Meta heterogeneity estimator: reml or mom")
      ->capture_default_str();
  cmd->add_flag("--center", args.center,
                "Center covariates before per-cluster fits");
  cmd->add_flag("--fix-theta", args.fix_theta,
                "Hold the dispersion at --theta instead of estimating it");
  cmd->add_option("--seed", args.seed, "Seed for subsampling draws")
      ->capture_default_str();
  cmd->add_option("--initial-size", args.initial_size,
                  "Subsampling: random starting rows")
      ->capture_default_str();
  cmd->add_option("--target-size", args.target_size,
                  "Subsampling: stop at this many rows (overrides fraction)");
  cmd->add_option("--target-fraction", args.target_fraction,
                  "Subsampling: stop at this fraction of the data")
      ->capture_default_str();
  cmd->add_option("--step-fraction", args.step_fraction,
                  "Modified subsampling: fraction of matching rows per step")
      ->capture_default_str();
  cmd->add_option("--max-grid-levels", args.max_grid_levels,
                  "Cap on distinct values when building the grid from data")
      ->capture_default_str();
  cmd->add_option("--grid-plan", args.grid_plan,
                  "Built-in candidate grid: itsa or consults");
  cmd->add_option("--levels", args.levels,
                  "Explicit grid levels, col=v1,v2,... (repeatable)");
  cmd->add_option("--exclusive", args.exclusive,
                  "Mutually exclusive indicator group, a,b,c (repeatable)");
  cmd->add_option("--cuts", args.cuts,
                  "Weighted binning cutpoints, col=c1,c2,... (repeatable)");
  cmd->add_option("--cluster-estimates-out", args.cluster_estimates_out,
                  "Meta: write stage-one per-cluster estimates CSV");
  cmd->add_option("--cluster-estimates-in", args.cluster_estimates_in,
                  "Meta: pool estimates from this CSV instead of refitting");
}

json options_json(const FitArgs& args) {
  json j;
  j["quad_points"] = args.quad_points;
  j["grad_tol"] = args.grad_tol;
  j["tau2_method"] = args.tau2_method;
  if (args.center) j["center"] = true;
  if (args.fix_theta) j["estimate_theta"] = false;
  j["seed"] = args.seed;
  j["initial_size"] = args.initial_size;
  if (args.target_size > 0) j["target_size"] = args.target_size;
  j["target_fraction"] = args.target_fraction;
  j["step_fraction"] = args.step_fraction;
  j["max_grid_levels"] = args.max_grid_levels;
  if (!args.cluster_estimates_in.empty())
    j["cluster_estimates_in"] = args.cluster_estimates_in;
  if (!args.cluster_estimates_out.empty())
    j["cluster_estimates_out"] = args.cluster_estimates_out;
  if (!args.cuts.empty()) {
    json cuts = json::object();
    for (const auto& c : args.cuts) {
      auto [name, values] = parse_named_list(c, "--cuts");
      cuts[name] = values;
    }
    j["cutpoints"] = std::move(cuts);
  }
  if (!args.grid_plan.empty()) {
    j["grid"] = {{"plan", args.grid_plan}};
  } else if (!args.levels.empty()) {
    json grid;
    json covariates = json::array(), levels = json::array();
    for (const auto& l : args.levels) {
      auto [name, values] = parse_named_list(l, "--levels");
      covariates.push_back(name);
      levels.push_back(values);
    }
    grid["covariates"] = std::move(covariates);
    grid["levels"] = std::move(levels);
    if (!args.exclusive.empty()) {
      json groups = json::array();
      for (const auto& g : args.exclusive) groups.push_back(split_names(g));
      grid["exclusive_groups"] = std::move(groups);
    }
    j["grid"] = std::move(grid);
  }
  return j;
}

// RAII wrappers so error paths cannot leak C-API handles.
struct DatasetHandle {
  tf_dataset* ptr = nullptr;
  ~DatasetHandle() { tf_dataset_free(ptr); }
};
struct ModelHandle {
  tf_model* ptr = nullptr;
  ~ModelHandle() { tf_model_free(ptr); }
};
struct ResultHandle {
  tf_result* ptr = nullptr;
  ~ResultHandle() { tf_result_free(ptr); }
};

void load_dataset(const ModelArgs& args, DatasetHandle& ds) {
  check(tf_dataset_load_csv(args.data_path.c_str(), args.schema_path.c_str(),
                            &ds.ptr));
  if (!args.standardize.empty()) {
    std::vector<const char*> names;
    for (const auto& s : args.standardize) names.push_back(s.c_str());
    tf_dataset* transformed = nullptr;
    check(tf_dataset_standardize(ds.ptr, names.data(), names.size(),
                                 &transformed));
    tf_dataset_free(ds.ptr);
    ds.ptr = transformed;
  }
}

void create_model(const ModelArgs& args, ModelHandle& model) {
  std::vector<const char*> terms;
  for (const auto& t : args.terms) terms.push_back(t.c_str());
  check(tf_model_create(args.family.c_str(), args.theta, args.sigma2,
                        terms.data(), terms.size(), args.no_intercept ? 0 : 1,
                        args.offset.empty() ? nullptr : args.offset.c_str(),
                        &model.ptr));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Random-intercept models for tall clustered data"};
  app.require_subcommand(1);

  // ---- simulate ----
  auto* sim = app.add_subcommand("simulate", "Generate a synthetic dataset");
  std::string sim_plan;
  sim->add_option("plan", sim_plan, "itsa or consults")->required();
  int64_t sim_n = 50000;
  int sim_j = 50;
  uint64_t sim_seed = 1;
  double sim_tau2 = -1.0, sim_theta = -1.0, sim_size_sigma = -1.0;
  std::string sim_beta, sim_prefix = "sim";
  sim->add_option("--n", sim_n, "Rows")->capture_default_str();
  sim->add_option("--j", sim_j, "Clusters")->capture_default_str();
  sim->add_option("--seed", sim_seed, "RNG seed")->capture_default_str();
  sim->add_option("--tau2", sim_tau2, "Random-intercept variance");
  sim->add_option("--theta", sim_theta, "Dispersion (consults plan)");
  sim->add_option("--size-sigma", sim_size_sigma,
                  "Cluster-size multiplier log-sd");
  sim->add_option("--beta", sim_beta, "Coefficients, comma-separated");
  sim->add_option("--out-prefix", sim_prefix,
                  "Writes <prefix>.csv, <prefix>.schema, <prefix>.truth.json")
      ->capture_default_str();

  // ---- fit ----
  auto* fit = app.add_subcommand("fit", "Fit the model by one method");
  ModelArgs fit_model;
  FitArgs fit_args;
  add_data_flags(fit, fit_model);
  add_model_flags(fit, fit_model);
  add_fit_flags(fit, fit_args, true);
  std::string fit_out = "result.json", fit_history, fit_fitted;
  fit->add_option("--out", fit_out, "Result JSON path")->capture_default_str();
  fit->add_option("--history-out", fit_history,
                  "Subsampling: iteration trace CSV");
  fit->add_option("--fitted-out", fit_fitted,
                  "Full method: per-row fitted values CSV");

  // ---- compare ----
  auto* cmp = app.add_subcommand("compare",
                                 "Run several methods and tabulate them");
  ModelArgs cmp_model;
  FitArgs cmp_args;
  add_data_flags(cmp, cmp_model);
  add_model_flags(cmp, cmp_model);
  add_fit_flags(cmp, cmp_args, false);
  std::string cmp_methods = "full,weighted";
  int cmp_repeats = 3;
  std::string cmp_out = "comparison.csv";
  cmp->add_option("--methods", cmp_methods, "Comma-separated method list")
      ->capture_default_str();
  cmp->add_option("--repeats", cmp_repeats, "Timing repeats per method")
      ->capture_default_str();
  cmp->add_option("--out", cmp_out, "Report CSV path")->capture_default_str();

  // ---- collapse ----
  auto* col = app.add_subcommand(
      "collapse", "Deduplicate into the weighted representation");
  ModelArgs col_model;
  add_data_flags(col, col_model);
  std::vector<std::string> col_cuts;
  std::vector<std::string> col_standardize;
  col->add_option("--cuts", col_cuts,
                  "Binning cutpoints, col=c1,c2,... (repeatable)");
  col->add_option("--standardize", col_standardize,
                  "Continuous column to center and scale first (repeatable)");
  std::string col_out = "collapsed.csv";
  col->add_option("--out", col_out, "Collapsed CSV path")
      ->capture_default_str();

  // ---- designs ----
  auto* des = app.add_subcommand("designs", "Enumerate a candidate grid");
  ModelArgs des_model;
  FitArgs des_args;
  des->add_option("--data", des_model.data_path,
                  "Enumerate from this CSV's covariate values");
  des->add_option("--schema", des_model.schema_path, "Schema for --data");
  add_model_flags(des, des_model);
  des->add_option("--grid-plan", des_args.grid_plan,
                  "Built-in grid: itsa or consults");
  des->add_option("--levels", des_args.levels,
                  "Explicit grid levels, col=v1,v2,... (repeatable)");
  des->add_option("--exclusive", des_args.exclusive,
                  "Mutually exclusive indicator group (repeatable)");
  des->add_option("--max-grid-levels", des_args.max_grid_levels,
                  "Cap on distinct values read from --data")
      ->capture_default_str();
  std::string des_out = "designs.csv";
  des->add_option("--out", des_out, "Designs CSV path")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*sim) {
      json config;
      config["n_rows"] = sim_n;
      config["n_clusters"] = sim_j;
      config["seed"] = sim_seed;
      if (sim_tau2 >= 0.0) config["tau2"] = sim_tau2;
      if (sim_theta > 0.0) config["theta"] = sim_theta;
      if (sim_size_sigma >= 0.0) config["size_sigma"] = sim_size_sigma;
      if (!sim_beta.empty())
        config["beta"] = parse_number_list(sim_beta, "--beta");
      OutputBatch batch;
      std::string csv = batch.stage(sim_prefix + ".csv");
      std::string schema = batch.stage(sim_prefix + ".schema");
      std::string truth = batch.stage(sim_prefix + ".truth.json");
      check(tf_simulate(sim_plan.c_str(), config.dump().c_str(), csv.c_str(),
                        schema.c_str(), truth.c_str()));
      batch.commit();
      std::printf("wrote %s.csv, %s.schema, %s.truth.json\n",
                  sim_prefix.c_str(), sim_prefix.c_str(), sim_prefix.c_str());
    } else if (*fit) {
      DatasetHandle ds;
      ModelHandle model;
      load_dataset(fit_model, ds);
      create_model(fit_model, model);
      ResultHandle result;
      check(tf_fit(ds.ptr, model.ptr, fit_args.method.c_str(),
                   options_json(fit_args).dump().c_str(), &result.ptr));
      OutputBatch batch;
      const char* doc = nullptr;
      check(tf_result_json(result.ptr, &doc));
      write_text(batch.stage(fit_out), doc);
      if (!fit_history.empty())
        check(tf_result_history_csv(result.ptr,
                                    batch.stage(fit_history).c_str()));
      if (!fit_fitted.empty())
        check(tf_result_fitted_csv(result.ptr, ds.ptr,
                                   batch.stage(fit_fitted).c_str()));
      batch.commit();
      double runtime = 0.0;
      check(tf_result_scalar(result.ptr, "runtime_seconds", &runtime));
      std::printf("wrote %s (%s, %.3fs)\n", fit_out.c_str(),
                  fit_args.method.c_str(), runtime);
    } else if (*cmp) {
      DatasetHandle ds;
      ModelHandle model;
      load_dataset(cmp_model, ds);
      create_model(cmp_model, model);
      OutputBatch batch;
      check(tf_compare_csv(ds.ptr, model.ptr, cmp_methods.c_str(),
                           options_json(cmp_args).dump().c_str(), cmp_repeats,
                           batch.stage(cmp_out).c_str()));
      batch.commit();
      std::printf("wrote %s\n", cmp_out.c_str());
    } else if (*col) {
      DatasetHandle ds;
      ModelArgs args = col_model;
      args.standardize = col_standardize;
      load_dataset(args, ds);
      json options = json::object();
      if (!col_cuts.empty()) {
        json cuts = json::object();
        for (const auto& c : col_cuts) {
          auto [name, values] = parse_named_list(c, "--cuts");
          cuts[name] = values;
        }
        options["cutpoints"] = std::move(cuts);
      }
      OutputBatch batch;
      check(tf_collapse_csv(ds.ptr, options.dump().c_str(),
                            batch.stage(col_out).c_str()));
      batch.commit();
      std::printf("wrote %s\n", col_out.c_str());
    } else if (*des) {
      OutputBatch batch;
      if (!des_model.data_path.empty()) {
        if (des_model.schema_path.empty()) {
          std::fprintf(stderr, "tallfit: --data needs --schema\n");
          return 1;
        }
        DatasetHandle ds;
        ModelHandle model;
        load_dataset(des_model, ds);
        create_model(des_model, model);
        check(tf_designs_data_csv(ds.ptr, model.ptr,
                                  des_args.max_grid_levels,
                                  batch.stage(des_out).c_str()));
      } else {
        json grid = options_json(des_args).value("grid", json());
        if (grid.is_null()) {
          std::fprintf(stderr,
                       "tallfit: designs needs --grid-plan, --levels, or "
                       "--data with --schema\n");
          return 1;
        }
        check(tf_designs_csv(grid.dump().c_str(),
                             batch.stage(des_out).c_str()));
      }
      batch.commit();
      std::printf("wrote %s\n", des_out.c_str());
    }
  } catch (const CliError& e) {
    return e.code;
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "tallfit: %s\n", e.what());
    return 1;
  }
  return 0;
}
