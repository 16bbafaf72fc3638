#include "tallfit/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <set>

#include "tallfit/common.hpp"

namespace tallfit {

Method parse_method(const std::string& name) {
  if (name == "full") return Method::Full;
  if (name == "weighted") return Method::Weighted;
  if (name == "meta_uni") return Method::MetaUni;
  if (name == "meta_mv") return Method::MetaMv;
  if (name == "meta_fixed") return Method::MetaFixed;
  if (name == "subsample") return Method::Subsample;
  if (name == "subsample_modified") return Method::SubsampleModified;
  throw UsageError(
      "unknown method '" + name +
      "' (expected full, weighted, meta_uni, meta_mv, meta_fixed, subsample, "
      "or subsample_modified)");
}

const char* method_name(Method m) {
  switch (m) {
    case Method::Full: return "full";
    case Method::Weighted: return "weighted";
    case Method::MetaUni: return "meta_uni";
    case Method::MetaMv: return "meta_mv";
    case Method::MetaFixed: return "meta_fixed";
    case Method::Subsample: return "subsample";
    case Method::SubsampleModified: return "subsample_modified";
  }
  return "?";
}

namespace {

std::vector<int> model_covariate_columns(const Dataset& data,
                                         const ModelSpec& spec) {
  std::set<std::string> used;
  for (const auto& term : spec.terms)
    used.insert(term.columns.begin(), term.columns.end());
  std::vector<int> cols;
  const Schema& schema = data.schema();
  for (size_t i = 0; i < schema.columns.size(); ++i)
    if (schema.columns[i].role == Role::Covariate &&
        used.count(schema.columns[i].name))
      cols.push_back(static_cast<int>(i));
  return cols;
}

void fill_from_glmm(MethodResult& r, const GlmmFit& fit) {
  r.coef_names = fit.coef_names;
  r.beta = fit.beta;
  if (fit.vcov.rows() == fit.beta.size())
    r.se = fit.vcov.diagonal().cwiseMax(0.0).cwiseSqrt();
  r.tau2 = fit.tau2;
  r.theta = fit.theta;
  r.loglik = fit.loglik;
  r.converged = fit.converged;
  r.glmm = fit;
}

std::string exclusion_summary(const MetaResult& meta) {
  if (meta.exclusions.empty())
    return "all " + std::to_string(meta.clusters_used) + " clusters pooled";
  std::map<std::string, int> by_reason;
  for (const auto& e : meta.exclusions) ++by_reason[e.second];
  std::string s = std::to_string(meta.exclusions.size()) +
                  " clusters excluded (";
  bool first = true;
  for (const auto& [reason, count] : by_reason) {
    if (!first) s += ", ";
    s += std::to_string(count) + " " + reason;
    first = false;
  }
  return s + "); " + std::to_string(meta.clusters_used) + " pooled";
}

MethodResult run_meta(const Dataset& data, const ModelSpec& spec,
                      Method method, const MethodOptions& options) {
  std::vector<ClusterEstimate> estimates;
  if (!options.cluster_estimates_in.empty()) {
    estimates = read_cluster_estimates_csv(options.cluster_estimates_in);
  } else {
    ClusterFitOptions copt;
    copt.estimate_theta = spec.family.has_theta();
    copt.center = options.center;
    estimates = fit_per_cluster(spec, data, copt);
  }
  if (!options.cluster_estimates_out.empty())
    write_cluster_estimates_csv(estimates, options.cluster_estimates_out);

  MetaResult meta;
  switch (method) {
    case Method::MetaUni:
      meta = pool_univariate(estimates, options.tau2_method);
      break;
    case Method::MetaMv:
      meta = pool_multivariate(estimates,
                               options.tau2_method == Tau2Method::Reml
                                   ? MvHetero::InterceptReml
                                   : MvHetero::InterceptMoments);
      break;
    default:
      meta = pool_multivariate(estimates, MvHetero::None);
      break;
  }

  MethodResult r;
  r.coef_names = meta.coef_names;
  r.beta = meta.beta;
  r.se = meta.se;
  r.tau2 = meta.tau2;
  r.theta = meta.theta;
  r.converged = true;
  r.note = exclusion_summary(meta);
  for (const auto& e : estimates)
    if (e.status == ClusterFitStatus::Ok) r.n_obs += e.n_rows;
  r.meta = std::move(meta);
  return r;
}

MethodResult run_weighted(const Dataset& data, const ModelSpec& spec,
                          const MethodOptions& options) {
  CollapsedDataset collapsed = collapse_prepared(data, options.cutpoints);
  const std::vector<std::string>& binned = collapsed.binned_continuous;

  ModelFrame frame = build_frame(spec, collapsed);
  MethodResult r;
  fill_from_glmm(r, glmm_fit(spec.family, frame, options.glmm));
  r.cluster_labels = collapsed.table.cluster_labels();
  r.n_obs = collapsed.table.n_rows();
  r.note = "collapsed " + std::to_string(collapsed.source_rows) + " rows to " +
           std::to_string(collapsed.table.n_rows()) + " weighted groups";
  if (!binned.empty()) {
    r.note += "; binned";
    for (const auto& b : binned) r.note += " " + b;
  }
  return r;
}

MethodResult run_subsample(const Dataset& data, const ModelSpec& spec,
                           Method method, const MethodOptions& options) {
  DesignGrid grid = options.grid
                        ? *options.grid
                        : grid_from_data(data, spec, options.max_grid_levels);
  SubsampleOptions sopt;
  sopt.initial_size = options.initial_size;
  sopt.target_size =
      options.target_size > 0
          ? options.target_size
          : static_cast<int64_t>(std::ceil(options.target_fraction *
                                           static_cast<double>(data.n_rows())));
  sopt.target_size = std::max(sopt.target_size, sopt.initial_size);
  sopt.mode = method == Method::Subsample ? SubsampleMode::FullDesign
                                          : SubsampleMode::Fraction;
  sopt.fraction = options.step_fraction;
  sopt.seed = options.seed;
  sopt.fit = options.glmm;

  auto shared = std::make_shared<Dataset>(data);
  SubsampleResult res = subsample_run(shared, spec, grid, sopt);

  MethodResult r;
  fill_from_glmm(r, res.fit);
  r.cluster_labels = subsample_dataset(res.state).cluster_labels();
  r.n_obs = static_cast<int64_t>(res.state.subsample_rows.size());
  r.history = res.state.history;
  r.grid = std::move(grid);
  r.note = "subsampled " + std::to_string(r.n_obs) + " of " +
           std::to_string(data.n_rows()) + " rows in " +
           std::to_string(res.state.history.size()) + " steps (initial " +
           std::to_string(sopt.initial_size) + ")";
  return r;
}

}  // namespace

CollapsedDataset collapse_prepared(
    const Dataset& data,
    const std::vector<std::pair<std::string, std::vector<double>>>& cutpoints) {
  for (const auto& p : cutpoints) {
    const ColumnSpec& c = data.column_spec(data.schema().index_of(p.first));
    if (c.role != Role::Covariate || c.kind != Kind::Continuous)
      throw UsageError("cutpoints: '" + p.first +
                       "' is not a continuous covariate");
  }
  Dataset working = data;
  std::vector<std::string> binned;
  for (int i = 0; i < data.n_cols(); ++i) {
    const ColumnSpec& c = data.column_spec(i);
    if (c.role != Role::Covariate || c.kind != Kind::Continuous) continue;
    BinSchemeSpec scheme = BinSchemeSpec::quartile();
    for (const auto& [name, cuts] : cutpoints)
      if (name == c.name) scheme = BinSchemeSpec::at(cuts);
    working = bin_continuous(working, c.name, scheme);
    binned.push_back(c.name);
  }
  return collapse(working, binned);
}

DesignGrid grid_from_data(const Dataset& data, const ModelSpec& spec,
                          int max_levels) {
  std::vector<std::string> names;
  std::vector<std::vector<double>> levels;
  for (int i : model_covariate_columns(data, spec)) {
    const ColumnSpec& c = data.column_spec(i);
    if (c.kind == Kind::Categorical)
      throw UsageError("subsampling grid: categorical covariate '" + c.name +
                       "' is not supported; supply explicit grid levels");
    std::set<double> distinct(data.col(i).begin(), data.col(i).end());
    if (static_cast<int>(distinct.size()) > max_levels)
      throw UsageError("subsampling grid: covariate '" + c.name + "' has " +
                       std::to_string(distinct.size()) +
                       " distinct values; supply explicit grid levels");
    names.push_back(c.name);
    levels.emplace_back(distinct.begin(), distinct.end());
  }
  if (names.empty())
    throw UsageError("subsampling grid: the model has no covariates");
  return enumerate_designs(std::move(names), std::move(levels));
}

MethodResult run_method(const Dataset& data, const ModelSpec& spec,
                        Method method, const MethodOptions& options) {
  StopWatch watch;
  MethodResult r;
  switch (method) {
    case Method::Full: {
      ModelFrame frame = build_frame(spec, data);
      fill_from_glmm(r, glmm_fit(spec.family, frame, options.glmm));
      r.cluster_labels = data.cluster_labels();
      r.n_obs = data.n_rows();
      break;
    }
    case Method::Weighted:
      r = run_weighted(data, spec, options);
      break;
    case Method::MetaUni:
    case Method::MetaMv:
    case Method::MetaFixed:
      r = run_meta(data, spec, method, options);
      break;
    case Method::Subsample:
    case Method::SubsampleModified:
      r = run_subsample(data, spec, method, options);
      break;
  }
  r.method = method;
  r.family = spec.family.name();
  r.link = spec.family.link_name();
  r.n_source_rows = data.n_rows();
  r.runtime_seconds = watch.seconds();
  return r;
}

ComparisonReport compare_methods(const Dataset& data, const ModelSpec& spec,
                                 const std::vector<Method>& methods,
                                 const MethodOptions& options, int repeats) {
  if (methods.size() < 2)
    throw UsageError("compare needs at least two methods");
  if (repeats < 1) throw UsageError("compare needs at least one repeat");

  ComparisonReport report;
  report.repeats = repeats;
  for (Method m : methods) {
    ComparisonEntry entry;
    entry.method = m;
    try {
      double total = 0.0;
      MethodResult result;
      for (int k = 0; k < repeats; ++k) {
        result = run_method(data, spec, m, options);
        total += result.runtime_seconds;
      }
      result.runtime_seconds = total / repeats;
      entry.result = std::move(result);
    } catch (const std::exception& e) {
      entry.error = e.what();
    }
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace tallfit
