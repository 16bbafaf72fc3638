#include "tallfit/subsample.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <unordered_map>

#include "tallfit/csvio.hpp"

namespace tallfit {

double design_utility(const ModelSpec& spec, const Eigen::VectorXd& beta,
                      const DesignGrid& grid, const Design& d,
                      const Eigen::MatrixXd& current_information) {
  Eigen::MatrixXd m = current_information + unit_information(spec, beta, grid, d);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu(m);
  double det = lu.determinant();
  if (!std::isfinite(det) || det < 0.0) return 0.0;
  return det;
}

namespace {

struct VecHash {
  size_t operator()(const std::vector<double>& key) const {
    size_t h = 0xcbf29ce484222325ULL;
    for (double v : key) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

// Ascending draw of k distinct elements from `from` (partial Fisher-Yates).
std::vector<int64_t> sample_rows(const std::vector<int64_t>& from, int64_t k,
                                 std::mt19937_64& rng) {
  std::vector<int64_t> pool = from;
  const int64_t n = static_cast<int64_t>(pool.size());
  for (int64_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<int64_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// Snap a row to a grid design: exact per-covariate level match, except
// continuous covariates snap to the nearest level (lower level on ties).
int design_of_row(const Dataset& data, const DesignGrid& grid,
                  const std::vector<int>& col_idx,
                  const std::unordered_map<std::vector<double>, int, VecHash>& index,
                  int64_t row) {
  std::vector<double> key(grid.covariates.size());
  for (size_t c = 0; c < grid.covariates.size(); ++c) {
    double v = data.col(col_idx[c])[row];
    if (data.schema().columns[col_idx[c]].kind == Kind::Continuous) {
      double best = grid.levels[c][0];
      for (double lvl : grid.levels[c])
        if (std::abs(lvl - v) < std::abs(best - v)) best = lvl;
      v = best;
    }
    key[c] = (v == 0.0) ? 0.0 : v;
  }
  auto it = index.find(key);
  return it == index.end() ? -1 : it->second;
}

}  // namespace

SubsampleState subsample_init(std::shared_ptr<const Dataset> data,
                              const ModelSpec& spec, const DesignGrid& grid,
                              const SubsampleOptions& options) {
  if (!data) throw UsageError("subsample: null dataset");
  const int64_t n = data->n_rows();
  if (options.initial_size < 1 || options.initial_size > n)
    throw UsageError("subsample: initial size must be in [1, n_rows]");
  if (options.target_size < options.initial_size || options.target_size > n)
    throw UsageError("subsample: target size must be in [initial size, n_rows]");
  if (options.mode == SubsampleMode::Fraction &&
      !(options.fraction > 0.0 && options.fraction <= 1.0))
    throw UsageError("subsample: fraction must be in (0, 1]");

  SubsampleState st;
  st.data = std::move(data);
  st.spec = spec;
  st.grid = grid;
  st.options = options;
  st.rng.seed(options.seed);

  // The grid must cover the model's covariates before any fitting happens.
  if (grid.designs.empty())
    throw UsageError("subsample: the design grid is empty");
  design_row(spec, grid, grid.designs.front());  // throws on missing columns

  std::unordered_map<std::vector<double>, int, VecHash> index;
  index.reserve(grid.designs.size() * 2);
  for (int i = 0; i < grid.n_designs(); ++i) {
    std::vector<double> key = grid.designs[i];
    for (double& v : key) v = (v == 0.0) ? 0.0 : v;  // fold -0.0
    index.emplace(std::move(key), i);
  }
  std::vector<int> col_idx;
  for (const auto& name : grid.covariates)
    col_idx.push_back(st.data->schema().index_of(name));

  std::vector<int64_t> all(n);
  for (int64_t i = 0; i < n; ++i) all[i] = i;
  st.subsample_rows = sample_rows(all, options.initial_size, st.rng);

  std::vector<char> in_subsample(n, 0);
  for (int64_t r : st.subsample_rows) in_subsample[r] = 1;

  st.pool_by_design.assign(grid.n_designs(), {});
  for (int64_t r = 0; r < n; ++r) {
    if (in_subsample[r]) continue;
    int d = design_of_row(*st.data, st.grid, col_idx, index, r);
    if (d < 0) {
      ++st.pool_unmapped;
      continue;
    }
    st.pool_by_design[d].push_back(r);
    ++st.pool_selectable;
  }
  return st;
}

Dataset subsample_dataset(const SubsampleState& state) {
  return state.data->select_rows(state.subsample_rows);
}

SubsampleStepInfo subsample_step(SubsampleState& state) {
  if (state.pool_selectable <= 0)
    throw UsageError("subsample: the selectable pool is exhausted");

  // Refit on the current subsample before touching the state, so failures
  // leave everything resumable.
  Dataset sub = subsample_dataset(state);
  ModelFrame frame = build_frame(state.spec, sub);
  GlmmOptions fit_opts = state.options.fit;
  fit_opts.compute_vcov = false;
  if (state.last_fit) {
    fit_opts.beta_init = state.last_fit->beta;
    fit_opts.tau2_init = std::max(state.last_fit->tau2, 1e-4);
    if (std::isfinite(state.last_fit->theta))
      fit_opts.theta_init = state.last_fit->theta;
  }
  GlmmFit fit = glmm_fit(state.spec.family, frame, fit_opts);
  if (!fit.converged)
    throw NumericError(
        "subsample: refit did not converge at iteration " +
        std::to_string(state.iteration + 1) +
        " (subsample size " + std::to_string(state.subsample_rows.size()) +
        "); state left untouched: " + fit.message);

  Family f = state.spec.family;
  if (std::isfinite(fit.theta)) f.theta = fit.theta;
  ModelSpec spec_now = state.spec;
  spec_now.family = f;
  Eigen::MatrixXd info = glm_information(f, frame, fit.beta);

  SubsampleStepInfo step;
  step.iteration = ++state.iteration;

  double best_u = -1.0;
  for (int i = 0; i < state.grid.n_designs(); ++i) {
    double u = design_utility(spec_now, fit.beta, state.grid,
                              state.grid.designs[i], info);
    if (u > best_u) {
      best_u = u;
      step.chosen_design = i;
    }
  }
  step.utility = best_u;

  std::vector<char> available(state.grid.n_designs());
  for (int i = 0; i < state.grid.n_designs(); ++i)
    available[i] = !state.pool_by_design[i].empty();
  if (!state.pool_by_design[step.chosen_design].empty()) {
    step.realized_design = step.chosen_design;
  } else {
    step.realized_design = nearest_design(
        state.grid, state.grid.designs[step.chosen_design], available);
  }

  auto& bucket = state.pool_by_design[step.realized_design];
  std::vector<int64_t> taken;
  if (state.options.mode == SubsampleMode::FullDesign) {
    taken = bucket;
    bucket.clear();
  } else {
    int64_t k = static_cast<int64_t>(
        std::ceil(state.options.fraction * static_cast<double>(bucket.size())));
    k = std::min<int64_t>(std::max<int64_t>(k, 1), bucket.size());
    taken = sample_rows(bucket, k, state.rng);
    std::vector<int64_t> rest;
    rest.reserve(bucket.size() - taken.size());
    std::set_difference(bucket.begin(), bucket.end(), taken.begin(),
                        taken.end(), std::back_inserter(rest));
    bucket = std::move(rest);
  }
  state.pool_selectable -= static_cast<int64_t>(taken.size());
  state.subsample_rows.insert(state.subsample_rows.end(), taken.begin(),
                              taken.end());
  step.rows_added = static_cast<int64_t>(taken.size());
  step.size_after = static_cast<int64_t>(state.subsample_rows.size());
  state.last_fit = std::move(fit);
  state.history.push_back(step);
  return step;
}

SubsampleResult subsample_run(std::shared_ptr<const Dataset> data,
                              const ModelSpec& spec, const DesignGrid& grid,
                              const SubsampleOptions& options) {
  SubsampleState st = subsample_init(std::move(data), spec, grid, options);
  while (static_cast<int64_t>(st.subsample_rows.size()) < options.target_size &&
         st.pool_selectable > 0)
    subsample_step(st);

  Dataset sub = subsample_dataset(st);
  ModelFrame frame = build_frame(spec, sub);
  GlmmOptions fit_opts = options.fit;
  if (st.last_fit) {
    fit_opts.beta_init = st.last_fit->beta;
    fit_opts.tau2_init = std::max(st.last_fit->tau2, 1e-4);
    if (std::isfinite(st.last_fit->theta)) fit_opts.theta_init = st.last_fit->theta;
  }
  SubsampleResult out{std::move(st), glmm_fit(spec.family, frame, fit_opts)};
  return out;
}

void write_history_csv(const std::vector<SubsampleStepInfo>& history,
                       const DesignGrid& grid, const std::string& path) {
  csv::Table t;
  t.header = {"iteration", "chosen_design", "realized_design"};
  for (const auto& c : grid.covariates) t.header.push_back(c + "_chosen");
  for (const auto& c : grid.covariates) t.header.push_back(c + "_realized");
  t.header.push_back("utility");
  t.header.push_back("rows_added");
  t.header.push_back("size_after");
  char buf[40];
  for (const auto& s : history) {
    std::vector<std::string> row{std::to_string(s.iteration),
                                 std::to_string(s.chosen_design),
                                 std::to_string(s.realized_design)};
    for (double v : grid.designs[s.chosen_design]) {
      std::snprintf(buf, sizeof buf, "%.15g", v);
      row.push_back(buf);
    }
    for (double v : grid.designs[s.realized_design]) {
      std::snprintf(buf, sizeof buf, "%.15g", v);
      row.push_back(buf);
    }
    std::snprintf(buf, sizeof buf, "%.17g", s.utility);
    row.push_back(buf);
    row.push_back(std::to_string(s.rows_added));
    row.push_back(std::to_string(s.size_after));
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

}  // namespace tallfit
