#include "tallfit/design.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "tallfit/common.hpp"
#include "tallfit/csvio.hpp"

namespace tallfit {

DesignGrid enumerate_designs(
    std::vector<std::string> covariates, std::vector<std::vector<double>> levels,
    std::vector<std::vector<std::string>> exclusive_groups) {
  if (covariates.empty())
    throw UsageError("design grid needs at least one covariate");
  if (levels.size() != covariates.size())
    throw UsageError("design grid: one level list per covariate required");
  for (size_t i = 0; i < covariates.size(); ++i) {
    if (levels[i].empty())
      throw UsageError("design grid: no levels for '" + covariates[i] + "'");
    for (size_t a = 0; a < levels[i].size(); ++a)
      for (size_t b = a + 1; b < levels[i].size(); ++b)
        if (levels[i][a] == levels[i][b])
          throw UsageError("design grid: duplicate level for '" + covariates[i] + "'");
  }

  DesignGrid grid;
  grid.covariates = std::move(covariates);
  grid.levels = std::move(levels);

  for (const auto& group : exclusive_groups) {
    std::vector<int> idx;
    for (const auto& name : group) {
      auto it = std::find(grid.covariates.begin(), grid.covariates.end(), name);
      if (it == grid.covariates.end())
        throw UsageError("exclusive group names unknown covariate '" + name + "'");
      idx.push_back(static_cast<int>(it - grid.covariates.begin()));
    }
    if (idx.size() < 2)
      throw UsageError("exclusive group needs at least two covariates");
    grid.exclusive_groups.push_back(std::move(idx));
  }

  const size_t k = grid.covariates.size();
  std::vector<size_t> odo(k, 0);
  Design d(k);
  while (true) {
    for (size_t i = 0; i < k; ++i) d[i] = grid.levels[i][odo[i]];
    bool ok = true;
    for (const auto& group : grid.exclusive_groups) {
      int ones = 0;
      for (int i : group) ones += (d[i] == 1.0);
      if (ones > 1) { ok = false; break; }
    }
    if (ok) grid.designs.push_back(d);
    // Advance the odometer, last covariate fastest.
    size_t i = k;
    while (i > 0) {
      --i;
      if (++odo[i] < grid.levels[i].size()) break;
      odo[i] = 0;
      if (i == 0) return grid;
    }
  }
}

int nearest_design(const DesignGrid& grid, const Design& target,
                   const std::vector<char>& available) {
  if (target.size() != grid.covariates.size())
    throw UsageError("nearest_design: target has wrong arity");
  if (available.size() != grid.designs.size())
    throw UsageError("nearest_design: availability flags have wrong length");
  int best = -1;
  double best_d2 = 0.0;
  for (int i = 0; i < grid.n_designs(); ++i) {
    if (!available[i]) continue;
    double d2 = 0.0;
    for (size_t c = 0; c < target.size(); ++c) {
      double diff = grid.designs[i][c] - target[c];
      d2 += diff * diff;
    }
    if (best < 0 || d2 < best_d2) {
      best = i;
      best_d2 = d2;
    }
  }
  if (best < 0) throw UsageError("nearest_design: no design is available");
  return best;
}

void write_designs_csv(const DesignGrid& grid, const std::string& path) {
  csv::Table t;
  t.header.push_back("design_index");
  for (const auto& c : grid.covariates) t.header.push_back(c);
  char buf[40];
  for (int i = 0; i < grid.n_designs(); ++i) {
    std::vector<std::string> row;
    row.push_back(std::to_string(i));
    for (double v : grid.designs[i]) {
      std::snprintf(buf, sizeof buf, "%.15g", v);
      row.push_back(buf);
    }
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

}  // namespace tallfit
