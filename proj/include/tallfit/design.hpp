#pragma once

#include <string>
#include <vector>

namespace tallfit {

// Candidate covariate combination, one value per grid covariate.
using Design = std::vector<double>;

struct DesignGrid {
  std::vector<std::string> covariates;
  std::vector<std::vector<double>> levels;        // per covariate
  std::vector<std::vector<int>> exclusive_groups; // covariate indices; at most one may be 1
  std::vector<Design> designs;                    // filtered Cartesian product

  int n_designs() const { return static_cast<int>(designs.size()); }
};

// Cartesian product of the level lists in lexicographic order (last covariate
// varies fastest), dropping combinations where more than one member of an
// exclusive group equals 1.
DesignGrid enumerate_designs(std::vector<std::string> covariates,
                             std::vector<std::vector<double>> levels,
                             std::vector<std::vector<std::string>> exclusive_groups = {});

// Index of the available design closest to `target` in Euclidean distance;
// ties resolve to the lowest index. `available` flags per design; at least
// one must be set.
int nearest_design(const DesignGrid& grid, const Design& target,
                   const std::vector<char>& available);

void write_designs_csv(const DesignGrid& grid, const std::string& path);

}  // namespace tallfit
