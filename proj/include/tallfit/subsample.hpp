#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <vector>

#include "tallfit/glmm.hpp"

namespace tallfit {

// D-optimality gain of adding one observation at a candidate design:
// det(current_information + unit_information); 0 when the sum is singular.
double design_utility(const ModelSpec& spec, const Eigen::VectorXd& beta,
                      const DesignGrid& grid, const Design& d,
                      const Eigen::MatrixXd& current_information);

enum class SubsampleMode { FullDesign, Fraction };

struct SubsampleOptions {
  int64_t initial_size = 1000;
  int64_t target_size = 0;
  SubsampleMode mode = SubsampleMode::FullDesign;
  double fraction = 0.25;  // Fraction mode: share of matching rows per step
  uint64_t seed = 1;
  GlmmOptions fit;
};

struct SubsampleStepInfo {
  int iteration = 0;
  int chosen_design = -1;    // utility argmax on the grid
  int realized_design = -1;  // actually sampled (nearest with pool rows)
  double utility = 0.0;
  int64_t rows_added = 0;
  int64_t size_after = 0;
};

// Selection state: a disjoint split of the source rows into the growing
// subsample and the remaining pool, plus the per-design pool buckets and the
// RNG stream that makes every draw reproducible from the seed.
struct SubsampleState {
  std::shared_ptr<const Dataset> data;
  ModelSpec spec;
  DesignGrid grid;
  SubsampleOptions options;

  std::vector<int64_t> subsample_rows;  // in selection order
  std::vector<std::vector<int64_t>> pool_by_design;  // ascending row ids
  int64_t pool_selectable = 0;  // rows still selectable (mapped to a design)
  int64_t pool_unmapped = 0;    // rows whose covariates match no grid design
  std::mt19937_64 rng;
  int iteration = 0;
  std::vector<SubsampleStepInfo> history;
  std::optional<GlmmFit> last_fit;
};

// Seeded without-replacement start; same seed, same rows.
SubsampleState subsample_init(std::shared_ptr<const Dataset> data,
                              const ModelSpec& spec, const DesignGrid& grid,
                              const SubsampleOptions& options);

// One selection round: refit the model on the current subsample, score every
// grid design by utility, realize the nearest design with pool rows, and move
// the matching rows (all of them, or a seeded ceil(fraction * count) draw).
// A failed refit leaves the state untouched so the run can be resumed.
SubsampleStepInfo subsample_step(SubsampleState& state);

struct SubsampleResult {
  SubsampleState state;
  GlmmFit fit;  // refitted on the final subsample
};

SubsampleResult subsample_run(std::shared_ptr<const Dataset> data,
                              const ModelSpec& spec, const DesignGrid& grid,
                              const SubsampleOptions& options);

// The dataset view of the current subsample (rows in selection order).
Dataset subsample_dataset(const SubsampleState& state);

void write_history_csv(const std::vector<SubsampleStepInfo>& history,
                       const DesignGrid& grid, const std::string& path);

}  // namespace tallfit
