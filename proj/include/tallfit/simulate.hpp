#pragma once

#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "tallfit/dataset.hpp"
#include "tallfit/design.hpp"
#include "tallfit/model.hpp"

namespace tallfit {

// Interrupted-time-series plan: bernoulli outcome, time on a 1..19 scale,
// a binary case marker, and two intervention indicators that are step
// functions of time (int1 = 1[time >= 9], int2 = 1[time >= 16]).
struct ItsaParams {
  int64_t n_rows = 50000;
  int n_clusters = 50;
  // Order: intercept, time, case, case:time, int1, time:int1, case:int1,
  // case:time:int1, int2, time:int2, case:int2, case:time:int2.
  std::vector<double> beta;
  double tau2 = 0.05;
  double size_sigma = 1.0;  // log-normal sd of cluster-size multipliers

  static ItsaParams defaults();
};

// Consultation-counts plan: negative binomial outcome with an exposure
// offset (years observed), a standardized continuous age, gender, and three
// mutually exclusive morbidity indicators (low burden is the reference).
struct ConsultParams {
  int64_t n_rows = 100000;
  int n_clusters = 200;
  // Order: intercept, age, gender, morb_moderate, morb_high, morb_veryhigh.
  std::vector<double> beta;
  double tau2 = 0.5;
  double theta = 1.25;
  // Category probabilities low, moderate, high, very high; must sum to 1.
  std::vector<double> morbidity_probs = {0.4, 0.3, 0.2, 0.1};
  double exposure_min = 0.5;
  double exposure_max = 4.0;
  double size_sigma = 1.0;

  static ConsultParams defaults();
};

// Generating parameters plus the realized cluster intercepts, written as a
// sidecar so harnesses can compare estimates against the truth.
struct SimTruth {
  std::string plan;
  std::vector<std::string> coef_names;
  std::vector<double> beta;
  double tau2 = 0.0;
  double theta = std::numeric_limits<double>::quiet_NaN();
  uint64_t seed = 0;
  std::vector<double> b;  // dense cluster order
};

struct Simulated {
  Dataset data;
  SimTruth truth;
};

Simulated simulate_itsa_logistic(const ItsaParams& params, uint64_t seed);
Simulated simulate_negbin_consults(const ConsultParams& params, uint64_t seed);

// Cluster sizes from log-normal multipliers: every cluster gets at least one
// row, the rest split by largest remainder, so the total is exactly n_rows.
std::vector<int64_t> lognormal_cluster_sizes(int64_t n_rows, int n_clusters,
                                             double sigma,
                                             std::mt19937_64& rng);

// The model each plan generates from, in the beta order documented above.
ModelSpec itsa_model_spec();
ModelSpec consults_model_spec(double theta);

// Candidate-design grids for the subsampling methods: the full factorial
// over each plan's covariate levels (152 designs), and the factorial with
// the morbidity indicators mutually exclusive (72 designs).
DesignGrid itsa_design_grid();
DesignGrid consults_design_grid();

void write_truth_json(const SimTruth& truth, const std::string& path);

}  // namespace tallfit
