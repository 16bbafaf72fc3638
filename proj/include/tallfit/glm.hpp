#pragma once

#include <Eigen/Dense>
#include <limits>
#include <string>
#include <vector>

#include "tallfit/model.hpp"

namespace tallfit {

// Rank deficiency is its own error so callers that pool per-cluster fits can
// classify the exclusion.
struct RankError : DataError {
  explicit RankError(const std::string& m) : DataError(m) {}
};

struct GlmFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;  // inverse expected information at beta
  double loglik = 0.0;
  double theta = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int iterations = 0;
  std::vector<std::string> coef_names;
  double runtime_seconds = 0.0;
  std::string message;
};

struct GlmOptions {
  double score_tol = 1e-8;  // absolute, on max |score|
  int max_iter = 100;
  bool estimate_theta = false;  // negative binomial: profile theta
  double separation_bound = 20.0;
};

// Weighted log-likelihood, score, and expected information at beta.
double glm_loglik(const Family& family, const ModelFrame& frame,
                  const Eigen::VectorXd& beta);
Eigen::VectorXd glm_score(const Family& family, const ModelFrame& frame,
                          const Eigen::VectorXd& beta);
Eigen::MatrixXd glm_information(const Family& family, const ModelFrame& frame,
                                const Eigen::VectorXd& beta);

// Expected information of a single unit-weight observation at the given
// design (exposure 1).
Eigen::MatrixXd unit_information(const ModelSpec& spec,
                                 const Eigen::VectorXd& beta,
                                 const DesignGrid& grid, const Design& d);

// Fisher-scoring fit with step halving. Rank-deficient design matrices raise
// RankError naming the involved columns; suspected separation is reported
// through converged=false and message, not an exception.
GlmFit glm_fit(const Family& family, const ModelFrame& frame,
               const GlmOptions& options = {});

}  // namespace tallfit
