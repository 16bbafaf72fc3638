#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tallfit/glm.hpp"

namespace tallfit {

enum class ClusterFitStatus { Ok, NoOutcomeVariation, RankDeficient, NotConverged };

const char* cluster_fit_status_name(ClusterFitStatus s);

// Stage one: an independent fixed-effects fit inside one cluster.
struct ClusterEstimate {
  std::string label;
  int64_t n_rows = 0;
  ClusterFitStatus status = ClusterFitStatus::Ok;
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;
  double theta = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::string> coef_names;
};

struct ClusterFitOptions {
  GlmOptions glm;
  bool estimate_theta = false;
  bool center = false;  // center design columns at their full-data means
};

std::vector<ClusterEstimate> fit_per_cluster(const ModelSpec& spec,
                                             const Dataset& data,
                                             const ClusterFitOptions& options = {});

enum class Tau2Method { Reml, MethodOfMoments };

struct MetaResult {
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  Eigen::MatrixXd vcov;
  double tau2 = std::numeric_limits<double>::quiet_NaN();  // intercept heterogeneity
  Eigen::VectorXd tau2_per_coef;  // univariate pooling only
  int clusters_used = 0;
  std::vector<std::pair<std::string, std::string>> exclusions;  // label, reason
  std::vector<std::string> coef_names;
  double theta = std::numeric_limits<double>::quiet_NaN();  // pooled dispersion
};

// Coefficient-at-a-time pooling: each coefficient gets its own additive
// heterogeneity variance (REML with the pooled-weight adjustment term, or
// the classic moment estimator), then inverse-variance weights.
MetaResult pool_univariate(const std::vector<ClusterEstimate>& estimates,
                           Tau2Method method);

// Joint pooling under beta_j ~ MVN(beta, S_j + Sigma) with Sigma restricted
// to heterogeneity in the intercept only. sigma00 by REML or by the moment
// identity E[Q] = (J-1) I + (A - sum W A^-1 W) Sigma; sigma00 = 0 gives the
// fixed-effect GLS pool.
enum class MvHetero { None, InterceptReml, InterceptMoments };
MetaResult pool_multivariate(const std::vector<ClusterEstimate>& estimates,
                             MvHetero hetero);

// Cluster-size weighted average of the per-cluster dispersion estimates.
double pooled_dispersion(const std::vector<ClusterEstimate>& estimates);

void write_cluster_estimates_csv(const std::vector<ClusterEstimate>& estimates,
                                 const std::string& path);
std::vector<ClusterEstimate> read_cluster_estimates_csv(const std::string& path);

}  // namespace tallfit
