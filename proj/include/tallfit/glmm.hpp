#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tallfit/glm.hpp"
#include "tallfit/model.hpp"

namespace tallfit {

// Marginal log-likelihood of a random-intercept model, integrated cluster by
// cluster with adaptive Gauss-Hermite quadrature centered at the posterior
// mode (one node = Laplace). Parameters are packed (beta, log tau2[, log
// theta]); the gradient is exact, with the mode's and scale's dependence on
// the parameters handled through implicit differentiation.
class GlmmObjective {
 public:
  GlmmObjective(const Family& family, const ModelFrame& frame, int quad_points,
                bool estimate_theta);
  ~GlmmObjective();
  GlmmObjective(const GlmmObjective&) = delete;
  GlmmObjective& operator=(const GlmmObjective&) = delete;

  int n_params() const;
  int n_coefs() const;
  std::vector<std::string> param_names() const;
  // Value, and the gradient when grad != nullptr.
  double eval(const Eigen::VectorXd& psi, Eigen::VectorXd* grad) const;
  // Per-cluster posterior modes at the last evaluated parameters.
  Eigen::VectorXd eb_modes() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// tau2 = 0 degenerates to the fixed-effects likelihood and is computed by
// that exact path rather than by quadrature.
double glmm_marginal_loglik(const Family& family, const ModelFrame& frame,
                            const Eigen::VectorXd& beta, double tau2,
                            int quad_points = 15);

struct GlmmOptions {
  int quad_points = 15;
  double grad_tol = 1e-6;   // convergence on max |gradient|
  int max_iter = 300;
  bool estimate_theta = true;  // negative binomial only
  double tau2_init = 0.1;
  std::optional<Eigen::VectorXd> beta_init;  // warm start; skips the GLM pass
  double theta_init = 0.0;                   // <= 0: profile from the GLM
  bool compute_vcov = true;
};

struct GlmmFit {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;  // fixed effects block
  double tau2 = 0.0;
  double theta = std::numeric_limits<double>::quiet_NaN();
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  int quad_points = 0;
  double grad_max = 0.0;
  Eigen::VectorXd eb_modes;
  std::vector<std::string> coef_names;
  double runtime_seconds = 0.0;
  std::string message;
};

// log tau2 below this is reported as tau2 = 0 and dropped from the
// covariance computation (a variance on the boundary has no curvature).
inline constexpr double kLogTau2Floor = -30.0;

// log tau2 above this is unidentifiable from any real dataset; the objective
// returns -infinity there so optimizer probes bounce back to the interior
// instead of degenerating (a cluster with constant outcomes loses its
// posterior mode once exp(-gamma) underflows).
inline constexpr double kLogTau2Ceiling = 40.0;

GlmmFit glmm_fit(const Family& family, const ModelFrame& frame,
                 const GlmmOptions& options = {});

// Conditional means mu_ij at the posterior modes.
Eigen::VectorXd glmm_fitted_values(const Family& family,
                                   const ModelFrame& frame,
                                   const Eigen::VectorXd& beta,
                                   const Eigen::VectorXd& eb_modes);

}  // namespace tallfit
