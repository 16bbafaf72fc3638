#pragma once

#include <Eigen/Dense>
#include <functional>

namespace tallfit {

// f(x, grad_out) -> value; grad_out is non-null and must be filled.
using ObjectiveFn =
    std::function<double(const Eigen::VectorXd&, Eigen::VectorXd*)>;

struct BfgsOptions {
  int max_iter = 300;
  double grad_tol = 1e-6;   // max-norm of the gradient at the optimum
  double step_tol = 1e-12;  // give up when the step collapses
};

struct BfgsResult {
  Eigen::VectorXd x;
  Eigen::VectorXd grad;
  double f = 0.0;
  bool converged = false;
  int iterations = 0;
  int evals = 0;
};

// Quasi-Newton maximization: inverse-Hessian BFGS updates with a strong-Wolfe
// line search. Deterministic for a given objective and start.
BfgsResult bfgs_maximize(const ObjectiveFn& fg, const Eigen::VectorXd& x0,
                         const BfgsOptions& opts = {});

}  // namespace tallfit
