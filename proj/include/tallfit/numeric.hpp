#pragma once

#include <functional>
#include <vector>

#include "tallfit/common.hpp"

namespace tallfit {

// psi(x) and psi'(x) for x > 0, via upward recurrence into the asymptotic
// regime. Accurate to ~1e-14 relative; unit tests check them against finite
// differences of lgamma and against closed-form values at 1 and 1/2.
double digamma(double x);
double trigamma(double x);

// lgamma(x + y) - lgamma(x), psi(x + y) - psi(x), psi'(x + y) - psi'(x) for
// x > 0, y >= 0. Direct subtraction loses all precision once x dwarfs y
// (the differences shrink toward 0 while the terms grow), so the large-x
// side switches to the asymptotic expansions of the differences.
double lgamma_diff(double x, double y);
double digamma_diff(double x, double y);
double trigamma_diff(double x, double y);

struct GaussHermite {
  std::vector<double> nodes;    // ascending
  std::vector<double> weights;  // sum = sqrt(pi)
};

// Physicists' Gauss-Hermite rule (weight exp(-t^2)) from the Golub-Welsch
// eigenproblem of the Hermite recurrence.
GaussHermite gauss_hermite(int n);

// log(sum_i exp(v_i)) with the max factored out; compensated inner sum.
double log_sum_exp(const std::vector<double>& v);

struct BrentResult {
  double x = 0.0;
  double f = 0.0;
  int evals = 0;
};

// Maximize a unimodal-ish f on [a, b] (Brent: golden section + parabolic
// interpolation). tol is an absolute tolerance on x.
BrentResult brent_maximize(const std::function<double(double)>& f, double a,
                           double b, double tol, int max_iter = 200);

}  // namespace tallfit
