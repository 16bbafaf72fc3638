#include "tallfit/optim.hpp"

#include <cmath>
#include <limits>

#include "tallfit/common.hpp"

namespace tallfit {

namespace {

struct LinePoint {
  double alpha;
  double f;   // minimization objective value
  double df;  // directional derivative
};

// Strong Wolfe line search on phi(a) = -f(x + a p). Returns the accepted
// step, or alpha <= 0 on failure. c1/c2 as usual for quasi-Newton.
double wolfe_search(const ObjectiveFn& fg, const Eigen::VectorXd& x,
                    const Eigen::VectorXd& p, double f0, double df0,
                    Eigen::VectorXd* x_out, double* f_out,
                    Eigen::VectorXd* g_out, int* evals) {
  const double c1 = 1e-4, c2 = 0.9;
  const int max_evals = 40;
  Eigen::VectorXd g(x.size());

  auto phi = [&](double a) -> LinePoint {
    *x_out = x + a * p;
    double f = -fg(*x_out, &g);
    ++*evals;
    return {a, f, -g.dot(p)};
  };

  auto zoom = [&](LinePoint lo, LinePoint hi) -> double {
    for (int i = 0; i < max_evals; ++i) {
      // Bisection with a cubic-ish bias toward the lower end.
      double a = 0.5 * (lo.alpha + hi.alpha);
      LinePoint t = phi(a);
      if (t.f > f0 + c1 * a * df0 || t.f >= lo.f) {
        hi = t;
      } else {
        if (std::abs(t.df) <= -c2 * df0) {
          *f_out = -t.f;
          *g_out = g;
          return a;
        }
        if (t.df * (hi.alpha - lo.alpha) >= 0) hi = lo;
        lo = t;
      }
      if (std::abs(hi.alpha - lo.alpha) < 1e-14) break;
    }
    // Fall back to the best end of the bracket if it still improves.
    if (lo.f < f0) {
      LinePoint t = phi(lo.alpha);
      *f_out = -t.f;
      *g_out = g;
      return lo.alpha;
    }
    return -1.0;
  };

  LinePoint prev{0.0, f0, df0};
  double a = 1.0;
  for (int i = 0; i < max_evals; ++i) {
    LinePoint t = phi(a);
    if (t.f > f0 + c1 * a * df0 || (i > 0 && t.f >= prev.f))
      return zoom(prev, t);
    if (std::abs(t.df) <= -c2 * df0) {
      *f_out = -t.f;
      *g_out = g;
      return a;
    }
    if (t.df >= 0) return zoom(t, prev);
    prev = t;
    a *= 2.0;
    if (a > 1e8) break;
  }
  return -1.0;
}

}  // namespace

BfgsResult bfgs_maximize(const ObjectiveFn& fg, const Eigen::VectorXd& x0,
                         const BfgsOptions& opts) {
  const int n = static_cast<int>(x0.size());
  BfgsResult res;
  res.x = x0;
  res.grad.resize(n);

  Eigen::VectorXd g(n);
  double f = fg(res.x, &g);
  ++res.evals;
  if (!std::isfinite(f))
    throw NumericError("bfgs_maximize: objective not finite at the start");

  Eigen::MatrixXd Hinv = Eigen::MatrixXd::Identity(n, n);
  bool reset_once = false;

  for (int iter = 0; iter < opts.max_iter; ++iter) {
    res.iterations = iter;
    if (g.cwiseAbs().maxCoeff() < opts.grad_tol) {
      res.converged = true;
      break;
    }
    // Minimization direction for -f is -Hinv * (-g) = Hinv * g on f's scale.
    Eigen::VectorXd p = Hinv * g;
    double df0 = -g.dot(p);  // derivative of -f along p
    if (df0 >= 0) {          // not a descent direction; reset curvature
      Hinv.setIdentity();
      p = g;
      df0 = -g.dot(p);
      if (df0 >= 0) break;  // gradient numerically zero
    }

    Eigen::VectorXd x_new(n), g_new(n);
    double f_new = 0.0;
    double alpha =
        wolfe_search(fg, res.x, p, -f, df0, &x_new, &f_new, &g_new, &res.evals);
    if (alpha <= 0.0) {
      if (!reset_once) {
        reset_once = true;
        Hinv.setIdentity();
        continue;
      }
      break;  // line search stuck twice: report best point, unconverged
    }

    Eigen::VectorXd s = x_new - res.x;
    Eigen::VectorXd y = g - g_new;  // gradient change of -f
    res.x = x_new;
    if (std::abs(f_new - f) < opts.step_tol * (std::abs(f) + 1.0) &&
        s.cwiseAbs().maxCoeff() < opts.step_tol) {
      f = f_new;
      g = g_new;
      res.converged = g.cwiseAbs().maxCoeff() < opts.grad_tol;
      break;
    }
    f = f_new;
    g = g_new;

    double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      Eigen::VectorXd Hy = Hinv * y;
      double yHy = y.dot(Hy);
      // BFGS inverse update (Sherman-Morrison form).
      Hinv += ((sy + yHy) / (sy * sy)) * (s * s.transpose()) -
              (Hy * s.transpose() + s * Hy.transpose()) / sy;
    }
  }
  res.f = f;
  res.grad = g;
  if (!res.converged && g.cwiseAbs().maxCoeff() < opts.grad_tol)
    res.converged = true;
  return res;
}

}  // namespace tallfit
