#include "tallfit/numeric.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace tallfit {

double digamma(double x) {
  if (!(x > 0.0)) throw UsageError("digamma: argument must be positive");
  double acc = 0.0;
  // Shift into x >= 8 where the Bernoulli expansion converges fast.
  while (x < 8.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  // psi(x) ~ ln x - 1/(2x) - sum B_{2n}/(2n x^{2n})
  double series = inv2 * (1.0 / 12.0 +
                  inv2 * (-1.0 / 120.0 +
                  inv2 * (1.0 / 252.0 +
                  inv2 * (-1.0 / 240.0 +
                  inv2 * (1.0 / 132.0 +
                  inv2 * (-691.0 / 32760.0 +
                  inv2 * (1.0 / 12.0)))))));
  return acc + std::log(x) - 0.5 * inv - series;
}

double trigamma(double x) {
  if (!(x > 0.0)) throw UsageError("trigamma: argument must be positive");
  double acc = 0.0;
  while (x < 8.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x, inv2 = inv * inv;
  // psi'(x) ~ 1/x + 1/(2x^2) + sum B_{2n}/x^{2n+1}
  double series = 1.0 / 6.0 +
                  inv2 * (-1.0 / 30.0 +
                  inv2 * (1.0 / 42.0 +
                  inv2 * (-1.0 / 30.0 +
                  inv2 * (5.0 / 66.0 +
                  inv2 * (-691.0 / 2730.0 +
                  inv2 * (7.0 / 6.0))))));
  return acc + inv + 0.5 * inv2 + inv * inv2 * series;
}

// The direct differences are exact enough below the switch point; above it
// the expansions' truncation error (next omitted term ~ y/x^3 and smaller)
// sits far below the cancellation error of subtracting two huge values.
namespace {
constexpr double kDiffSwitch = 1e6;
}

double lgamma_diff(double x, double y) {
  if (!(x > 0.0) || !(y >= 0.0)) throw UsageError("lgamma_diff: x > 0, y >= 0");
  if (y == 0.0) return 0.0;
  if (x <= kDiffSwitch) return std::lgamma(x + y) - std::lgamma(x);
  // lgamma(z) ~ (z - 1/2) log z - z + log(2 pi)/2 + 1/(12 z)
  return (x - 0.5) * std::log1p(y / x) + y * std::log(x + y) - y -
         y / (12.0 * x * (x + y));
}

double digamma_diff(double x, double y) {
  if (!(x > 0.0) || !(y >= 0.0)) throw UsageError("digamma_diff: x > 0, y >= 0");
  if (y == 0.0) return 0.0;
  if (x <= kDiffSwitch) return digamma(x + y) - digamma(x);
  // psi(z) ~ log z - 1/(2z) - 1/(12 z^2)
  const double b = x + y;
  return std::log1p(y / x) + 0.5 * y / (x * b) +
         y * (x + b) / (12.0 * x * x * b * b);
}

double trigamma_diff(double x, double y) {
  if (!(x > 0.0) || !(y >= 0.0)) throw UsageError("trigamma_diff: x > 0, y >= 0");
  if (y == 0.0) return 0.0;
  if (x <= kDiffSwitch) return trigamma(x + y) - trigamma(x);
  // psi'(z) ~ 1/z + 1/(2 z^2) + 1/(6 z^3)
  const double b = x + y;
  return (1.0 / b - 1.0 / x) + 0.5 * (1.0 / (b * b) - 1.0 / (x * x)) +
         (1.0 / (b * b * b) - 1.0 / (x * x * x)) / 6.0;
}

GaussHermite gauss_hermite(int n) {
  if (n < 1) throw UsageError("gauss_hermite: need at least one node");
  GaussHermite out;
  if (n == 1) {
    out.nodes = {0.0};
    out.weights = {std::sqrt(M_PI)};
    return out;
  }
  // Jacobi matrix of the (physicists') Hermite three-term recurrence:
  // zero diagonal, off-diagonal sqrt(k/2).
  Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(n, n);
  for (int k = 1; k < n; ++k) {
    double b = std::sqrt(k / 2.0);
    jac(k, k - 1) = b;
    jac(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(jac);
  if (es.info() != Eigen::Success)
    throw NumericError("gauss_hermite: eigen decomposition failed");
  const double mu0 = std::sqrt(M_PI);  // integral of exp(-t^2)
  out.nodes.resize(n);
  out.weights.resize(n);
  for (int k = 0; k < n; ++k) {
    out.nodes[k] = es.eigenvalues()(k);
    double v0 = es.eigenvectors()(0, k);
    out.weights[k] = mu0 * v0 * v0;
  }
  // Symmetrize: pair (i, n-1-i) so nodes are exact negatives and weights
  // exact mirrors regardless of eigen-solver rounding.
  for (int i = 0, j = n - 1; i < j; ++i, --j) {
    double t = 0.5 * (out.nodes[j] - out.nodes[i]);
    out.nodes[i] = -t;
    out.nodes[j] = t;
    double w = 0.5 * (out.weights[i] + out.weights[j]);
    out.weights[i] = w;
    out.weights[j] = w;
  }
  if (n % 2 == 1) out.nodes[n / 2] = 0.0;
  return out;
}

double log_sum_exp(const std::vector<double>& v) {
  if (v.empty()) throw UsageError("log_sum_exp: empty input");
  double m = *std::max_element(v.begin(), v.end());
  if (!std::isfinite(m)) return m;  // all -inf (or a NaN/ +inf poisons it)
  NeumaierSum s;
  for (double x : v) s.add(std::exp(x - m));
  return m + std::log(s.value());
}

BrentResult brent_maximize(const std::function<double(double)>& f, double a,
                           double b, double tol, int max_iter) {
  if (!(a < b)) throw UsageError("brent_maximize: need a < b");
  const double gold = 0.3819660112501051;  // 2 - phi
  const double eps = 1e-12;
  BrentResult res;
  auto eval = [&](double t) {
    ++res.evals;
    return -f(t);  // minimize the negation
  };
  double x, w, v, fx, fw, fv;
  x = w = v = a + gold * (b - a);
  fx = fw = fv = eval(x);
  double d = 0.0, e = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    double xm = 0.5 * (a + b);
    double tol1 = tol * std::abs(x) + eps;
    double tol2 = 2.0 * tol1;
    if (std::abs(x - xm) <= tol2 - 0.5 * (b - a)) break;
    bool golden = true;
    if (std::abs(e) > tol1) {
      // Parabola through x, v, w.
      double r = (x - w) * (fx - fv);
      double q = (x - v) * (fx - fw);
      double p = (x - v) * q - (x - w) * r;
      q = 2.0 * (q - r);
      if (q > 0.0) p = -p;
      q = std::abs(q);
      double etmp = e;
      e = d;
      if (std::abs(p) < std::abs(0.5 * q * etmp) && p > q * (a - x) &&
          p < q * (b - x)) {
        d = p / q;
        double u = x + d;
        if (u - a < tol2 || b - u < tol2) d = (xm >= x) ? tol1 : -tol1;
        golden = false;
      }
    }
    if (golden) {
      e = (x >= xm) ? a - x : b - x;
      d = gold * e;
    }
    double u = (std::abs(d) >= tol1) ? x + d : x + ((d >= 0) ? tol1 : -tol1);
    double fu = eval(u);
    if (fu <= fx) {
      if (u >= x) a = x; else b = x;
      v = w; fv = fw;
      w = x; fw = fx;
      x = u; fx = fu;
    } else {
      if (u < x) a = u; else b = u;
      if (fu <= fw || w == x) {
        v = w; fv = fw;
        w = u; fw = fu;
      } else if (fu <= fv || v == x || v == w) {
        v = u; fv = fu;
      }
    }
  }
  res.x = x;
  res.f = -fx;
  return res;
}

}  // namespace tallfit
