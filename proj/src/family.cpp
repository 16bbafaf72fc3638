#include "tallfit/family.hpp"

#include "tallfit/numeric.hpp"

namespace tallfit::fam {

double dll_dtheta(const Family& f, double y, double eta) {
  const double th = f.theta;
  const double mu = std::exp(eta);
  double r = 1.0 / (th + mu);
  double mr = std::isfinite(mu) ? (mu - y) * r : 1.0;
  return digamma_diff(th, y) - log1pexp(eta - std::log(th)) + mr;
}

double d2ll_dtheta2(const Family& f, double y, double eta) {
  const double th = f.theta;
  double r = 1.0 / (th + std::exp(eta));
  double s = 1.0 / (1.0 + th * std::exp(-eta));
  // d/dth of [log th + 1 - log(th+mu) - (th+y) r] = 1/th - 2r + (th+y) r^2,
  // which collapses to (mu^2 + th y) r^2 / th.
  return trigamma_diff(th, y) + s * s / th + y * r * r;
}

}  // namespace tallfit::fam
