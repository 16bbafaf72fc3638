#pragma once

#include <cmath>

#include "tallfit/common.hpp"
#include "tallfit/numeric.hpp"

namespace tallfit {

// Outcome distribution with its conventional link: bernoulli/logit,
// poisson/log, negative binomial/log, gaussian/identity. The negative
// binomial dispersion theta and the (known) gaussian residual variance ride
// along here.
struct Family {
  enum class Type { Bernoulli, Poisson, NegBinomial, Gaussian };
  Type type = Type::Bernoulli;
  double theta = 1.0;
  double sigma2 = 1.0;

  static Family bernoulli() { return {Type::Bernoulli, 1.0, 1.0}; }
  static Family poisson() { return {Type::Poisson, 1.0, 1.0}; }
  static Family neg_binomial(double theta) {
    if (!(theta > 0.0)) throw UsageError("negative binomial theta must be positive");
    return {Type::NegBinomial, theta, 1.0};
  }
  static Family gaussian(double sigma2) {
    if (!(sigma2 > 0.0)) throw UsageError("gaussian sigma2 must be positive");
    return {Type::Gaussian, 1.0, sigma2};
  }

  bool log_link() const {
    return type == Type::Poisson || type == Type::NegBinomial;
  }
  bool has_theta() const { return type == Type::NegBinomial; }
  const char* name() const {
    switch (type) {
      case Type::Bernoulli: return "bernoulli";
      case Type::Poisson: return "poisson";
      case Type::NegBinomial: return "negative_binomial";
      case Type::Gaussian: return "gaussian";
    }
    return "?";
  }
  const char* link_name() const {
    switch (type) {
      case Type::Bernoulli: return "logit";
      case Type::Gaussian: return "identity";
      default: return "log";
    }
  }
};

namespace fam {

inline double sigmoid(double eta) {
  if (eta >= 0.0) return 1.0 / (1.0 + std::exp(-eta));
  double e = std::exp(eta);
  return e / (1.0 + e);
}

inline double log1pexp(double eta) {
  return eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

// log(theta + exp(eta)) without overflowing for large eta.
inline double log_theta_plus_mu(double theta, double eta) {
  return eta > 0.0 ? eta + std::log1p(theta * std::exp(-eta))
                   : std::log(theta + std::exp(eta));
}

inline double mean_value(const Family& f, double eta) {
  switch (f.type) {
    case Family::Type::Bernoulli: return sigmoid(eta);
    case Family::Type::Gaussian: return eta;
    default: return std::exp(eta);
  }
}

inline double logpdf(const Family& f, double y, double eta) {
  switch (f.type) {
    case Family::Type::Bernoulli:
      return y * eta - log1pexp(eta);
    case Family::Type::Poisson:
      return y * eta - std::exp(eta) - std::lgamma(y + 1.0);
    case Family::Type::NegBinomial: {
      // Grouped so huge theta degrades smoothly into the poisson limit:
      // th log th - (th + y) log(th + mu) is a difference of ~th log th
      // sized terms whose true value is only O(mu + y).
      const double th = f.theta;
      return lgamma_diff(th, y) - std::lgamma(y + 1.0) -
             th * log1pexp(eta - std::log(th)) +
             y * (eta - log_theta_plus_mu(th, eta));
    }
    case Family::Type::Gaussian: {
      double r = y - eta;
      return -0.5 * std::log(2.0 * M_PI * f.sigma2) - 0.5 * r * r / f.sigma2;
    }
  }
  return 0.0;
}

// First three derivatives of logpdf in eta. The negative binomial pieces are
// arranged around s = mu/(theta+mu) and r = 1/(theta+mu) so extreme linear
// predictors degrade to the correct limits instead of NaN.
struct EtaDerivs {
  double ll, d1, d2, d3;
};

inline EtaDerivs eta_derivs(const Family& f, double y, double eta) {
  EtaDerivs out;
  out.ll = logpdf(f, y, eta);
  switch (f.type) {
    case Family::Type::Bernoulli: {
      double mu = sigmoid(eta);
      double v = mu * (1.0 - mu);
      out.d1 = y - mu;
      out.d2 = -v;
      out.d3 = -v * (1.0 - 2.0 * mu);
      break;
    }
    case Family::Type::Poisson: {
      double mu = std::exp(eta);
      out.d1 = y - mu;
      out.d2 = -mu;
      out.d3 = -mu;
      break;
    }
    case Family::Type::NegBinomial: {
      const double th = f.theta;
      double mu = std::exp(eta);
      double r = 1.0 / (th + mu);           // 0 when mu overflows
      double s = 1.0 / (1.0 + th * std::exp(-eta));
      out.d1 = th * (y * r - s);
      out.d2 = -th * (th + y) * s * r;
      out.d3 = out.d2 * (2.0 * th * r - 1.0);
      break;
    }
    case Family::Type::Gaussian: {
      double is2 = 1.0 / f.sigma2;
      out.d1 = (y - eta) * is2;
      out.d2 = -is2;
      out.d3 = 0.0;
      break;
    }
  }
  return out;
}

// Expected-information weight (dmu/deta)^2 / Var(y), i.e. -E[d2].
inline double info_weight(const Family& f, double eta) {
  switch (f.type) {
    case Family::Type::Bernoulli: {
      double mu = sigmoid(eta);
      return mu * (1.0 - mu);
    }
    case Family::Type::Poisson:
      return std::exp(eta);
    case Family::Type::NegBinomial:
      return f.theta / (1.0 + f.theta * std::exp(-eta));
    case Family::Type::Gaussian:
      return 1.0 / f.sigma2;
  }
  return 0.0;
}

// Negative binomial derivatives in kappa = log(theta):
//   e0 = d logpdf / d kappa
//   e1 = d d1 / d kappa
//   e2 = d d2 / d kappa
struct ThetaDerivs {
  double e0, e1, e2;
};

inline ThetaDerivs theta_derivs(const Family& f, double y, double eta) {
  const double th = f.theta;
  const double mu = std::exp(eta);
  double r = 1.0 / (th + mu);
  double s = 1.0 / (1.0 + th * std::exp(-eta));
  ThetaDerivs out;
  // 1 - (th + y) r rewritten as (mu - y) r; with mu overflowed r is 0 and
  // the product's limit is 1.
  double mr = std::isfinite(mu) ? (mu - y) * r : 1.0;
  out.e0 = th * (digamma_diff(th, y) - log1pexp(eta - std::log(th)) + mr);
  out.e1 = th * s * (y * r - s);
  out.e2 = -th * s * r * (2.0 * th * s + y * s - y * th * r);
  return out;
}

// d logpdf / d theta and its theta-derivative (for profiling theta in the
// fixed-effects fit).
double dll_dtheta(const Family& f, double y, double eta);
double d2ll_dtheta2(const Family& f, double y, double eta);

}  // namespace fam
}  // namespace tallfit
