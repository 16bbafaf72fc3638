#include "tallfit/glm.hpp"

#include <algorithm>
#include <cmath>

#include "tallfit/numeric.hpp"

namespace tallfit {

double glm_loglik(const Family& family, const ModelFrame& frame,
                  const Eigen::VectorXd& beta) {
  if (beta.size() != frame.X.cols())
    throw UsageError("glm_loglik: beta has wrong length");
  Eigen::VectorXd eta = frame.X * beta + frame.offset;
  NeumaierSum acc;
  const int64_t n = frame.X.rows();
  for (int64_t i = 0; i < n; ++i)
    acc.add(frame.w(i) * fam::logpdf(family, frame.y(i), eta(i)));
  return acc.value();
}

Eigen::VectorXd glm_score(const Family& family, const ModelFrame& frame,
                          const Eigen::VectorXd& beta) {
  if (beta.size() != frame.X.cols())
    throw UsageError("glm_score: beta has wrong length");
  Eigen::VectorXd eta = frame.X * beta + frame.offset;
  const int64_t n = frame.X.rows();
  Eigen::VectorXd wd1(n);
  for (int64_t i = 0; i < n; ++i) {
    auto d = fam::eta_derivs(family, frame.y(i), eta(i));
    wd1(i) = frame.w(i) * d.d1;
  }
  return frame.X.transpose() * wd1;
}

Eigen::MatrixXd glm_information(const Family& family, const ModelFrame& frame,
                                const Eigen::VectorXd& beta) {
  if (beta.size() != frame.X.cols())
    throw UsageError("glm_information: beta has wrong length");
  Eigen::VectorXd eta = frame.X * beta + frame.offset;
  const int64_t n = frame.X.rows();
  Eigen::VectorXd wv(n);
  for (int64_t i = 0; i < n; ++i)
    wv(i) = frame.w(i) * fam::info_weight(family, eta(i));
  return frame.X.transpose() * wv.asDiagonal() * frame.X;
}

Eigen::MatrixXd unit_information(const ModelSpec& spec,
                                 const Eigen::VectorXd& beta,
                                 const DesignGrid& grid, const Design& d) {
  Eigen::RowVectorXd x = design_row(spec, grid, d);
  if (x.size() != beta.size())
    throw UsageError("unit_information: design row and beta disagree");
  double eta = x * beta;
  double v = fam::info_weight(spec.family, eta);
  return v * (x.transpose() * x);
}

namespace {

void check_rank_or_throw(const ModelFrame& frame) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(frame.X);
  const int p = static_cast<int>(frame.X.cols());
  if (qr.rank() == p) return;
  // The trailing permuted columns are the ones rejected by the pivoting.
  std::string cols;
  const auto& perm = qr.colsPermutation().indices();
  for (int k = qr.rank(); k < p; ++k) {
    if (!cols.empty()) cols += ", ";
    cols += frame.names[perm(k)];
  }
  throw RankError("design matrix is rank deficient; collinear columns: " + cols);
}

Eigen::VectorXd initial_beta(const Family& family, const ModelFrame& frame) {
  const int p = static_cast<int>(frame.X.cols());
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(p);
  auto it = std::find(frame.names.begin(), frame.names.end(), "intercept");
  if (it == frame.names.end()) return beta;
  int idx = static_cast<int>(it - frame.names.begin());
  double W = frame.w.sum();
  switch (family.type) {
    case Family::Type::Bernoulli: {
      double p1 = frame.y.dot(frame.w) / W;
      p1 = std::clamp(p1, 1e-6, 1.0 - 1e-6);
      beta(idx) = std::log(p1 / (1.0 - p1));
      break;
    }
    case Family::Type::Poisson:
    case Family::Type::NegBinomial: {
      double se = frame.w.dot(frame.offset.array().exp().matrix());
      double rate = frame.y.dot(frame.w) / se;
      beta(idx) = std::log(std::max(rate, 1e-10));
      break;
    }
    case Family::Type::Gaussian:
      beta(idx) = frame.y.dot(frame.w) / W;
      break;
  }
  return beta;
}

struct IrlsOutcome {
  Eigen::VectorXd beta;
  double loglik = 0.0;
  bool converged = false;
  int iterations = 0;
  std::string message;
};

IrlsOutcome irls(const Family& family, const ModelFrame& frame,
                 Eigen::VectorXd beta, const GlmOptions& options) {
  IrlsOutcome out;
  double ll = glm_loglik(family, frame, beta);
  for (int iter = 1; iter <= options.max_iter; ++iter) {
    out.iterations = iter;
    Eigen::VectorXd score = glm_score(family, frame, beta);
    double score_max = score.cwiseAbs().maxCoeff();
    if (score_max < options.score_tol) {
      out.converged = true;
      break;
    }
    if (beta.cwiseAbs().maxCoeff() > options.separation_bound) {
      out.message = "possible separation: coefficients diverging with "
                    "non-vanishing score";
      break;
    }
    Eigen::MatrixXd info = glm_information(family, frame, beta);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
    Eigen::VectorXd delta = ldlt.solve(score);
    if (!delta.allFinite())
      throw NumericError("glm_fit: information matrix is numerically singular");
    double step = 1.0;
    bool improved = false;
    for (int h = 0; h < 40; ++h) {
      Eigen::VectorXd cand = beta + step * delta;
      double ll_new = glm_loglik(family, frame, cand);
      // Near the optimum the likelihood change can sink below the noise of
      // its own evaluation (large-theta negative binomial: lgamma
      // cancellation); a shrinking score still identifies progress there.
      bool ok = std::isfinite(ll_new) &&
                (ll_new >= ll - 1e-12 * (std::abs(ll) + 1.0) ||
                 glm_score(family, frame, cand).cwiseAbs().maxCoeff() <
                     score_max);
      if (ok) {
        beta = cand;
        ll = ll_new;
        improved = true;
        break;
      }
      step *= 0.5;
    }
    if (!improved) {
      out.message = "step halving failed to improve the log-likelihood";
      break;
    }
  }
  out.beta = beta;
  out.loglik = ll;
  if (!out.converged && out.message.empty())
    out.message = "iteration limit reached";
  return out;
}

// Profile update for the negative binomial dispersion on the log scale:
// safeguarded Newton on kappa, falling back to a bounded search.
double update_theta(Family family, const ModelFrame& frame,
                    const Eigen::VectorXd& beta) {
  Eigen::VectorXd eta = frame.X * beta + frame.offset;
  const int64_t n = frame.X.rows();
  const double kap_lo = std::log(1e-8), kap_hi = std::log(1e8);

  auto deriv = [&](double kappa) {
    Family f = family;
    f.theta = std::exp(kappa);
    double g = 0.0, h = 0.0;
    for (int64_t i = 0; i < n; ++i) {
      double l1 = fam::dll_dtheta(f, frame.y(i), eta(i));
      double l2 = fam::d2ll_dtheta2(f, frame.y(i), eta(i));
      g += frame.w(i) * f.theta * l1;
      h += frame.w(i) * (f.theta * l1 + f.theta * f.theta * l2);
    }
    return std::pair<double, double>(g, h);
  };

  double kappa = std::clamp(std::log(family.theta), kap_lo, kap_hi);
  for (int iter = 0; iter < 50; ++iter) {
    auto [g, h] = deriv(kappa);
    if (std::abs(g) < 1e-10 * (frame.sum_weights + 1.0)) return std::exp(kappa);
    double step = (h < 0.0) ? -g / h : (g > 0 ? 1.0 : -1.0);
    step = std::clamp(step, -2.0, 2.0);
    double next = std::clamp(kappa + step, kap_lo, kap_hi);
    if (std::abs(next - kappa) < 1e-12) return std::exp(next);
    kappa = next;
  }
  // Newton did not settle; fall back to a scan around the last iterate.
  auto profile = [&](double k) {
    Family f = family;
    f.theta = std::exp(k);
    NeumaierSum acc;
    for (int64_t i = 0; i < n; ++i)
      acc.add(frame.w(i) * fam::logpdf(f, frame.y(i), eta(i)));
    return acc.value();
  };
  auto best = brent_maximize(profile, std::max(kap_lo, kappa - 4.0),
                             std::min(kap_hi, kappa + 4.0), 1e-10);
  return std::exp(best.x);
}

}  // namespace

GlmFit glm_fit(const Family& family, const ModelFrame& frame,
               const GlmOptions& options) {
  StopWatch timer;
  if (options.estimate_theta && family.type != Family::Type::NegBinomial)
    throw UsageError("estimate_theta only applies to the negative binomial family");
  check_rank_or_throw(frame);

  GlmFit fit;
  fit.coef_names = frame.names;
  Family fam_cur = family;
  Eigen::VectorXd beta = initial_beta(fam_cur, frame);

  if (!options.estimate_theta) {
    IrlsOutcome out = irls(fam_cur, frame, beta, options);
    fit.beta = out.beta;
    fit.loglik = out.loglik;
    fit.converged = out.converged;
    fit.iterations = out.iterations;
    fit.message = out.message;
  } else {
    int total_iter = 0;
    bool converged = false;
    std::string message;
    double kappa_prev = std::log(fam_cur.theta);
    Eigen::VectorXd beta_prev = beta;
    for (int round = 0; round < 50; ++round) {
      IrlsOutcome out = irls(fam_cur, frame, beta, options);
      total_iter += out.iterations;
      beta = out.beta;
      message = out.message;
      double theta_new = update_theta(fam_cur, frame, beta);
      double kappa_new = std::log(theta_new);
      double dbeta = round == 0 ? 1.0 : (beta - beta_prev).cwiseAbs().maxCoeff();
      double dkap = std::abs(kappa_new - kappa_prev);
      fam_cur.theta = theta_new;
      kappa_prev = kappa_new;
      beta_prev = beta;
      if (out.converged && dbeta < 1e-8 && dkap < 1e-8) {
        converged = true;
        break;
      }
      if (!out.converged && !out.message.empty() &&
          out.message.find("separation") != std::string::npos)
        break;  // no point alternating further
    }
    // One last beta pass at the settled theta.
    IrlsOutcome out = irls(fam_cur, frame, beta, options);
    total_iter += out.iterations;
    fit.beta = out.beta;
    fit.loglik = out.loglik;
    fit.converged = converged && out.converged;
    fit.iterations = total_iter;
    fit.message = fit.converged ? "" : (message.empty() ? out.message : message);
  }

  fit.theta = fam_cur.has_theta() ? fam_cur.theta
                                  : std::numeric_limits<double>::quiet_NaN();
  Eigen::MatrixXd info = glm_information(fam_cur, frame, fit.beta);
  Eigen::LDLT<Eigen::MatrixXd> ldlt(info);
  fit.vcov = ldlt.solve(
      Eigen::MatrixXd::Identity(frame.X.cols(), frame.X.cols()));
  if (!fit.vcov.allFinite())
    throw NumericError("glm_fit: could not invert the information matrix");
  fit.runtime_seconds = timer.seconds();
  return fit;
}

}  // namespace tallfit
