#include "tallfit/glmm.hpp"

#include <algorithm>
#include <cmath>

#include "tallfit/numeric.hpp"
#include "tallfit/optim.hpp"

namespace tallfit {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;
constexpr double kLog2Pi = 1.8378770664093453;
}  // namespace

// ---------------------------------------------------------------------------
// Objective

struct GlmmObjective::Impl {
  Family family;
  bool fit_theta = false;
  int p = 0;        // fixed-effect count
  int nq = 0;       // quadrature nodes
  int J = 0;        // clusters
  GaussHermite gh;

  // Frame contents permuted so each cluster is a contiguous block.
  Eigen::MatrixXd X;
  Eigen::VectorXd y, w, off;
  std::vector<int64_t> block_begin;  // J+1 entries
  std::vector<double> score_scale;   // per-cluster mode tolerance scale

  mutable Eigen::VectorXd bhat;     // warm-started posterior modes
  mutable Eigen::VectorXd eta0;     // X beta + offset at last eval

  // Node workspaces.
  mutable std::vector<double> node_a, node_sum_wd1, node_sum_we0, node_hb;
  mutable Eigen::MatrixXd node_sumx_wd1;  // p x nq

  double mode_scale(int j) const { return score_scale[j]; }

  // Root of S(b) = sum_i w_i d1(eta0_i + b) - b / tau2 on cluster j's block;
  // S is strictly decreasing, so Newton with a bisection fallback is safe.
  double find_mode(int j, const Family& f, double inv_tau2, double b0) const;

  double eval(const Eigen::VectorXd& psi, Eigen::VectorXd* grad) const;
};

double GlmmObjective::Impl::find_mode(int j, const Family& f, double inv_tau2,
                                      double b0) const {
  const int64_t lo = block_begin[j], hi = block_begin[j + 1];
  const double tol = 1e-10 * mode_scale(j);

  auto S = [&](double b, double* slope) {
    double s = 0.0, sp = 0.0;
    for (int64_t i = lo; i < hi; ++i) {
      auto d = fam::eta_derivs(f, y(i), eta0(i) + b);
      s += w(i) * d.d1;
      if (slope) sp += w(i) * d.d2;
    }
    if (slope) *slope = sp - inv_tau2;
    return s - b * inv_tau2;
  };

  double b = b0;
  for (int iter = 0; iter < 100; ++iter) {
    double slope;
    double s = S(b, &slope);
    if (std::isfinite(s) && std::abs(s) < tol) return b;
    double step = -s / slope;
    if (!std::isfinite(step)) break;
    step = std::clamp(step, -5.0, 5.0);
    b += step;
    if (std::abs(step) < 1e-13 * (1.0 + std::abs(b))) {
      if (std::abs(S(b, nullptr)) < tol) return b;
      break;
    }
  }
  // Bisection: S(-R) > 0 > S(R) once R is large enough.
  double R = 8.0, blo, bhi;
  for (;;) {
    blo = -R;
    bhi = R;
    bool lo_pos = S(blo, nullptr) > 0.0;
    bool hi_neg = S(bhi, nullptr) < 0.0;
    if (lo_pos && hi_neg) break;
    R *= 2.0;
    if (R > 1e8) return std::numeric_limits<double>::quiet_NaN();
  }
  for (int iter = 0; iter < 200; ++iter) {
    double mid = 0.5 * (blo + bhi);
    double s = S(mid, nullptr);
    if (std::abs(s) < tol || bhi - blo < 1e-14 * (1.0 + std::abs(mid)))
      return mid;
    if (s > 0.0)
      blo = mid;
    else
      bhi = mid;
  }
  return 0.5 * (blo + bhi);
}

double GlmmObjective::Impl::eval(const Eigen::VectorXd& psi,
                                 Eigen::VectorXd* grad) const {
  if (psi.size() != p + 1 + (fit_theta ? 1 : 0))
    throw UsageError("glmm objective: parameter vector has wrong length");
  const Eigen::VectorXd beta = psi.head(p);
  const double gamma = psi(p);
  const double inv_tau2 = std::exp(-gamma);
  Family f = family;
  if (fit_theta) f.theta = std::exp(psi(p + 1));
  if (gamma > kLogTau2Ceiling || !std::isfinite(inv_tau2) ||
      (fit_theta && !std::isfinite(f.theta))) {
    if (grad) grad->setZero();
    return -std::numeric_limits<double>::infinity();
  }

  eta0.noalias() = X * beta + off;
  if (grad) grad->setZero();

  const bool want_grad = grad != nullptr;
  NeumaierSum total;
  Eigen::VectorXd sumx_wd2(p), sumx_wd3(p), bhat_beta(p), sigma_beta(p),
      grad_beta_j(p);

  for (int j = 0; j < J; ++j) {
    const int64_t lo = block_begin[j], hi = block_begin[j + 1];
    const double bj = find_mode(j, f, inv_tau2, bhat(j));
    if (!std::isfinite(bj)) {
      if (grad) grad->setZero();
      return -std::numeric_limits<double>::infinity();
    }
    bhat(j) = bj;

    // Mode-pass sums for the curvature and the implicit derivatives.
    double sum_wd2 = 0.0, sum_wd3 = 0.0, sum_we1 = 0.0, sum_we2 = 0.0;
    if (want_grad) {
      sumx_wd2.setZero();
      sumx_wd3.setZero();
    }
    for (int64_t i = lo; i < hi; ++i) {
      auto d = fam::eta_derivs(f, y(i), eta0(i) + bj);
      double wd2 = w(i) * d.d2, wd3 = w(i) * d.d3;
      sum_wd2 += wd2;
      if (want_grad) {
        sum_wd3 += wd3;
        sumx_wd2.noalias() += wd2 * X.row(i).transpose();
        sumx_wd3.noalias() += wd3 * X.row(i).transpose();
        if (fit_theta) {
          auto t = fam::theta_derivs(f, y(i), eta0(i) + bj);
          sum_we1 += w(i) * t.e1;
          sum_we2 += w(i) * t.e2;
        }
      }
    }
    const double H = sum_wd2 - inv_tau2;
    if (!(H < 0.0))
      throw NumericError("glmm: non-concave cluster posterior at the mode");
    const double sigma = 1.0 / std::sqrt(-H);

    // Node pass: h(b_k) plus the within-node first-derivative sums.
    for (int k = 0; k < nq; ++k) {
      const double bk = bj + kSqrt2 * sigma * gh.nodes[k];
      NeumaierSum hk;
      double sum_wd1 = 0.0, sum_we0 = 0.0;
      if (want_grad) node_sumx_wd1.col(k).setZero();
      for (int64_t i = lo; i < hi; ++i) {
        auto d = fam::eta_derivs(f, y(i), eta0(i) + bk);
        hk.add(w(i) * d.ll);
        sum_wd1 += w(i) * d.d1;
        if (want_grad) {
          node_sumx_wd1.col(k).noalias() += (w(i) * d.d1) * X.row(i).transpose();
          if (fit_theta) sum_we0 += w(i) * fam::theta_derivs(f, y(i), eta0(i) + bk).e0;
        }
      }
      const double h =
          hk.value() - 0.5 * bk * bk * inv_tau2 - 0.5 * (kLog2Pi + gamma);
      node_a[k] = std::log(gh.weights[k]) + gh.nodes[k] * gh.nodes[k] + h;
      node_sum_wd1[k] = sum_wd1;
      node_sum_we0[k] = sum_we0;
      node_hb[k] = sum_wd1 - bk * inv_tau2;
    }
    const double lse = log_sum_exp(node_a);
    total.add(std::log(kSqrt2 * sigma) + lse);

    if (!want_grad) continue;

    // Softmax node weights.
    for (int k = 0; k < nq; ++k) node_a[k] = std::exp(node_a[k] - lse);

    // Implicit pieces: d bhat / d psi and d sigma / d psi.
    bhat_beta = -sumx_wd2 / H;
    const double bhat_gamma = -(bj * inv_tau2) / H;
    const double bhat_kappa = fit_theta ? -sum_we1 / H : 0.0;
    Eigen::VectorXd H_beta = sumx_wd3 + sum_wd3 * bhat_beta;
    const double H_gamma = sum_wd3 * bhat_gamma + inv_tau2;
    const double H_kappa = fit_theta ? sum_we2 + sum_wd3 * bhat_kappa : 0.0;
    const double ir = -0.5 / H;  // so sigma_psi/sigma = ir * H_psi
    sigma_beta = (ir * sigma) * H_beta;
    const double sigma_gamma = ir * sigma * H_gamma;
    const double sigma_kappa = fit_theta ? ir * sigma * H_kappa : 0.0;

    grad_beta_j = ir * H_beta;  // the log sigma term
    double grad_gamma_j = ir * H_gamma;
    double grad_kappa_j = fit_theta ? ir * H_kappa : 0.0;
    for (int k = 0; k < nq; ++k) {
      const double pk = node_a[k];
      const double hb = node_hb[k];
      const double t2s = kSqrt2 * gh.nodes[k];
      const double bk = bhat(j) + t2s * sigma;
      grad_beta_j.noalias() +=
          pk * (node_sumx_wd1.col(k) + hb * (bhat_beta + t2s * sigma_beta));
      const double h_gamma = 0.5 * bk * bk * inv_tau2 - 0.5;
      grad_gamma_j += pk * (h_gamma + hb * (bhat_gamma + t2s * sigma_gamma));
      if (fit_theta)
        grad_kappa_j +=
            pk * (node_sum_we0[k] + hb * (bhat_kappa + t2s * sigma_kappa));
    }
    grad->head(p) += grad_beta_j;
    (*grad)(p) += grad_gamma_j;
    if (fit_theta) (*grad)(p + 1) += grad_kappa_j;
  }
  return total.value();
}

GlmmObjective::GlmmObjective(const Family& family, const ModelFrame& frame,
                             int quad_points, bool estimate_theta)
    : impl_(new Impl) {
  if (quad_points < 1 || quad_points > 199)
    throw UsageError("glmm: quadrature points must be in [1, 199]");
  if (estimate_theta && family.type != Family::Type::NegBinomial)
    throw UsageError("glmm: estimate_theta requires the negative binomial family");
  Impl& im = *impl_;
  im.family = family;
  im.fit_theta = estimate_theta;
  im.p = static_cast<int>(frame.X.cols());
  im.nq = quad_points;
  im.J = frame.n_clusters;
  im.gh = gauss_hermite(quad_points);

  const int64_t n = frame.X.rows();
  // Count, then fill, so each cluster is contiguous with original row order
  // preserved inside the block: the summation order is fixed by the input.
  std::vector<int64_t> count(im.J, 0);
  for (int64_t i = 0; i < n; ++i) ++count[frame.cluster[i]];
  im.block_begin.assign(im.J + 1, 0);
  for (int j = 0; j < im.J; ++j)
    im.block_begin[j + 1] = im.block_begin[j] + count[j];
  std::vector<int64_t> cursor(im.block_begin.begin(), im.block_begin.end() - 1);

  im.X.resize(n, im.p);
  im.y.resize(n);
  im.w.resize(n);
  im.off.resize(n);
  for (int64_t i = 0; i < n; ++i) {
    int64_t dst = cursor[frame.cluster[i]]++;
    im.X.row(dst) = frame.X.row(i);
    im.y(dst) = frame.y(i);
    im.w(dst) = frame.w(i);
    im.off(dst) = frame.offset(i);
  }
  im.score_scale.resize(im.J);
  for (int j = 0; j < im.J; ++j) {
    double s = 1.0;
    for (int64_t i = im.block_begin[j]; i < im.block_begin[j + 1]; ++i)
      s += im.w(i) * (1.0 + std::abs(im.y(i)));
    im.score_scale[j] = s;
  }
  im.bhat = Eigen::VectorXd::Zero(im.J);
  im.eta0.resize(n);
  im.node_a.resize(im.nq);
  im.node_sum_wd1.resize(im.nq);
  im.node_sum_we0.resize(im.nq);
  im.node_hb.resize(im.nq);
  im.node_sumx_wd1.resize(im.p, im.nq);
}

GlmmObjective::~GlmmObjective() = default;

int GlmmObjective::n_params() const {
  return impl_->p + 1 + (impl_->fit_theta ? 1 : 0);
}
int GlmmObjective::n_coefs() const { return impl_->p; }

std::vector<std::string> GlmmObjective::param_names() const {
  std::vector<std::string> names;
  names.reserve(n_params());
  for (int c = 0; c < impl_->p; ++c) names.push_back("beta" + std::to_string(c));
  names.push_back("log_tau2");
  if (impl_->fit_theta) names.push_back("log_theta");
  return names;
}

double GlmmObjective::eval(const Eigen::VectorXd& psi,
                           Eigen::VectorXd* grad) const {
  return impl_->eval(psi, grad);
}

Eigen::VectorXd GlmmObjective::eb_modes() const { return impl_->bhat; }

double glmm_marginal_loglik(const Family& family, const ModelFrame& frame,
                            const Eigen::VectorXd& beta, double tau2,
                            int quad_points) {
  if (tau2 < 0.0) throw UsageError("glmm: tau2 must be nonnegative");
  if (tau2 == 0.0) return glm_loglik(family, frame, beta);
  GlmmObjective obj(family, frame, quad_points, false);
  Eigen::VectorXd psi(beta.size() + 1);
  psi.head(beta.size()) = beta;
  psi(beta.size()) = std::log(tau2);
  return obj.eval(psi, nullptr);
}

// ---------------------------------------------------------------------------
// Fitting

namespace {

Eigen::MatrixXd numeric_hessian(const GlmmObjective& obj,
                                const Eigen::VectorXd& psi) {
  const int m = static_cast<int>(psi.size());
  Eigen::MatrixXd H(m, m);
  Eigen::VectorXd gp(m), gm(m), x = psi;
  for (int c = 0; c < m; ++c) {
    const double h = 1e-4 * std::max(1.0, std::abs(psi(c)));
    x(c) = psi(c) + h;
    obj.eval(x, &gp);
    x(c) = psi(c) - h;
    obj.eval(x, &gm);
    x(c) = psi(c);
    H.col(c) = (gp - gm) / (2.0 * h);
  }
  return 0.5 * (H + H.transpose());
}

}  // namespace

GlmmFit glmm_fit(const Family& family, const ModelFrame& frame,
                 const GlmmOptions& options) {
  StopWatch timer;
  const bool fit_theta =
      options.estimate_theta && family.type == Family::Type::NegBinomial;
  GlmmObjective obj(family, frame, options.quad_points, fit_theta);
  const int p = static_cast<int>(frame.X.cols());
  const int m = obj.n_params();

  Eigen::VectorXd psi = Eigen::VectorXd::Zero(m);
  Family f0 = family;
  if (options.beta_init && options.beta_init->size() == p) {
    psi.head(p) = *options.beta_init;
    if (fit_theta)
      psi(p + 1) = std::log(options.theta_init > 0 ? options.theta_init
                                                   : family.theta);
  } else {
    GlmOptions glm_opts;
    glm_opts.estimate_theta = fit_theta;
    GlmFit glm0 = glm_fit(f0, frame, glm_opts);  // RankError propagates
    psi.head(p) = glm0.beta;
    if (fit_theta) psi(p + 1) = std::log(glm0.theta);
  }
  psi(p) = std::log(std::max(options.tau2_init, 1e-8));

  ObjectiveFn fn = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    return obj.eval(x, g);
  };

  BfgsOptions bopts;
  bopts.max_iter = options.max_iter;
  bopts.grad_tol = options.grad_tol;
  BfgsResult bres = bfgs_maximize(fn, psi, bopts);
  psi = bres.x;
  double fval = bres.f;
  Eigen::VectorXd g = bres.grad;
  int iterations = bres.iterations;

  // Newton polish with the finite-difference Hessian of the exact gradient:
  // drives the gradient well below the nominal tolerance and hands the final
  // curvature to the covariance step for free. Once gamma sinks below the
  // tau2 = 0 floor that direction is flat, so the polish moves only the
  // remaining coordinates.
  Eigen::MatrixXd hess;
  bool have_hess = false;
  const double polish_tol = std::min(options.grad_tol, 1e-7);
  for (int round = 0; round < 8; ++round) {
    std::vector<int> act;
    act.reserve(m);
    for (int i = 0; i < m; ++i)
      if (i != p || psi(p) >= kLogTau2Floor) act.push_back(i);
    double gact = 0.0;
    for (int i : act) gact = std::max(gact, std::abs(g(i)));
    if (gact <= polish_tol) break;
    hess = numeric_hessian(obj, psi);
    have_hess = true;
    Eigen::MatrixXd Ha(act.size(), act.size());
    Eigen::VectorXd ga(act.size());
    for (size_t a = 0; a < act.size(); ++a) {
      ga(a) = g(act[a]);
      for (size_t b = 0; b < act.size(); ++b) Ha(a, b) = -hess(act[a], act[b]);
    }
    auto act_max = [&](const Eigen::VectorXd& v) {
      double mx = 0.0;
      for (int i : act) mx = std::max(mx, std::abs(v(i)));
      return mx;
    };
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Ha);
    if (ldlt.info() != Eigen::Success) break;
    Eigen::VectorXd da = ldlt.solve(ga);
    Eigen::VectorXd d = Eigen::VectorXd::Zero(m);
    for (size_t a = 0; a < act.size(); ++a) d(act[a]) = da(a);
    if (!d.allFinite() || g.dot(d) <= 0.0) break;
    // Acceptance is a strict gradient decrease: near-singular curvature can
    // suggest unit-length moves along flat directions where the log
    // likelihood only wobbles at noise level, and those must be refused.
    double step = 1.0;
    bool moved = false;
    for (int h = 0; h < 20; ++h) {
      Eigen::VectorXd cand = psi + step * d;
      Eigen::VectorXd gc(m);
      double fc = obj.eval(cand, &gc);
      if (std::isfinite(fc) && act_max(gc) < gact) {
        psi = cand;
        fval = fc;
        g = gc;
        moved = true;
        have_hess = false;  // curvature is now stale
        break;
      }
      step *= 0.5;
    }
    ++iterations;
    if (!moved) break;
  }

  GlmmFit fit;
  fit.coef_names = frame.names;
  fit.quad_points = options.quad_points;
  fit.beta = psi.head(p);
  const double gamma = psi(p);
  const bool boundary = gamma < kLogTau2Floor;
  fit.tau2 = boundary ? 0.0 : std::exp(gamma);
  fit.theta = fit_theta ? std::exp(psi(p + 1))
              : (family.has_theta() ? family.theta
                                    : std::numeric_limits<double>::quiet_NaN());
  fit.loglik = fval;
  fit.grad_max = 0.0;
  for (int i = 0; i < m; ++i)
    if (i != p || !boundary) fit.grad_max = std::max(fit.grad_max, std::abs(g(i)));
  fit.converged = fit.grad_max < options.grad_tol;
  fit.iterations = iterations;
  if (!fit.converged)
    fit.message = "gradient max-norm " + std::to_string(fit.grad_max) +
                  " above tolerance";

  if (options.compute_vcov) {
    if (!have_hess) hess = numeric_hessian(obj, psi);
    // At a tau2 = 0 boundary the gamma direction is flat; drop it.
    std::vector<int> keep;
    for (int i = 0; i < m; ++i)
      if (!(boundary && i == p)) keep.push_back(i);
    Eigen::MatrixXd Hk(keep.size(), keep.size());
    for (size_t a = 0; a < keep.size(); ++a)
      for (size_t b = 0; b < keep.size(); ++b)
        Hk(a, b) = -hess(keep[a], keep[b]);
    Eigen::LDLT<Eigen::MatrixXd> ldlt(Hk);
    Eigen::MatrixXd vcov_all =
        ldlt.solve(Eigen::MatrixXd::Identity(Hk.rows(), Hk.cols()));
    if (!vcov_all.allFinite())
      throw NumericError("glmm: covariance inversion failed");
    fit.vcov = vcov_all.topLeftCorner(p, p);
  }

  // Refresh the modes at the final parameters.
  obj.eval(psi, nullptr);
  fit.eb_modes = obj.eb_modes();
  fit.runtime_seconds = timer.seconds();
  return fit;
}

Eigen::VectorXd glmm_fitted_values(const Family& family,
                                   const ModelFrame& frame,
                                   const Eigen::VectorXd& beta,
                                   const Eigen::VectorXd& eb_modes) {
  if (beta.size() != frame.X.cols())
    throw UsageError("fitted_values: beta has wrong length");
  if (eb_modes.size() != frame.n_clusters)
    throw UsageError("fitted_values: one mode per cluster required");
  Eigen::VectorXd eta = frame.X * beta + frame.offset;
  Eigen::VectorXd mu(eta.size());
  for (int64_t i = 0; i < eta.size(); ++i)
    mu(i) = fam::mean_value(family, eta(i) + eb_modes(frame.cluster[i]));
  return mu;
}

}  // namespace tallfit
