#include "tallfit/meta.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>

#include "tallfit/csvio.hpp"
#include "tallfit/numeric.hpp"

namespace tallfit {

const char* cluster_fit_status_name(ClusterFitStatus s) {
  switch (s) {
    case ClusterFitStatus::Ok: return "ok";
    case ClusterFitStatus::NoOutcomeVariation: return "no_outcome_variation";
    case ClusterFitStatus::RankDeficient: return "rank_deficient";
    case ClusterFitStatus::NotConverged: return "not_converged";
  }
  return "?";
}

std::vector<ClusterEstimate> fit_per_cluster(const ModelSpec& spec,
                                             const Dataset& data,
                                             const ClusterFitOptions& options) {
  Eigen::VectorXd center_means;
  if (options.center) {
    ModelFrame full = build_frame(spec, data);
    center_means = weighted_column_means(full);
  }

  std::vector<Dataset> parts = partition_by_cluster(data);
  std::vector<ClusterEstimate> out;
  out.reserve(parts.size());
  for (const Dataset& part : parts) {
    ClusterEstimate est;
    est.label = part.cluster_labels()[0];
    est.n_rows = part.n_rows();

    const auto& y = part.col(part.schema().outcome_index());
    bool varies = false;
    for (size_t i = 1; i < y.size() && !varies; ++i) varies = (y[i] != y[0]);
    if (!varies) {
      est.status = ClusterFitStatus::NoOutcomeVariation;
      out.push_back(std::move(est));
      continue;
    }

    try {
      ModelFrame frame = build_frame(spec, part);
      if (options.center) apply_centering(&frame, center_means);
      GlmOptions glm_opts = options.glm;
      glm_opts.estimate_theta = options.estimate_theta;
      GlmFit fit = glm_fit(spec.family, frame, glm_opts);
      if (!fit.converged) {
        est.status = ClusterFitStatus::NotConverged;
      } else {
        est.beta = fit.beta;
        est.vcov = fit.vcov;
        est.theta = fit.theta;
        est.coef_names = fit.coef_names;
      }
    } catch (const RankError&) {
      est.status = ClusterFitStatus::RankDeficient;
    } catch (const NumericError&) {
      est.status = ClusterFitStatus::NotConverged;
    }
    out.push_back(std::move(est));
  }
  return out;
}

namespace {

std::vector<const ClusterEstimate*> usable(
    const std::vector<ClusterEstimate>& estimates,
    std::vector<std::pair<std::string, std::string>>* exclusions) {
  std::vector<const ClusterEstimate*> ok;
  for (const auto& e : estimates) {
    if (e.status == ClusterFitStatus::Ok) {
      ok.push_back(&e);
    } else {
      exclusions->push_back({e.label, cluster_fit_status_name(e.status)});
    }
  }
  if (ok.size() < 2)
    throw DataError("pooling needs at least two usable cluster fits, have " +
                    std::to_string(ok.size()));
  return ok;
}

// Residual likelihood of y_j ~ N(mu, v_j + tau2), profiled over mu, with the
// log sum-of-weights adjustment.
double uni_reml_loglik(const std::vector<double>& y,
                       const std::vector<double>& v, double tau2) {
  double sw = 0.0, swy = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    double w = 1.0 / (v[j] + tau2);
    sw += w;
    swy += w * y[j];
  }
  double mu = swy / sw;
  double ll = -0.5 * std::log(sw);
  for (size_t j = 0; j < y.size(); ++j) {
    double vj = v[j] + tau2;
    ll += -0.5 * std::log(vj) - 0.5 * (y[j] - mu) * (y[j] - mu) / vj;
  }
  return ll;
}

double uni_tau2_reml(const std::vector<double>& y, const std::vector<double>& v) {
  double vmax = *std::max_element(v.begin(), v.end());
  double mean = 0.0;
  for (double t : y) mean += t;
  mean /= static_cast<double>(y.size());
  double spread = 0.0;
  for (double t : y) spread += (t - mean) * (t - mean);
  spread /= static_cast<double>(y.size());
  const double hi = std::log(10.0 * (vmax + spread) + 1e-8);
  auto obj = [&](double g) { return uni_reml_loglik(y, v, std::exp(g)); };
  BrentResult best = brent_maximize(obj, -30.0, hi, 1e-10);
  double at_zero = uni_reml_loglik(y, v, 0.0);
  if (at_zero >= best.f || best.x <= -29.5) return 0.0;
  return std::exp(best.x);
}

double uni_tau2_moments(const std::vector<double>& y,
                        const std::vector<double>& v) {
  double sw = 0.0, sw2 = 0.0, swy = 0.0;
  for (size_t j = 0; j < y.size(); ++j) {
    double w = 1.0 / v[j];
    sw += w;
    sw2 += w * w;
    swy += w * y[j];
  }
  double ybar = swy / sw;
  double Q = 0.0;
  for (size_t j = 0; j < y.size(); ++j)
    Q += (y[j] - ybar) * (y[j] - ybar) / v[j];
  double c = sw - sw2 / sw;
  double J = static_cast<double>(y.size());
  return std::max(0.0, (Q - (J - 1.0)) / c);
}

}  // namespace

MetaResult pool_univariate(const std::vector<ClusterEstimate>& estimates,
                           Tau2Method method) {
  MetaResult res;
  auto ok = usable(estimates, &res.exclusions);
  res.clusters_used = static_cast<int>(ok.size());
  res.coef_names = ok.front()->coef_names;
  const int p = static_cast<int>(res.coef_names.size());

  res.beta.resize(p);
  res.se.resize(p);
  res.vcov = Eigen::MatrixXd::Zero(p, p);
  res.tau2_per_coef.resize(p);

  std::vector<double> y(ok.size()), v(ok.size());
  for (int k = 0; k < p; ++k) {
    for (size_t j = 0; j < ok.size(); ++j) {
      y[j] = ok[j]->beta(k);
      v[j] = ok[j]->vcov(k, k);
      if (!(v[j] > 0.0))
        throw NumericError("pooling: nonpositive variance for coefficient '" +
                           res.coef_names[k] + "'");
    }
    double tau2 = method == Tau2Method::Reml ? uni_tau2_reml(y, v)
                                             : uni_tau2_moments(y, v);
    double sw = 0.0, swy = 0.0;
    for (size_t j = 0; j < ok.size(); ++j) {
      double w = 1.0 / (v[j] + tau2);
      sw += w;
      swy += w * y[j];
    }
    res.beta(k) = swy / sw;
    res.vcov(k, k) = 1.0 / sw;
    res.se(k) = std::sqrt(res.vcov(k, k));
    res.tau2_per_coef(k) = tau2;
  }
  auto it = std::find(res.coef_names.begin(), res.coef_names.end(), "intercept");
  res.tau2 = res.tau2_per_coef(it == res.coef_names.end()
                                   ? 0
                                   : static_cast<int>(it - res.coef_names.begin()));
  res.theta = pooled_dispersion(estimates);
  return res;
}

namespace {

struct MvPooled {
  Eigen::VectorXd beta;
  Eigen::MatrixXd vcov;       // (sum W_j)^-1
  double resid_quad = 0.0;    // sum r' W r
  double logdet_V = 0.0;      // sum log det V_j
  double logdet_A = 0.0;
};

MvPooled mv_gls(const std::vector<const ClusterEstimate*>& ok, double sigma00) {
  const int p = static_cast<int>(ok.front()->beta.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  std::vector<Eigen::LDLT<Eigen::MatrixXd>> fact;
  fact.reserve(ok.size());
  MvPooled out;
  for (const auto* e : ok) {
    Eigen::MatrixXd V = e->vcov;
    V(0, 0) += sigma00;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(V);
    if (ldlt.info() != Eigen::Success)
      throw NumericError("pooling: a cluster covariance is not positive definite");
    out.logdet_V += ldlt.vectorD().array().log().sum();
    Eigen::MatrixXd W = ldlt.solve(Eigen::MatrixXd::Identity(p, p));
    A += W;
    rhs += W * e->beta;
    fact.push_back(std::move(ldlt));
  }
  Eigen::LDLT<Eigen::MatrixXd> ldltA(A);
  if (ldltA.info() != Eigen::Success)
    throw NumericError("pooling: the combined information is not positive definite");
  out.logdet_A = ldltA.vectorD().array().log().sum();
  out.vcov = ldltA.solve(Eigen::MatrixXd::Identity(p, p));
  out.beta = out.vcov * rhs;
  for (size_t j = 0; j < ok.size(); ++j) {
    Eigen::VectorXd r = ok[j]->beta - out.beta;
    out.resid_quad += r.dot(fact[j].solve(r));
  }
  return out;
}

double mv_sigma00_reml(const std::vector<const ClusterEstimate*>& ok) {
  double smax = 0.0, mean = 0.0, spread = 0.0;
  for (const auto* e : ok) {
    smax = std::max(smax, e->vcov(0, 0));
    mean += e->beta(0);
  }
  mean /= static_cast<double>(ok.size());
  for (const auto* e : ok)
    spread += (e->beta(0) - mean) * (e->beta(0) - mean);
  spread /= static_cast<double>(ok.size());
  const double hi = std::log(10.0 * (smax + spread) + 1e-8);
  auto obj = [&](double g) {
    MvPooled pool = mv_gls(ok, std::exp(g));
    return -0.5 * (pool.logdet_V + pool.logdet_A + pool.resid_quad);
  };
  BrentResult best = brent_maximize(obj, -30.0, hi, 1e-10);
  MvPooled at_zero = mv_gls(ok, 0.0);
  double f0 = -0.5 * (at_zero.logdet_V + at_zero.logdet_A + at_zero.resid_quad);
  if (f0 >= best.f || best.x <= -29.5) return 0.0;
  return std::exp(best.x);
}

double mv_sigma00_moments(const std::vector<const ClusterEstimate*>& ok) {
  const int p = static_cast<int>(ok.front()->beta.size());
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
  std::vector<Eigen::MatrixXd> W;
  W.reserve(ok.size());
  for (const auto* e : ok) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(e->vcov);
    if (ldlt.info() != Eigen::Success)
      throw NumericError("pooling: a cluster covariance is not positive definite");
    W.push_back(ldlt.solve(Eigen::MatrixXd::Identity(p, p)));
    A += W.back();
  }
  Eigen::LDLT<Eigen::MatrixXd> ldltA(A);
  Eigen::MatrixXd Ainv = ldltA.solve(Eigen::MatrixXd::Identity(p, p));
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(p);
  for (size_t j = 0; j < ok.size(); ++j) rhs += W[j] * ok[j]->beta;
  Eigen::VectorXd beta_f = Ainv * rhs;

  double Q00 = 0.0;
  Eigen::MatrixXd F2 = Eigen::MatrixXd::Zero(p, p);
  for (size_t j = 0; j < ok.size(); ++j) {
    Eigen::VectorXd r = ok[j]->beta - beta_f;
    Q00 += (W[j] * r)(0) * r(0);
    F2 += W[j] * Ainv * W[j];
  }
  const double J = static_cast<double>(ok.size());
  const double denom = A(0, 0) - F2(0, 0);
  if (!(denom > 0.0))
    throw NumericError("pooling: degenerate moment equation for sigma00");
  return std::max(0.0, (Q00 - (J - 1.0)) / denom);
}

}  // namespace

MetaResult pool_multivariate(const std::vector<ClusterEstimate>& estimates,
                             MvHetero hetero) {
  MetaResult res;
  auto ok = usable(estimates, &res.exclusions);
  res.clusters_used = static_cast<int>(ok.size());
  res.coef_names = ok.front()->coef_names;
  if (hetero != MvHetero::None && res.coef_names.front() != "intercept")
    throw UsageError("intercept-only heterogeneity requires a model whose "
                     "first coefficient is the intercept");

  double sigma00 = 0.0;
  switch (hetero) {
    case MvHetero::None: sigma00 = 0.0; break;
    case MvHetero::InterceptReml: sigma00 = mv_sigma00_reml(ok); break;
    case MvHetero::InterceptMoments: sigma00 = mv_sigma00_moments(ok); break;
  }
  MvPooled pool = mv_gls(ok, sigma00);
  res.beta = pool.beta;
  res.vcov = pool.vcov;
  res.se = pool.vcov.diagonal().cwiseSqrt();
  res.tau2 = sigma00;
  res.theta = pooled_dispersion(estimates);
  return res;
}

double pooled_dispersion(const std::vector<ClusterEstimate>& estimates) {
  NeumaierSum num, den;
  for (const auto& e : estimates) {
    if (e.status != ClusterFitStatus::Ok || !std::isfinite(e.theta)) continue;
    num.add(static_cast<double>(e.n_rows) * e.theta);
    den.add(static_cast<double>(e.n_rows));
  }
  if (den.value() <= 0.0) return std::numeric_limits<double>::quiet_NaN();
  return num.value() / den.value();
}

// ---------------------------------------------------------------------------
// CSV round trip

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

void write_cluster_estimates_csv(const std::vector<ClusterEstimate>& estimates,
                                 const std::string& path) {
  if (estimates.empty()) throw UsageError("no cluster estimates to write");
  const ClusterEstimate* with_names = nullptr;
  for (const auto& e : estimates)
    if (e.status == ClusterFitStatus::Ok) { with_names = &e; break; }
  if (!with_names)
    throw DataError("no usable cluster estimate; nothing to serialize");
  const int p = static_cast<int>(with_names->coef_names.size());

  csv::Table t;
  t.header = {"cluster", "n_rows", "status", "theta"};
  for (int k = 0; k < p; ++k)
    t.header.push_back("beta:" + with_names->coef_names[k]);
  for (int a = 0; a < p; ++a)
    for (int b = a; b < p; ++b)
      t.header.push_back("cov:" + std::to_string(a) + ":" + std::to_string(b));

  for (const auto& e : estimates) {
    std::vector<std::string> row{e.label, std::to_string(e.n_rows),
                                 cluster_fit_status_name(e.status),
                                 std::isfinite(e.theta) ? fmt(e.theta) : ""};
    if (e.status == ClusterFitStatus::Ok) {
      for (int k = 0; k < p; ++k) row.push_back(fmt(e.beta(k)));
      for (int a = 0; a < p; ++a)
        for (int b = a; b < p; ++b) row.push_back(fmt(e.vcov(a, b)));
    } else {
      row.resize(t.header.size());
    }
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

std::vector<ClusterEstimate> read_cluster_estimates_csv(const std::string& path) {
  csv::Table t = csv::read_file(path);
  std::vector<std::string> coef_names;
  for (const auto& h : t.header)
    if (h.rfind("beta:", 0) == 0) coef_names.push_back(h.substr(5));
  const int p = static_cast<int>(coef_names.size());
  if (p == 0) throw DataError(path + ": no beta columns found");
  int c_cluster = t.find("cluster"), c_n = t.find("n_rows"),
      c_status = t.find("status"), c_theta = t.find("theta");
  if (c_cluster < 0 || c_n < 0 || c_status < 0 || c_theta < 0)
    throw DataError(path + ": missing required columns");
  int beta0 = t.find("beta:" + coef_names[0]);
  int cov0 = t.find("cov:0:0");
  if (cov0 < 0) throw DataError(path + ": missing covariance columns");

  std::vector<ClusterEstimate> out;
  for (const auto& row : t.rows) {
    ClusterEstimate e;
    e.label = row[c_cluster];
    e.n_rows = std::strtoll(row[c_n].c_str(), nullptr, 10);
    std::string status = row[c_status];
    if (status == "ok") e.status = ClusterFitStatus::Ok;
    else if (status == "no_outcome_variation") e.status = ClusterFitStatus::NoOutcomeVariation;
    else if (status == "rank_deficient") e.status = ClusterFitStatus::RankDeficient;
    else if (status == "not_converged") e.status = ClusterFitStatus::NotConverged;
    else throw DataError(path + ": unknown status '" + status + "'");
    if (!row[c_theta].empty()) e.theta = std::strtod(row[c_theta].c_str(), nullptr);
    if (e.status == ClusterFitStatus::Ok) {
      e.coef_names = coef_names;
      e.beta.resize(p);
      for (int k = 0; k < p; ++k)
        e.beta(k) = std::strtod(row[beta0 + k].c_str(), nullptr);
      e.vcov.resize(p, p);
      int idx = cov0;
      for (int a = 0; a < p; ++a)
        for (int b = a; b < p; ++b) {
          double v = std::strtod(row[idx++].c_str(), nullptr);
          e.vcov(a, b) = v;
          e.vcov(b, a) = v;
        }
    }
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace tallfit
