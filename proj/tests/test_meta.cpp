#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "doctest.h"
#include "tallfit/dataset.hpp"
#include "tallfit/meta.hpp"
#include "tallfit/model.hpp"
#include "tallfit/schema.hpp"

using namespace tallfit;

namespace {

// Hand-built single-coefficient estimate: the pooling layer only sees labels,
// betas, and covariances, so synthetic inputs give exact arithmetic checks.
ClusterEstimate scalar_est(const std::string& label, double beta, double var,
                           int64_t n = 100) {
  ClusterEstimate e;
  e.label = label;
  e.n_rows = n;
  e.beta = Eigen::VectorXd::Constant(1, beta);
  e.vcov = Eigen::MatrixXd::Constant(1, 1, var);
  e.coef_names = {"intercept"};
  return e;
}

ClusterEstimate diag_est(const std::string& label, double b0, double b1,
                         double v0, double v1) {
  ClusterEstimate e;
  e.label = label;
  e.n_rows = 100;
  e.beta.resize(2);
  e.beta << b0, b1;
  e.vcov = Eigen::MatrixXd::Zero(2, 2);
  e.vcov(0, 0) = v0;
  e.vcov(1, 1) = v1;
  e.coef_names = {"intercept", "x"};
  return e;
}

// Logistic clustered draws for the per-cluster fitting stage.
Dataset simulate_logistic(int clusters, int per_cluster, double tau2,
                          uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::uniform_int_distribution<int> coin(0, 1);
  int n = clusters * per_cluster;
  std::vector<double> cl(n), x1(n), x2(n), y(n);
  std::vector<std::string> labels;
  for (int j = 0; j < clusters; ++j) labels.push_back("g" + std::to_string(j + 1));
  std::vector<double> bj(clusters);
  for (int j = 0; j < clusters; ++j) bj[j] = std::sqrt(tau2) * norm(rng);
  for (int i = 0; i < n; ++i) {
    int j = i / per_cluster;
    cl[i] = j;
    x1[i] = norm(rng);
    x2[i] = coin(rng);
    double eta = 0.2 + 0.6 * x1[i] - 0.5 * x2[i] + bj[j];
    y[i] = std::bernoulli_distribution(fam::sigmoid(eta))(rng) ? 1 : 0;
  }
  Schema schema = parse_schema_text(
      "g = cluster\nx1 = covariate:continuous\nx2 = covariate:binary\n"
      "y = outcome:binary\n");
  return Dataset::from_columns(schema, {cl, x1, x2, y}, labels);
}

ModelSpec logistic_spec() {
  ModelSpec spec;
  spec.family = Family::bernoulli();
  spec.terms = {parse_term("x1"), parse_term("x2")};
  return spec;
}

}  // namespace

TEST_CASE("moment pooling matches the textbook two-study case") {
  // Estimates 0 and 2 with unit variances: Q = 2, c = 2 - 2/2 = 1, so
  // tau2 = (Q - (J-1)) / c = 1 with no rounding anywhere.
  std::vector<ClusterEstimate> ests{scalar_est("a", 0.0, 1.0),
                                    scalar_est("b", 2.0, 1.0)};
  MetaResult res = pool_univariate(ests, Tau2Method::MethodOfMoments);
  CHECK(res.tau2 == 1.0);
  CHECK(res.tau2_per_coef(0) == 1.0);
  CHECK(res.beta(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(res.se(0) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(res.clusters_used == 2);
  CHECK(res.exclusions.empty());
}

TEST_CASE("equal variances collapse both tau2 estimators to s2 minus v") {
  // With a common sampling variance v the REML and moment estimators share
  // the closed form max(0, sample variance - v), sample variance unbiased.
  std::vector<ClusterEstimate> ests{scalar_est("a", 0.0, 0.5),
                                    scalar_est("b", 1.0, 0.5),
                                    scalar_est("c", 3.5, 0.5)};
  // mean 1.5, sum of squares 6.5, s2 = 3.25, tau2 = 2.75
  MetaResult mom = pool_univariate(ests, Tau2Method::MethodOfMoments);
  CHECK(mom.tau2 == doctest::Approx(2.75).epsilon(1e-12));
  MetaResult reml = pool_univariate(ests, Tau2Method::Reml);
  CHECK(reml.tau2 == doctest::Approx(2.75).epsilon(1e-6));
  CHECK(reml.beta(0) == doctest::Approx(1.5).epsilon(1e-9));
  CHECK(reml.vcov(0, 0) == doctest::Approx((0.5 + reml.tau2) / 3.0).epsilon(1e-9));

  std::vector<ClusterEstimate> flat{scalar_est("a", 0.5, 1.0),
                                    scalar_est("b", 0.5, 1.0),
                                    scalar_est("c", 0.5, 1.0)};
  CHECK(pool_univariate(flat, Tau2Method::MethodOfMoments).tau2 == 0.0);
  CHECK(pool_univariate(flat, Tau2Method::Reml).tau2 == 0.0);
}

TEST_CASE("multivariate gls with no heterogeneity is the closed-form pool") {
  std::vector<ClusterEstimate> ests;
  std::vector<Eigen::VectorXd> betas;
  std::vector<Eigen::MatrixXd> covs;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int j = 0; j < 3; ++j) {
    Eigen::VectorXd b(2);
    b << norm(rng), norm(rng);
    Eigen::MatrixXd L(2, 2);
    L << 0.8 + 0.1 * j, 0.0, 0.3 * norm(rng), 0.6 + 0.05 * j;
    Eigen::MatrixXd V = L * L.transpose();
    ClusterEstimate e;
    e.label = "c" + std::to_string(j);
    e.n_rows = 50;
    e.beta = b;
    e.vcov = V;
    e.coef_names = {"intercept", "x"};
    ests.push_back(e);
    betas.push_back(b);
    covs.push_back(V);
  }
  Eigen::MatrixXd A = Eigen::MatrixXd::Zero(2, 2);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(2);
  for (int j = 0; j < 3; ++j) {
    Eigen::MatrixXd W = covs[j].inverse();
    A += W;
    rhs += W * betas[j];
  }
  Eigen::MatrixXd vcov = A.inverse();
  Eigen::VectorXd beta = vcov * rhs;

  MetaResult res = pool_multivariate(ests, MvHetero::None);
  CHECK(res.tau2 == 0.0);
  for (int k = 0; k < 2; ++k) {
    CHECK(std::abs(res.beta(k) - beta(k)) < 1e-10);
    CHECK(std::abs(res.se(k) - std::sqrt(vcov(k, k))) < 1e-10);
    for (int l = 0; l < 2; ++l) CHECK(std::abs(res.vcov(k, l) - vcov(k, l)) < 1e-10);
  }
}

TEST_CASE("diagonal covariances reduce the matrix moment estimator to the scalar one") {
  // When every V_j is diagonal the GLS pool decouples by coordinate, so the
  // intercept-block moment equation is exactly the scalar estimator on the
  // intercept column.
  std::vector<ClusterEstimate> ests{diag_est("a", 0.0, 1.0, 0.5, 0.3),
                                    diag_est("b", 1.0, 1.2, 1.0, 0.2),
                                    diag_est("c", 2.0, 0.9, 0.4, 0.5),
                                    diag_est("d", 4.0, 1.1, 0.8, 0.25)};
  double sw = 0.0, sw2 = 0.0, swy = 0.0;
  for (const auto& e : ests) {
    double w = 1.0 / e.vcov(0, 0);
    sw += w;
    sw2 += w * w;
    swy += w * e.beta(0);
  }
  double ybar = swy / sw, Q = 0.0;
  for (const auto& e : ests)
    Q += (e.beta(0) - ybar) * (e.beta(0) - ybar) / e.vcov(0, 0);
  double expected = std::max(0.0, (Q - 3.0) / (sw - sw2 / sw));

  MetaResult res = pool_multivariate(ests, MvHetero::InterceptMoments);
  CHECK(res.tau2 == doctest::Approx(expected).epsilon(1e-12));

  // The slope coordinate never sees sigma00: plain inverse-variance pool.
  double sv = 0.0, svy = 0.0;
  for (const auto& e : ests) {
    sv += 1.0 / e.vcov(1, 1);
    svy += e.beta(1) / e.vcov(1, 1);
  }
  CHECK(res.beta(1) == doctest::Approx(svy / sv).epsilon(1e-12));
  CHECK(res.se(0) ==
        doctest::Approx(1.0 / std::sqrt([&] {
          double s = 0.0;
          for (const auto& e : ests) s += 1.0 / (e.vcov(0, 0) + res.tau2);
          return s;
        }())).epsilon(1e-12));
}

TEST_CASE("one-coefficient multivariate reml agrees with the univariate closed form") {
  std::vector<ClusterEstimate> ests{scalar_est("a", 0.0, 0.5),
                                    scalar_est("b", 1.0, 0.5),
                                    scalar_est("c", 3.5, 0.5)};
  MetaResult res = pool_multivariate(ests, MvHetero::InterceptReml);
  CHECK(res.tau2 == doctest::Approx(2.75).epsilon(1e-6));
  CHECK(res.beta(0) == doctest::Approx(1.5).epsilon(1e-9));

  std::vector<ClusterEstimate> flat{scalar_est("a", 0.5, 1.0),
                                    scalar_est("b", 0.5, 1.0),
                                    scalar_est("c", 0.5, 1.0)};
  CHECK(pool_multivariate(flat, MvHetero::InterceptReml).tau2 == 0.0);
}

TEST_CASE("per-cluster fits flag the pathologies and pooling excludes them") {
  // ok1/ok2 are healthy; flat has a constant outcome; wall has a covariate
  // that is constant inside the cluster; sep is perfectly separated.
  std::vector<double> cl, x, y;
  std::vector<std::string> labels{"ok1", "ok2", "flat", "wall", "sep"};
  auto add = [&](int code, std::initializer_list<double> xs,
                 std::initializer_list<double> ys) {
    auto xi = xs.begin();
    auto yi = ys.begin();
    for (; xi != xs.end(); ++xi, ++yi) {
      cl.push_back(code);
      x.push_back(*xi);
      y.push_back(*yi);
    }
  };
  add(0, {-1.5, -1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0},
      {0, 1, 0, 1, 0, 1, 1, 0});
  add(1, {-2.0, -1.0, -0.25, 0.25, 0.75, 1.25, 1.75, 2.25},
      {1, 0, 1, 0, 1, 0, 0, 1});
  add(2, {-1.0, 0.0, 1.0, 2.0}, {1, 1, 1, 1});
  add(3, {2.0, 2.0, 2.0, 2.0}, {0, 1, 0, 1});
  add(4, {-0.2, -0.1, 0.1, 0.2}, {0, 0, 1, 1});

  Schema schema = parse_schema_text(
      "g = cluster\nx = covariate:continuous\ny = outcome:binary\n");
  Dataset data = Dataset::from_columns(schema, {cl, x, y}, labels);
  ModelSpec spec;
  spec.family = Family::bernoulli();
  spec.terms = {parse_term("x")};

  std::vector<ClusterEstimate> ests = fit_per_cluster(spec, data);
  REQUIRE(ests.size() == 5);
  auto status_of = [&](const std::string& label) {
    for (const auto& e : ests)
      if (e.label == label) return e.status;
    FAIL("missing cluster " << label);
    return ClusterFitStatus::Ok;
  };
  CHECK(status_of("ok1") == ClusterFitStatus::Ok);
  CHECK(status_of("ok2") == ClusterFitStatus::Ok);
  CHECK(status_of("flat") == ClusterFitStatus::NoOutcomeVariation);
  CHECK(status_of("wall") == ClusterFitStatus::RankDeficient);
  CHECK(status_of("sep") == ClusterFitStatus::NotConverged);

  MetaResult res = pool_univariate(ests, Tau2Method::MethodOfMoments);
  CHECK(res.clusters_used == 2);
  REQUIRE(res.exclusions.size() == 3);
  auto reason_of = [&](const std::string& label) -> std::string {
    for (const auto& pr : res.exclusions)
      if (pr.first == label) return pr.second;
    return "";
  };
  CHECK(reason_of("flat") == "no_outcome_variation");
  CHECK(reason_of("wall") == "rank_deficient");
  CHECK(reason_of("sep") == "not_converged");
}

TEST_CASE("pooling needs at least two usable fits") {
  std::vector<ClusterEstimate> ests{scalar_est("a", 0.5, 1.0)};
  ClusterEstimate bad;
  bad.label = "b";
  bad.n_rows = 4;
  bad.status = ClusterFitStatus::NoOutcomeVariation;
  ests.push_back(bad);
  CHECK_THROWS_AS(pool_univariate(ests, Tau2Method::Reml), DataError);
  CHECK_THROWS_AS(pool_multivariate(ests, MvHetero::None), DataError);
}

TEST_CASE("intercept-only heterogeneity requires a leading intercept") {
  std::vector<ClusterEstimate> ests{scalar_est("a", 0.0, 1.0),
                                    scalar_est("b", 2.0, 1.0)};
  for (auto& e : ests) e.coef_names = {"x"};
  CHECK_THROWS_AS(pool_multivariate(ests, MvHetero::InterceptReml), UsageError);
  CHECK_NOTHROW(pool_multivariate(ests, MvHetero::None));
}

TEST_CASE("pooled dispersion weights by cluster size and skips failures") {
  std::vector<ClusterEstimate> ests{scalar_est("a", 0.0, 1.0, 10),
                                    scalar_est("b", 1.0, 1.0, 30)};
  ests[0].theta = 2.0;
  ests[1].theta = 4.0;
  ClusterEstimate bad;
  bad.label = "c";
  bad.n_rows = 999;
  bad.status = ClusterFitStatus::NotConverged;
  ests.push_back(bad);
  CHECK(pooled_dispersion(ests) == doctest::Approx(3.5).epsilon(1e-15));

  std::vector<ClusterEstimate> none{bad};
  CHECK(std::isnan(pooled_dispersion(none)));
}

TEST_CASE("cluster estimate csv round trips exactly") {
  std::vector<ClusterEstimate> ests{diag_est("a", 0.125, -1.75, 0.5, 0.25),
                                    diag_est("b", 1.0 / 3.0, 0.7, 1.1, 0.9)};
  ests[0].vcov(0, 1) = ests[0].vcov(1, 0) = 0.0625;
  ests[1].theta = 1.618033988749895;
  ClusterEstimate bad;
  bad.label = "empty";
  bad.n_rows = 7;
  bad.status = ClusterFitStatus::RankDeficient;
  ests.push_back(bad);

  std::string path = "meta_test_estimates.csv";
  write_cluster_estimates_csv(ests, path);
  std::vector<ClusterEstimate> back = read_cluster_estimates_csv(path);
  std::remove(path.c_str());

  REQUIRE(back.size() == 3);
  for (int j = 0; j < 2; ++j) {
    CHECK(back[j].label == ests[j].label);
    CHECK(back[j].n_rows == ests[j].n_rows);
    CHECK(back[j].status == ClusterFitStatus::Ok);
    CHECK(back[j].coef_names == ests[j].coef_names);
    for (int k = 0; k < 2; ++k) CHECK(back[j].beta(k) == ests[j].beta(k));
    for (int a = 0; a < 2; ++a)
      for (int b = a; b < 2; ++b) CHECK(back[j].vcov(a, b) == ests[j].vcov(a, b));
  }
  CHECK(std::isnan(back[0].theta));
  CHECK(back[1].theta == ests[1].theta);
  CHECK(back[2].label == "empty");
  CHECK(back[2].status == ClusterFitStatus::RankDeficient);
  CHECK(back[2].n_rows == 7);
}

TEST_CASE("centering shifts intercepts by slope times the grand mean") {
  // Gaussian identity link: per-cluster least squares, so centering x at the
  // full-data mean moves each intercept by exactly slope * mean.
  std::vector<double> cl, x, y;
  std::vector<std::string> labels{"p", "q", "r"};
  std::mt19937_64 rng(42);
  std::normal_distribution<double> norm(0.0, 1.0);
  for (int j = 0; j < 3; ++j)
    for (int i = 0; i < 12; ++i) {
      double xv = 2.0 * j + 0.5 * i;
      cl.push_back(j);
      x.push_back(xv);
      y.push_back(1.0 + 0.3 * j + (0.4 + 0.1 * j) * xv + 0.2 * norm(rng));
    }
  double xbar = 0.0;
  for (double v : x) xbar += v;
  xbar /= static_cast<double>(x.size());

  Schema schema = parse_schema_text(
      "g = cluster\nx = covariate:continuous\ny = outcome:continuous\n");
  Dataset data = Dataset::from_columns(schema, {cl, x, y}, labels);
  ModelSpec spec;
  spec.family = Family::gaussian(1.0);
  spec.terms = {parse_term("x")};

  std::vector<ClusterEstimate> plain = fit_per_cluster(spec, data);
  ClusterFitOptions opts;
  opts.center = true;
  std::vector<ClusterEstimate> centered = fit_per_cluster(spec, data, opts);
  REQUIRE(plain.size() == 3);
  REQUIRE(centered.size() == 3);
  for (int j = 0; j < 3; ++j) {
    REQUIRE(plain[j].status == ClusterFitStatus::Ok);
    CHECK(centered[j].beta(1) == doctest::Approx(plain[j].beta(1)).epsilon(1e-9));
    CHECK(centered[j].beta(0) ==
          doctest::Approx(plain[j].beta(0) + plain[j].beta(1) * xbar).epsilon(1e-9));
  }
}

TEST_CASE("meta pooling recovers simulated logistic effects") {
  Dataset data = simulate_logistic(30, 80, 0.3, 977);
  std::vector<ClusterEstimate> ests = fit_per_cluster(logistic_spec(), data);
  int ok = 0;
  for (const auto& e : ests) ok += e.status == ClusterFitStatus::Ok;
  REQUIRE(ok >= 25);

  MetaResult mv = pool_multivariate(ests, MvHetero::InterceptReml);
  const double truth[3] = {0.2, 0.6, -0.5};
  for (int k = 1; k < 3; ++k) {
    CHECK(std::abs(mv.beta(k) - truth[k]) < 4.0 * mv.se(k));
    CHECK(mv.se(k) > 0.0);
  }
  CHECK(mv.tau2 > 0.01);
  CHECK(mv.tau2 < 1.5);

  MetaResult uni = pool_univariate(ests, Tau2Method::Reml);
  for (int k = 1; k < 3; ++k)
    CHECK(std::abs(uni.beta(k) - truth[k]) < 4.0 * uni.se(k));
  CHECK(uni.tau2_per_coef.size() == 3);
}
