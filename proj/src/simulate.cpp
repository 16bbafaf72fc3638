#include "tallfit/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "json.hpp"
#include "tallfit/common.hpp"
#include "tallfit/family.hpp"

namespace tallfit {

ItsaParams ItsaParams::defaults() {
  ItsaParams p;
  p.beta = {std::log(0.01), std::log(1.25), std::log(0.63), std::log(1.04),
            std::log(0.87), std::log(0.78), std::log(1.38), std::log(1.03),
            std::log(1.09), std::log(1.05), std::log(1.80), std::log(0.68)};
  return p;
}

ConsultParams ConsultParams::defaults() {
  ConsultParams p;
  p.beta = {std::log(4.71), std::log(1.25), std::log(0.68),
            std::log(2.12), std::log(2.94), std::log(3.94)};
  return p;
}

std::vector<int64_t> lognormal_cluster_sizes(int64_t n_rows, int n_clusters,
                                             double sigma,
                                             std::mt19937_64& rng) {
  if (n_clusters < 1) throw UsageError("simulate: need at least one cluster");
  if (n_rows < n_clusters)
    throw UsageError("simulate: need at least one row per cluster");
  if (!(sigma >= 0.0))
    throw UsageError("simulate: size multiplier sd must be >= 0");

  std::vector<double> mult(n_clusters, 1.0);
  if (sigma > 0.0) {
    std::lognormal_distribution<double> draw(0.0, sigma);
    for (auto& m : mult) m = draw(rng);
  }
  double total = 0.0;
  for (double m : mult) total += m;

  // One guaranteed row each; the rest by largest remainder of the quotas.
  const int64_t rest = n_rows - n_clusters;
  std::vector<int64_t> size(n_clusters, 1);
  std::vector<std::pair<double, int>> remainder(n_clusters);
  int64_t assigned = 0;
  for (int j = 0; j < n_clusters; ++j) {
    double quota = static_cast<double>(rest) * mult[j] / total;
    auto base = static_cast<int64_t>(std::floor(quota));
    size[j] += base;
    assigned += base;
    remainder[j] = {quota - static_cast<double>(base), j};
  }
  std::sort(remainder.begin(), remainder.end(),
            [](const auto& a, const auto& b) {
              return a.first != b.first ? a.first > b.first
                                        : a.second < b.second;
            });
  for (int64_t k = 0; k < rest - assigned; ++k) ++size[remainder[k].second];
  return size;
}

namespace {

std::vector<std::string> cluster_labels(int n) {
  std::vector<std::string> labels(n);
  for (int j = 0; j < n; ++j) labels[j] = "p" + std::to_string(j + 1);
  return labels;
}

std::vector<double> draw_intercepts(int n, double tau2, std::mt19937_64& rng) {
  std::vector<double> b(n, 0.0);
  if (tau2 > 0.0) {
    std::normal_distribution<double> draw(0.0, std::sqrt(tau2));
    for (auto& v : b) v = draw(rng);
  }
  return b;
}

}  // namespace

ModelSpec itsa_model_spec() {
  ModelSpec spec;
  spec.family = Family::bernoulli();
  for (const char* t :
       {"time", "case", "case:time", "int1", "time:int1", "case:int1",
        "case:time:int1", "int2", "time:int2", "case:int2", "case:time:int2"})
    spec.terms.push_back(parse_term(t));
  return spec;
}

ModelSpec consults_model_spec(double theta) {
  ModelSpec spec;
  spec.family = Family::neg_binomial(theta);
  for (const char* t :
       {"age", "gender", "morb_moderate", "morb_high", "morb_veryhigh"})
    spec.terms.push_back(parse_term(t));
  spec.offset_column = "years";
  return spec;
}

DesignGrid itsa_design_grid() {
  std::vector<std::vector<double>> levels(4, {0.0, 1.0});
  levels[0].clear();
  for (int t = 1; t <= 19; ++t) levels[0].push_back(t);
  return enumerate_designs({"time", "case", "int1", "int2"}, levels);
}

DesignGrid consults_design_grid() {
  std::vector<std::vector<double>> levels(5, {0.0, 1.0});
  levels[0].clear();
  for (int k = 0; k < 9; ++k) levels[0].push_back(-1.5 + 0.5 * k);
  return enumerate_designs(
      {"age", "gender", "morb_moderate", "morb_high", "morb_veryhigh"}, levels,
      {{"morb_moderate", "morb_high", "morb_veryhigh"}});
}

Simulated simulate_itsa_logistic(const ItsaParams& params, uint64_t seed) {
  if (params.beta.size() != 12)
    throw UsageError("itsa plan: beta must have 12 entries");
  if (!(params.tau2 >= 0.0)) throw UsageError("itsa plan: tau2 must be >= 0");

  std::mt19937_64 rng(seed);
  auto sizes = lognormal_cluster_sizes(params.n_rows, params.n_clusters,
                                       params.size_sigma, rng);
  auto b = draw_intercepts(params.n_clusters, params.tau2, rng);

  const int64_t n = params.n_rows;
  std::vector<double> practice(n), time(n), case_(n), int1(n), int2(n), event(n);
  std::uniform_int_distribution<int> draw_time(1, 19);
  std::bernoulli_distribution draw_case(0.5);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto& beta = params.beta;

  int64_t row = 0;
  for (int j = 0; j < params.n_clusters; ++j) {
    for (int64_t i = 0; i < sizes[j]; ++i, ++row) {
      double t = draw_time(rng);
      double c = draw_case(rng) ? 1.0 : 0.0;
      double s1 = t >= 9.0 ? 1.0 : 0.0;
      double s2 = t >= 16.0 ? 1.0 : 0.0;
      double eta = beta[0] + beta[1] * t + beta[2] * c + beta[3] * c * t +
                   beta[4] * s1 + beta[5] * t * s1 + beta[6] * c * s1 +
                   beta[7] * c * t * s1 + beta[8] * s2 + beta[9] * t * s2 +
                   beta[10] * c * s2 + beta[11] * c * t * s2 + b[j];
      practice[row] = j;
      time[row] = t;
      case_[row] = c;
      int1[row] = s1;
      int2[row] = s2;
      event[row] = unit(rng) < fam::sigmoid(eta) ? 1.0 : 0.0;
    }
  }

  Schema schema;
  schema.columns = {
      {"practice", Role::Cluster, Kind::Categorical, {}},
      {"time", Role::Covariate, Kind::Count, {}},
      {"case", Role::Covariate, Kind::Binary, {}},
      {"int1", Role::Covariate, Kind::Binary, {}},
      {"int2", Role::Covariate, Kind::Binary, {}},
      {"event", Role::Outcome, Kind::Binary, {}},
  };
  Dataset data = Dataset::from_columns(
      std::move(schema),
      {std::move(practice), std::move(time), std::move(case_), std::move(int1),
       std::move(int2), std::move(event)},
      cluster_labels(params.n_clusters));

  SimTruth truth;
  truth.plan = "itsa";
  truth.coef_names = {"intercept",       "time",
                      "case",            "case:time",
                      "int1",            "time:int1",
                      "case:int1",       "case:time:int1",
                      "int2",            "time:int2",
                      "case:int2",       "case:time:int2"};
  truth.beta = params.beta;
  truth.tau2 = params.tau2;
  truth.seed = seed;
  truth.b = std::move(b);
  return {std::move(data), std::move(truth)};
}

Simulated simulate_negbin_consults(const ConsultParams& params,
                                   uint64_t seed) {
  if (params.beta.size() != 6)
    throw UsageError("consults plan: beta must have 6 entries");
  if (!(params.tau2 >= 0.0))
    throw UsageError("consults plan: tau2 must be >= 0");
  if (!(params.theta > 0.0))
    throw UsageError("consults plan: theta must be > 0");
  if (params.morbidity_probs.size() != 4)
    throw UsageError("consults plan: need 4 morbidity category probabilities");
  double psum = 0.0;
  for (double p : params.morbidity_probs) {
    if (!(p >= 0.0))
      throw UsageError("consults plan: probabilities must be >= 0");
    psum += p;
  }
  if (std::abs(psum - 1.0) > 1e-8)
    throw UsageError("consults plan: morbidity probabilities must sum to 1");
  if (!(params.exposure_min > 0.0 &&
        params.exposure_min <= params.exposure_max))
    throw UsageError("consults plan: exposure range must satisfy 0 < min <= max");

  std::mt19937_64 rng(seed);
  auto sizes = lognormal_cluster_sizes(params.n_rows, params.n_clusters,
                                       params.size_sigma, rng);
  auto b = draw_intercepts(params.n_clusters, params.tau2, rng);

  const int64_t n = params.n_rows;
  std::vector<double> practice(n), age(n), gender(n), morb_m(n), morb_h(n),
      morb_v(n), years(n), consults(n);

  // Age in years, right-skewed like an adult consulting population, then
  // standardized to sample mean 0 and variance 1.
  std::gamma_distribution<double> draw_age(4.0, 9.0);
  std::bernoulli_distribution draw_gender(0.5);
  std::uniform_real_distribution<double> draw_years(params.exposure_min,
                                                    params.exposure_max);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  int64_t row = 0;
  for (int j = 0; j < params.n_clusters; ++j) {
    for (int64_t i = 0; i < sizes[j]; ++i, ++row) {
      practice[row] = j;
      age[row] = 15.0 + draw_age(rng);
      gender[row] = draw_gender(rng) ? 1.0 : 0.0;
      double u = unit(rng);
      int cat = 3;
      double cum = 0.0;
      for (int k = 0; k < 3; ++k) {
        cum += params.morbidity_probs[k];
        if (u < cum) {
          cat = k;
          break;
        }
      }
      morb_m[row] = cat == 1 ? 1.0 : 0.0;
      morb_h[row] = cat == 2 ? 1.0 : 0.0;
      morb_v[row] = cat == 3 ? 1.0 : 0.0;
      years[row] = draw_years(rng);
    }
  }

  double mean = 0.0;
  for (double a : age) mean += a;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double a : age) ss += (a - mean) * (a - mean);
  double sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 1.0;
  if (!(sd > 0.0)) sd = 1.0;
  for (double& a : age) a = (a - mean) / sd;

  const auto& beta = params.beta;
  for (row = 0; row < n; ++row) {
    int j = static_cast<int>(practice[row]);
    double eta = beta[0] + beta[1] * age[row] + beta[2] * gender[row] +
                 beta[3] * morb_m[row] + beta[4] * morb_h[row] +
                 beta[5] * morb_v[row] + b[j];
    double mu = years[row] * std::exp(eta);
    std::gamma_distribution<double> draw_mix(params.theta, 1.0 / params.theta);
    std::poisson_distribution<int64_t> draw_count(mu * draw_mix(rng));
    consults[row] = static_cast<double>(draw_count(rng));
  }

  Schema schema;
  schema.columns = {
      {"practice", Role::Cluster, Kind::Categorical, {}},
      {"age", Role::Covariate, Kind::Continuous, {}},
      {"gender", Role::Covariate, Kind::Binary, {}},
      {"morb_moderate", Role::Covariate, Kind::Binary, {}},
      {"morb_high", Role::Covariate, Kind::Binary, {}},
      {"morb_veryhigh", Role::Covariate, Kind::Binary, {}},
      {"years", Role::Exposure, Kind::Continuous, {}},
      {"consults", Role::Outcome, Kind::Count, {}},
  };
  Dataset data = Dataset::from_columns(
      std::move(schema),
      {std::move(practice), std::move(age), std::move(gender),
       std::move(morb_m), std::move(morb_h), std::move(morb_v),
       std::move(years), std::move(consults)},
      cluster_labels(params.n_clusters));

  SimTruth truth;
  truth.plan = "consults";
  truth.coef_names = {"intercept",     "age",       "gender",
                      "morb_moderate", "morb_high", "morb_veryhigh"};
  truth.beta = params.beta;
  truth.tau2 = params.tau2;
  truth.theta = params.theta;
  truth.seed = seed;
  truth.b = std::move(b);
  return {std::move(data), std::move(truth)};
}

void write_truth_json(const SimTruth& truth, const std::string& path) {
  nlohmann::json j;
  j["plan"] = truth.plan;
  nlohmann::json coefs = nlohmann::json::object();
  for (size_t i = 0; i < truth.coef_names.size(); ++i)
    coefs[truth.coef_names[i]] = truth.beta[i];
  j["coefficients"] = coefs;
  j["coef_order"] = truth.coef_names;
  j["tau2"] = truth.tau2;
  if (std::isfinite(truth.theta)) j["theta"] = truth.theta;
  j["seed"] = truth.seed;
  j["n_clusters"] = truth.b.size();
  j["b"] = truth.b;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << j.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace tallfit
