#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "tallfit/dataset.hpp"
#include "tallfit/design.hpp"
#include "tallfit/glm.hpp"
#include "tallfit/model.hpp"
#include "tallfit/schema.hpp"
#include "tallfit/subsample.hpp"

using namespace tallfit;

namespace {

struct Fixture {
  std::shared_ptr<const Dataset> data;
  ModelSpec spec;
  DesignGrid grid;
};

// Bernoulli rows over a 2 x 3 factorial of discrete covariates, six clusters.
Fixture make_fixture(int n = 600, uint64_t seed = 5,
                     std::vector<double> t_levels = {0.0, 1.0, 2.0}) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> coin(0, 1), tri(0, 2), pick(0, 5);
  std::normal_distribution<double> norm(0.0, 1.0);
  std::vector<double> b(6);
  for (double& v : b) v = 0.3 * norm(rng);
  std::vector<double> cl(n), a(n), t(n), y(n);
  std::vector<std::string> labels;
  for (int j = 0; j < 6; ++j) labels.push_back("c" + std::to_string(j + 1));
  for (int i = 0; i < n; ++i) {
    int j = pick(rng);
    cl[i] = j;
    a[i] = coin(rng);
    t[i] = tri(rng);
    double eta = -0.2 + 0.5 * a[i] - 0.3 * t[i] + b[j];
    y[i] = std::bernoulli_distribution(fam::sigmoid(eta))(rng) ? 1 : 0;
  }
  Schema schema = parse_schema_text(
      "g = cluster\na = covariate:binary\nt = covariate:count\n"
      "y = outcome:binary\n");
  Fixture fx;
  fx.data = std::make_shared<Dataset>(
      Dataset::from_columns(schema, {cl, a, t, y}, labels));
  fx.spec.family = Family::bernoulli();
  fx.spec.terms = {parse_term("a"), parse_term("t")};
  fx.grid = enumerate_designs({"a", "t"}, {{0.0, 1.0}, std::move(t_levels)});
  return fx;
}

// Every source row sits in exactly one of: the subsample, a pool bucket, or
// the unmapped count.
void check_partition(const SubsampleState& st) {
  const int64_t n = st.data->n_rows();
  std::vector<int> seen(n, 0);
  for (int64_t r : st.subsample_rows) {
    REQUIRE(r >= 0);
    REQUIRE(r < n);
    ++seen[r];
  }
  int64_t pooled = 0;
  for (const auto& bucket : st.pool_by_design) {
    CHECK(std::is_sorted(bucket.begin(), bucket.end()));
    for (int64_t r : bucket) {
      ++seen[r];
      ++pooled;
    }
  }
  CHECK(pooled == st.pool_selectable);
  int64_t covered = 0;
  for (int64_t r = 0; r < n; ++r) {
    CHECK(seen[r] <= 1);
    covered += seen[r];
  }
  CHECK(covered + st.pool_unmapped == n);
}

}  // namespace

TEST_CASE("design enumeration is an odometer with the last covariate fastest") {
  DesignGrid g = enumerate_designs({"a", "t"}, {{0.0, 1.0}, {0.0, 1.0, 2.0}});
  REQUIRE(g.n_designs() == 6);
  std::vector<Design> expected{{0, 0}, {0, 1}, {0, 2}, {1, 0}, {1, 1}, {1, 2}};
  for (int i = 0; i < 6; ++i) CHECK(g.designs[i] == expected[i]);

  DesignGrid ex = enumerate_designs({"u", "v"}, {{0.0, 1.0}, {0.0, 1.0}},
                                    {{"u", "v"}});
  REQUIRE(ex.n_designs() == 3);
  CHECK(ex.designs == std::vector<Design>{{0, 0}, {0, 1}, {1, 0}});

  CHECK_THROWS_AS(enumerate_designs({}, {}), UsageError);
  CHECK_THROWS_AS(enumerate_designs({"a"}, {{0.0, 0.0}}), UsageError);
  CHECK_THROWS_AS(enumerate_designs({"a"}, {{0.0}}, {{"a", "b"}}), UsageError);
}

TEST_CASE("nearest design minimizes euclidean distance with lowest-index ties") {
  DesignGrid g = enumerate_designs({"a", "t"}, {{0.0, 1.0}, {0.0, 1.0, 2.0}});
  std::vector<char> all(6, 1);
  CHECK(nearest_design(g, {0.9, 1.8}, all) == 5);
  CHECK(nearest_design(g, {0.0, 0.1}, all) == 0);
  // (0.5, 1) is equidistant from designs 1 and 4: the lower index wins.
  CHECK(nearest_design(g, {0.5, 1.0}, all) == 1);
  std::vector<char> only_last(6, 0);
  only_last[5] = 1;
  CHECK(nearest_design(g, {0.0, 0.0}, only_last) == 5);
  CHECK_THROWS_AS(nearest_design(g, {0.0}, all), UsageError);
  CHECK_THROWS_AS(nearest_design(g, {0.0, 0.0}, std::vector<char>(6, 0)),
                  UsageError);
}

TEST_CASE("utility matches the rank-one determinant identity") {
  Fixture fx = make_fixture();
  Eigen::VectorXd beta(3);
  beta << 0.1, 0.4, -0.3;
  Eigen::MatrixXd L(3, 3);
  L << 1.2, 0.0, 0.0, 0.3, 0.9, 0.0, -0.2, 0.1, 1.5;
  Eigen::MatrixXd A = L * L.transpose();

  int best = -1;
  double best_u = -1.0;
  for (int i = 0; i < fx.grid.n_designs(); ++i) {
    Eigen::RowVectorXd x = design_row(fx.spec, fx.grid, fx.grid.designs[i]);
    double mu = fam::sigmoid(x.dot(beta));
    double w = mu * (1.0 - mu);
    double expected =
        A.determinant() * (1.0 + w * (x * A.inverse() * x.transpose())(0, 0));
    double got =
        design_utility(fx.spec, beta, fx.grid, fx.grid.designs[i], A);
    CHECK(std::abs(got - expected) <= 1e-10 * std::max(1.0, std::abs(expected)));
    if (got > best_u) {
      best_u = got;
      best = i;
    }
  }
  // The argmax survives the comparison both ways.
  double brute_best = -1.0;
  int brute_arg = -1;
  for (int i = 0; i < fx.grid.n_designs(); ++i) {
    Eigen::RowVectorXd x = design_row(fx.spec, fx.grid, fx.grid.designs[i]);
    double mu = fam::sigmoid(x.dot(beta));
    double det = (A + mu * (1.0 - mu) * x.transpose() * x).determinant();
    if (det > brute_best) {
      brute_best = det;
      brute_arg = i;
    }
  }
  CHECK(best == brute_arg);

  // A singular sum scores zero instead of going negative.
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(3, 3);
  Design d0 = fx.grid.designs[0];
  CHECK(design_utility(fx.spec, beta, fx.grid, d0, zero) == 0.0);
}

TEST_CASE("init validates its options") {
  Fixture fx = make_fixture(200);
  SubsampleOptions opt;
  opt.initial_size = 50;
  opt.target_size = 100;
  CHECK_THROWS_AS(subsample_init(nullptr, fx.spec, fx.grid, opt), UsageError);

  SubsampleOptions bad = opt;
  bad.initial_size = 0;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, fx.grid, bad), UsageError);
  bad = opt;
  bad.initial_size = 201;
  bad.target_size = 201;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, fx.grid, bad), UsageError);
  bad = opt;
  bad.target_size = 49;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, fx.grid, bad), UsageError);
  bad = opt;
  bad.target_size = 9999;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, fx.grid, bad), UsageError);
  bad = opt;
  bad.mode = SubsampleMode::Fraction;
  bad.fraction = 0.0;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, fx.grid, bad), UsageError);
  bad.fraction = 1.5;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, fx.grid, bad), UsageError);

  DesignGrid empty;
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, empty, opt), UsageError);
  DesignGrid alien = enumerate_designs({"zzz"}, {{0.0, 1.0}});
  CHECK_THROWS_AS(subsample_init(fx.data, fx.spec, alien, opt), UsageError);
}

TEST_CASE("the initial draw is seeded, distinct, and partitions the rows") {
  Fixture fx = make_fixture();
  SubsampleOptions opt;
  opt.initial_size = 80;
  opt.target_size = 200;
  opt.seed = 17;
  SubsampleState st = subsample_init(fx.data, fx.spec, fx.grid, opt);
  CHECK(static_cast<int64_t>(st.subsample_rows.size()) == 80);
  CHECK(std::is_sorted(st.subsample_rows.begin(), st.subsample_rows.end()));
  CHECK(std::adjacent_find(st.subsample_rows.begin(), st.subsample_rows.end()) ==
        st.subsample_rows.end());
  CHECK(st.pool_unmapped == 0);
  CHECK(st.pool_selectable == fx.data->n_rows() - 80);
  check_partition(st);

  SubsampleState again = subsample_init(fx.data, fx.spec, fx.grid, opt);
  CHECK(again.subsample_rows == st.subsample_rows);
  SubsampleOptions other = opt;
  other.seed = 18;
  SubsampleState diff = subsample_init(fx.data, fx.spec, fx.grid, other);
  CHECK(diff.subsample_rows != st.subsample_rows);

  Dataset sub = subsample_dataset(st);
  CHECK(sub.n_rows() == 80);
  int t_idx = fx.data->schema().index_of("t");
  for (size_t i = 0; i < st.subsample_rows.size(); ++i)
    CHECK(sub.col(t_idx)[i] == fx.data->col(t_idx)[st.subsample_rows[i]]);
}

TEST_CASE("full-design steps drain whole buckets and keep the partition") {
  Fixture fx = make_fixture();
  SubsampleOptions opt;
  opt.initial_size = 120;
  opt.target_size = 400;
  opt.seed = 3;
  SubsampleState st = subsample_init(fx.data, fx.spec, fx.grid, opt);

  std::vector<int64_t> sizes_before;
  for (const auto& b : st.pool_by_design)
    sizes_before.push_back(static_cast<int64_t>(b.size()));

  SubsampleStepInfo step = subsample_step(st);
  CHECK(step.iteration == 1);
  CHECK(step.chosen_design >= 0);
  CHECK(step.realized_design == step.chosen_design);  // every bucket is stocked
  CHECK(step.utility > 0.0);
  CHECK(step.rows_added == sizes_before[step.realized_design]);
  CHECK(st.pool_by_design[step.realized_design].empty());
  CHECK(step.size_after == 120 + step.rows_added);
  check_partition(st);
  REQUIRE(st.history.size() == 1);
  CHECK(st.last_fit.has_value());

  // Steps are deterministic in the seed: a fresh state replays identically.
  SubsampleState replay = subsample_init(fx.data, fx.spec, fx.grid, opt);
  SubsampleStepInfo step2 = subsample_step(replay);
  CHECK(step2.chosen_design == step.chosen_design);
  CHECK(step2.realized_design == step.realized_design);
  CHECK(step2.rows_added == step.rows_added);
  CHECK(replay.subsample_rows == st.subsample_rows);
}

TEST_CASE("fraction steps take a seeded ceil share of the bucket") {
  Fixture fx = make_fixture();
  SubsampleOptions opt;
  opt.initial_size = 120;
  opt.target_size = 400;
  opt.seed = 9;
  opt.mode = SubsampleMode::Fraction;
  opt.fraction = 0.4;
  SubsampleState st = subsample_init(fx.data, fx.spec, fx.grid, opt);
  std::vector<int64_t> sizes_before;
  for (const auto& b : st.pool_by_design)
    sizes_before.push_back(static_cast<int64_t>(b.size()));

  SubsampleStepInfo step = subsample_step(st);
  int64_t bucket = sizes_before[step.realized_design];
  CHECK(step.rows_added ==
        static_cast<int64_t>(std::ceil(0.4 * static_cast<double>(bucket))));
  CHECK(static_cast<int64_t>(st.pool_by_design[step.realized_design].size()) ==
        bucket - step.rows_added);
  check_partition(st);

  SubsampleState replay = subsample_init(fx.data, fx.spec, fx.grid, opt);
  subsample_step(replay);
  CHECK(replay.subsample_rows == st.subsample_rows);
}

TEST_CASE("a chosen design with an empty bucket realizes the nearest stocked one") {
  // Grid level t = 9 never occurs in the data, so those buckets start empty;
  // its leverage makes it the utility argmax sooner or later.
  Fixture fx = make_fixture(600, 5, {0.0, 1.0, 2.0, 9.0});
  SubsampleOptions opt;
  opt.initial_size = 120;
  opt.target_size = 590;
  opt.seed = 2;
  SubsampleState st = subsample_init(fx.data, fx.spec, fx.grid, opt);
  for (int i = 0; i < fx.grid.n_designs(); ++i)
    if (fx.grid.designs[i][1] == 9.0) CHECK(st.pool_by_design[i].empty());

  bool saw_fallback = false;
  while (static_cast<int64_t>(st.subsample_rows.size()) < opt.target_size &&
         st.pool_selectable > 0) {
    std::vector<char> available(fx.grid.n_designs());
    for (int i = 0; i < fx.grid.n_designs(); ++i)
      available[i] = !st.pool_by_design[i].empty();
    SubsampleStepInfo step = subsample_step(st);
    if (step.realized_design != step.chosen_design) {
      saw_fallback = true;
      CHECK(st.pool_by_design[step.chosen_design].empty());
      CHECK(step.realized_design ==
            nearest_design(fx.grid, fx.grid.designs[step.chosen_design],
                           available));
    }
    check_partition(st);
  }
  CHECK(saw_fallback);
}

TEST_CASE("a failed refit leaves the state resumable") {
  Fixture fx = make_fixture();
  SubsampleOptions opt;
  opt.initial_size = 120;
  opt.target_size = 400;
  opt.seed = 4;
  opt.fit.grad_tol = 1e-300;  // unreachable: the refit must report failure
  SubsampleState st = subsample_init(fx.data, fx.spec, fx.grid, opt);
  std::vector<int64_t> rows_before = st.subsample_rows;
  int64_t selectable_before = st.pool_selectable;

  CHECK_THROWS_AS(subsample_step(st), NumericError);
  CHECK(st.iteration == 0);
  CHECK(st.history.empty());
  CHECK(st.subsample_rows == rows_before);
  CHECK(st.pool_selectable == selectable_before);

  st.options.fit.grad_tol = 1e-6;
  SubsampleStepInfo step = subsample_step(st);
  CHECK(step.iteration == 1);
  CHECK(step.rows_added > 0);
  check_partition(st);
}

TEST_CASE("an exhausted pool refuses further steps") {
  Fixture fx = make_fixture(40);
  SubsampleOptions opt;
  opt.initial_size = 10;
  opt.target_size = 40;
  SubsampleState st = subsample_init(fx.data, fx.spec, fx.grid, opt);
  while (st.pool_selectable > 0) subsample_step(st);
  CHECK(st.subsample_rows.size() == 40);
  CHECK_THROWS_AS(subsample_step(st), UsageError);
}

TEST_CASE("a full run reaches the target with a growing, disjoint subsample") {
  Fixture fx = make_fixture();
  SubsampleOptions opt;
  opt.initial_size = 100;
  opt.target_size = 320;
  opt.seed = 11;
  opt.mode = SubsampleMode::Fraction;
  opt.fraction = 0.3;
  SubsampleResult res = subsample_run(fx.data, fx.spec, fx.grid, opt);
  CHECK(static_cast<int64_t>(res.state.subsample_rows.size()) >= 320);
  CHECK(res.fit.converged);
  REQUIRE(!res.state.history.empty());
  int64_t prev = 100;
  for (const auto& s : res.state.history) {
    CHECK(s.size_after == prev + s.rows_added);
    CHECK(s.rows_added > 0);
    prev = s.size_after;
  }
  CHECK(prev == static_cast<int64_t>(res.state.subsample_rows.size()));
  check_partition(res.state);

  SubsampleResult again = subsample_run(fx.data, fx.spec, fx.grid, opt);
  CHECK(again.state.subsample_rows == res.state.subsample_rows);
  CHECK(again.fit.loglik == doctest::Approx(res.fit.loglik).epsilon(1e-12));
}

TEST_CASE("the history csv carries the designs per step") {
  Fixture fx = make_fixture();
  SubsampleOptions opt;
  opt.initial_size = 100;
  opt.target_size = 250;
  opt.seed = 13;
  opt.mode = SubsampleMode::Fraction;
  opt.fraction = 0.5;
  SubsampleResult res = subsample_run(fx.data, fx.spec, fx.grid, opt);

  std::string path = "subsample_test_history.csv";
  write_history_csv(res.state.history, fx.grid, path);
  std::ifstream in(path);
  REQUIRE(in.good());
  std::string header;
  std::getline(in, header);
  CHECK(header ==
        "iteration,chosen_design,realized_design,a_chosen,t_chosen,"
        "a_realized,t_realized,utility,rows_added,size_after");
  int lines = 0;
  std::string line, first;
  while (std::getline(in, line))
    if (!line.empty()) {
      if (lines == 0) first = line;
      ++lines;
    }
  in.close();
  std::remove(path.c_str());
  CHECK(lines == static_cast<int>(res.state.history.size()));

  const SubsampleStepInfo& s0 = res.state.history.front();
  std::stringstream ss(first);
  std::string field;
  std::getline(ss, field, ',');
  CHECK(field == std::to_string(s0.iteration));
  std::getline(ss, field, ',');
  CHECK(field == std::to_string(s0.chosen_design));
  std::getline(ss, field, ',');
  CHECK(field == std::to_string(s0.realized_design));
  std::getline(ss, field, ',');
  CHECK(std::stod(field) == fx.grid.designs[s0.chosen_design][0]);
  std::getline(ss, field, ',');
  CHECK(std::stod(field) == fx.grid.designs[s0.chosen_design][1]);
}
