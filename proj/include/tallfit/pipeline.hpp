#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "tallfit/dataset.hpp"
#include "tallfit/design.hpp"
#include "tallfit/glmm.hpp"
#include "tallfit/meta.hpp"
#include "tallfit/subsample.hpp"

namespace tallfit {

// The fitting strategies: the reference full-data fit, the collapsed
// weighted fit, three divide-and-recombine poolings, and the two
// design-guided subsampling variants.
enum class Method {
  Full,
  Weighted,
  MetaUni,
  MetaMv,
  MetaFixed,
  Subsample,
  SubsampleModified,
};

Method parse_method(const std::string& name);
const char* method_name(Method m);

struct MethodOptions {
  GlmmOptions glmm;

  // weighted: explicit cutpoints per continuous covariate; unlisted ones are
  // quartile-binned.
  std::vector<std::pair<std::string, std::vector<double>>> cutpoints;

  // meta poolings. The stage-one estimates can be captured to CSV, or reused
  // from one, so a single per-cluster pass serves several pooling runs.
  Tau2Method tau2_method = Tau2Method::Reml;
  bool center = false;
  std::string cluster_estimates_in;
  std::string cluster_estimates_out;

  // subsampling
  int64_t initial_size = 1000;
  int64_t target_size = 0;       // 0: ceil(target_fraction * n_rows)
  double target_fraction = 0.10;
  double step_fraction = 0.25;   // modified variant only
  uint64_t seed = 1;
  std::optional<DesignGrid> grid;  // default: enumerated from the data
  int max_grid_levels = 25;
};

// Flattened view every method can fill, so reports and serialization treat
// the strategies uniformly. Coefficients stay on the link scale; response
// scale (OR/RR) conversion is presentation-only.
struct MethodResult {
  Method method = Method::Full;
  std::string family;
  std::string link;
  std::vector<std::string> coef_names;
  Eigen::VectorXd beta;
  Eigen::VectorXd se;
  double tau2 = std::numeric_limits<double>::quiet_NaN();
  double theta = std::numeric_limits<double>::quiet_NaN();
  double loglik = std::numeric_limits<double>::quiet_NaN();
  bool converged = false;
  int64_t n_obs = 0;          // observations the final fit consumed
  int64_t n_source_rows = 0;
  double runtime_seconds = 0.0;
  std::string note;

  std::optional<GlmmFit> glmm;
  std::optional<MetaResult> meta;
  std::vector<std::string> cluster_labels;  // keys for the eb-mode table
  std::vector<SubsampleStepInfo> history;   // subsampling variants
  DesignGrid grid;                          // populated with the history
};

// Full factorial over the distinct values of every model covariate, in
// schema order. Categorical covariates and covariates with more than
// max_levels distinct values need an explicit grid instead.
DesignGrid grid_from_data(const Dataset& data, const ModelSpec& spec,
                          int max_levels = 25);

// The weighted method's preparation step, also exposed standalone: bin every
// continuous covariate (explicit cutpoints where given, quartiles otherwise)
// and deduplicate into the weighted representation.
CollapsedDataset collapse_prepared(
    const Dataset& data,
    const std::vector<std::pair<std::string, std::vector<double>>>& cutpoints);

MethodResult run_method(const Dataset& data, const ModelSpec& spec,
                        Method method, const MethodOptions& options = {});

struct ComparisonEntry {
  Method method = Method::Full;
  std::optional<MethodResult> result;  // empty when the method failed
  std::string error;
};

struct ComparisonReport {
  std::vector<ComparisonEntry> entries;
  int repeats = 3;
};

// Runs every method `repeats` times (runtime averaged; estimates from the
// last run, which match earlier runs — everything is seed-deterministic).
// A failing method is recorded in its entry and the rest proceed.
ComparisonReport compare_methods(const Dataset& data, const ModelSpec& spec,
                                 const std::vector<Method>& methods,
                                 const MethodOptions& options = {},
                                 int repeats = 3);

// JSON result document (link-scale coefficients plus method metadata).
std::string method_result_to_json(const MethodResult& result);
void write_method_result_json(const MethodResult& result,
                              const std::string& path);

// Flat records for the individual fit types; the mixed-model record adds
// tau2, quadrature settings, and the mode table keyed by cluster label.
std::string glm_fit_to_json(const GlmFit& fit);
std::string glmm_fit_to_json(const GlmmFit& fit,
                             const std::vector<std::string>& cluster_labels = {});

// Side-by-side CSV: one row per quantity (counts, runtime, tau2, theta, then
// coefficients), two columns per method. Logit/log-link coefficient rows are
// exponentiated with delta-method SEs and say so in the scale column.
void write_comparison_csv(const ComparisonReport& report,
                          const std::string& path);

}  // namespace tallfit
