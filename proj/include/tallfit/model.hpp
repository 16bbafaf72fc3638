#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "tallfit/dataset.hpp"
#include "tallfit/design.hpp"
#include "tallfit/family.hpp"

namespace tallfit {

// Product term over covariate columns, e.g. {"case","time"} for case:time.
struct Term {
  std::vector<std::string> columns;
};

Term parse_term(const std::string& text);  // "a:b:c"

struct ModelSpec {
  Family family;
  std::vector<Term> terms;
  bool intercept = true;
  std::string offset_column;  // exposure column; log-link families only
};

// Numeric view of a model on a dataset: expanded design matrix (categorical
// covariates as reference-coded indicators), outcome, per-row weights, a
// link-scale offset, and dense cluster indices.
struct ModelFrame {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
  Eigen::VectorXd w;
  Eigen::VectorXd offset;
  std::vector<int32_t> cluster;
  int n_clusters = 0;
  std::vector<std::string> names;
  double sum_weights = 0.0;
};

ModelFrame build_frame(const ModelSpec& spec, const Dataset& data);
ModelFrame build_frame(const ModelSpec& spec, const CollapsedDataset& collapsed);

// Single design-matrix row for a candidate design (offset 0, weight 1).
Eigen::RowVectorXd design_row(const ModelSpec& spec, const DesignGrid& grid,
                              const Design& d);

// w-weighted means of the non-intercept design columns, and the centering
// step itself (used when pooled per-cluster fits should share one origin).
Eigen::VectorXd weighted_column_means(const ModelFrame& frame);
void apply_centering(ModelFrame* frame, const Eigen::VectorXd& means);

}  // namespace tallfit
