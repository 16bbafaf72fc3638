#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "tallfit/schema.hpp"

namespace tallfit {

struct StandardizeRecord {
  std::string column;
  double mean = 0.0;
  double sd = 1.0;
};

struct BinRecord {
  std::string column;      // source continuous column
  std::string bin_column;  // the derived categorical column
  std::vector<double> cutpoints;
};

// Columnar table. Every cell is a double: binary 0/1, count a nonnegative
// integer, categorical the level index into its ColumnSpec, cluster the
// dense cluster index (labels kept separately), continuous/exposure a
// finite value.
class Dataset {
 public:
  static Dataset load_csv(const std::string& path, const Schema& schema);
  static Dataset from_columns(Schema schema,
                              std::vector<std::vector<double>> columns,
                              std::vector<std::string> cluster_labels);

  int64_t n_rows() const { return n_rows_; }
  int n_cols() const { return static_cast<int>(schema_.columns.size()); }
  int n_clusters() const { return static_cast<int>(cluster_labels_.size()); }
  const Schema& schema() const { return schema_; }
  const ColumnSpec& column_spec(int i) const { return schema_.columns[i]; }
  const std::vector<double>& col(int i) const { return columns_[i]; }
  const std::vector<double>& col(const std::string& name) const;
  int32_t cluster_of(int64_t row) const;
  const std::vector<std::string>& cluster_labels() const { return cluster_labels_; }
  const std::vector<StandardizeRecord>& standardizations() const { return standardize_log_; }
  const std::vector<BinRecord>& bins() const { return bin_log_; }

  // Row subset in the given order; cluster indices are re-densified by first
  // appearance within the subset.
  Dataset select_rows(const std::vector<int64_t>& rows) const;

  void append_column(ColumnSpec spec, std::vector<double> values);

 private:
  Dataset() = default;
  void check_values() const;

  Schema schema_;
  std::vector<std::vector<double>> columns_;
  std::vector<std::string> cluster_labels_;
  std::vector<StandardizeRecord> standardize_log_;
  std::vector<BinRecord> bin_log_;
  int64_t n_rows_ = 0;

  friend Dataset standardize(const Dataset&, const std::vector<std::string>&);
  friend Dataset bin_continuous(const Dataset&, const std::string&,
                                const struct BinSchemeSpec&);
};

struct BinSchemeSpec {
  enum class Type { Quartile, Cutpoints };
  Type type = Type::Quartile;
  std::vector<double> cutpoints;  // Cutpoints only; strictly increasing

  static BinSchemeSpec quartile() { return {Type::Quartile, {}}; }
  static BinSchemeSpec at(std::vector<double> cuts) {
    return {Type::Cutpoints, std::move(cuts)};
  }
};

// Center/scale continuous covariate columns in place (new dataset); records
// the transform so reports can state what was applied.
Dataset standardize(const Dataset& data, const std::vector<std::string>& columns);

// Derive `<column>__bin`, a categorical covariate keyed by right-open
// intervals. Quartile cutpoints sit at the midpoint between the nearest-rank
// quarter order statistic and the next sorted value, so evenly duplicated
// values land in balanced bins.
Dataset bin_continuous(const Dataset& data, const std::string& column,
                       const BinSchemeSpec& scheme);

// One row per distinct (outcome, covariates, cluster, exposure) combination.
// Continuous covariates named in `binned_continuous` are keyed by their bin
// column and carry the within-group mean in the table; every continuous
// covariate must be listed. Weights are group row counts.
struct CollapsedDataset {
  Dataset table;
  std::vector<double> weight;
  std::vector<std::string> binned_continuous;
  int64_t source_rows = 0;
};

CollapsedDataset collapse(const Dataset& data,
                          const std::vector<std::string>& binned_continuous);

// Per-cluster datasets in dense cluster order.
std::vector<Dataset> partition_by_cluster(const Dataset& data);

// Collapsed table as CSV: categorical cells as labels, cluster as original
// label, a `weight` column, and `<col>__mean` headers for the listed
// continuous columns.
void write_collapsed_csv(const CollapsedDataset& c, const std::string& path);

void write_dataset_csv(const Dataset& data, const std::string& path);

}  // namespace tallfit
