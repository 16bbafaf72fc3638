#include "tallfit/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <unordered_map>

#include "tallfit/common.hpp"
#include "tallfit/csvio.hpp"

namespace tallfit {

namespace {

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.15g", v);
  if (std::strtod(buf, nullptr) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_number(const std::string& s, const std::string& column,
                    size_t row) {
  const char* p = s.c_str();
  char* end = nullptr;
  double v = std::strtod(p, &end);
  if (end == p || *end != '\0' || !std::isfinite(v))
    throw DataError("column '" + column + "', row " + std::to_string(row + 1) +
                    ": cannot parse number from '" + s + "'");
  return v;
}

void check_cell(const ColumnSpec& spec, double v, int64_t row,
                size_t n_levels) {
  auto bad = [&](const std::string& why) {
    throw DataError("column '" + spec.name + "', row " +
                    std::to_string(row + 1) + ": " + why);
  };
  if (!std::isfinite(v)) bad("value is not finite");
  switch (spec.role) {
    case Role::Exposure:
      if (!(v > 0.0)) bad("exposure must be positive");
      return;
    case Role::Cluster:
      if (v != std::floor(v) || v < 0 || v >= static_cast<double>(n_levels))
        bad("cluster index out of range");
      return;
    default:
      break;
  }
  switch (spec.kind) {
    case Kind::Binary:
      if (v != 0.0 && v != 1.0) bad("binary value must be 0 or 1");
      break;
    case Kind::Count:
      if (v < 0 || v != std::floor(v)) bad("count must be a nonnegative integer");
      break;
    case Kind::Categorical:
      if (v != std::floor(v) || v < 0 ||
          v >= static_cast<double>(spec.levels.size()))
        bad("categorical level index out of range");
      break;
    case Kind::Continuous:
      break;
  }
}

}  // namespace

const std::vector<double>& Dataset::col(const std::string& name) const {
  return columns_[schema_.index_of(name)];
}

int32_t Dataset::cluster_of(int64_t row) const {
  return static_cast<int32_t>(columns_[schema_.cluster_index()][row]);
}

void Dataset::check_values() const {
  if (n_rows_ < 1) throw DataError("dataset has no rows");
  for (int c = 0; c < n_cols(); ++c) {
    const auto& spec = schema_.columns[c];
    size_t n_levels = spec.role == Role::Cluster ? cluster_labels_.size()
                                                 : spec.levels.size();
    const auto& vals = columns_[c];
    if (static_cast<int64_t>(vals.size()) != n_rows_)
      throw DataError("column '" + spec.name + "' has wrong length");
    for (int64_t r = 0; r < n_rows_; ++r) check_cell(spec, vals[r], r, n_levels);
  }
  // Cluster indices must be dense: every label appears.
  std::vector<char> seen(cluster_labels_.size(), 0);
  const auto& cl = columns_[schema_.cluster_index()];
  for (int64_t r = 0; r < n_rows_; ++r) seen[static_cast<size_t>(cl[r])] = 1;
  for (size_t j = 0; j < seen.size(); ++j)
    if (!seen[j])
      throw DataError("cluster label '" + cluster_labels_[j] +
                      "' has no rows");
}

Dataset Dataset::load_csv(const std::string& path, const Schema& schema) {
  schema.validate();
  csv::Table t = csv::read_file(path);
  if (t.rows.empty()) throw DataError(path + ": no data rows");

  Dataset d;
  d.schema_ = schema;
  d.n_rows_ = static_cast<int64_t>(t.rows.size());
  d.columns_.assign(schema.columns.size(), {});

  std::unordered_map<std::string, int32_t> cluster_ids;
  for (size_t c = 0; c < schema.columns.size(); ++c) {
    const auto& spec = schema.columns[c];
    int src = t.find(spec.name);
    if (src < 0)
      throw DataError(path + ": missing column '" + spec.name + "'");
    auto& out = d.columns_[c];
    out.resize(t.rows.size());
    for (size_t r = 0; r < t.rows.size(); ++r) {
      const std::string& cell = t.rows[r][src];
      if (cell.empty())
        throw DataError(path + ": empty cell in column '" + spec.name +
                        "', row " + std::to_string(r + 1));
      if (spec.role == Role::Cluster) {
        auto [it, inserted] = cluster_ids.try_emplace(
            cell, static_cast<int32_t>(d.cluster_labels_.size()));
        if (inserted) d.cluster_labels_.push_back(cell);
        out[r] = it->second;
      } else if (spec.kind == Kind::Categorical) {
        auto lv = std::find(spec.levels.begin(), spec.levels.end(), cell);
        if (lv == spec.levels.end())
          throw DataError(path + ": column '" + spec.name + "', row " +
                          std::to_string(r + 1) + ": unknown level '" + cell +
                          "'");
        out[r] = static_cast<double>(lv - spec.levels.begin());
      } else {
        out[r] = parse_number(cell, spec.name, r);
      }
    }
  }
  d.check_values();
  return d;
}

Dataset Dataset::from_columns(Schema schema,
                              std::vector<std::vector<double>> columns,
                              std::vector<std::string> cluster_labels) {
  schema.validate();
  if (columns.size() != schema.columns.size())
    throw UsageError("from_columns: column count does not match schema");
  Dataset d;
  d.schema_ = std::move(schema);
  d.columns_ = std::move(columns);
  d.cluster_labels_ = std::move(cluster_labels);
  d.n_rows_ = d.columns_.empty() ? 0 : static_cast<int64_t>(d.columns_[0].size());
  d.check_values();
  return d;
}

Dataset Dataset::select_rows(const std::vector<int64_t>& rows) const {
  if (rows.empty()) throw UsageError("select_rows: empty selection");
  Dataset d;
  d.schema_ = schema_;
  d.standardize_log_ = standardize_log_;
  d.bin_log_ = bin_log_;
  d.n_rows_ = static_cast<int64_t>(rows.size());
  d.columns_.assign(columns_.size(), {});

  const int cluster_col = schema_.cluster_index();
  std::vector<int32_t> remap(cluster_labels_.size(), -1);
  for (size_t c = 0; c < columns_.size(); ++c) {
    auto& out = d.columns_[c];
    out.resize(rows.size());
    const auto& src = columns_[c];
    for (size_t i = 0; i < rows.size(); ++i) {
      int64_t r = rows[i];
      if (r < 0 || r >= n_rows_)
        throw UsageError("select_rows: row index out of range");
      double v = src[r];
      if (static_cast<int>(c) == cluster_col) {
        auto j = static_cast<size_t>(v);
        if (remap[j] < 0) {
          remap[j] = static_cast<int32_t>(d.cluster_labels_.size());
          d.cluster_labels_.push_back(cluster_labels_[j]);
        }
        v = remap[j];
      }
      out[i] = v;
    }
  }
  d.check_values();
  return d;
}

void Dataset::append_column(ColumnSpec spec, std::vector<double> values) {
  if (spec.role != Role::Covariate)
    throw UsageError("append_column: only covariate columns can be added");
  if (schema_.find(spec.name) >= 0)
    throw DataError("column '" + spec.name + "' already exists");
  if (static_cast<int64_t>(values.size()) != n_rows_)
    throw UsageError("append_column: wrong length");
  for (int64_t r = 0; r < n_rows_; ++r)
    check_cell(spec, values[r], r, spec.levels.size());
  schema_.columns.push_back(std::move(spec));
  columns_.push_back(std::move(values));
}

Dataset standardize(const Dataset& data,
                    const std::vector<std::string>& columns) {
  Dataset d = data;
  for (const auto& name : columns) {
    int c = d.schema_.index_of(name);
    const auto& spec = d.schema_.columns[c];
    if (spec.role != Role::Covariate || spec.kind != Kind::Continuous)
      throw UsageError("standardize: '" + name +
                       "' is not a continuous covariate");
    auto& vals = d.columns_[c];
    const int64_t n = d.n_rows_;
    if (n < 2) throw DataError("standardize: need at least two rows");
    NeumaierSum s;
    for (double v : vals) s.add(v);
    double mean = s.value() / static_cast<double>(n);
    NeumaierSum ss;
    for (double v : vals) ss.add((v - mean) * (v - mean));
    double sd = std::sqrt(ss.value() / static_cast<double>(n - 1));
    if (!(sd > 0.0))
      throw DataError("standardize: column '" + name + "' is constant");
    for (double& v : vals) v = (v - mean) / sd;
    d.standardize_log_.push_back({name, mean, sd});
  }
  return d;
}

namespace {

std::vector<double> quartile_cutpoints(const std::vector<double>& values,
                                       const std::string& column) {
  std::vector<double> sorted = values;
  std::sort(sorted.begin(), sorted.end());
  const size_t n = sorted.size();
  {
    size_t distinct = 1;
    for (size_t i = 1; i < n; ++i)
      if (sorted[i] != sorted[i - 1]) ++distinct;
    if (distinct < 4)
      throw DataError("bin: column '" + column +
                      "' has fewer than 4 distinct values");
  }
  std::vector<double> cuts;
  for (size_t k = 1; k <= 3; ++k) {
    // Nearest-rank quarter order statistic, then split halfway to the next
    // sorted value so the boundary row count lands on the intended side.
    size_t i = (k * n + 3) / 4;  // ceil(k*n/4), 1-based
    cuts.push_back(0.5 * (sorted[i - 1] + sorted[i]));
  }
  for (int k = 1; k < 3; ++k)
    if (!(cuts[k] > cuts[k - 1]))
      throw DataError("bin: column '" + column +
                      "' is too concentrated for quartile bins");
  return cuts;
}

}  // namespace

Dataset bin_continuous(const Dataset& data, const std::string& column,
                       const BinSchemeSpec& scheme) {
  Dataset d = data;
  int c = d.schema_.index_of(column);
  const auto& spec = d.schema_.columns[c];
  if (spec.role != Role::Covariate || spec.kind != Kind::Continuous)
    throw UsageError("bin: '" + column + "' is not a continuous covariate");

  std::vector<double> cuts;
  if (scheme.type == BinSchemeSpec::Type::Quartile) {
    cuts = quartile_cutpoints(d.columns_[c], column);
  } else {
    cuts = scheme.cutpoints;
    if (cuts.empty()) throw UsageError("bin: no cutpoints given");
    for (size_t i = 1; i < cuts.size(); ++i)
      if (!(cuts[i] > cuts[i - 1]))
        throw UsageError("bin: cutpoints must be strictly increasing");
  }

  ColumnSpec bin_spec;
  bin_spec.name = column + "__bin";
  bin_spec.role = Role::Covariate;
  bin_spec.kind = Kind::Categorical;
  bin_spec.levels.push_back("(-inf," + format_double(cuts[0]) + ")");
  for (size_t k = 1; k < cuts.size(); ++k)
    bin_spec.levels.push_back("[" + format_double(cuts[k - 1]) + "," +
                              format_double(cuts[k]) + ")");
  bin_spec.levels.push_back("[" + format_double(cuts.back()) + ",inf)");

  const auto& vals = d.columns_[c];
  std::vector<double> idx(vals.size());
  for (size_t r = 0; r < vals.size(); ++r) {
    auto it = std::upper_bound(cuts.begin(), cuts.end(), vals[r]);
    idx[r] = static_cast<double>(it - cuts.begin());
  }
  std::string bin_name = bin_spec.name;
  d.append_column(std::move(bin_spec), std::move(idx));
  d.bin_log_.push_back({column, bin_name, cuts});
  return d;
}

namespace {

struct KeyHash {
  size_t operator()(const std::vector<double>& key) const {
    size_t h = 0xcbf29ce484222325ULL;
    for (double v : key) {
      uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      h ^= bits;
      h *= 0x100000001b3ULL;
    }
    return h;
  }
};

}  // namespace

CollapsedDataset collapse(const Dataset& data,
                          const std::vector<std::string>& binned_continuous) {
  const auto& schema = data.schema();
  const int n_cols = data.n_cols();

  // Which key slot each column feeds: its own value, or its bin column's.
  std::vector<int> key_source(n_cols);
  for (int c = 0; c < n_cols; ++c) key_source[c] = c;
  for (const auto& name : binned_continuous) {
    int c = schema.index_of(name);
    const auto& spec = schema.columns[c];
    if (spec.role != Role::Covariate || spec.kind != Kind::Continuous)
      throw UsageError("collapse: '" + name + "' is not a continuous covariate");
    int b = schema.find(name + "__bin");
    if (b < 0)
      throw UsageError("collapse: '" + name + "' has no bin column; bin it first");
    key_source[c] = b;
  }
  for (int c = 0; c < n_cols; ++c) {
    const auto& spec = schema.columns[c];
    if (spec.role == Role::Covariate && spec.kind == Kind::Continuous &&
        key_source[c] == c)
      throw UsageError("collapse: continuous covariate '" + spec.name +
                       "' must be binned and listed");
  }

  const int64_t n = data.n_rows();
  std::unordered_map<std::vector<double>, int64_t, KeyHash> group_of;
  group_of.reserve(1024);
  std::vector<int64_t> first_row;    // representative per group
  std::vector<double> weight;
  std::vector<std::vector<double>> mean_sum(binned_continuous.size());
  std::vector<int> mean_col(binned_continuous.size());
  for (size_t i = 0; i < binned_continuous.size(); ++i)
    mean_col[i] = schema.index_of(binned_continuous[i]);

  std::vector<double> key(n_cols);
  for (int64_t r = 0; r < n; ++r) {
    for (int c = 0; c < n_cols; ++c) {
      double v = data.col(key_source[c])[r];
      key[c] = (v == 0.0) ? 0.0 : v;  // fold -0.0 into +0.0 for hashing
    }
    auto [it, inserted] =
        group_of.try_emplace(key, static_cast<int64_t>(first_row.size()));
    int64_t g = it->second;
    if (inserted) {
      first_row.push_back(r);
      weight.push_back(0.0);
      for (auto& ms : mean_sum) ms.push_back(0.0);
    }
    weight[g] += 1.0;
    for (size_t i = 0; i < mean_sum.size(); ++i)
      mean_sum[i][g] += data.col(mean_col[i])[r];
  }

  const int64_t m = static_cast<int64_t>(first_row.size());
  std::vector<std::vector<double>> cols(n_cols);
  for (int c = 0; c < n_cols; ++c) {
    cols[c].resize(m);
    for (int64_t g = 0; g < m; ++g) cols[c][g] = data.col(c)[first_row[g]];
  }
  for (size_t i = 0; i < mean_sum.size(); ++i)
    for (int64_t g = 0; g < m; ++g)
      cols[mean_col[i]][g] = mean_sum[i][g] / weight[g];

  return CollapsedDataset{
      Dataset::from_columns(schema, std::move(cols), data.cluster_labels()),
      std::move(weight), binned_continuous, n};
}

std::vector<Dataset> partition_by_cluster(const Dataset& data) {
  const int J = data.n_clusters();
  std::vector<std::vector<int64_t>> rows(J);
  for (int64_t r = 0; r < data.n_rows(); ++r)
    rows[data.cluster_of(r)].push_back(r);
  std::vector<Dataset> parts;
  parts.reserve(J);
  for (int j = 0; j < J; ++j) parts.push_back(data.select_rows(rows[j]));
  return parts;
}

namespace {

std::string cell_text(const Dataset& d, int c, int64_t r) {
  const auto& spec = d.schema().columns[c];
  double v = d.col(c)[r];
  if (spec.role == Role::Cluster)
    return d.cluster_labels()[static_cast<size_t>(v)];
  if (spec.kind == Kind::Categorical && spec.role == Role::Covariate)
    return spec.levels[static_cast<size_t>(v)];
  return format_double(v);
}

}  // namespace

void write_dataset_csv(const Dataset& data, const std::string& path) {
  csv::Table t;
  for (int c = 0; c < data.n_cols(); ++c)
    t.header.push_back(data.schema().columns[c].name);
  t.rows.reserve(data.n_rows());
  for (int64_t r = 0; r < data.n_rows(); ++r) {
    std::vector<std::string> row(data.n_cols());
    for (int c = 0; c < data.n_cols(); ++c) row[c] = cell_text(data, c, r);
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

void write_collapsed_csv(const CollapsedDataset& coll, const std::string& path) {
  const Dataset& d = coll.table;
  csv::Table t;
  for (int c = 0; c < d.n_cols(); ++c) {
    std::string name = d.schema().columns[c].name;
    if (std::find(coll.binned_continuous.begin(), coll.binned_continuous.end(),
                  name) != coll.binned_continuous.end())
      name += "__mean";
    t.header.push_back(name);
  }
  t.header.push_back("weight");
  t.rows.reserve(d.n_rows());
  for (int64_t r = 0; r < d.n_rows(); ++r) {
    std::vector<std::string> row;
    row.reserve(d.n_cols() + 1);
    for (int c = 0; c < d.n_cols(); ++c) row.push_back(cell_text(d, c, r));
    row.push_back(format_double(coll.weight[r]));
    t.rows.push_back(std::move(row));
  }
  csv::write_file(path, t);
}

}  // namespace tallfit
