#pragma once

#include <string>
#include <vector>

namespace tallfit {

enum class Role { Outcome, Covariate, Cluster, Exposure };
enum class Kind { Binary, Count, Categorical, Continuous };

const char* role_name(Role r);
const char* kind_name(Kind k);

struct ColumnSpec {
  std::string name;
  Role role = Role::Covariate;
  Kind kind = Kind::Continuous;
  std::vector<std::string> levels;  // categorical only; first level = reference
};

// Column roster for a dataset: exactly one outcome, exactly one cluster
// column, at most one exposure column.
struct Schema {
  std::vector<ColumnSpec> columns;

  int find(const std::string& name) const;        // -1 when absent
  int index_of(const std::string& name) const;    // throws when absent
  int outcome_index() const;
  int cluster_index() const;
  int exposure_index() const;  // -1 when absent
  void validate() const;
};

// Text config, one column per line:
//   name = role:kind[:level|level|...]
// Roles: outcome, covariate, cluster, exposure. Kinds: binary, count,
// categorical, continuous. The kind may be omitted for cluster (labels are
// arbitrary) and exposure (continuous). '#' starts a comment.
Schema parse_schema_text(const std::string& text);
Schema load_schema_file(const std::string& path);

// Inverse of parse_schema_text (cluster lines stay kind-free; categorical
// levels are baked in so a written schema loads back identically).
std::string schema_to_text(const Schema& schema);
void write_schema_file(const Schema& schema, const std::string& path);

}  // namespace tallfit
