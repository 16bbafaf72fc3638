#include "tallfit/schema.hpp"

#include <fstream>
#include <sstream>

#include "tallfit/common.hpp"

namespace tallfit {

const char* role_name(Role r) {
  switch (r) {
    case Role::Outcome: return "outcome";
    case Role::Covariate: return "covariate";
    case Role::Cluster: return "cluster";
    case Role::Exposure: return "exposure";
  }
  return "?";
}

const char* kind_name(Kind k) {
  switch (k) {
    case Kind::Binary: return "binary";
    case Kind::Count: return "count";
    case Kind::Categorical: return "categorical";
    case Kind::Continuous: return "continuous";
  }
  return "?";
}

int Schema::find(const std::string& name) const {
  for (size_t i = 0; i < columns.size(); ++i)
    if (columns[i].name == name) return static_cast<int>(i);
  return -1;
}

int Schema::index_of(const std::string& name) const {
  int i = find(name);
  if (i < 0) throw UsageError("no column named '" + name + "'");
  return i;
}

namespace {
int find_role(const Schema& s, Role r) {
  for (size_t i = 0; i < s.columns.size(); ++i)
    if (s.columns[i].role == r) return static_cast<int>(i);
  return -1;
}
}  // namespace

int Schema::outcome_index() const { return find_role(*this, Role::Outcome); }
int Schema::cluster_index() const { return find_role(*this, Role::Cluster); }
int Schema::exposure_index() const { return find_role(*this, Role::Exposure); }

void Schema::validate() const {
  if (columns.empty()) throw DataError("schema has no columns");
  int n_outcome = 0, n_cluster = 0, n_exposure = 0;
  for (size_t i = 0; i < columns.size(); ++i) {
    const auto& c = columns[i];
    if (c.name.empty()) throw DataError("schema column without a name");
    for (size_t j = i + 1; j < columns.size(); ++j)
      if (columns[j].name == c.name)
        throw DataError("duplicate column name '" + c.name + "'");
    switch (c.role) {
      case Role::Outcome: ++n_outcome; break;
      case Role::Cluster: ++n_cluster; break;
      case Role::Exposure: ++n_exposure; break;
      case Role::Covariate: break;
    }
    if (c.kind == Kind::Categorical && c.role == Role::Covariate &&
        c.levels.size() < 2)
      throw DataError("categorical column '" + c.name +
                      "' needs at least two levels");
    if (c.role == Role::Exposure &&
        (c.kind == Kind::Categorical || c.kind == Kind::Binary))
      throw DataError("exposure column '" + c.name + "' must be numeric");
    if (c.role == Role::Outcome && c.kind == Kind::Categorical)
      throw DataError("outcome column '" + c.name +
                      "' must be binary, count, or continuous");
  }
  if (n_outcome != 1)
    throw DataError("schema must declare exactly one outcome column");
  if (n_cluster != 1)
    throw DataError("schema must declare exactly one cluster column");
  if (n_exposure > 1)
    throw DataError("schema allows at most one exposure column");
}

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == sep) {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

Role parse_role(const std::string& s, const std::string& line) {
  if (s == "outcome") return Role::Outcome;
  if (s == "covariate") return Role::Covariate;
  if (s == "cluster") return Role::Cluster;
  if (s == "exposure") return Role::Exposure;
  throw DataError("schema config: unknown role '" + s + "' in: " + line);
}

Kind parse_kind(const std::string& s, const std::string& line) {
  if (s == "binary") return Kind::Binary;
  if (s == "count") return Kind::Count;
  if (s == "categorical") return Kind::Categorical;
  if (s == "continuous") return Kind::Continuous;
  throw DataError("schema config: unknown kind '" + s + "' in: " + line);
}

}  // namespace

Schema parse_schema_text(const std::string& text) {
  Schema schema;
  std::istringstream in(text);
  std::string raw;
  while (std::getline(in, raw)) {
    std::string line = raw;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw DataError("schema config: expected 'name = role:kind', got: " + raw);
    ColumnSpec spec;
    spec.name = trim(line.substr(0, eq));
    std::string rhs = trim(line.substr(eq + 1));
    if (spec.name.empty() || rhs.empty())
      throw DataError("schema config: expected 'name = role:kind', got: " + raw);
    auto parts = split(rhs, ':');
    spec.role = parse_role(trim(parts[0]), raw);
    if (parts.size() >= 2) {
      spec.kind = parse_kind(trim(parts[1]), raw);
    } else if (spec.role == Role::Cluster) {
      spec.kind = Kind::Categorical;  // labels come from the data
    } else if (spec.role == Role::Exposure) {
      spec.kind = Kind::Continuous;
    } else {
      throw DataError("schema config: '" + spec.name + "' needs a kind");
    }
    if (parts.size() >= 3) {
      if (spec.kind != Kind::Categorical)
        throw DataError("schema config: levels given for non-categorical '" +
                        spec.name + "'");
      for (const auto& lvl : split(trim(parts[2]), '|')) {
        std::string l = trim(lvl);
        if (l.empty())
          throw DataError("schema config: empty level for '" + spec.name + "'");
        spec.levels.push_back(l);
      }
    }
    if (parts.size() > 3)
      throw DataError("schema config: too many ':' fields in: " + raw);
    if (spec.role == Role::Covariate && spec.kind == Kind::Categorical &&
        spec.levels.empty())
      throw DataError("schema config: categorical '" + spec.name +
                      "' needs a level list");
    schema.columns.push_back(std::move(spec));
  }
  schema.validate();
  return schema;
}

Schema load_schema_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_schema_text(buf.str());
}

std::string schema_to_text(const Schema& schema) {
  std::ostringstream out;
  for (const auto& c : schema.columns) {
    out << c.name << " = " << role_name(c.role);
    if (c.role == Role::Cluster) {
      out << '\n';  // labels come from the data
      continue;
    }
    out << ':' << kind_name(c.kind);
    if (c.kind == Kind::Categorical && c.role == Role::Covariate) {
      out << ':';
      for (size_t i = 0; i < c.levels.size(); ++i)
        out << (i ? "|" : "") << c.levels[i];
    }
    out << '\n';
  }
  return out.str();
}

void write_schema_file(const Schema& schema, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << schema_to_text(schema);
  if (!out) throw IoError("failed writing " + path);
}

}  // namespace tallfit
