#include "tallfit/model.hpp"

#include <algorithm>
#include <cmath>

#include "tallfit/common.hpp"

namespace tallfit {

Term parse_term(const std::string& text) {
  Term t;
  std::string cur;
  for (char c : text) {
    if (c == ':') {
      if (cur.empty()) throw UsageError("malformed term '" + text + "'");
      t.columns.push_back(cur);
      cur.clear();
    } else if (!std::isspace(static_cast<unsigned char>(c))) {
      cur += c;
    }
  }
  if (cur.empty()) throw UsageError("malformed term '" + text + "'");
  t.columns.push_back(cur);
  for (size_t i = 0; i < t.columns.size(); ++i)
    for (size_t j = i + 1; j < t.columns.size(); ++j)
      if (t.columns[i] == t.columns[j])
        throw UsageError("term '" + text + "' repeats column '" +
                         t.columns[i] + "'");
  return t;
}

namespace {

// One multiplicative factor of a design column: a column's raw value, or an
// indicator for one categorical level.
struct Piece {
  int col;
  int level;  // -1: raw value; otherwise indicator for this level index
};

struct ExpandedColumn {
  std::string name;
  std::vector<Piece> pieces;
};

const ColumnSpec& covariate_spec(const Schema& schema, const std::string& name) {
  int idx = schema.find(name);
  if (idx < 0) throw UsageError("model term names unknown column '" + name + "'");
  const ColumnSpec& spec = schema.columns[idx];
  if (spec.role != Role::Covariate)
    throw UsageError("model term column '" + name + "' is not a covariate");
  return spec;
}

std::vector<ExpandedColumn> expand_terms(const ModelSpec& spec,
                                         const Schema& schema) {
  std::vector<ExpandedColumn> cols;
  if (spec.intercept) cols.push_back({"intercept", {}});
  for (const auto& term : spec.terms) {
    if (term.columns.empty()) throw UsageError("empty model term");
    std::vector<ExpandedColumn> partial{{"", {}}};
    for (const auto& cname : term.columns) {
      const ColumnSpec& cs = covariate_spec(schema, cname);
      int cidx = schema.find(cname);
      std::vector<std::pair<std::string, Piece>> factor;
      if (cs.kind == Kind::Categorical) {
        for (int l = 1; l < static_cast<int>(cs.levels.size()); ++l)
          factor.push_back({cname + "=" + cs.levels[l], {cidx, l}});
      } else {
        factor.push_back({cname, {cidx, -1}});
      }
      std::vector<ExpandedColumn> next;
      for (const auto& base : partial)
        for (const auto& [fname, piece] : factor) {
          ExpandedColumn ec = base;
          ec.name = base.name.empty() ? fname : base.name + ":" + fname;
          ec.pieces.push_back(piece);
          next.push_back(std::move(ec));
        }
      partial = std::move(next);
    }
    for (auto& ec : partial) cols.push_back(std::move(ec));
  }
  if (cols.empty())
    throw UsageError("model has no terms and no intercept");
  for (size_t i = 0; i < cols.size(); ++i)
    for (size_t j = i + 1; j < cols.size(); ++j)
      if (cols[i].name == cols[j].name)
        throw UsageError("duplicate model column '" + cols[i].name + "'");
  return cols;
}

void check_outcome(const Family& family, const ColumnSpec& outcome) {
  switch (family.type) {
    case Family::Type::Bernoulli:
      if (outcome.kind != Kind::Binary)
        throw DataError("bernoulli family needs a binary outcome, '" +
                        outcome.name + "' is " + kind_name(outcome.kind));
      break;
    case Family::Type::Poisson:
    case Family::Type::NegBinomial:
      if (outcome.kind != Kind::Count)
        throw DataError(std::string(family.name()) +
                        " family needs a count outcome, '" + outcome.name +
                        "' is " + kind_name(outcome.kind));
      break;
    case Family::Type::Gaussian:
      break;
  }
}

int resolve_offset(const ModelSpec& spec, const Schema& schema) {
  if (spec.offset_column.empty()) return -1;
  if (!spec.family.log_link())
    throw UsageError(std::string("offsets are only supported for log-link "
                                 "families; family is ") + spec.family.name());
  int idx = schema.index_of(spec.offset_column);
  if (schema.columns[idx].role != Role::Exposure)
    throw UsageError("offset column '" + spec.offset_column +
                     "' does not have the exposure role");
  return idx;
}

ModelFrame build_frame_impl(const ModelSpec& spec, const Dataset& data,
                            const std::vector<double>* weights) {
  const Schema& schema = data.schema();
  check_outcome(spec.family, schema.columns[schema.outcome_index()]);
  auto cols = expand_terms(spec, schema);
  const int offset_idx = resolve_offset(spec, schema);

  const int64_t n = data.n_rows();
  const int p = static_cast<int>(cols.size());
  ModelFrame frame;
  frame.X.resize(n, p);
  frame.names.reserve(p);
  for (const auto& ec : cols) frame.names.push_back(ec.name);

  for (int c = 0; c < p; ++c) {
    const auto& pieces = cols[c].pieces;
    auto x = frame.X.col(c);
    x.setOnes();
    for (const Piece& piece : pieces) {
      const auto& src = data.col(piece.col);
      if (piece.level < 0) {
        for (int64_t r = 0; r < n; ++r) x(r) *= src[r];
      } else {
        for (int64_t r = 0; r < n; ++r)
          x(r) *= (src[r] == static_cast<double>(piece.level)) ? 1.0 : 0.0;
      }
    }
  }

  const auto& yv = data.col(schema.outcome_index());
  frame.y = Eigen::Map<const Eigen::VectorXd>(yv.data(), n);

  frame.w.resize(n);
  if (weights) {
    if (static_cast<int64_t>(weights->size()) != n)
      throw UsageError("frame weights have wrong length");
    frame.w = Eigen::Map<const Eigen::VectorXd>(weights->data(), n);
  } else {
    frame.w.setOnes();
  }
  frame.sum_weights = frame.w.sum();

  frame.offset.resize(n);
  if (offset_idx >= 0) {
    const auto& ev = data.col(offset_idx);
    for (int64_t r = 0; r < n; ++r) frame.offset(r) = std::log(ev[r]);
  } else {
    frame.offset.setZero();
  }

  frame.cluster.resize(n);
  for (int64_t r = 0; r < n; ++r) frame.cluster[r] = data.cluster_of(r);
  frame.n_clusters = data.n_clusters();
  return frame;
}

}  // namespace

ModelFrame build_frame(const ModelSpec& spec, const Dataset& data) {
  return build_frame_impl(spec, data, nullptr);
}

ModelFrame build_frame(const ModelSpec& spec, const CollapsedDataset& collapsed) {
  return build_frame_impl(spec, collapsed.table, &collapsed.weight);
}

Eigen::RowVectorXd design_row(const ModelSpec& spec, const DesignGrid& grid,
                              const Design& d) {
  if (d.size() != grid.covariates.size())
    throw UsageError("design has wrong arity for its grid");
  // Grids hold already-numeric covariate values, so a design contributes one
  // design-matrix cell per term (callers check the arity against the frame;
  // categorical model covariates are not supported on grids).
  Eigen::RowVectorXd row;
  int p = 0;
  std::vector<double> vals;
  if (spec.intercept) {
    vals.push_back(1.0);
    ++p;
  }
  for (const auto& term : spec.terms) {
    double prod = 1.0;
    for (const auto& cname : term.columns) {
      auto it = std::find(grid.covariates.begin(), grid.covariates.end(), cname);
      if (it == grid.covariates.end())
        throw UsageError("design grid lacks model covariate '" + cname + "'");
      prod *= d[static_cast<size_t>(it - grid.covariates.begin())];
    }
    vals.push_back(prod);
    ++p;
  }
  row.resize(p);
  for (int i = 0; i < p; ++i) row(i) = vals[i];
  return row;
}

Eigen::VectorXd weighted_column_means(const ModelFrame& frame) {
  Eigen::VectorXd means = Eigen::VectorXd::Zero(frame.X.cols());
  double W = frame.w.sum();
  for (int c = 0; c < frame.X.cols(); ++c) {
    if (frame.names[c] == "intercept") continue;
    means(c) = frame.X.col(c).dot(frame.w) / W;
  }
  return means;
}

void apply_centering(ModelFrame* frame, const Eigen::VectorXd& means) {
  if (means.size() != frame->X.cols())
    throw UsageError("centering vector has wrong length");
  for (int c = 0; c < frame->X.cols(); ++c) {
    if (frame->names[c] == "intercept") continue;
    frame->X.col(c).array() -= means(c);
  }
}

}  // namespace tallfit
