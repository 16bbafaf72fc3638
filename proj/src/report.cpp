#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>

#include "json.hpp"
#include "tallfit/common.hpp"
#include "tallfit/csvio.hpp"
#include "tallfit/pipeline.hpp"

namespace tallfit {

namespace {

nlohmann::json finite_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.8g", v);
  return buf;
}

nlohmann::json row_major(const Eigen::MatrixXd& m) {
  nlohmann::json out = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) out.push_back(m(i, j));
  return out;
}

nlohmann::json mode_table(const Eigen::VectorXd& modes,
                          const std::vector<std::string>& labels) {
  nlohmann::json out = nlohmann::json::object();
  for (Eigen::Index j = 0; j < modes.size(); ++j)
    out[labels[static_cast<size_t>(j)]] = modes(j);
  return out;
}

}  // namespace

std::string glm_fit_to_json(const GlmFit& fit) {
  nlohmann::json j;
  j["coef_names"] = fit.coef_names;
  nlohmann::json beta = nlohmann::json::array(), se = nlohmann::json::array();
  for (Eigen::Index i = 0; i < fit.beta.size(); ++i) {
    beta.push_back(fit.beta(i));
    se.push_back(finite_or_null(std::sqrt(std::max(0.0, fit.vcov(i, i)))));
  }
  j["estimate"] = std::move(beta);
  j["se"] = std::move(se);
  j["vcov"] = row_major(fit.vcov);
  j["loglik"] = fit.loglik;
  if (std::isfinite(fit.theta)) j["theta"] = fit.theta;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["runtime_seconds"] = fit.runtime_seconds;
  if (!fit.message.empty()) j["message"] = fit.message;
  return j.dump(2) + "\n";
}

std::string glmm_fit_to_json(const GlmmFit& fit,
                             const std::vector<std::string>& cluster_labels) {
  nlohmann::json j;
  j["coef_names"] = fit.coef_names;
  nlohmann::json beta = nlohmann::json::array(), se = nlohmann::json::array();
  const bool have_vcov = fit.vcov.rows() == fit.beta.size();
  for (Eigen::Index i = 0; i < fit.beta.size(); ++i) {
    beta.push_back(fit.beta(i));
    se.push_back(have_vcov
                     ? finite_or_null(std::sqrt(std::max(0.0, fit.vcov(i, i))))
                     : nlohmann::json(nullptr));
  }
  j["estimate"] = std::move(beta);
  j["se"] = std::move(se);
  if (have_vcov) j["vcov"] = row_major(fit.vcov);
  j["tau2"] = fit.tau2;
  if (std::isfinite(fit.theta)) j["theta"] = fit.theta;
  j["loglik"] = fit.loglik;
  j["converged"] = fit.converged;
  j["iterations"] = fit.iterations;
  j["quad_points"] = fit.quad_points;
  j["grad_max"] = fit.grad_max;
  j["runtime_seconds"] = fit.runtime_seconds;
  if (!fit.message.empty()) j["message"] = fit.message;
  if (static_cast<size_t>(fit.eb_modes.size()) == cluster_labels.size() &&
      !cluster_labels.empty())
    j["eb_modes"] = mode_table(fit.eb_modes, cluster_labels);
  return j.dump(2) + "\n";
}

std::string method_result_to_json(const MethodResult& result) {
  nlohmann::json j;
  j["method"] = method_name(result.method);
  j["family"] = result.family;
  j["link"] = result.link;
  j["converged"] = result.converged;

  nlohmann::json coefs = nlohmann::json::array();
  const bool have_se = result.se.size() == result.beta.size();
  for (size_t i = 0; i < result.coef_names.size(); ++i) {
    nlohmann::json c;
    c["name"] = result.coef_names[i];
    c["estimate"] = result.beta(static_cast<Eigen::Index>(i));
    c["se"] = have_se
                  ? finite_or_null(result.se(static_cast<Eigen::Index>(i)))
                  : nlohmann::json(nullptr);
    coefs.push_back(std::move(c));
  }
  j["coefficients"] = std::move(coefs);

  if (std::isfinite(result.tau2)) j["tau2"] = result.tau2;
  if (std::isfinite(result.theta)) j["theta"] = result.theta;
  if (std::isfinite(result.loglik)) j["loglik"] = result.loglik;
  j["n_obs"] = result.n_obs;
  j["n_source_rows"] = result.n_source_rows;
  j["runtime_seconds"] = result.runtime_seconds;
  if (!result.note.empty()) j["note"] = result.note;

  if (result.glmm) {
    j["quad_points"] = result.glmm->quad_points;
    j["iterations"] = result.glmm->iterations;
    j["grad_max"] = result.glmm->grad_max;
    if (result.glmm->vcov.rows() == result.beta.size())
      j["vcov"] = row_major(result.glmm->vcov);
    if (!result.glmm->message.empty()) j["message"] = result.glmm->message;
    if (static_cast<size_t>(result.glmm->eb_modes.size()) ==
            result.cluster_labels.size() &&
        !result.cluster_labels.empty())
      j["eb_modes"] = mode_table(result.glmm->eb_modes, result.cluster_labels);
  }
  if (result.meta) {
    j["vcov"] = row_major(result.meta->vcov);
    j["clusters_used"] = result.meta->clusters_used;
    nlohmann::json excl = nlohmann::json::array();
    for (const auto& [label, reason] : result.meta->exclusions)
      excl.push_back({{"cluster", label}, {"reason", reason}});
    j["exclusions"] = std::move(excl);
    if (result.meta->tau2_per_coef.size() > 0) {
      nlohmann::json per = nlohmann::json::object();
      for (size_t i = 0; i < result.coef_names.size(); ++i)
        per[result.coef_names[i]] =
            result.meta->tau2_per_coef(static_cast<Eigen::Index>(i));
      j["tau2_per_coef"] = std::move(per);
    }
  }
  if (!result.history.empty()) j["steps"] = result.history.size();
  return j.dump(2) + "\n";
}

void write_method_result_json(const MethodResult& result,
                              const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << method_result_to_json(result);
  if (!out) throw IoError("failed writing " + path);
}

void write_comparison_csv(const ComparisonReport& report,
                          const std::string& path) {
  if (report.entries.empty()) throw UsageError("empty comparison report");

  const MethodResult* ref = nullptr;
  for (const auto& e : report.entries)
    if (e.result) {
      ref = &*e.result;
      break;
    }

  csv::Table t;
  t.header = {"quantity", "scale"};
  for (const auto& e : report.entries) {
    t.header.push_back(method_name(e.method));
    t.header.push_back(std::string(method_name(e.method)) + "_se");
  }

  auto blank_row = [&](const std::string& quantity, const std::string& scale) {
    std::vector<std::string> row(t.header.size());
    row[0] = quantity;
    row[1] = scale;
    return row;
  };
  // One value cell per method, SE cell left empty.
  auto scalar_row = [&](const std::string& quantity,
                        auto value_of) {
    auto row = blank_row(quantity, "");
    for (size_t m = 0; m < report.entries.size(); ++m)
      if (report.entries[m].result)
        row[2 + 2 * m] = value_of(*report.entries[m].result);
    t.rows.push_back(std::move(row));
  };

  scalar_row("n_obs", [](const MethodResult& r) {
    return std::to_string(r.n_obs);
  });
  scalar_row("runtime_seconds", [](const MethodResult& r) {
    return fmt(r.runtime_seconds);
  });
  scalar_row("converged", [](const MethodResult& r) {
    return std::string(r.converged ? "yes" : "no");
  });
  scalar_row("tau2", [](const MethodResult& r) {
    return std::isfinite(r.tau2) ? fmt(r.tau2) : std::string();
  });
  bool any_theta = false;
  for (const auto& e : report.entries)
    if (e.result && std::isfinite(e.result->theta)) any_theta = true;
  if (any_theta)
    scalar_row("theta", [](const MethodResult& r) {
      return std::isfinite(r.theta) ? fmt(r.theta) : std::string();
    });

  if (ref) {
    const bool exponentiate = ref->link == "logit" || ref->link == "log";
    const std::string scale = ref->link == "logit"  ? "odds_ratio"
                              : ref->link == "log"  ? "rate_ratio"
                                                    : "coefficient";
    for (const auto& name : ref->coef_names) {
      auto row = blank_row(name, scale);
      for (size_t m = 0; m < report.entries.size(); ++m) {
        if (!report.entries[m].result) continue;
        const MethodResult& r = *report.entries[m].result;
        auto it = std::find(r.coef_names.begin(), r.coef_names.end(), name);
        if (it == r.coef_names.end()) continue;
        auto k = static_cast<Eigen::Index>(it - r.coef_names.begin());
        double b = r.beta(k);
        double s = r.se.size() == r.beta.size()
                       ? r.se(k)
                       : std::numeric_limits<double>::quiet_NaN();
        if (exponentiate) {
          row[2 + 2 * m] = fmt(std::exp(b));
          if (std::isfinite(s)) row[3 + 2 * m] = fmt(std::exp(b) * s);
        } else {
          row[2 + 2 * m] = fmt(b);
          if (std::isfinite(s)) row[3 + 2 * m] = fmt(s);
        }
      }
      t.rows.push_back(std::move(row));
    }
  }

  bool any_error = false;
  for (const auto& e : report.entries) any_error |= !e.error.empty();
  if (any_error) {
    auto row = blank_row("error", "");
    for (size_t m = 0; m < report.entries.size(); ++m)
      row[2 + 2 * m] = report.entries[m].error;
    t.rows.push_back(std::move(row));
  }

  csv::write_file(path, t);
}

}  // namespace tallfit
