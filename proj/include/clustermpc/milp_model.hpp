#pragma once

// Mixed-integer model container: named variables (continuous or binary),
// sparse linear rows, a linear objective with constant offset.  The
// formulation layer builds these, branch-and-bound consumes their LP
// relaxation.  Variable and constraint order is insertion order, which is
// what makes the whole pipeline deterministic.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clustermpc/lp_simplex.hpp"

namespace clustermpc {

enum class VarKind { Continuous, Binary };

struct VarSpec {
  std::string name;
  VarKind kind = VarKind::Continuous;
  double lower = -kInf;
  double upper = kInf;
};

/// Opaque reference to a variable; only meaningful for the model that issued
/// it (checked at use, so a handle from another model is an error, not UB).
struct VarHandle {
  std::uint64_t model_id = 0;
  int index = -1;
};

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}
inline std::uint64_t next_model_id() {
  static std::uint64_t counter = 0;
  return ++counter;
}
}  // namespace detail

struct ModelConstraint {
  std::vector<std::pair<int, double>> terms;  // (variable index, coefficient)
  Relation rel = Relation::LessEq;
  double rhs = 0.0;
};

class MilpModel {
 public:
  MilpModel() : id_(detail::next_model_id()) {}

  VarHandle add_var(const VarSpec& spec) {
    if (by_name_.count(spec.name))
      throw ModelError("variable name '" + spec.name + "' already in use");
    if (std::isnan(spec.lower) || std::isnan(spec.upper))
      throw ModelError("variable '" + spec.name + "' has a NaN bound");
    if (spec.lower > spec.upper)
      throw ModelError("variable '" + spec.name + "' has crossed bounds");
    if (spec.kind == VarKind::Binary && (spec.lower != 0.0 || spec.upper != 1.0))
      throw ModelError("binary variable '" + spec.name + "' must have bounds [0,1]");
    int idx = static_cast<int>(vars_.size());
    by_name_.emplace(spec.name, idx);
    vars_.push_back(spec);
    obj_.push_back(0.0);
    return {id_, idx};
  }

  VarHandle add_continuous(const std::string& name, double lo, double hi) {
    return add_var({name, VarKind::Continuous, lo, hi});
  }

  VarHandle add_binary(const std::string& name) {
    return add_var({name, VarKind::Binary, 0.0, 1.0});
  }

  int add_constraint(const std::vector<std::pair<VarHandle, double>>& coeffs,
                     Relation rel, double rhs) {
    if (!std::isfinite(rhs))
      throw ModelError("constraint " + std::to_string(constraints_.size()) +
                       " has a non-finite right-hand side");
    ModelConstraint c;
    c.rel = rel;
    c.rhs = rhs;
    c.terms.reserve(coeffs.size());
    for (const auto& [h, a] : coeffs) {
      check_handle(h);
      if (std::isnan(a) || !std::isfinite(a))
        throw ModelError("constraint " + std::to_string(constraints_.size()) +
                         " has a non-finite coefficient on '" +
                         vars_[h.index].name + "'");
      c.terms.emplace_back(h.index, a);
    }
    // Merge repeated mentions of the same variable.
    std::sort(c.terms.begin(), c.terms.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::size_t w = 0;
    for (std::size_t r = 0; r < c.terms.size(); ++r) {
      if (w > 0 && c.terms[w - 1].first == c.terms[r].first)
        c.terms[w - 1].second += c.terms[r].second;
      else
        c.terms[w++] = c.terms[r];
    }
    c.terms.resize(w);
    constraints_.push_back(std::move(c));
    return static_cast<int>(constraints_.size()) - 1;
  }

  void set_objective_coeff(VarHandle h, double value) {
    check_handle(h);
    if (!std::isfinite(value))
      throw ModelError("objective coefficient for '" + vars_[h.index].name +
                       "' is not finite");
    obj_[h.index] = value;
  }

  void set_objective_offset(double value) {
    if (!std::isfinite(value)) throw ModelError("objective offset is not finite");
    offset_ = value;
  }

  int num_vars() const { return static_cast<int>(vars_.size()); }
  int num_constraints() const { return static_cast<int>(constraints_.size()); }
  const VarSpec& var(int index) const { return vars_.at(index); }
  const VarSpec& var(VarHandle h) const {
    check_handle(h);
    return vars_[h.index];
  }
  const std::vector<ModelConstraint>& constraints() const { return constraints_; }
  double objective_coeff(int index) const { return obj_.at(index); }
  double objective_offset() const { return offset_; }
  std::uint64_t id() const { return id_; }

  std::vector<int> binary_indices() const {
    std::vector<int> out;
    for (int j = 0; j < num_vars(); ++j)
      if (vars_[j].kind == VarKind::Binary) out.push_back(j);
    return out;
  }

  /// Drop integrality, keep everything else, same variable/constraint order.
  LpProblem relax() const {
    LpProblem p;
    p.num_vars = num_vars();
    p.objective.resize(p.num_vars);
    p.lower.resize(p.num_vars);
    p.upper.resize(p.num_vars);
    for (int j = 0; j < p.num_vars; ++j) {
      p.objective[j] = obj_[j];
      p.lower[j] = vars_[j].lower;
      p.upper[j] = vars_[j].upper;
    }
    p.objective_offset = offset_;
    p.constraints.reserve(constraints_.size());
    for (const ModelConstraint& c : constraints_) {
      LpConstraint lc;
      lc.terms = c.terms;
      lc.rel = c.rel;
      lc.rhs = c.rhs;
      p.constraints.push_back(std::move(lc));
    }
    return p;
  }

  double objective_value(const Eigen::VectorXd& x) const {
    require_point(x);
    double v = offset_;
    for (int j = 0; j < num_vars(); ++j) v += obj_[j] * x[j];
    return v;
  }

  /// Worst constraint or bound breach of a candidate point; 0 when feasible.
  /// Integrality is not part of this check (see integrality_violation).
  double max_violation(const Eigen::VectorXd& x) const {
    require_point(x);
    double worst = 0.0;
    for (int j = 0; j < num_vars(); ++j) {
      worst = std::max(worst, vars_[j].lower - x[j]);
      worst = std::max(worst, x[j] - vars_[j].upper);
    }
    for (const ModelConstraint& c : constraints_) {
      double lhs = 0.0;
      for (const auto& [j, a] : c.terms) lhs += a * x[j];
      switch (c.rel) {
        case Relation::LessEq:
          worst = std::max(worst, lhs - c.rhs);
          break;
        case Relation::GreaterEq:
          worst = std::max(worst, c.rhs - lhs);
          break;
        case Relation::Equal:
          worst = std::max(worst, std::abs(lhs - c.rhs));
          break;
      }
    }
    return worst;
  }

  /// Largest distance of any binary variable from its nearest integer.
  double integrality_violation(const Eigen::VectorXd& x) const {
    require_point(x);
    double worst = 0.0;
    for (int j = 0; j < num_vars(); ++j)
      if (vars_[j].kind == VarKind::Binary)
        worst = std::max(worst, std::abs(x[j] - std::round(x[j])));
    return worst;
  }

  /// Plain-text rendering, stable across versions (layout documented in
  /// docs/formats.md).  Numbers print with %.17g so a dump round-trips.
  void dump(std::ostream& os) const {
    using detail::fmt_g17;
    os << "minimize\n obj:";
    bool any = false;
    for (int j = 0; j < num_vars(); ++j) {
      if (obj_[j] == 0.0) continue;
      os << ' ' << (obj_[j] < 0 ? "- " : "+ ") << fmt_g17(std::abs(obj_[j])) << ' '
         << vars_[j].name;
      any = true;
    }
    if (offset_ != 0.0 || !any)
      os << ' ' << (offset_ < 0 ? "- " : "+ ") << fmt_g17(std::abs(offset_));
    os << "\nsubject to\n";
    for (std::size_t i = 0; i < constraints_.size(); ++i) {
      const ModelConstraint& c = constraints_[i];
      os << " c" << i << ':';
      if (c.terms.empty()) os << " 0";
      for (const auto& [j, a] : c.terms)
        os << ' ' << (a < 0 ? "- " : "+ ") << fmt_g17(std::abs(a)) << ' ' << vars_[j].name;
      os << ' ' << (c.rel == Relation::LessEq ? "<=" : c.rel == Relation::Equal ? "=" : ">=")
         << ' ' << fmt_g17(c.rhs) << '\n';
    }
    os << "bounds\n";
    for (const VarSpec& v : vars_)
      os << ' ' << fmt_g17(v.lower) << " <= " << v.name << " <= " << fmt_g17(v.upper)
         << '\n';
    os << "binary\n";
    for (const VarSpec& v : vars_)
      if (v.kind == VarKind::Binary) os << ' ' << v.name << '\n';
    os << "end\n";
  }

 private:
  void check_handle(VarHandle h) const {
    if (h.model_id != id_ || h.index < 0 || h.index >= num_vars())
      throw ModelError("variable handle does not belong to this model");
  }

  void require_point(const Eigen::VectorXd& x) const {
    if (x.size() != num_vars())
      throw ModelError("point has " + std::to_string(x.size()) +
                       " entries for a model with " + std::to_string(num_vars()) +
                       " variables");
  }

  std::uint64_t id_;
  std::vector<VarSpec> vars_;
  std::vector<double> obj_;
  double offset_ = 0.0;
  std::vector<ModelConstraint> constraints_;
  std::unordered_map<std::string, int> by_name_;
};

}  // namespace clustermpc
