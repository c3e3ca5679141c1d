#pragma once

// Bounded-variable linear programming via a two-phase revised primal simplex.
//
// The solver keeps a dense inverse of the basis matrix and updates it by
// rank-1 corrections at every pivot, refreshing it from scratch only when a
// feasibility check at the end of a phase says the accumulated roundoff got
// out of hand.  Pricing is Dantzig (most negative reduced cost) with a switch
// to Bland's rule after a pivot budget, which makes cycling impossible while
// keeping the common case fast.  All tie-breaks are by lowest index, so a
// given problem always takes the exact same pivot path and the outcome is
// bitwise reproducible.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace clustermpc {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

enum class Relation { LessEq, Equal, GreaterEq };

/// One linear row: sum of coeff * var  {<=,=,>=}  rhs.
/// Terms may repeat a variable; repeated coefficients are summed.
struct LpConstraint {
  std::vector<std::pair<int, double>> terms;
  Relation rel = Relation::LessEq;
  double rhs = 0.0;
};

/// Minimize objective . x + objective_offset subject to the rows in
/// `constraints` and the box lower <= x <= upper.  Bounds may be infinite
/// in either direction; every coefficient must be finite.
struct LpProblem {
  int num_vars = 0;
  Eigen::VectorXd objective;
  double objective_offset = 0.0;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
  std::vector<LpConstraint> constraints;
};

enum class LpStatus { Optimal, Infeasible, Unbounded };

struct LpOutcome {
  LpStatus status = LpStatus::Infeasible;
  Eigen::VectorXd solution;  // empty unless status == Optimal
  double objective_value = std::numeric_limits<double>::quiet_NaN();
};

struct LpTolerances {
  double pivot = 1e-9;         // smallest |entry| accepted as a pivot
  double feasibility = 1e-7;   // row/bound violation considered "satisfied"
  double reduced_cost = 1e-7;  // dual feasibility threshold
  long max_pivots = 0;         // 0 = pick automatically from the problem size
  long bland_after = 0;        // 0 = switch to Bland after 5 * rows pivots
  int refactor_every = 0;      // 0 = refactor only when a check trips
};

enum class VarStatus : std::uint8_t { Basic, AtLower, AtUpper, FreeAtZero };

/// Optional per-solve report for callers that want to inspect the final
/// basis (the optimality-certificate tests do).
struct LpDiagnostics {
  std::vector<VarStatus> var_status;  // one per structural variable
  Eigen::VectorXd reduced_costs;      // one per structural variable
  long pivots = 0;
  long phase1_pivots = 0;
  int refactorizations = 0;
};

class LpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

// Internal: distinguishes recoverable numerical failures (retried with
// periodic refactorization) from input errors and limit hits.
class NumericalTrouble : public LpError {
 public:
  using LpError::LpError;
};

inline void validate_lp(const LpProblem& p) {
  if (p.num_vars < 0) throw LpError("negative variable count");
  if (p.objective.size() != p.num_vars)
    throw LpError("objective has " + std::to_string(p.objective.size()) +
                  " entries for " + std::to_string(p.num_vars) + " variables");
  if (p.lower.size() != p.num_vars || p.upper.size() != p.num_vars)
    throw LpError("bound vectors do not match the variable count");
  if (!std::isfinite(p.objective_offset))
    throw LpError("objective offset is not finite");
  for (int j = 0; j < p.num_vars; ++j) {
    if (!std::isfinite(p.objective[j]))
      throw LpError("objective coefficient " + std::to_string(j) +
                    " is not finite");
    if (std::isnan(p.lower[j]) || std::isnan(p.upper[j]))
      throw LpError("bound of variable " + std::to_string(j) + " is NaN");
    if (p.lower[j] > p.upper[j])
      throw LpError("variable " + std::to_string(j) + " has lower bound " +
                    std::to_string(p.lower[j]) + " above upper bound " +
                    std::to_string(p.upper[j]));
  }
  for (std::size_t r = 0; r < p.constraints.size(); ++r) {
    const LpConstraint& c = p.constraints[r];
    if (!std::isfinite(c.rhs))
      throw LpError("constraint " + std::to_string(r) +
                    " has a non-finite right-hand side");
    for (const auto& [j, a] : c.terms) {
      if (j < 0 || j >= p.num_vars)
        throw LpError("constraint " + std::to_string(r) +
                      " references variable " + std::to_string(j) +
                      " outside [0, " + std::to_string(p.num_vars) + ")");
      if (!std::isfinite(a))
        throw LpError("constraint " + std::to_string(r) +
                      " has a non-finite coefficient on variable " +
                      std::to_string(j));
    }
  }
}

// The working form is  A x + s = b  with one slack per inequality row
// (s <= 0 for >= rows) plus one artificial per row, so the initial basis is
// always diagonal.  Columns are stored sparse; the basis inverse is dense.
class SimplexSolver {
 public:
  SimplexSolver(const LpProblem& p, const LpTolerances& tol)
      : tol_(tol), n_struct_(p.num_vars), m_(static_cast<int>(p.constraints.size())) {
    build_columns(p);
    place_nonbasic(p);
    crash_binaries();
    install_basis();
  }

  LpOutcome run(const LpProblem& p, LpDiagnostics* diag) {
    const long pivot_cap = tol_.max_pivots > 0
                               ? tol_.max_pivots
                               : 2000 + 200L * (m_ + n_struct_);
    const long bland_at = tol_.bland_after > 0 ? tol_.bland_after : 5L * std::max(m_, 16);

    LpOutcome out;

    // Phase 1: minimize the total artificial value.
    set_phase1_costs();
    refresh_reduced_costs();
    if (!artificials_zero()) {
      LoopResult r = iterate(pivot_cap, bland_at);
      if (r == LoopResult::Unbounded)
        throw NumericalTrouble("phase 1 reported an unbounded direction");
      for (int attempt = 0; !basic_values_ok() && attempt < 3; ++attempt) {
        refactor();
        refresh_reduced_costs();
        iterate(pivot_cap, bland_at);
      }
      if (artificial_total() > tol_.feasibility * scale_) {
        out.status = LpStatus::Infeasible;
        fill_diagnostics(diag);
        return out;
      }
    }
    phase1_pivots_ = pivots_;
    expel_artificials();
    fix_artificials();

    // Phase 2: minimize the real objective with artificials pinned at zero.
    set_phase2_costs(p);
    refresh_reduced_costs();
    LoopResult r = iterate(pivot_cap, bland_at);
    for (int attempt = 0; r == LoopResult::Converged && !basic_values_ok() && attempt < 3;
         ++attempt) {
      refactor();
      refresh_reduced_costs();
      r = iterate(pivot_cap, bland_at);
    }
    if (r == LoopResult::Unbounded) {
      out.status = LpStatus::Unbounded;
      fill_diagnostics(diag);
      return out;
    }
    if (!basic_values_ok())
      throw NumericalTrouble("numerical breakdown: basis repair failed");

    out.status = LpStatus::Optimal;
    out.solution.resize(n_struct_);
    for (int j = 0; j < n_struct_; ++j) out.solution[j] = value_of(j);
    out.objective_value = p.objective.dot(out.solution) + p.objective_offset;
    fill_diagnostics(diag);
    return out;
  }

 private:
  enum class LoopResult { Converged, Unbounded };

  struct Column {
    std::vector<std::pair<int, double>> entries;  // (row, coefficient)
  };

  LpTolerances tol_;
  int n_struct_ = 0;
  int m_ = 0;
  int n_slack_ = 0;
  int n_total_ = 0;  // structural + slack + artificial
  double scale_ = 1.0;

  std::vector<Column> cols_;
  std::vector<double> lo_, hi_, cost_, xn_;  // xn_: values of nonbasic columns
  std::vector<VarStatus> state_;
  Eigen::VectorXd rhs_;
  std::vector<int> basic_;      // column sitting in each row of the basis
  std::vector<int> row_of_;     // row a column occupies, -1 if nonbasic
  Eigen::MatrixXd binv_;
  Eigen::VectorXd xb_;          // values of the basic columns, by row
  Eigen::VectorXd d_;           // reduced costs, all columns
  long pivots_ = 0;
  long phase1_pivots_ = 0;
  int refactorizations_ = 0;
  long pivots_since_refactor_ = 0;

  double value_of(int j) const { return state_[j] == VarStatus::Basic ? xb_[row_of_[j]] : xn_[j]; }

  void build_columns(const LpProblem& p) {
    n_slack_ = 0;
    for (const LpConstraint& c : p.constraints)
      if (c.rel != Relation::Equal) ++n_slack_;

    n_total_ = n_struct_ + n_slack_ + m_;  // one artificial per row
    cols_.resize(n_total_);
    lo_.assign(n_total_, 0.0);
    hi_.assign(n_total_, 0.0);
    rhs_.resize(m_);

    for (int j = 0; j < n_struct_; ++j) {
      lo_[j] = p.lower[j];
      hi_[j] = p.upper[j];
    }
    for (int i = 0; i < m_; ++i) {
      for (const auto& [j, a] : p.constraints[i].terms)
        if (a != 0.0) cols_[j].entries.emplace_back(i, a);
      rhs_[i] = p.constraints[i].rhs;
    }
    // Merge duplicate variable mentions within a row.
    for (int j = 0; j < n_struct_; ++j) {
      auto& e = cols_[j].entries;
      std::sort(e.begin(), e.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      std::size_t w = 0;
      for (std::size_t r = 0; r < e.size(); ++r) {
        if (w > 0 && e[w - 1].first == e[r].first)
          e[w - 1].second += e[r].second;
        else
          e[w++] = e[r];
      }
      e.resize(w);
      e.erase(std::remove_if(e.begin(), e.end(),
                             [](const auto& t) { return t.second == 0.0; }),
              e.end());
    }

    slack_of_.assign(m_, -1);
    int s = n_struct_;
    for (int i = 0; i < m_; ++i) {
      switch (p.constraints[i].rel) {
        case Relation::LessEq:
          cols_[s].entries.emplace_back(i, 1.0);
          lo_[s] = 0.0;
          hi_[s] = kInf;
          slack_of_[i] = s++;
          break;
        case Relation::GreaterEq:
          cols_[s].entries.emplace_back(i, 1.0);
          lo_[s] = -kInf;
          hi_[s] = 0.0;
          slack_of_[i] = s++;
          break;
        case Relation::Equal:
          break;
      }
    }
    // Artificial columns are added by install_basis() once the residual
    // signs are known.
    scale_ = 1.0;
    for (int i = 0; i < m_; ++i) scale_ = std::max(scale_, std::abs(rhs_[i]));
  }

  void place_nonbasic(const LpProblem&) {
    xn_.assign(n_total_, 0.0);
    state_.assign(n_total_, VarStatus::FreeAtZero);
    for (int j = 0; j < n_struct_ + n_slack_; ++j) {
      if (std::isfinite(lo_[j])) {
        state_[j] = VarStatus::AtLower;
        xn_[j] = lo_[j];
      } else if (std::isfinite(hi_[j])) {
        state_[j] = VarStatus::AtUpper;
        xn_[j] = hi_[j];
      } else {
        state_[j] = VarStatus::FreeAtZero;
        xn_[j] = 0.0;
      }
    }
  }

  // Greedy crash: walk the boxed columns in index order and move each to
  // whichever bound leaves less total row infeasibility.  Cuts the artificial
  // count sharply on big-M models, where the default all-at-lower start
  // violates nearly every activation row.
  void crash_binaries() {
    std::vector<double> resid(m_);
    for (int i = 0; i < m_; ++i) resid[i] = rhs_[i];
    for (int j = 0; j < n_struct_ + n_slack_; ++j)
      if (xn_[j] != 0.0)
        for (const auto& [i, a] : cols_[j].entries) resid[i] -= a * xn_[j];

    auto row_gap = [&](int i, double r) {
      // Distance from residual r to the range the row's slack can absorb.
      double lo = 0.0, hi = 0.0;
      int s = slack_of_[i];
      if (s >= 0) {
        lo = lo_[s];
        hi = hi_[s];
      }
      if (r < lo) return lo - r;
      if (r > hi) return r - hi;
      return 0.0;
    };

    for (int j = 0; j < n_struct_; ++j) {
      if (!std::isfinite(lo_[j]) || !std::isfinite(hi_[j]) || lo_[j] == hi_[j]) continue;
      double gain_lo = 0.0, gain_hi = 0.0;
      for (const auto& [i, a] : cols_[j].entries) {
        double base = resid[i] + a * xn_[j];  // residual with x_j removed
        gain_lo += row_gap(i, base - a * lo_[j]);
        gain_hi += row_gap(i, base - a * hi_[j]);
      }
      double pick = gain_hi < gain_lo ? hi_[j] : lo_[j];
      if (pick != xn_[j]) {
        for (const auto& [i, a] : cols_[j].entries) resid[i] += a * (xn_[j] - pick);
        xn_[j] = pick;
        state_[j] = pick == hi_[j] ? VarStatus::AtUpper : VarStatus::AtLower;
      }
    }
  }

  // slack_of_[row] = slack column index, or -1 for an equality row
  std::vector<int> slack_of_;

  void install_basis() {
    basic_.assign(m_, -1);
    row_of_.assign(n_total_, -1);
    binv_ = Eigen::MatrixXd::Identity(m_, m_);
    xb_.resize(m_);

    Eigen::VectorXd resid = rhs_;
    for (int j = 0; j < n_struct_ + n_slack_; ++j)
      if (xn_[j] != 0.0)
        for (const auto& [i, a] : cols_[j].entries) resid[i] -= a * xn_[j];

    // Prefer the row's own slack in the basis when the leftover residual is
    // something it can hold; otherwise an artificial takes the row.
    for (int i = 0; i < m_; ++i) {
      int slack = slack_of_[i];
      if (slack >= 0) {
        // resid currently includes the slack's nonbasic value; undo it.
        resid[i] += xn_[slack];
        if (resid[i] >= lo_[slack] && resid[i] <= hi_[slack]) {
          basic_[i] = slack;
          row_of_[slack] = i;
          state_[slack] = VarStatus::Basic;
          xb_[i] = resid[i];
          xn_[slack] = 0.0;
          continue;
        }
        // Park the slack at the bound nearest the residual, then cover the
        // rest with an artificial.
        double v = resid[i] < lo_[slack] ? lo_[slack] : hi_[slack];
        if (!std::isfinite(v)) v = 0.0;
        xn_[slack] = v;
        state_[slack] = v == lo_[slack] ? VarStatus::AtLower : VarStatus::AtUpper;
        resid[i] -= v;
      }
      int art = artificial_for(i, resid[i]);
      basic_[i] = art;
      row_of_[art] = i;
      state_[art] = VarStatus::Basic;
      xb_[i] = std::abs(resid[i]);
    }
    d_.setZero(n_total_);
  }

  int artificial_for(int row, double residual) {
    int idx = n_struct_ + n_slack_ + row;
    double sign = residual < 0.0 ? -1.0 : 1.0;
    cols_[idx].entries.clear();
    cols_[idx].entries.emplace_back(row, sign);
    lo_[idx] = 0.0;
    hi_[idx] = kInf;
    binv_(row, row) = sign;  // basis column is sign * e_row
    return idx;
  }

  void set_phase1_costs() {
    cost_.assign(n_total_, 0.0);
    for (int j = n_struct_ + n_slack_; j < n_total_; ++j) cost_[j] = 1.0;
  }

  void set_phase2_costs(const LpProblem& p) {
    cost_.assign(n_total_, 0.0);
    for (int j = 0; j < n_struct_; ++j) cost_[j] = p.objective[j];
  }

  bool artificials_zero() const {
    return artificial_total() <= tol_.feasibility * scale_;
  }

  double artificial_total() const {
    double t = 0.0;
    for (int j = n_struct_ + n_slack_; j < n_total_; ++j) t += std::abs(value_of(j));
    return t;
  }

  // Degenerate pivots that swap still-basic artificials for real columns so
  // their bounds can be clamped to zero without trapping the basis.
  void expel_artificials() {
    for (int i = 0; i < m_; ++i) {
      int b = basic_[i];
      if (b < n_struct_ + n_slack_) continue;
      Eigen::VectorXd row = binv_.row(i).transpose();
      int pick = -1;
      double best = tol_.pivot;
      for (int j = 0; j < n_struct_ + n_slack_; ++j) {
        if (state_[j] == VarStatus::Basic) continue;
        if (lo_[j] == hi_[j]) continue;
        double alpha = 0.0;
        for (const auto& [r, a] : cols_[j].entries) alpha += row[r] * a;
        if (std::abs(alpha) > best) {
          best = std::abs(alpha);
          pick = j;
        }
      }
      if (pick < 0) continue;  // row is redundant; the artificial stays at 0
      Eigen::VectorXd w = ftran(pick);
      pivot(pick, i, w, /*entering_direction=*/1.0, /*step=*/0.0,
            /*leaving_to_upper=*/false, /*update_costs=*/false);
    }
  }

  void fix_artificials() {
    for (int j = n_struct_ + n_slack_; j < n_total_; ++j) {
      lo_[j] = 0.0;
      hi_[j] = 0.0;
      if (state_[j] != VarStatus::Basic) {
        xn_[j] = 0.0;
        state_[j] = VarStatus::AtLower;
      }
    }
  }

  Eigen::VectorXd ftran(int j) const {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(m_);
    for (const auto& [i, a] : cols_[j].entries) w.noalias() += a * binv_.col(i);
    return w;
  }

  void refresh_reduced_costs() {
    Eigen::VectorXd cb(m_);
    for (int i = 0; i < m_; ++i) cb[i] = cost_[basic_[i]];
    Eigen::VectorXd y = binv_.transpose() * cb;
    for (int j = 0; j < n_total_; ++j) {
      if (state_[j] == VarStatus::Basic) {
        d_[j] = 0.0;
        continue;
      }
      double v = cost_[j];
      for (const auto& [i, a] : cols_[j].entries) v -= y[i] * a;
      d_[j] = v;
    }
  }

  void refactor() {
    Eigen::MatrixXd b = Eigen::MatrixXd::Zero(m_, m_);
    for (int i = 0; i < m_; ++i)
      for (const auto& [r, a] : cols_[basic_[i]].entries) b(r, i) = a;
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(b);
    binv_ = lu.inverse();
    recompute_basic_values();
    ++refactorizations_;
    pivots_since_refactor_ = 0;
  }

  void recompute_basic_values() {
    Eigen::VectorXd v = rhs_;
    for (int j = 0; j < n_total_; ++j)
      if (state_[j] != VarStatus::Basic && xn_[j] != 0.0)
        for (const auto& [i, a] : cols_[j].entries) v[i] -= a * xn_[j];
    xb_.noalias() = binv_ * v;
  }

  // Health check run when a phase converges: refresh the basic values from
  // binv, then confirm both bound feasibility and the raw row residuals.
  // The latter catches binv drift that a bounds-only check would miss.
  bool basic_values_ok() {
    recompute_basic_values();
    double tol = tol_.feasibility * scale_ * 10.0;
    for (int i = 0; i < m_; ++i) {
      int b = basic_[i];
      if (xb_[i] < lo_[b] - tol || xb_[i] > hi_[b] + tol) return false;
    }
    Eigen::VectorXd act = Eigen::VectorXd::Zero(m_);
    for (int j = 0; j < n_total_; ++j) {
      double v = value_of(j);
      if (v != 0.0)
        for (const auto& [i, a] : cols_[j].entries) act[i] += a * v;
    }
    for (int i = 0; i < m_; ++i)
      if (std::abs(act[i] - rhs_[i]) > tol) return false;
    return true;
  }

  int choose_entering(bool bland) const {
    int best = -1;
    double best_viol = tol_.reduced_cost;
    for (int j = 0; j < n_total_; ++j) {
      if (state_[j] == VarStatus::Basic || lo_[j] == hi_[j]) continue;
      double viol = 0.0;
      switch (state_[j]) {
        case VarStatus::AtLower:
          viol = -d_[j];
          break;
        case VarStatus::AtUpper:
          viol = d_[j];
          break;
        case VarStatus::FreeAtZero:
          viol = std::abs(d_[j]);
          break;
        case VarStatus::Basic:
          break;
      }
      if (viol <= tol_.reduced_cost) continue;
      if (bland) return j;
      if (viol > best_viol) {
        best_viol = viol;
        best = j;
      }
    }
    return best;
  }

  LoopResult iterate(long pivot_cap, long bland_at) {
    for (;;) {
      if (pivots_ > pivot_cap)
        throw LpError("pivot limit exceeded (" + std::to_string(pivot_cap) + ")");
      if (tol_.refactor_every > 0 && pivots_since_refactor_ >= tol_.refactor_every) {
        refactor();
        refresh_reduced_costs();
      }
      bool bland = pivots_ >= bland_at;
      int q = choose_entering(bland);
      if (q < 0) return LoopResult::Converged;

      double sigma;  // direction the entering variable moves
      if (state_[q] == VarStatus::AtLower)
        sigma = 1.0;
      else if (state_[q] == VarStatus::AtUpper)
        sigma = -1.0;
      else
        sigma = d_[q] < 0.0 ? 1.0 : -1.0;

      Eigen::VectorXd w = ftran(q);

      // Ratio test: the entering variable moves by t >= 0 in direction
      // sigma; basic variable i changes at rate -sigma * w_i.
      double t_limit = hi_[q] - lo_[q];  // bound-to-bound flip distance
      int leave_row = -1;
      bool leave_upper = false;
      double leave_pivot = 0.0;
      for (int i = 0; i < m_; ++i) {
        double rate = -sigma * w[i];
        double t;
        bool to_upper;
        if (rate < -tol_.pivot) {
          int b = basic_[i];
          if (!std::isfinite(lo_[b])) continue;
          t = (xb_[i] - lo_[b]) / (-rate);
          to_upper = false;
        } else if (rate > tol_.pivot) {
          int b = basic_[i];
          if (!std::isfinite(hi_[b])) continue;
          t = (hi_[b] - xb_[i]) / rate;
          to_upper = true;
        } else {
          continue;
        }
        if (t < 0.0) t = 0.0;  // basic value drifted past its bound
        bool take;
        if (t < t_limit - 1e-12) {
          take = true;
        } else if (t <= t_limit + 1e-12 && leave_row >= 0) {
          take = bland ? basic_[i] < basic_[leave_row]
                       : std::abs(w[i]) > std::abs(leave_pivot) ||
                             (std::abs(w[i]) == std::abs(leave_pivot) &&
                              basic_[i] < basic_[leave_row]);
        } else if (t <= t_limit + 1e-12 && leave_row < 0 && t < t_limit) {
          take = true;
        } else {
          take = false;
        }
        if (take) {
          t_limit = std::min(t, t_limit);
          leave_row = i;
          leave_upper = to_upper;
          leave_pivot = w[i];
        }
      }

      if (leave_row < 0) {
        if (!std::isfinite(t_limit)) return LoopResult::Unbounded;
        // Bound flip: q runs to its opposite bound, the basis stays put.
        xb_.noalias() -= (sigma * t_limit) * w;
        if (sigma > 0) {
          xn_[q] = hi_[q];
          state_[q] = VarStatus::AtUpper;
        } else {
          xn_[q] = lo_[q];
          state_[q] = VarStatus::AtLower;
        }
        ++pivots_;
        ++pivots_since_refactor_;
        continue;
      }

      pivot(q, leave_row, w, sigma, t_limit, leave_upper, /*update_costs=*/true);
      ++pivots_;
      ++pivots_since_refactor_;
    }
  }

  // Swap column q into basis row r.  `w` is binv * column q; `step` the
  // entering variable's travel; the leaving variable lands on the bound
  // named by `leaving_to_upper`.
  void pivot(int q, int r, const Eigen::VectorXd& w, double sigma, double step,
             bool leaving_to_upper, bool update_costs) {
    int p = basic_[r];
    double wr = w[r];

    if (update_costs) {
      // d'_j = d_j - (d_q / w_r) * (row r of binv * column j) for every
      // nonbasic j, evaluated with the pre-update binv.
      Eigen::VectorXd row_r = binv_.row(r).transpose();
      double ratio = d_[q] / wr;
      if (ratio != 0.0) {
        for (int j = 0; j < n_total_; ++j) {
          if (j == q || state_[j] == VarStatus::Basic) continue;
          double alpha = 0.0;
          for (const auto& [i, a] : cols_[j].entries) alpha += row_r[i] * a;
          if (alpha != 0.0) d_[j] -= ratio * alpha;
        }
      }
      d_[p] = -ratio;
    }

    // New values: the entering variable's travel shifts every basic value,
    // then row r switches over to the entering column.
    double enter_val = xn_[q] + sigma * step;
    if (step != 0.0) xb_.noalias() -= (sigma * step) * w;
    xb_[r] = enter_val;

    xn_[p] = leaving_to_upper ? hi_[p] : lo_[p];
    if (!std::isfinite(xn_[p])) xn_[p] = 0.0;  // leaving free var (degenerate)
    state_[p] = lo_[p] == hi_[p]  ? VarStatus::AtLower
                : leaving_to_upper ? VarStatus::AtUpper
                                   : VarStatus::AtLower;
    row_of_[p] = -1;

    basic_[r] = q;
    row_of_[q] = r;
    state_[q] = VarStatus::Basic;
    xn_[q] = 0.0;
    d_[q] = 0.0;

    // Rank-1 update of binv: row r gets scaled by 1/w_r, every other row i
    // loses (w_i / w_r) times row r.  The eta vector is (w - e_r) / w_r.
    Eigen::VectorXd u = w / wr;
    u[r] -= 1.0 / wr;
    Eigen::RowVectorXd row_r = binv_.row(r);
    binv_.noalias() -= u * row_r;
  }

  void fill_diagnostics(LpDiagnostics* diag) const {
    if (!diag) return;
    diag->var_status.assign(state_.begin(), state_.begin() + n_struct_);
    diag->reduced_costs.resize(n_struct_);
    for (int j = 0; j < n_struct_; ++j) diag->reduced_costs[j] = d_[j];
    diag->pivots = pivots_;
    diag->phase1_pivots = phase1_pivots_;
    diag->refactorizations = refactorizations_;
  }

  friend LpOutcome solve_lp_impl(const LpProblem&, const LpTolerances&, LpDiagnostics*);
};

inline LpOutcome solve_lp_impl(const LpProblem& p, const LpTolerances& tol,
                               LpDiagnostics* diag) {
  validate_lp(p);

  if (p.num_vars == 0 && p.constraints.empty()) {
    LpOutcome out;
    out.status = LpStatus::Optimal;
    out.solution.resize(0);
    out.objective_value = p.objective_offset;
    if (diag) {
      diag->var_status.clear();
      diag->reduced_costs.resize(0);
      diag->pivots = 0;
      diag->phase1_pivots = 0;
    }
    return out;
  }

  // Run with rank-1 updates only; if roundoff accumulates enough to trip the
  // health checks, retry with increasingly frequent refactorization.
  LpTolerances t = tol;
  for (int attempt = 0;; ++attempt) {
    try {
      SimplexSolver solver(p, t);
      return solver.run(p, diag);
    } catch (const NumericalTrouble&) {
      if (attempt >= 2) throw;
      t.refactor_every = attempt == 0 ? 64 : 16;
    }
  }
}

}  // namespace detail

/// Solve an LP to proven optimality, or report it infeasible/unbounded.
/// Throws LpError on malformed input or an unrecoverable numerical failure.
inline LpOutcome solve_lp(const LpProblem& problem, const LpTolerances& tol = {},
                          LpDiagnostics* diagnostics = nullptr) {
  return detail::solve_lp_impl(problem, tol, diagnostics);
}

}  // namespace clustermpc
