#pragma once

// Deterministic branch-and-bound over the LP relaxation.  Node selection is
// best-bound with FIFO tie-breaks, branching picks the most fractional
// binary (ties to the lowest index), and bounds are inherited lazily: a
// child carries its parent's LP objective until it is popped and solved
// itself.  Cost-free fractional binaries are lifted to 1 (feasibility
// permitting) before a node is branched, so branching concentrates on
// variables the objective actually sees.  Identical inputs take an
// identical path through the tree.

#include <chrono>
#include <cmath>
#include <limits>
#include <array>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <queue>
#include <string>
#include <unordered_set>
#include <tuple>
#include <vector>

#include <Eigen/Dense>

#include "clustermpc/lp_simplex.hpp"
#include "clustermpc/milp_model.hpp"

namespace clustermpc {

enum class Branching { MostFractional };
enum class NodeSelection { BestBound };

struct SolverOptions {
  double integrality_tol = 1e-6;
  double rel_gap = 1e-6;
  double abs_gap = 1e-9;
  long node_limit = 1'000'000;
  std::optional<double> time_limit;  // seconds; unset = no limit
  Branching branching = Branching::MostFractional;
  NodeSelection node_selection = NodeSelection::BestBound;
  // Externally supplied feasible assignment seeding the incumbent; rejected
  // (with a log line) rather than trusted if it fails the feasibility check.
  std::optional<Eigen::VectorXd> warm_start;
  std::ostream* log = nullptr;  // per-solve event log, one line per event
  LpTolerances lp;
};

enum class MilpStatus { Optimal, Infeasible, Unbounded, LimitReached };

struct MilpOutcome {
  MilpStatus status = MilpStatus::Infeasible;
  std::optional<Eigen::VectorXd> incumbent;
  double objective_value = std::numeric_limits<double>::quiet_NaN();
  double best_bound = -std::numeric_limits<double>::infinity();
  long nodes_explored = 0;
  double solve_time = 0.0;  // seconds
};

class MilpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Feasibility tolerance used for incumbent acceptance, scaled by the
/// model's right-hand-side magnitudes so big-M rows are judged fairly.
inline double incumbent_feasibility_tol(const MilpModel& model) {
  double scale = 0.0;
  for (const ModelConstraint& c : model.constraints())
    scale = std::max(scale, std::abs(c.rhs));
  return 1e-6 * (1.0 + scale);
}

namespace detail {

struct BnbFix {
  int var;
  double value;
  std::shared_ptr<const BnbFix> parent;
};

struct BnbNode {
  double bound;  // parent's LP objective (or -inf at the root)
  long seq;      // push order; FIFO among equal bounds
  int depth;
  std::shared_ptr<const BnbFix> fixes;
};

struct NodeOrder {
  bool operator()(const BnbNode& a, const BnbNode& b) const {
    // std::priority_queue pops the *largest*; invert to pop lowest bound,
    // then lowest sequence number.
    return std::tie(a.bound, a.seq) > std::tie(b.bound, b.seq);
  }
};

inline void validate_options(const SolverOptions& o) {
  if (!(o.integrality_tol > 0) || !(o.rel_gap > 0) || !(o.abs_gap > 0))
    throw MilpError("solver tolerances must be positive");
  if (o.node_limit <= 0) throw MilpError("node limit must be positive");
  if (o.time_limit && !(*o.time_limit > 0))
    throw MilpError("time limit must be positive");
}

class BnbSearch {
 public:
  BnbSearch(const MilpModel& model, const SolverOptions& opts)
      : model_(model),
        opts_(opts),
        relax_(model.relax()),
        bins_(model.binary_indices()),
        feas_tol_(incumbent_feasibility_tol(model)) {
    // Column views for the cost-free binaries, used by the lift below.
    for (int b : bins_) {
      if (relax_.objective[b] != 0.0) continue;
      free_bins_.push_back(b);
      cols_.emplace_back();
    }
    std::vector<int> slot(model.num_vars(), -1);
    for (std::size_t i = 0; i < free_bins_.size(); ++i) slot[free_bins_[i]] = int(i);
    const auto& rows = model.constraints();
    for (int r = 0; r < int(rows.size()); ++r)
      for (const auto& [v, coef] : rows[r].terms)
        if (slot[v] >= 0 && coef != 0.0) cols_[slot[v]].emplace_back(r, coef);
    // Partition rows of the form Σ b = 1 over binaries.  Rounding treats each
    // as a unit (nearest valid configuration = all mass on the largest
    // member); the lift may additionally move cost-free groups wholesale.
    for (int r = 0; r < int(rows.size()); ++r) {
      if (rows[r].rel != Relation::Equal || rows[r].rhs != 1.0) continue;
      if (rows[r].terms.size() < 2) continue;
      bool all_unit_bins = true;
      for (const auto& [v, coef] : rows[r].terms)
        if (coef != 1.0 || model.var(v).kind != VarKind::Binary) {
          all_unit_bins = false;
          break;
        }
      if (!all_unit_bins) continue;
      std::vector<int> members;
      bool cost_free = true;
      for (const auto& [v, coef] : rows[r].terms) {
        members.push_back(v);
        if (slot[v] < 0) cost_free = false;
      }
      if (cost_free) {
        std::vector<int> group;
        for (int v : members) group.push_back(slot[v]);
        groups_.push_back(std::move(group));
      }
      partitions_.push_back(std::move(members));
    }
  }

  MilpOutcome run() {
    auto t0 = std::chrono::steady_clock::now();
    MilpOutcome out;

    if (log())
      *log() << "milp start vars " << model_.num_vars() << " binaries "
             << bins_.size() << " rows " << model_.num_constraints() << '\n';

    seed_warm_start();

    std::priority_queue<BnbNode, std::vector<BnbNode>, NodeOrder> open;
    long seq = 0;
    open.push({-std::numeric_limits<double>::infinity(), seq++, 0, nullptr});

    double best_lb = -std::numeric_limits<double>::infinity();
    bool limit_hit = false;
    bool root_unbounded = false;
    bool proven = false;

    while (!open.empty()) {
      if (out.nodes_explored >= opts_.node_limit) {
        limit_hit = true;
        break;
      }
      if (opts_.time_limit &&
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() >
              *opts_.time_limit) {
        limit_hit = true;
        break;
      }

      BnbNode node = open.top();
      open.pop();
      ++out.nodes_explored;
      best_lb = std::max(best_lb, node.bound);

      // The queue is bound-ordered, so once the front clears the gap bar the
      // incumbent is proven optimal.
      if (incumbent_ && node.bound >= inc_obj_ - gap_limit()) {
        if (log())
          *log() << "node " << out.nodes_explored << " bound " << node.bound
                 << " depth " << node.depth << " pruned\n";
        proven = true;
        break;
      }

      LpOutcome lp = solve_node(node);
      if (lp.status == LpStatus::Unbounded) {
        if (node.fixes == nullptr) {
          root_unbounded = true;
          break;
        }
        throw MilpError("relaxation unbounded below a bounded root");
      }
      if (lp.status == LpStatus::Infeasible) {
        if (log())
          *log() << "node " << out.nodes_explored << " bound " << node.bound
                 << " depth " << node.depth << " lp Infeasible\n";
        continue;
      }

      double obj = lp.objective_value;
      if (log())
        *log() << "node " << out.nodes_explored << " bound " << node.bound
               << " depth " << node.depth << " lp Optimal obj " << obj << '\n';

      if (incumbent_ && obj >= inc_obj_ - opts_.abs_gap) continue;  // dominated

      lift_free_binaries(lp.solution);

      int frac = most_fractional(lp.solution);
      if (frac < 0) {
        offer_incumbent(lp.solution, obj, "relaxation", out.nodes_explored);
        continue;  // integral: subtree solved exactly
      }

      try_rounding(lp.solution, out.nodes_explored);

      if (log())
        *log() << "branch " << model_.var(frac).name << " value "
               << lp.solution[frac] << '\n';
      auto fix0 = std::make_shared<BnbFix>(BnbFix{frac, 0.0, node.fixes});
      auto fix1 = std::make_shared<BnbFix>(BnbFix{frac, 1.0, node.fixes});
      open.push({obj, seq++, node.depth + 1, std::move(fix0)});
      open.push({obj, seq++, node.depth + 1, std::move(fix1)});
    }

    out.solve_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (root_unbounded) {
      out.status = MilpStatus::Unbounded;
      out.best_bound = -std::numeric_limits<double>::infinity();
    } else if (limit_hit) {
      out.status = MilpStatus::LimitReached;
      out.best_bound = best_lb;
      if (incumbent_) {
        out.incumbent = incumbent_;
        out.objective_value = inc_obj_;
      }
    } else if (incumbent_) {
      out.status = MilpStatus::Optimal;
      out.incumbent = incumbent_;
      out.objective_value = inc_obj_;
      // The pruning node's bound may exceed the optimum; the incumbent caps it.
      out.best_bound = proven ? std::min(best_lb, inc_obj_) : inc_obj_;
    } else {
      out.status = MilpStatus::Infeasible;
      out.best_bound = std::numeric_limits<double>::infinity();
    }

    if (log()) {
      *log() << "done status ";
      switch (out.status) {
        case MilpStatus::Optimal: *log() << "Optimal"; break;
        case MilpStatus::Infeasible: *log() << "Infeasible"; break;
        case MilpStatus::Unbounded: *log() << "Unbounded"; break;
        case MilpStatus::LimitReached: *log() << "LimitReached"; break;
      }
      *log() << " objective " << out.objective_value << " bound " << out.best_bound
             << " nodes " << out.nodes_explored << " time " << out.solve_time << '\n';
    }
    return out;
  }

 private:
  std::ostream* log() const { return opts_.log; }

  double gap_limit() const {
    return std::max(opts_.abs_gap, opts_.rel_gap * std::abs(inc_obj_));
  }

  void seed_warm_start() {
    if (!opts_.warm_start) return;
    const Eigen::VectorXd& w = *opts_.warm_start;
    if (w.size() != model_.num_vars()) {
      if (log()) *log() << "warmstart rejected size\n";
      return;
    }
    if (model_.max_violation(w) > feas_tol_ ||
        model_.integrality_violation(w) > opts_.integrality_tol) {
      if (log()) *log() << "warmstart rejected infeasible\n";
      return;
    }
    incumbent_ = w;
    inc_obj_ = model_.objective_value(w);
    if (log()) *log() << "warmstart accepted objective " << inc_obj_ << '\n';
  }

  LpOutcome solve_node(const BnbNode& node) {
    // Apply the node's fixings by pinching bounds, solve, restore.
    std::vector<std::tuple<int, double, double>> saved;
    for (const BnbFix* f = node.fixes.get(); f; f = f->parent.get()) {
      saved.emplace_back(f->var, relax_.lower[f->var], relax_.upper[f->var]);
      relax_.lower[f->var] = f->value;
      relax_.upper[f->var] = f->value;
    }
    LpOutcome lp;
    try {
      lp = solve_lp(relax_, opts_.lp);
    } catch (...) {
      for (auto& [v, lo, hi] : saved) {
        relax_.lower[v] = lo;
        relax_.upper[v] = hi;
      }
      throw;
    }
    for (auto& [v, lo, hi] : saved) {
      relax_.lower[v] = lo;
      relax_.upper[v] = hi;
    }
    return lp;
  }

  int most_fractional(const Eigen::VectorXd& x) const {
    int pick = -1;
    double best = opts_.integrality_tol;
    for (int b : bins_) {
      double f = std::abs(x[b] - std::round(x[b]));
      if (f > best) {
        best = f;
        pick = b;
      }
    }
    return pick;
  }

  void offer_incumbent(const Eigen::VectorXd& x, double obj, const char* source,
                       long node) {
    if (incumbent_ && obj >= inc_obj_ - opts_.abs_gap) return;
    incumbent_ = x;
    inc_obj_ = obj;
    if (log())
      *log() << "incumbent objective " << obj << " node " << node << " source "
             << source << '\n';
  }

  // Degenerate-optimum selection: a binary with zero objective coefficient
  // contributes nothing to the bound, so raising it from a fractional value
  // to 1 yields another optimal point of the same relaxation whenever every
  // row it touches stays feasible.  Simplex vertices routinely park such
  // variables at the smallest value a big-M row will tolerate; left alone,
  // those fractions dominate the most-fractional choice and the search burns
  // depth on decisions that cannot move the bound.  Greedy in index order,
  // so the result is deterministic.
  void lift_free_binaries(Eigen::VectorXd& x) {
    if (free_bins_.empty()) return;
    const auto& rows = model_.constraints();
    std::vector<double> act(rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      double a = 0.0;
      for (const auto& [v, coef] : rows[r].terms) a += coef * x[v];
      act[r] = a;
    }
    for (std::size_t i = 0; i < free_bins_.size(); ++i) {
      const int b = free_bins_[i];
      const double v = x[b];
      if (v <= opts_.integrality_tol || v >= 1.0 - opts_.integrality_tol)
        continue;
      const double delta = 1.0 - v;
      bool ok = true;
      for (const auto& [r, coef] : cols_[i]) {
        const double a = act[r] + coef * delta;
        switch (rows[r].rel) {
          case Relation::LessEq: ok = a <= rows[r].rhs + feas_tol_; break;
          case Relation::GreaterEq: ok = a >= rows[r].rhs - feas_tol_; break;
          case Relation::Equal: ok = std::abs(a - rows[r].rhs) <= feas_tol_; break;
        }
        if (!ok) break;
      }
      if (!ok) continue;
      x[b] = 1.0;
      for (const auto& [r, coef] : cols_[i]) act[r] += coef * delta;
    }

    // Same idea for partition groups: move the group to the vertex that puts
    // all mass on its largest member, provided every row the group touches
    // survives the joint step.  Fractional partition members sit exactly at
    // 1/2 in a symmetric split, which would otherwise monopolize the
    // most-fractional branching choice.
    for (const std::vector<int>& g : groups_) {
      int winner = -1;
      double best = -1.0;
      bool fractional = false;
      for (int i : g) {
        const double v = x[free_bins_[i]];
        if (v > opts_.integrality_tol && v < 1.0 - opts_.integrality_tol)
          fractional = true;
        if (v > best) {
          best = v;
          winner = i;
        }
      }
      if (!fractional) continue;
      std::vector<double> delta(g.size());
      bool ok = true;
      // Trial activities over the union of touched rows.
      touched_.clear();
      for (std::size_t k = 0; k < g.size(); ++k) {
        const int i = g[k];
        delta[k] = (i == winner ? 1.0 : 0.0) - x[free_bins_[i]];
        if (delta[k] == 0.0) continue;
        for (const auto& [r, coef] : cols_[i]) {
          auto [it, fresh] = touched_.try_emplace(r, act[r]);
          it->second += coef * delta[k];
        }
      }
      for (const auto& [r, a] : touched_) {
        switch (rows[r].rel) {
          case Relation::LessEq: ok = a <= rows[r].rhs + feas_tol_; break;
          case Relation::GreaterEq: ok = a >= rows[r].rhs - feas_tol_; break;
          case Relation::Equal: ok = std::abs(a - rows[r].rhs) <= feas_tol_; break;
        }
        if (!ok) break;
      }
      if (!ok) continue;
      for (std::size_t k = 0; k < g.size(); ++k)
        x[free_bins_[g[k]]] = (g[k] == winner ? 1.0 : 0.0);
      for (const auto& [r, a] : touched_) act[r] = a;
    }
  }

  // Round the relaxation to the nearest integer point and test it.  A Σ b = 1
  // partition is rounded as a unit — all mass onto its largest member — since
  // per-coordinate rounding of a spread-out block lands at Σ = 0, which no
  // test can save.  If the rounded point fails outright and no incumbent
  // exists yet, the binaries are pinned at their rounded values and the
  // continuous variables re-settle in one LP; a feasible settlement is the
  // first incumbent.  Once any incumbent exists the cheap test alone runs, so
  // the extra LP cost is confined to the empty-handed phase of the search.
  void try_rounding(const Eigen::VectorXd& x, long node) {
    Eigen::VectorXd r = x;
    for (int b : bins_) r[b] = std::round(r[b]);
    for (const std::vector<int>& part : partitions_) {
      int winner = part.front();
      for (int v : part)
        if (x[v] > x[winner]) winner = v;
      for (int v : part) r[v] = (v == winner) ? 1.0 : 0.0;
    }
    if (model_.max_violation(r) <= feas_tol_) {
      offer_incumbent(r, model_.objective_value(r), "rounding", node);
      return;
    }
    if (incumbent_) return;
    // Plateaus reproduce the same rounded pattern node after node; remember
    // the ones whose completion already failed and spend the LP only on new
    // patterns.
    std::string key(bins_.size(), '0');
    for (std::size_t i = 0; i < bins_.size(); ++i)
      if (r[bins_[i]] == 1.0) key[i] = '1';
    if (failed_completions_.count(key)) return;
    std::vector<std::array<double, 2>> saved(bins_.size());
    for (std::size_t i = 0; i < bins_.size(); ++i) {
      const int b = bins_[i];
      saved[i] = {relax_.lower[b], relax_.upper[b]};
      relax_.lower[b] = r[b];
      relax_.upper[b] = r[b];
    }
    LpOutcome lp;
    try {
      lp = solve_lp(relax_, opts_.lp);
    } catch (...) {
      for (std::size_t i = 0; i < bins_.size(); ++i) {
        relax_.lower[bins_[i]] = saved[i][0];
        relax_.upper[bins_[i]] = saved[i][1];
      }
      throw;
    }
    for (std::size_t i = 0; i < bins_.size(); ++i) {
      relax_.lower[bins_[i]] = saved[i][0];
      relax_.upper[bins_[i]] = saved[i][1];
    }
    if (lp.status == LpStatus::Optimal)
      offer_incumbent(lp.solution, lp.objective_value, "completion", node);
    else
      failed_completions_.insert(std::move(key));
  }

  const MilpModel& model_;
  const SolverOptions& opts_;
  LpProblem relax_;
  std::vector<int> bins_;
  double feas_tol_;
  std::vector<int> free_bins_;  // zero-objective binaries, ascending
  std::vector<std::vector<std::pair<int, double>>> cols_;  // their rows
  std::vector<std::vector<int>> groups_;      // cost-free partitions (slots)
  std::vector<std::vector<int>> partitions_;  // all Σ b = 1 partitions (vars)
  std::unordered_set<std::string> failed_completions_;
  std::map<int, double> touched_;         // scratch: row -> trial activity
  std::optional<Eigen::VectorXd> incumbent_;
  double inc_obj_ = std::numeric_limits<double>::infinity();
};

}  // namespace detail

/// Solve a mixed-binary program to proven optimality (within the configured
/// gap), or report Infeasible/Unbounded/LimitReached.  Deterministic for
/// fixed inputs unless a time limit interferes.
inline MilpOutcome solve_milp(const MilpModel& model, const SolverOptions& opts = {}) {
  detail::validate_options(opts);
  detail::BnbSearch search(model, opts);
  return search.run();
}

}  // namespace clustermpc
