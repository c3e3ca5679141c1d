#pragma once

// Receding-horizon closed loop.  Each step rebuilds the chosen formulation
// from the measured state, solves it, certifies the plan, applies the first
// control, and advances the nominal dynamics.  The previous plan's shifted
// tail is handed to the solver as a warm start: it both accelerates the
// search and pins the per-step cost decrease J*(k+1) <= J*(k) - 1 - γ‖u‖₁,
// since the tail stays feasible when nothing in the scene moved.
//
// The first step has no tail to shift, so it gets a constructed one instead:
// cover the obstacles with a few boxes, plan against the boxes alone (cheap,
// since the arrival step is pinned during that solve), and re-express the
// box-feasible plan in the full model.  Time spent building the seed is
// charged to step 0's solve_time.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "clustermpc/formulation.hpp"
#include "clustermpc/milp_bnb.hpp"

namespace clustermpc {

class SimulatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One-step cost recursion: the cost expected at the next step if the plan
/// unfolds as predicted.
inline double predicted_cost(double j_star, const Eigen::Vector2d& u0, double gamma) {
  return j_star - 1.0 - gamma * u0.cwiseAbs().sum();
}

struct StepRecord {
  int k = 0;
  Eigen::Vector4d state = Eigen::Vector4d::Zero();      // measured, before u
  Eigen::Vector2d applied_control = Eigen::Vector2d::Zero();
  double j_star = 0.0;
  double j_hat_next = 0.0;
  std::optional<ClusterAssignment> cluster_info;
  double solve_time = 0.0;
  long nodes_explored = 0;
  bool hit_limit = false;          // solver stopped at a limit; incumbent applied
  bool assignment_changed = false; // clustered: assignment differs from step k-1
};

enum class RunStatus { ReachedTarget, StepLimit, SolveFailed };

struct Trace {
  std::vector<StepRecord> steps;
  double closed_loop_cost = 0.0;   // Σ over executed steps of (1 + γ‖u‖₁)
  bool reached_target = false;
  double total_solve_time = 0.0;
  RunStatus status = RunStatus::StepLimit;
  int failed_step = -1;            // step whose solve failed, when SolveFailed
};

namespace detail {

// Side binaries that deactivate exactly the satisfied faces of `r` against
// rectangle `rect`; nullopt when the point is inside (no face works).  `tol`
// admits faces grazed to within rounding — plans that ride a face exactly
// land epsilon inside it in floating point — at the price of a violation no
// larger than tol, which the solver's warm-start check must still accept.
inline std::optional<std::array<double, 4>> side_pattern(double rx, double ry,
                                                         const Rect& rect,
                                                         double tol = 0.0) {
  std::array<double, 4> b{1.0, 1.0, 1.0, 1.0};
  if (rx <= rect.x_min + tol) b[0] = 0.0;
  if (ry <= rect.y_min + tol) b[1] = 0.0;
  if (rx >= rect.x_max - tol) b[2] = 0.0;
  if (ry >= rect.y_max - tol) b[3] = 0.0;
  if (b[0] + b[1] + b[2] + b[3] == 4.0) return std::nullopt;
  return b;
}

// Boundary grazes are admitted well under the solver's feasibility check.
inline constexpr double kGrazeTol = 1e-9;

// Side binaries for the step-ns slot, which gates the final two states at
// once: a face may stay active only when both positions satisfy it, and at
// least one face must survive the union.
inline std::optional<std::array<double, 4>> pair_pattern(const Eigen::Vector4d& a,
                                                         const Eigen::Vector4d& b,
                                                         const Rect& rect, double tol) {
  auto pa = side_pattern(a[0], a[2], rect, tol);
  auto pb = side_pattern(b[0], b[2], rect, tol);
  if (!pa || !pb) return std::nullopt;
  std::array<double, 4> out;
  double relaxed = 0.0;
  for (int f = 0; f < 4; ++f) {
    out[f] = std::max((*pa)[f], (*pb)[f]);
    relaxed += out[f];
  }
  if (relaxed == 4.0) return std::nullopt;
  return out;
}

// Shift the previous plan one step left into the next solve's variable
// layout: states/controls advance, the horizon tail is padded with a zero
// control and one drift state, and the avoidance binaries slide with their
// positions.  Returns nullopt when no consistent shift exists; the solver
// re-validates whatever is returned, so this only has to be best-effort.
inline std::optional<Eigen::VectorXd> shift_warm_start(const Scenario& s,
                                                       PlanningMode mode,
                                                       const Plan& prev) {
  if (prev.arrival_step <= 1) return std::nullopt;  // next state ends the run
  const int ns = s.max_horizon;
  const int no = static_cast<int>(s.obstacles.size());
  const int nc = mode.num_clusters();
  ModelLayout lay = ModelLayout::make(mode, ns, no);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(lay.num_vars());

  for (int j = 0; j <= ns; ++j)
    for (int c = 0; c < 4; ++c) w[lay.state(j, c)] = prev.states[j + 1][c];
  Eigen::Vector4d drift = s.dynamics.A * prev.states[ns + 1];
  for (int c = 0; c < 4; ++c) w[lay.state(ns + 1, c)] = drift[c];

  for (int j = 0; j + 1 <= ns; ++j)
    for (int c = 0; c < 2; ++c) {
      w[lay.control(j, c)] = prev.controls[j + 1][c];
      w[lay.slack(j, c)] = std::abs(prev.controls[j + 1][c]);
    }
  // control(ns) and its slack stay zero.

  w[lay.arrival(prev.arrival_step - 1)] = 1.0;

  // Old step j+1 binaries describe the position now sitting at step j.
  auto old_bin = [&](int j, int entity, int f) {
    int per = mode.is_clustered() ? nc : no;
    return prev.avoidance_binaries[4 * ((j - 1) * per + entity) + (f - 1)];
  };
  if (mode.is_clustered()) {
    const ClusterAssignment& ca = *prev.cluster_info;
    for (int l = 0; l < nc; ++l) {
      w[lay.cluster_coord(l, 0)] = ca.clusters[l].x_min;
      w[lay.cluster_coord(l, 1)] = ca.clusters[l].y_min;
      w[lay.cluster_coord(l, 2)] = ca.clusters[l].x_max;
      w[lay.cluster_coord(l, 3)] = ca.clusters[l].y_max;
      for (int i = 0; i < no; ++i) w[lay.assignment(l, i)] = ca.assignment[l][i];
    }
    for (int j = 1; j < ns; ++j)
      for (int l = 0; l < nc; ++l)
        for (int f = 1; f <= 4; ++f)
          w[lay.cluster_bin(j, l, f)] = old_bin(j + 1, l, f);
    for (int l = 0; l < nc; ++l) {
      auto b = pair_pattern(prev.states[ns + 1], drift, ca.clusters[l], kGrazeTol);
      if (!b) return std::nullopt;
      for (int f = 1; f <= 4; ++f) w[lay.cluster_bin(ns, l, f)] = (*b)[f - 1];
    }
  } else {
    for (int j = 1; j < ns; ++j)
      for (int i = 0; i < no; ++i)
        for (int f = 1; f <= 4; ++f)
          w[lay.obstacle_bin(j, i, f)] = old_bin(j + 1, i, f);
    for (int i = 0; i < no; ++i) {
      auto b = pair_pattern(prev.states[ns + 1], drift, s.obstacles[i], kGrazeTol);
      if (!b) return std::nullopt;
      for (int f = 1; f <= 4; ++f) w[lay.obstacle_bin(ns, i, f)] = (*b)[f - 1];
    }
  }
  return w;
}

inline Rect bbox_of(const std::vector<Rect>& obs, const std::vector<int>& members) {
  Rect b = obs[members.front()];
  for (int i : members) {
    b.x_min = std::min(b.x_min, obs[i].x_min);
    b.y_min = std::min(b.y_min, obs[i].y_min);
    b.x_max = std::max(b.x_max, obs[i].x_max);
    b.y_max = std::max(b.y_max, obs[i].y_max);
  }
  return b;
}

// Candidate ways of covering the obstacles with g boxes: cut the centers,
// sorted along one axis, either at the g-1 widest gaps or into g equal-count
// runs; both axes, duplicates dropped.  Order is fixed, so the seed that
// comes out is deterministic.
inline std::vector<std::vector<std::vector<int>>> cover_candidates(
    const std::vector<Rect>& obs, int g) {
  const int n = static_cast<int>(obs.size());
  std::vector<std::vector<std::vector<int>>> out;
  auto add = [&](const std::vector<std::vector<int>>& parts) {
    for (const auto& seen : out)
      if (seen == parts) return;
    out.push_back(parts);
  };
  for (int axis = 0; axis < 2; ++axis) {
    std::vector<int> order(n);
    for (int i = 0; i < n; ++i) order[i] = i;
    auto center = [&](int i) {
      return axis == 0 ? (obs[i].y_min + obs[i].y_max) / 2
                       : (obs[i].x_min + obs[i].x_max) / 2;
    };
    std::sort(order.begin(), order.end(), [&](int a, int b) {
      return center(a) < center(b) || (center(a) == center(b) && a < b);
    });
    auto split_at = [&](const std::vector<int>& cuts) {
      std::vector<std::vector<int>> parts;
      int at = 0;
      for (int c : cuts) {
        parts.emplace_back(order.begin() + at, order.begin() + c);
        at = c;
      }
      parts.emplace_back(order.begin() + at, order.end());
      for (auto& p : parts) std::sort(p.begin(), p.end());
      return parts;
    };
    if (g > 1) {
      // Widest g-1 gaps between consecutive sorted centers.
      std::vector<int> gaps(n - 1);
      for (int i = 0; i + 1 < n; ++i) gaps[i] = i;
      std::sort(gaps.begin(), gaps.end(), [&](int a, int b) {
        double ga = center(order[a + 1]) - center(order[a]);
        double gb = center(order[b + 1]) - center(order[b]);
        return ga > gb || (ga == gb && a < b);
      });
      std::vector<int> cuts(gaps.begin(), gaps.begin() + (g - 1));
      for (int& c : cuts) ++c;
      std::sort(cuts.begin(), cuts.end());
      add(split_at(cuts));
    }
    std::vector<int> even;
    for (int c = 1; c < g; ++c) even.push_back(c * n / g);
    add(split_at(even));
  }
  return out;
}

// Plan against the covering boxes alone.  The arrival step is pinned by one
// extra row and tried earliest-first: each pinned solve is small (the
// variable-horizon choice is gone), and an unreachable pin dies at the root
// relaxation.  Returns the first usable plan.
inline std::optional<Plan> plan_against_boxes(const Scenario& s,
                                              const Eigen::Vector4d& x0,
                                              const std::vector<Rect>& boxes,
                                              const SolverOptions& base) {
  Scenario reduced = s;
  reduced.obstacles = boxes;
  reduced.big_m = BigM{};
  try {
    reduced = finalize_scenario(std::move(reduced));
  } catch (const FormulationError&) {
    return std::nullopt;  // covering boxes swallow the terminal box
  }
  SolverOptions opts;
  opts.abs_gap = base.abs_gap;
  opts.rel_gap = base.rel_gap;
  opts.integrality_tol = base.integrality_tol;
  opts.node_limit = 800;
  opts.time_limit = 8.0;
  ModelLayout lay = ModelLayout::make(PlanningMode::unclustered(),
                                      reduced.max_horizon,
                                      static_cast<int>(boxes.size()));
  for (int j = 1; j <= reduced.max_horizon + 1; ++j) {
    MilpModel m = build_unclustered(reduced, x0);
    m.add_constraint({{VarHandle{m.id(), lay.arrival(j)}, 1.0}},
                     Relation::GreaterEq, 1.0);
    MilpOutcome out = solve_milp(m, opts);
    if (out.status == MilpStatus::Optimal ||
        (out.status == MilpStatus::LimitReached && out.incumbent))
      return decode_plan(m, out, reduced, PlanningMode::unclustered());
  }
  return std::nullopt;
}

// Express a box-feasible plan in the full model: positions keep their
// trajectory, every avoidance binary is re-derived geometrically, clusters
// take the covering boxes as their rectangles, and each obstacle is assigned
// to the box that covers it.  Extra clusters (more clusters than boxes)
// duplicate the first box and carry no obstacles.
inline std::optional<Eigen::VectorXd> embed_cold_start(
    const Scenario& s, PlanningMode mode,
    const std::vector<std::vector<int>>& groups, const std::vector<Rect>& boxes,
    const Plan& plan) {
  const int ns = s.max_horizon;
  const int no = static_cast<int>(s.obstacles.size());
  const int nc = mode.num_clusters();
  ModelLayout lay = ModelLayout::make(mode, ns, no);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(lay.num_vars());

  for (int j = 0; j <= ns + 1; ++j)
    for (int c = 0; c < 4; ++c) w[lay.state(j, c)] = plan.states[j][c];
  for (int j = 0; j <= ns; ++j)
    for (int c = 0; c < 2; ++c) {
      w[lay.control(j, c)] = plan.controls[j][c];
      w[lay.slack(j, c)] = std::abs(plan.controls[j][c]);
    }
  w[lay.arrival(plan.arrival_step)] = 1.0;

  if (mode.is_clustered()) {
    for (int l = 0; l < nc; ++l) {
      const Rect& box = l < static_cast<int>(boxes.size()) ? boxes[l] : boxes[0];
      w[lay.cluster_coord(l, 0)] = box.x_min;
      w[lay.cluster_coord(l, 1)] = box.y_min;
      w[lay.cluster_coord(l, 2)] = box.x_max;
      w[lay.cluster_coord(l, 3)] = box.y_max;
      if (l < static_cast<int>(groups.size()))
        for (int i : groups[l]) w[lay.assignment(l, i)] = 1.0;
      for (int j = 1; j <= ns; ++j) {
        auto b = j < ns ? side_pattern(plan.states[j][0], plan.states[j][2], box,
                                       kGrazeTol)
                        : pair_pattern(plan.states[ns], plan.states[ns + 1], box,
                                       kGrazeTol);
        if (!b) return std::nullopt;
        for (int f = 1; f <= 4; ++f) w[lay.cluster_bin(j, l, f)] = (*b)[f - 1];
      }
    }
  } else {
    for (int j = 1; j <= ns; ++j)
      for (int i = 0; i < no; ++i) {
        auto b = j < ns ? side_pattern(plan.states[j][0], plan.states[j][2],
                                       s.obstacles[i], kGrazeTol)
                        : pair_pattern(plan.states[ns], plan.states[ns + 1],
                                       s.obstacles[i], kGrazeTol);
        if (!b) return std::nullopt;
        for (int f = 1; f <= 4; ++f) w[lay.obstacle_bin(j, i, f)] = (*b)[f - 1];
      }
  }
  return w;
}

}  // namespace detail

/// Construct a feasible assignment for a cold solve, or nullopt when no
/// covering plan pans out.  Geometry only — no full-model solve is involved,
/// so the cost is a handful of small box-avoidance MILPs.  The result passes
/// the solver's warm-start admission checks by construction and gives a
/// desk-scale search an incumbent from node one.
inline std::optional<Eigen::VectorXd> build_cold_start(const Scenario& s,
                                                       const Eigen::Vector4d& x0,
                                                       PlanningMode mode,
                                                       const SolverOptions& opts = {}) {
  const int no = static_cast<int>(s.obstacles.size());
  if (no == 0) return std::nullopt;
  const int g = std::min(mode.is_clustered() ? mode.num_clusters() : 2, no);
  for (const auto& groups : detail::cover_candidates(s.obstacles, g)) {
    std::vector<Rect> boxes;
    for (const auto& members : groups)
      boxes.push_back(detail::bbox_of(s.obstacles, members));
    std::optional<Plan> plan = detail::plan_against_boxes(s, x0, boxes, opts);
    if (!plan) continue;
    auto w = detail::embed_cold_start(s, mode, groups, boxes, *plan);
    if (w) return w;
  }
  return std::nullopt;
}

/// Close the loop from x0 until the terminal set is reached, a step budget
/// runs out, or a solve comes back unusable (which truncates the trace with
/// a diagnostic instead of throwing).
inline Trace run_receding_horizon(const Scenario& scn, const Eigen::Vector4d& x0,
                                  PlanningMode mode, const SolverOptions& opts = {},
                                  int max_steps = 200) {
  if (max_steps < 0) throw SimulatorError("max_steps must be nonnegative");
  Scenario s = finalize_scenario(scn);
  detail::check_start_state(s, x0);

  Trace trace;
  Eigen::Vector4d x = x0;
  std::optional<Plan> prev;

  for (int k = 0;; ++k) {
    if (s.terminal_box.contains(x, 1e-6)) {
      trace.reached_target = true;
      trace.status = RunStatus::ReachedTarget;
      break;
    }
    if (k >= max_steps) {
      trace.status = RunStatus::StepLimit;
      break;
    }

    MilpModel model = mode.is_clustered()
                          ? build_clustered(s, x, mode.num_clusters())
                          : build_unclustered(s, x);
    SolverOptions step_opts = opts;
    double seed_time = 0.0;
    if (prev) {
      step_opts.warm_start = detail::shift_warm_start(s, mode, *prev);
    } else if (!step_opts.warm_start) {
      const auto t0 = std::chrono::steady_clock::now();
      step_opts.warm_start = build_cold_start(s, x, mode, opts);
      seed_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                      .count();
    }
    MilpOutcome out = solve_milp(model, step_opts);

    bool usable = out.status == MilpStatus::Optimal ||
                  (out.status == MilpStatus::LimitReached && out.incumbent.has_value());
    if (!usable) {
      trace.status = RunStatus::SolveFailed;
      trace.failed_step = k;
      break;
    }
    Plan plan = decode_plan(model, out, s, mode);
    if (!validate_plan(plan, s).ok()) {
      trace.status = RunStatus::SolveFailed;
      trace.failed_step = k;
      break;
    }

    StepRecord rec;
    rec.k = k;
    rec.state = x;
    rec.applied_control = plan.controls[0];
    rec.j_star = plan.cost;
    rec.j_hat_next = predicted_cost(plan.cost, rec.applied_control, s.gamma);
    rec.cluster_info = plan.cluster_info;
    rec.solve_time = out.solve_time + seed_time;
    rec.nodes_explored = out.nodes_explored;
    rec.hit_limit = out.status == MilpStatus::LimitReached;
    rec.assignment_changed = prev && plan.cluster_info && prev->cluster_info &&
                             plan.cluster_info->assignment != prev->cluster_info->assignment;
    trace.steps.push_back(rec);

    trace.closed_loop_cost += 1.0 + s.gamma * rec.applied_control.cwiseAbs().sum();
    trace.total_solve_time += rec.solve_time;

    Eigen::Vector4d next = s.dynamics.A * x + s.dynamics.B * rec.applied_control;
    x = next;
    prev = std::move(plan);
  }
  return trace;
}

}  // namespace clustermpc
