#pragma once

// Scenario → MILP translation.  Two builders share a common trajectory
// skeleton (dynamics, limits, 1-norm epigraph, variable-horizon arrival):
// the unclustered one adds per-obstacle big-M avoidance, the clustered one
// instead invents cluster rectangles inside the optimization — coordinates
// as decision variables, obstacle-to-cluster assignment binaries, and
// avoidance against the clusters only.  Decoding and validation go the
// other way: solver vectors back to trajectories, checked independently.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clustermpc/dynamics.hpp"
#include "clustermpc/milp_bnb.hpp"
#include "clustermpc/milp_model.hpp"

namespace clustermpc {

class FormulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Axis-aligned rectangle in position space.
struct Rect {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  bool valid() const { return x_min <= x_max && y_min <= y_max; }
  double span_x() const { return x_max - x_min; }
  double span_y() const { return y_max - y_min; }

  /// Strictly inside, with a margin pulled off every face.
  bool contains_interior(double x, double y, double tol = 0.0) const {
    return x > x_min + tol && x < x_max - tol && y > y_min + tol && y < y_max - tol;
  }

  /// rect `inner` fits inside this one, each face given `tol` of slack.
  bool contains_rect(const Rect& inner, double tol = 0.0) const {
    return inner.x_min >= x_min - tol && inner.x_max <= x_max + tol &&
           inner.y_min >= y_min - tol && inner.y_max <= y_max + tol;
  }
};

/// Axis-aligned box in the full 4-dimensional state space.
struct StateBox {
  Eigen::Vector4d lo = Eigen::Vector4d::Zero();
  Eigen::Vector4d hi = Eigen::Vector4d::Zero();

  bool contains(const Eigen::Vector4d& x, double tol = 0.0) const {
    for (int c = 0; c < 4; ++c)
      if (x[c] < lo[c] - tol || x[c] > hi[c] + tol) return false;
    return true;
  }
};

/// Big-M constants, one per constraint family.  Zero means "derive the
/// default" in finalize_scenario.
struct BigM {
  double obstacle = 0.0;  // avoidance rows against fixed obstacles
  double cluster = 0.0;   // avoidance rows against cluster rectangles
  double contain = 0.0;   // obstacle-in-cluster containment rows
  double terminal = 0.0;  // arrival-gated terminal-box rows
};

/// The default output map: rows of C picking r_x and r_y out of the state.
inline Eigen::Matrix<double, 2, 4> position_selector() {
  Eigen::Matrix<double, 2, 4> C = Eigen::Matrix<double, 2, 4>::Zero();
  C(0, 0) = 1.0;
  C(1, 2) = 1.0;
  return C;
}

struct Scenario {
  LtiDiscrete dynamics;
  Eigen::Matrix<double, 2, 4> C = position_selector();
  Rect workspace;
  std::vector<Rect> obstacles;
  StateBox terminal_box;
  Eigen::Vector2d v_max = Eigen::Vector2d::Zero();  // symmetric per-axis
  Eigen::Vector2d a_max = Eigen::Vector2d::Zero();
  double gamma = 1.0;
  int max_horizon = 0;  // Ns, prediction steps
  BigM big_m;
};

struct PlanningMode {
  enum class Kind { Unclustered, Clustered };

  static PlanningMode unclustered() { return {Kind::Unclustered, 0}; }
  static PlanningMode clustered(int nc) {
    if (nc < 1) throw FormulationError("cluster count must be at least 1");
    return {Kind::Clustered, nc};
  }

  bool is_clustered() const { return kind == Kind::Clustered; }
  int num_clusters() const { return nc; }

  Kind kind = Kind::Unclustered;
  int nc = 0;
};

/// Reported binary-variable count for a mode, using the accounting
/// convention where avoidance spans Ns prediction steps: 4·Ns·No without
/// clustering, (4·Ns + No)·Nc with.  The built models match this census
/// exactly; the final state (step Ns+1) is kept clear by reusing the step-Ns
/// side binaries, which additionally forces consecutive tail states onto a
/// common free side of each rectangle.
inline long count_binaries(PlanningMode mode, long ns, long no, long nc) {
  if (ns < 0 || no < 0 || nc < 0)
    throw FormulationError("count_binaries arguments must be nonnegative");
  if (!mode.is_clustered()) return 4 * ns * no;
  return (4 * ns + no) * nc;
}

/// Index arithmetic for every variable in a built model.  The builders
/// append variables in exactly this order; decode_plan and the simulator's
/// warm-start shift rely on it.
struct ModelLayout {
  int ns = 0;  // prediction horizon Ns
  int no = 0;  // obstacles
  int nc = 0;  // clusters (0 in unclustered mode)
  bool clustered = false;

  // Trajectory block, shared by both modes.
  int state(int j, int c) const { return 4 * j + c; }              // j in 0..ns+1
  int control(int j, int c) const { return control0_ + 2 * j + c; }  // j in 0..ns
  int slack(int j, int c) const { return slack0_ + 2 * j + c; }      // j in 0..ns
  int arrival(int j) const { return arrival0_ + (j - 1); }           // j in 1..ns+1

  // Unclustered mode: avoidance binary for step j in 1..ns, obstacle i,
  // side f=1..4.  Step ns+1 carries no binaries of its own (see the builders).
  int obstacle_bin(int j, int i, int f) const {
    return bin0_ + 4 * ((j - 1) * no + i) + (f - 1);
  }

  // Clustered mode: rectangle coordinates (side: 0 x_min, 1 y_min, 2 x_max,
  // 3 y_max), assignment binaries, and avoidance binaries (j in 1..ns, as
  // above).
  int cluster_coord(int l, int side) const { return bin0_ + 4 * l + side; }
  int assignment(int l, int i) const { return bin0_ + 4 * nc + l * no + i; }
  int cluster_bin(int j, int l, int f) const {
    return bin0_ + 4 * nc + nc * no + 4 * ((j - 1) * nc + l) + (f - 1);
  }

  int num_vars() const { return num_vars_; }

  static ModelLayout make(PlanningMode mode, int ns, int no) {
    ModelLayout lay;
    lay.ns = ns;
    lay.no = no;
    lay.clustered = mode.is_clustered();
    lay.nc = mode.num_clusters();
    lay.control0_ = 4 * (ns + 2);
    lay.slack0_ = lay.control0_ + 2 * (ns + 1);
    lay.arrival0_ = lay.slack0_ + 2 * (ns + 1);
    lay.bin0_ = lay.arrival0_ + (ns + 1);
    if (lay.clustered)
      lay.num_vars_ = lay.bin0_ + 4 * lay.nc + lay.nc * no + 4 * ns * lay.nc;
    else
      lay.num_vars_ = lay.bin0_ + 4 * ns * no;
    return lay;
  }

 private:
  int control0_ = 0, slack0_ = 0, arrival0_ = 0, bin0_ = 0, num_vars_ = 0;
};

/// Cluster rectangles and the obstacle-to-cluster assignment decoded from a
/// solved clustered model.
struct ClusterAssignment {
  std::vector<Rect> clusters;                     // size Nc
  std::vector<std::vector<std::uint8_t>> assignment;  // [cluster][obstacle]
};

struct Plan {
  std::vector<Eigen::Vector4d> states;    // j = 0..Ns+1
  std::vector<Eigen::Vector2d> controls;  // j = 0..Ns
  int arrival_step = 0;                   // j* in 1..Ns+1
  double cost = 0.0;
  std::optional<ClusterAssignment> cluster_info;
  std::vector<std::uint8_t> avoidance_binaries;  // b^O or b^C, layout order
};

struct Violation {
  enum class Kind {
    Dynamics,
    StateBounds,
    ControlBounds,
    ObstacleAvoidance,
    Containment,
    ExactlyOne,
    Terminal,
    Cost
  };
  Kind kind;
  int step = -1;   // prediction step, when meaningful
  int index = -1;  // obstacle/cluster/axis index, when meaningful
  double amount = 0.0;
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  int count(Violation::Kind k) const {
    int n = 0;
    for (const auto& v : violations)
      if (v.kind == k) ++n;
    return n;
  }
};

namespace detail {

inline double max_span(const Rect& r) { return std::max(r.span_x(), r.span_y()); }

}  // namespace detail

/// Fill derived big-M defaults and check every scenario invariant, including
/// sufficiency of the big-M constants over the declared workspace.  Returns
/// the completed scenario; throws FormulationError on any defect.
inline Scenario finalize_scenario(Scenario scn) {
  if (scn.dynamics.A.rows() != 4 || scn.dynamics.A.cols() != 4 ||
      scn.dynamics.B.rows() != 4 || scn.dynamics.B.cols() != 2)
    throw FormulationError("dynamics must be a 4-state, 2-input system");
  if (!(scn.dynamics.Ts > 0.0))
    throw FormulationError("sample period must be positive");
  if (!scn.dynamics.A.allFinite() || !scn.dynamics.B.allFinite() || !scn.C.allFinite())
    throw FormulationError("dynamics matrices contain non-finite entries");
  if (!scn.workspace.valid()) throw FormulationError("workspace rectangle is inverted");
  if (scn.max_horizon < 1) throw FormulationError("horizon must be at least 1 step");
  if (!(scn.gamma >= 0.0) || !std::isfinite(scn.gamma))
    throw FormulationError("gamma must be finite and nonnegative");
  for (int c = 0; c < 2; ++c) {
    if (!(scn.v_max[c] > 0.0) || !(scn.a_max[c] > 0.0))
      throw FormulationError("velocity and acceleration limits must be positive");
  }
  for (std::size_t i = 0; i < scn.obstacles.size(); ++i) {
    const Rect& o = scn.obstacles[i];
    if (!o.valid())
      throw FormulationError("obstacle " + std::to_string(i) +
                             " has min > max on some axis");
    if (!scn.workspace.contains_rect(o))
      throw FormulationError("obstacle " + std::to_string(i) +
                             " is not inside the workspace");
  }
  for (int c = 0; c < 4; ++c)
    if (scn.terminal_box.lo[c] > scn.terminal_box.hi[c])
      throw FormulationError("terminal box has lo > hi in dimension " +
                             std::to_string(c));
  // The target's position footprint may touch obstacle boundaries but must
  // not overlap any interior.
  for (std::size_t i = 0; i < scn.obstacles.size(); ++i) {
    const Rect& o = scn.obstacles[i];
    bool overlap = scn.terminal_box.lo[0] < o.x_max && scn.terminal_box.hi[0] > o.x_min &&
                   scn.terminal_box.lo[2] < o.y_max && scn.terminal_box.hi[2] > o.y_min;
    if (overlap)
      throw FormulationError("terminal box overlaps the interior of obstacle " +
                             std::to_string(i));
  }

  // Derive big-M defaults: the workspace span plus the largest obstacle span
  // is provably inactive for any in-workspace position, and the bare span
  // suffices for containment rows.  Terminal rows gate velocity dimensions
  // too, so that default is additionally bumped to the worst velocity gap.
  double ws_span = detail::max_span(scn.workspace);
  double obs_span = 0.0;
  for (const Rect& o : scn.obstacles) obs_span = std::max(obs_span, detail::max_span(o));
  double need_term = 0.0;
  {
    double box_lo[4] = {scn.workspace.x_min, -scn.v_max[0], scn.workspace.y_min,
                        -scn.v_max[1]};
    double box_hi[4] = {scn.workspace.x_max, scn.v_max[0], scn.workspace.y_max,
                        scn.v_max[1]};
    for (int c = 0; c < 4; ++c) {
      need_term = std::max(need_term, box_hi[c] - scn.terminal_box.hi[c]);
      need_term = std::max(need_term, scn.terminal_box.lo[c] - box_lo[c]);
    }
  }
  if (scn.big_m.obstacle == 0.0) scn.big_m.obstacle = ws_span + obs_span;
  if (scn.big_m.cluster == 0.0) scn.big_m.cluster = ws_span + obs_span;
  if (scn.big_m.contain == 0.0) scn.big_m.contain = ws_span;
  if (scn.big_m.terminal == 0.0)
    scn.big_m.terminal = std::max(ws_span + obs_span, need_term);

  // Sufficiency: with its binary set, each row family must be satisfiable by
  // every position in the workspace / every state in the box.
  for (double m : {scn.big_m.obstacle, scn.big_m.cluster, scn.big_m.contain,
                   scn.big_m.terminal})
    if (!(m > 0.0) || !std::isfinite(m))
      throw FormulationError("big-M constants must be positive and finite");
  double need_pos = ws_span;  // worst gap between two in-workspace coordinates
  if (scn.big_m.obstacle < need_pos - 1e-12)
    throw FormulationError("obstacle big-M too small for the workspace");
  if (scn.big_m.cluster < need_pos - 1e-12)
    throw FormulationError("cluster big-M too small for the workspace");
  if (scn.big_m.contain < need_pos - 1e-12)
    throw FormulationError("containment big-M too small for the workspace");
  if (scn.big_m.terminal < need_term - 1e-12)
    throw FormulationError("terminal big-M too small for the state box");
  return scn;
}

namespace detail {

inline void check_start_state(const Scenario& scn, const Eigen::Vector4d& x0) {
  // Grace matches validate_plan: a state the validator passes must also be
  // accepted as the next solve's start, or the closed loop can deadlock on a
  // binding avoidance row satisfied to solver tolerance.
  constexpr double tol = 1e-6;
  if (!x0.allFinite()) throw FormulationError("start state contains non-finite entries");
  Eigen::Vector2d r = scn.C * x0;
  if (r[0] < scn.workspace.x_min - tol || r[0] > scn.workspace.x_max + tol ||
      r[1] < scn.workspace.y_min - tol || r[1] > scn.workspace.y_max + tol)
    throw FormulationError("start position is outside the workspace");
  for (std::size_t i = 0; i < scn.obstacles.size(); ++i)
    if (scn.obstacles[i].contains_interior(r[0], r[1], tol))
      throw FormulationError("start position is inside obstacle " + std::to_string(i));
}

// Everything both builders share: trajectory variables, dynamics rows,
// epigraph rows, post-arrival control shutoff, arrival-gated terminal rows,
// the arrival partition row, and the objective.
inline MilpModel build_skeleton(const Scenario& scn, const Eigen::Vector4d& x0,
                                const ModelLayout& lay,
                                std::vector<VarHandle>& vars) {
  const int ns = lay.ns;
  MilpModel m;
  vars.clear();
  vars.reserve(lay.num_vars());
  auto v = [&](int idx) { return vars[idx]; };

  const double pos_lo[2] = {scn.workspace.x_min, scn.workspace.y_min};
  const double pos_hi[2] = {scn.workspace.x_max, scn.workspace.y_max};

  for (int j = 0; j <= ns + 1; ++j)
    for (int c = 0; c < 4; ++c) {
      std::string name = "x" + std::to_string(j) + "_" + std::to_string(c);
      double lo, hi;
      if (j == 0) {
        lo = hi = x0[c];  // measured state enters through pinned bounds
      } else if (c == 0 || c == 2) {
        lo = pos_lo[c / 2];
        hi = pos_hi[c / 2];
      } else {
        lo = -scn.v_max[c / 2];
        hi = scn.v_max[c / 2];
      }
      vars.push_back(m.add_continuous(name, lo, hi));
    }
  for (int j = 0; j <= ns; ++j)
    for (int c = 0; c < 2; ++c)
      vars.push_back(m.add_continuous("u" + std::to_string(j) + "_" + std::to_string(c),
                                      -scn.a_max[c], scn.a_max[c]));
  for (int j = 0; j <= ns; ++j)
    for (int c = 0; c < 2; ++c)
      vars.push_back(m.add_continuous("s" + std::to_string(j) + "_" + std::to_string(c),
                                      0.0, scn.a_max[c]));
  for (int j = 1; j <= ns + 1; ++j) vars.push_back(m.add_binary("bT" + std::to_string(j)));

  // Dynamics: x[j+1] = A x[j] + B u[j], written as equality rows.
  const Eigen::MatrixXd& A = scn.dynamics.A;
  const Eigen::MatrixXd& B = scn.dynamics.B;
  for (int j = 0; j <= ns; ++j)
    for (int r = 0; r < 4; ++r) {
      std::vector<std::pair<VarHandle, double>> terms;
      terms.emplace_back(v(lay.state(j + 1, r)), 1.0);
      for (int c = 0; c < 4; ++c)
        if (A(r, c) != 0.0) terms.emplace_back(v(lay.state(j, c)), -A(r, c));
      for (int c = 0; c < 2; ++c)
        if (B(r, c) != 0.0) terms.emplace_back(v(lay.control(j, c)), -B(r, c));
      m.add_constraint(terms, Relation::Equal, 0.0);
    }

  // 1-norm epigraph: s >= u and s >= -u.
  for (int j = 0; j <= ns; ++j)
    for (int c = 0; c < 2; ++c) {
      m.add_constraint({{v(lay.control(j, c)), 1.0}, {v(lay.slack(j, c)), -1.0}},
                       Relation::LessEq, 0.0);
      m.add_constraint({{v(lay.control(j, c)), -1.0}, {v(lay.slack(j, c)), -1.0}},
                       Relation::LessEq, 0.0);
    }

  // Post-arrival shutoff: s[j] <= a_max·(1 - Σ_{m<=j} bT[m]).  Through the
  // epigraph this forces u[j] = 0 once the terminal set has been reached.
  for (int j = 1; j <= ns; ++j)
    for (int c = 0; c < 2; ++c) {
      std::vector<std::pair<VarHandle, double>> terms;
      terms.emplace_back(v(lay.slack(j, c)), 1.0);
      for (int mstep = 1; mstep <= j; ++mstep)
        terms.emplace_back(v(lay.arrival(mstep)), scn.a_max[c]);
      m.add_constraint(terms, Relation::LessEq, scn.a_max[c]);
    }

  // Terminal membership, gated per step: bT[j] = 1 forces x[j] into the box.
  for (int j = 1; j <= ns + 1; ++j)
    for (int c = 0; c < 4; ++c) {
      double mt = scn.big_m.terminal;
      m.add_constraint({{v(lay.state(j, c)), 1.0}, {v(lay.arrival(j)), mt}},
                       Relation::LessEq, scn.terminal_box.hi[c] + mt);
      m.add_constraint({{v(lay.state(j, c)), -1.0}, {v(lay.arrival(j)), mt}},
                       Relation::LessEq, -scn.terminal_box.lo[c] + mt);
    }

  // The horizon ends exactly once.
  {
    std::vector<std::pair<VarHandle, double>> terms;
    for (int j = 1; j <= ns + 1; ++j) terms.emplace_back(v(lay.arrival(j)), 1.0);
    m.add_constraint(terms, Relation::Equal, 1.0);
  }

  // Cost: arrival step plus gamma-weighted 1-norm of the controls.
  for (int j = 1; j <= ns + 1; ++j)
    m.set_objective_coeff(v(lay.arrival(j)), static_cast<double>(j));
  if (scn.gamma != 0.0)
    for (int j = 0; j <= ns; ++j)
      for (int c = 0; c < 2; ++c)
        m.set_objective_coeff(v(lay.slack(j, c)), scn.gamma);

  return m;
}

}  // namespace detail

/// Unclustered formulation: avoid every obstacle at every prediction step
/// with four side binaries per (step, obstacle) pair.
inline MilpModel build_unclustered(const Scenario& scn, const Eigen::Vector4d& x0) {
  Scenario s = finalize_scenario(scn);
  detail::check_start_state(s, x0);
  const int ns = s.max_horizon;
  const int no = static_cast<int>(s.obstacles.size());
  ModelLayout lay = ModelLayout::make(PlanningMode::unclustered(), ns, no);

  std::vector<VarHandle> vars;
  MilpModel m = detail::build_skeleton(s, x0, lay, vars);
  auto v = [&](int idx) { return vars[idx]; };

  for (int j = 1; j <= ns; ++j)
    for (int i = 0; i < no; ++i)
      for (int f = 1; f <= 4; ++f)
        vars.push_back(m.add_binary("bO" + std::to_string(j) + "_" + std::to_string(i) +
                                    "_" + std::to_string(f)));

  // Steps 1..ns each get their own side binaries; the final state reuses the
  // step-ns binaries, so the last two states share a free side and the tail
  // stays clear without growing the binary census.
  const double mo = s.big_m.obstacle;
  for (int j = 1; j <= ns + 1; ++j) {
    const int bj = std::min(j, ns);
    VarHandle rx = v(lay.state(j, 0));
    VarHandle ry = v(lay.state(j, 2));
    for (int i = 0; i < no; ++i) {
      const Rect& o = s.obstacles[i];
      // One side must hold: left, below, right, above.
      m.add_constraint({{rx, 1.0}, {v(lay.obstacle_bin(bj, i, 1)), -mo}},
                       Relation::LessEq, o.x_min);
      m.add_constraint({{ry, 1.0}, {v(lay.obstacle_bin(bj, i, 2)), -mo}},
                       Relation::LessEq, o.y_min);
      m.add_constraint({{rx, -1.0}, {v(lay.obstacle_bin(bj, i, 3)), -mo}},
                       Relation::LessEq, -o.x_max);
      m.add_constraint({{ry, -1.0}, {v(lay.obstacle_bin(bj, i, 4)), -mo}},
                       Relation::LessEq, -o.y_max);
      if (j <= ns)
        m.add_constraint({{v(lay.obstacle_bin(j, i, 1)), 1.0},
                          {v(lay.obstacle_bin(j, i, 2)), 1.0},
                          {v(lay.obstacle_bin(j, i, 3)), 1.0},
                          {v(lay.obstacle_bin(j, i, 4)), 1.0}},
                         Relation::LessEq, 3.0);
    }
  }
  return m;
}

/// Clustered formulation: cluster rectangles are decision variables, each
/// obstacle is assigned to exactly one cluster that must contain it, and the
/// trajectory avoids the clusters instead of the obstacles.
inline MilpModel build_clustered(const Scenario& scn, const Eigen::Vector4d& x0, int nc,
                                 bool symmetry_breaking = false) {
  Scenario s = finalize_scenario(scn);
  detail::check_start_state(s, x0);
  if (nc < 1) throw FormulationError("cluster count must be at least 1");
  const int ns = s.max_horizon;
  const int no = static_cast<int>(s.obstacles.size());
  ModelLayout lay = ModelLayout::make(PlanningMode::clustered(nc), ns, no);

  std::vector<VarHandle> vars;
  MilpModel m = detail::build_skeleton(s, x0, lay, vars);
  auto v = [&](int idx) { return vars[idx]; };

  static constexpr const char* kSide[4] = {"xmin", "ymin", "xmax", "ymax"};
  for (int l = 0; l < nc; ++l)
    for (int side = 0; side < 4; ++side) {
      bool x_axis = side == 0 || side == 2;
      vars.push_back(m.add_continuous(
          "c" + std::to_string(l) + "_" + kSide[side],
          x_axis ? s.workspace.x_min : s.workspace.y_min,
          x_axis ? s.workspace.x_max : s.workspace.y_max));
    }
  for (int l = 0; l < nc; ++l)
    for (int i = 0; i < no; ++i)
      vars.push_back(m.add_binary("bR" + std::to_string(l) + "_" + std::to_string(i)));
  for (int j = 1; j <= ns; ++j)
    for (int l = 0; l < nc; ++l)
      for (int f = 1; f <= 4; ++f)
        vars.push_back(m.add_binary("bC" + std::to_string(j) + "_" + std::to_string(l) +
                                    "_" + std::to_string(f)));

  // Containment: an assigned cluster swallows its obstacle.
  const double mr = s.big_m.contain;
  for (int l = 0; l < nc; ++l)
    for (int i = 0; i < no; ++i) {
      const Rect& o = s.obstacles[i];
      VarHandle b = v(lay.assignment(l, i));
      m.add_constraint({{v(lay.cluster_coord(l, 0)), 1.0}, {b, mr}}, Relation::LessEq,
                       o.x_min + mr);
      m.add_constraint({{v(lay.cluster_coord(l, 1)), 1.0}, {b, mr}}, Relation::LessEq,
                       o.y_min + mr);
      m.add_constraint({{v(lay.cluster_coord(l, 2)), -1.0}, {b, mr}}, Relation::LessEq,
                       -o.x_max + mr);
      m.add_constraint({{v(lay.cluster_coord(l, 3)), -1.0}, {b, mr}}, Relation::LessEq,
                       -o.y_max + mr);
    }

  // Every obstacle belongs to exactly one cluster.
  for (int i = 0; i < no; ++i) {
    std::vector<std::pair<VarHandle, double>> terms;
    for (int l = 0; l < nc; ++l) terms.emplace_back(v(lay.assignment(l, i)), 1.0);
    m.add_constraint(terms, Relation::Equal, 1.0);
  }

  // Avoidance against the cluster rectangles (same shape as the obstacle
  // rows, but the rectangle sides are variables).  As in the unclustered
  // builder, the final state reuses the step-ns side binaries.
  const double mc = s.big_m.cluster;
  for (int j = 1; j <= ns + 1; ++j) {
    const int bj = std::min(j, ns);
    VarHandle rx = v(lay.state(j, 0));
    VarHandle ry = v(lay.state(j, 2));
    for (int l = 0; l < nc; ++l) {
      m.add_constraint({{rx, 1.0},
                        {v(lay.cluster_coord(l, 0)), -1.0},
                        {v(lay.cluster_bin(bj, l, 1)), -mc}},
                       Relation::LessEq, 0.0);
      m.add_constraint({{ry, 1.0},
                        {v(lay.cluster_coord(l, 1)), -1.0},
                        {v(lay.cluster_bin(bj, l, 2)), -mc}},
                       Relation::LessEq, 0.0);
      m.add_constraint({{v(lay.cluster_coord(l, 2)), 1.0},
                        {rx, -1.0},
                        {v(lay.cluster_bin(bj, l, 3)), -mc}},
                       Relation::LessEq, 0.0);
      m.add_constraint({{v(lay.cluster_coord(l, 3)), 1.0},
                        {ry, -1.0},
                        {v(lay.cluster_bin(bj, l, 4)), -mc}},
                       Relation::LessEq, 0.0);
      if (j <= ns)
        m.add_constraint({{v(lay.cluster_bin(j, l, 1)), 1.0},
                          {v(lay.cluster_bin(j, l, 2)), 1.0},
                          {v(lay.cluster_bin(j, l, 3)), 1.0},
                          {v(lay.cluster_bin(j, l, 4)), 1.0}},
                         Relation::LessEq, 3.0);
    }
  }

  // Optional lexicographic ordering of cluster x_min coordinates; breaks the
  // relabeling symmetry among clusters.  Off unless explicitly requested.
  if (symmetry_breaking)
    for (int l = 0; l + 1 < nc; ++l)
      m.add_constraint({{v(lay.cluster_coord(l, 0)), 1.0},
                        {v(lay.cluster_coord(l + 1, 0)), -1.0}},
                       Relation::LessEq, 0.0);

  return m;
}

/// Turn a solver incumbent back into a trajectory plan.  Binary reads use a
/// 0.5 threshold; clustered decodes re-verify containment at 1e-6.
inline Plan decode_plan(const MilpModel& model, const MilpOutcome& outcome,
                        const Scenario& scn, PlanningMode mode) {
  if (!outcome.incumbent)
    throw FormulationError("outcome carries no incumbent to decode");
  const Eigen::VectorXd& x = *outcome.incumbent;
  const int ns = scn.max_horizon;
  const int no = static_cast<int>(scn.obstacles.size());
  ModelLayout lay = ModelLayout::make(mode, ns, no);
  if (x.size() != lay.num_vars() || model.num_vars() != lay.num_vars())
    throw FormulationError("incumbent size does not match the mode's layout");

  Plan plan;
  plan.states.resize(ns + 2);
  for (int j = 0; j <= ns + 1; ++j)
    for (int c = 0; c < 4; ++c) plan.states[j][c] = x[lay.state(j, c)];
  plan.controls.resize(ns + 1);
  for (int j = 0; j <= ns; ++j)
    for (int c = 0; c < 2; ++c) plan.controls[j][c] = x[lay.control(j, c)];

  plan.arrival_step = -1;
  int fired = 0;
  for (int j = 1; j <= ns + 1; ++j)
    if (x[lay.arrival(j)] > 0.5) {
      plan.arrival_step = j;
      ++fired;
    }
  if (fired != 1)
    throw FormulationError("arrival encoding is corrupt: " + std::to_string(fired) +
                           " steps fired");
  plan.cost = outcome.objective_value;

  if (mode.is_clustered()) {
    const int nc = mode.num_clusters();
    ClusterAssignment ca;
    ca.clusters.resize(nc);
    ca.assignment.assign(nc, std::vector<std::uint8_t>(no, 0));
    for (int l = 0; l < nc; ++l) {
      ca.clusters[l].x_min = x[lay.cluster_coord(l, 0)];
      ca.clusters[l].y_min = x[lay.cluster_coord(l, 1)];
      ca.clusters[l].x_max = x[lay.cluster_coord(l, 2)];
      ca.clusters[l].y_max = x[lay.cluster_coord(l, 3)];
    }
    for (int l = 0; l < nc; ++l)
      for (int i = 0; i < no; ++i)
        ca.assignment[l][i] = x[lay.assignment(l, i)] > 0.5 ? 1 : 0;
    // Re-verify what the big-M rows promised.
    for (int l = 0; l < nc; ++l)
      for (int i = 0; i < no; ++i)
        if (ca.assignment[l][i] &&
            !ca.clusters[l].contains_rect(scn.obstacles[i], 1e-6))
          throw FormulationError("decoded cluster " + std::to_string(l) +
                                 " does not contain its assigned obstacle " +
                                 std::to_string(i));
    plan.cluster_info = std::move(ca);

    plan.avoidance_binaries.reserve(4 * ns * nc);
    for (int j = 1; j <= ns; ++j)
      for (int l = 0; l < nc; ++l)
        for (int f = 1; f <= 4; ++f)
          plan.avoidance_binaries.push_back(x[lay.cluster_bin(j, l, f)] > 0.5 ? 1 : 0);
  } else {
    plan.avoidance_binaries.reserve(4 * ns * no);
    for (int j = 1; j <= ns; ++j)
      for (int i = 0; i < no; ++i)
        for (int f = 1; f <= 4; ++f)
          plan.avoidance_binaries.push_back(x[lay.obstacle_bin(j, i, f)] > 0.5 ? 1 : 0);
  }
  return plan;
}

/// Independent certification of a plan against a scenario.  Violations come
/// back as data; an empty report is the certificate.
inline ValidationReport validate_plan(const Plan& plan, const Scenario& scn) {
  ValidationReport rep;
  const double tol = 1e-6;
  const int ns = scn.max_horizon;
  auto flag = [&](Violation::Kind k, int step, int index, double amount) {
    rep.violations.push_back({k, step, index, amount});
  };

  if (static_cast<int>(plan.states.size()) != ns + 2 ||
      static_cast<int>(plan.controls.size()) != ns + 1 || plan.arrival_step < 1 ||
      plan.arrival_step > ns + 1) {
    flag(Violation::Kind::Dynamics, -1, -1, 0.0);  // structurally broken
    return rep;
  }

  for (int j = 0; j <= ns; ++j) {
    Eigen::Vector4d pred =
        scn.dynamics.A * plan.states[j] + scn.dynamics.B * plan.controls[j];
    double err = (plan.states[j + 1] - pred).cwiseAbs().maxCoeff();
    if (err > tol) flag(Violation::Kind::Dynamics, j, -1, err);
  }

  for (int j = 1; j <= ns + 1; ++j) {  // the measured state at j = 0 is exempt
    const Eigen::Vector4d& s = plan.states[j];
    double worst = std::max({scn.workspace.x_min - s[0], s[0] - scn.workspace.x_max,
                             scn.workspace.y_min - s[2], s[2] - scn.workspace.y_max,
                             std::abs(s[1]) - scn.v_max[0],
                             std::abs(s[3]) - scn.v_max[1]});
    if (worst > tol) flag(Violation::Kind::StateBounds, j, -1, worst);
  }

  for (int j = 0; j <= ns; ++j) {
    double worst = std::max(std::abs(plan.controls[j][0]) - scn.a_max[0],
                            std::abs(plan.controls[j][1]) - scn.a_max[1]);
    if (worst > tol) flag(Violation::Kind::ControlBounds, j, -1, worst);
  }

  for (int j = 1; j <= plan.arrival_step; ++j) {
    double rx = plan.states[j][0], ry = plan.states[j][2];
    for (std::size_t i = 0; i < scn.obstacles.size(); ++i)
      if (scn.obstacles[i].contains_interior(rx, ry, tol)) {
        const Rect& o = scn.obstacles[i];
        double depth = std::min({rx - o.x_min, o.x_max - rx, ry - o.y_min, o.y_max - ry});
        flag(Violation::Kind::ObstacleAvoidance, j, static_cast<int>(i), depth);
      }
  }

  if (plan.cluster_info) {
    const ClusterAssignment& ca = *plan.cluster_info;
    const int nc = static_cast<int>(ca.clusters.size());
    for (std::size_t i = 0; i < scn.obstacles.size(); ++i) {
      int owners = 0;
      for (int l = 0; l < nc; ++l) {
        if (!ca.assignment[l][i]) continue;
        ++owners;
        const Rect& cl = ca.clusters[l];
        const Rect& o = scn.obstacles[i];
        double gap = std::max({cl.x_min - o.x_min, o.x_max - cl.x_max,
                               cl.y_min - o.y_min, o.y_max - cl.y_max});
        if (gap > tol)
          flag(Violation::Kind::Containment, l, static_cast<int>(i), gap);
      }
      if (owners != 1)
        flag(Violation::Kind::ExactlyOne, -1, static_cast<int>(i),
             static_cast<double>(owners));
    }
  }

  if (!scn.terminal_box.contains(plan.states[plan.arrival_step], tol)) {
    const Eigen::Vector4d& s = plan.states[plan.arrival_step];
    double worst = 0.0;
    for (int c = 0; c < 4; ++c)
      worst = std::max({worst, scn.terminal_box.lo[c] - s[c],
                        s[c] - scn.terminal_box.hi[c]});
    flag(Violation::Kind::Terminal, plan.arrival_step, -1, worst);
  }

  double effort = 0.0;
  for (const Eigen::Vector2d& u : plan.controls) effort += u.cwiseAbs().sum();
  double expect = plan.arrival_step + scn.gamma * effort;
  if (std::abs(expect - plan.cost) > tol)
    flag(Violation::Kind::Cost, -1, -1, std::abs(expect - plan.cost));

  return rep;
}

}  // namespace clustermpc
