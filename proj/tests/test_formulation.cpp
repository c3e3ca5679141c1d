#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "clustermpc/formulation.hpp"
#include "clustermpc/milp_bnb.hpp"
#include "test_support.hpp"

using namespace clustermpc;
using testsupport::Rng;

namespace {

// Two obstacles forming a wall with a narrow corridor at mid-height; the
// start sits left of the wall, the target right of it.  Small enough to
// solve in a unit test, rich enough to make clustering decisions matter.
Scenario corridor_scenario() {
  Scenario s;
  s.dynamics = zoh_discretize(double_integrator_2d(), 1.0);
  s.workspace = {0.0, 0.0, 8.0, 6.0};
  s.obstacles = {{3.0, 0.0, 4.0, 2.6}, {3.0, 3.4, 4.0, 6.0}};
  s.terminal_box.lo = Eigen::Vector4d(6.0, -0.3, 2.5, -0.3);
  s.terminal_box.hi = Eigen::Vector4d(7.0, 0.3, 3.5, 0.3);
  s.v_max = Eigen::Vector2d(3.0, 3.0);
  s.a_max = Eigen::Vector2d(1.5, 1.5);
  s.gamma = 1.0;
  s.max_horizon = 6;
  return s;
}

Eigen::Vector4d corridor_start() { return {1.5, 0.0, 3.0, 0.0}; }

// Obstacles confined to the middle of the box so the lower-left corner and
// the upper-right target patch stay clear by construction.
Scenario random_scenario(Rng& rng) {
  Scenario s;
  s.dynamics = zoh_discretize(double_integrator_2d(), rng.uniform(0.5, 1.5));
  double w = rng.uniform(6.0, 20.0);
  double h = rng.uniform(6.0, 20.0);
  s.workspace = {0.0, 0.0, w, h};
  int no = rng.uniform_int(0, 4);
  for (int i = 0; i < no; ++i) {
    double ox = rng.uniform(0.25 * w, 0.6 * w);
    double oy = rng.uniform(0.25 * h, 0.6 * h);
    s.obstacles.push_back({ox, oy, ox + rng.uniform(0.02, 0.15) * w,
                           oy + rng.uniform(0.02, 0.15) * h});
  }
  double veps = rng.uniform(0.01, 0.5);
  s.terminal_box.lo = Eigen::Vector4d(0.85 * w, -veps, 0.85 * h, -veps);
  s.terminal_box.hi = Eigen::Vector4d(0.95 * w, veps, 0.95 * h, veps);
  s.v_max = Eigen::Vector2d(rng.uniform(1.0, 10.0), rng.uniform(1.0, 10.0));
  s.a_max = Eigen::Vector2d(rng.uniform(0.5, 3.0), rng.uniform(0.5, 3.0));
  s.gamma = rng.uniform(0.0, 2.0);
  s.max_horizon = rng.uniform_int(2, 4);
  return s;
}

double coeff_of(const ModelConstraint& row, int idx) {
  for (const auto& t : row.terms)
    if (t.first == idx) return t.second;
  return 0.0;
}

std::string dump_str(const MilpModel& m) {
  std::ostringstream os;
  m.dump(os);
  return os.str();
}

double effort_sum(const Plan& plan) {
  double e = 0.0;
  for (const auto& u : plan.controls) e += u.cwiseAbs().sum();
  return e;
}

}  // namespace

TEST_CASE("binary counts follow both accounting conventions", "[formulation]") {
  PlanningMode un = PlanningMode::unclustered();
  CHECK(count_binaries(un, 18, 45, 0) == 3240);
  CHECK(count_binaries(PlanningMode::clustered(2), 18, 45, 2) == 234);
  CHECK(count_binaries(PlanningMode::clustered(3), 18, 45, 3) == 351);
  CHECK(count_binaries(un, 0, 45, 0) == 0);
  CHECK(count_binaries(un, 18, 0, 0) == 0);
  CHECK(count_binaries(PlanningMode::clustered(1), 3, 0, 1) == 12);
  CHECK_THROWS_AS(count_binaries(un, -1, 2, 0), FormulationError);
  CHECK_THROWS_AS(count_binaries(un, 2, -3, 0), FormulationError);
  CHECK_THROWS_AS(PlanningMode::clustered(0), FormulationError);
}

TEST_CASE("built models match the layout arithmetic", "[formulation]") {
  Scenario s = corridor_scenario();
  Eigen::Vector4d x0 = corridor_start();
  const int ns = s.max_horizon, no = 2;

  MilpModel mu = build_unclustered(s, x0);
  ModelLayout lu = ModelLayout::make(PlanningMode::unclustered(), ns, no);
  REQUIRE(mu.num_vars() == lu.num_vars());
  CHECK(mu.num_vars() == 115);
  CHECK(mu.num_constraints() == 193);
  CHECK(static_cast<long>(mu.binary_indices().size()) ==
        (ns + 1) + count_binaries(PlanningMode::unclustered(), ns, no, 0));

  CHECK(mu.var(lu.state(0, 0)).name == "x0_0");
  CHECK(mu.var(lu.control(6, 1)).name == "u6_1");
  CHECK(mu.var(lu.slack(0, 0)).name == "s0_0");
  CHECK(mu.var(lu.arrival(7)).name == "bT7");
  CHECK(mu.var(lu.obstacle_bin(1, 0, 1)).name == "bO1_0_1");
  CHECK(lu.obstacle_bin(ns, 1, 4) == mu.num_vars() - 1);

  // Measured state enters through pinned bounds; everything else gets the
  // scenario boxes.
  for (int c = 0; c < 4; ++c) {
    CHECK(mu.var(lu.state(0, c)).lower == x0[c]);
    CHECK(mu.var(lu.state(0, c)).upper == x0[c]);
  }
  CHECK(mu.var(lu.state(2, 0)).lower == 0.0);
  CHECK(mu.var(lu.state(2, 0)).upper == 8.0);
  CHECK(mu.var(lu.state(2, 2)).upper == 6.0);
  CHECK(mu.var(lu.state(2, 1)).lower == -3.0);
  CHECK(mu.var(lu.control(3, 0)).upper == 1.5);
  CHECK(mu.var(lu.slack(3, 0)).lower == 0.0);
  CHECK(mu.var(lu.slack(3, 0)).upper == 1.5);

  // Objective: arrival index weights plus gamma on the epigraph column.
  CHECK(mu.objective_coeff(lu.arrival(1)) == 1.0);
  CHECK(mu.objective_coeff(lu.arrival(7)) == 7.0);
  CHECK(mu.objective_coeff(lu.slack(2, 1)) == 1.0);
  CHECK(mu.objective_coeff(lu.control(2, 1)) == 0.0);
  CHECK(mu.objective_coeff(lu.state(3, 0)) == 0.0);

  MilpModel mc = build_clustered(s, x0, 2);
  ModelLayout lc = ModelLayout::make(PlanningMode::clustered(2), ns, no);
  REQUIRE(mc.num_vars() == lc.num_vars());
  CHECK(mc.num_vars() == 127);
  CHECK(mc.num_constraints() == 211);
  CHECK(static_cast<long>(mc.binary_indices().size()) ==
        (ns + 1) + count_binaries(PlanningMode::clustered(2), ns, no, 2));
  CHECK(mc.var(lc.cluster_coord(0, 0)).name == "c0_xmin");
  CHECK(mc.var(lc.cluster_coord(1, 3)).name == "c1_ymax");
  CHECK(mc.var(lc.assignment(1, 0)).name == "bR1_0");
  CHECK(mc.var(lc.cluster_bin(ns, 1, 4)).name == "bC6_1_4");
  CHECK(lc.cluster_bin(ns, 1, 4) == mc.num_vars() - 1);
  CHECK(mc.var(lc.cluster_coord(0, 0)).lower == 0.0);
  CHECK(mc.var(lc.cluster_coord(0, 0)).upper == 8.0);
  CHECK(mc.var(lc.cluster_coord(0, 1)).upper == 6.0);

  // Building twice is bit-identical.
  CHECK(dump_str(build_unclustered(s, x0)) == dump_str(mu));
  CHECK(dump_str(build_clustered(s, x0, 2)) == dump_str(mc));
}

TEST_CASE("constraint blocks sit where the layout says", "[formulation]") {
  Scenario s = corridor_scenario();
  Eigen::Vector4d x0 = corridor_start();
  const int ns = s.max_horizon, no = 2;
  const double mo = 8.0 + 2.6;  // workspace span + largest obstacle span
  const int skeleton = 4 * (ns + 1) + 4 * (ns + 1) + 2 * ns + 8 * (ns + 1) + 1;
  REQUIRE(skeleton == 125);

  MilpModel mu = build_unclustered(s, x0);
  ModelLayout lu = ModelLayout::make(PlanningMode::unclustered(), ns, no);
  const auto& rows = mu.constraints();

  // Avoidance group for (j=1, obstacle 0): four gated side rows, then the
  // side-count row.
  int base = skeleton + 5 * ((1 - 1) * no + 0);
  CHECK(rows[base + 0].rel == Relation::LessEq);
  CHECK(rows[base + 0].terms.size() == 2);
  CHECK(coeff_of(rows[base + 0], lu.state(1, 0)) == 1.0);
  CHECK(coeff_of(rows[base + 0], lu.obstacle_bin(1, 0, 1)) == -mo);
  CHECK(rows[base + 0].rhs == 3.0);
  CHECK(coeff_of(rows[base + 1], lu.state(1, 2)) == 1.0);
  CHECK(rows[base + 1].rhs == 0.0);
  CHECK(coeff_of(rows[base + 2], lu.state(1, 0)) == -1.0);
  CHECK(rows[base + 2].rhs == -4.0);
  CHECK(coeff_of(rows[base + 3], lu.state(1, 2)) == -1.0);
  CHECK(rows[base + 3].rhs == -2.6);
  CHECK(rows[base + 4].terms.size() == 4);
  CHECK(rows[base + 4].rhs == 3.0);
  for (int f = 1; f <= 4; ++f)
    CHECK(coeff_of(rows[base + 4], lu.obstacle_bin(1, 0, f)) == 1.0);

  // After the per-step groups, the final state's four rows (no side-count
  // row: they reuse the step-ns binaries) fill the tail exactly.
  int last = skeleton + 5 * ns * no + 4 * (no - 1);
  CHECK(last + 4 == mu.num_constraints());
  CHECK(coeff_of(rows[last], lu.state(ns + 1, 0)) == 1.0);
  CHECK(coeff_of(rows[last], lu.obstacle_bin(ns, no - 1, 1)) == -mo);

  MilpModel mc = build_clustered(s, x0, 2);
  ModelLayout lc = ModelLayout::make(PlanningMode::clustered(2), ns, no);
  const auto& crows = mc.constraints();
  const double mr = 8.0;  // containment rows get the bare workspace span

  // Containment group for (cluster 1, obstacle 0).
  int cbase = skeleton + 4 * (1 * no + 0);
  CHECK(coeff_of(crows[cbase + 0], lc.cluster_coord(1, 0)) == 1.0);
  CHECK(coeff_of(crows[cbase + 0], lc.assignment(1, 0)) == mr);
  CHECK(crows[cbase + 0].rhs == 3.0 + mr);
  CHECK(coeff_of(crows[cbase + 2], lc.cluster_coord(1, 2)) == -1.0);
  CHECK(crows[cbase + 2].rhs == -4.0 + mr);

  // One partition row per obstacle, right after all containment rows.
  int ebase = skeleton + 4 * 2 * no;
  for (int i = 0; i < no; ++i) {
    CHECK(crows[ebase + i].rel == Relation::Equal);
    CHECK(crows[ebase + i].rhs == 1.0);
    CHECK(coeff_of(crows[ebase + i], lc.assignment(0, i)) == 1.0);
    CHECK(coeff_of(crows[ebase + i], lc.assignment(1, i)) == 1.0);
  }

  // Cluster avoidance rows reference the rectangle coordinates as variables.
  int abase = ebase + no + 5 * ((2 - 1) * 2 + 1);  // j = 2, cluster 1
  CHECK(coeff_of(crows[abase + 0], lc.state(2, 0)) == 1.0);
  CHECK(coeff_of(crows[abase + 0], lc.cluster_coord(1, 0)) == -1.0);
  CHECK(coeff_of(crows[abase + 0], lc.cluster_bin(2, 1, 1)) == -mo);
  CHECK(crows[abase + 0].rhs == 0.0);
  CHECK(coeff_of(crows[abase + 2], lc.state(2, 0)) == -1.0);
  CHECK(coeff_of(crows[abase + 2], lc.cluster_coord(1, 2)) == 1.0);
  CHECK(crows[abase + 2].rhs == 0.0);
  CHECK(crows[abase + 4].terms.size() == 4);
  CHECK(crows[abase + 4].rhs == 3.0);

  // The optional ordering rows land at the very end.
  MilpModel msym = build_clustered(s, x0, 2, true);
  REQUIRE(msym.num_constraints() == mc.num_constraints() + 1);
  const ModelConstraint& tail = msym.constraints().back();
  CHECK(tail.rel == Relation::LessEq);
  CHECK(tail.rhs == 0.0);
  CHECK(coeff_of(tail, lc.cluster_coord(0, 0)) == 1.0);
  CHECK(coeff_of(tail, lc.cluster_coord(1, 0)) == -1.0);
}

TEST_CASE("every gated row can be switched off inside the boxes", "[formulation]") {
  Rng rng(0x51ac5EEDu);
  int gated_rows_checked = 0;
  for (int trial = 0; trial < 15; ++trial) {
    Scenario s = random_scenario(rng);
    Eigen::Vector4d x0(0.05 * s.workspace.x_max, 0.0, 0.05 * s.workspace.y_max, 0.0);
    std::vector<MilpModel> models;
    models.push_back(build_unclustered(s, x0));
    models.push_back(build_clustered(s, x0, 1 + trial % 3));
    for (const MilpModel& m : models) {
      for (const ModelConstraint& row : m.constraints()) {
        if (row.rel != Relation::LessEq) continue;
        bool has_bin = false, has_cont = false;
        double worst = 0.0;
        for (const auto& [idx, coef] : row.terms) {
          const VarSpec& v = m.var(idx);
          if (v.kind == VarKind::Binary) {
            has_bin = true;
            worst += std::min(0.0, coef);  // binary set to its relaxing value
          } else {
            has_cont = true;
            worst += coef > 0 ? coef * v.upper : coef * v.lower;
          }
        }
        if (has_bin && has_cont) {
          ++gated_rows_checked;
          REQUIRE(worst <= row.rhs + 1e-9);
        }
      }
    }
  }
  CHECK(gated_rows_checked > 1000);
}

TEST_CASE("decode recovers hand-built two-cluster assignments", "[formulation]") {
  Scenario s;
  s.dynamics = zoh_discretize(double_integrator_2d(), 1.0);
  s.workspace = {0.0, 0.0, 20.0, 20.0};
  s.obstacles = {{1.0, 1.0, 3.0, 3.0},
                 {2.0, 4.0, 4.0, 6.0},
                 {8.0, 8.0, 10.0, 10.0},
                 {15.0, 2.0, 17.0, 4.0},
                 {16.0, 5.0, 18.0, 7.0}};
  s.terminal_box.lo = Eigen::Vector4d(18.0, -0.1, 18.0, -0.1);
  s.terminal_box.hi = Eigen::Vector4d(19.0, 0.1, 19.0, 0.1);
  s.v_max = Eigen::Vector2d(5.0, 5.0);
  s.a_max = Eigen::Vector2d(2.0, 2.0);
  s.max_horizon = 2;
  Eigen::Vector4d x0(0.5, 0.0, 0.5, 0.0);

  MilpModel m = build_clustered(s, x0, 2);
  PlanningMode mode = PlanningMode::clustered(2);
  ModelLayout lay = ModelLayout::make(mode, s.max_horizon, 5);

  auto craft = [&](const std::vector<std::uint8_t>& row0,
                   const std::vector<std::uint8_t>& row1, const Rect& c0,
                   const Rect& c1) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(lay.num_vars());
    v[lay.arrival(1)] = 1.0;
    const Rect* cl[2] = {&c0, &c1};
    for (int l = 0; l < 2; ++l) {
      v[lay.cluster_coord(l, 0)] = cl[l]->x_min;
      v[lay.cluster_coord(l, 1)] = cl[l]->y_min;
      v[lay.cluster_coord(l, 2)] = cl[l]->x_max;
      v[lay.cluster_coord(l, 3)] = cl[l]->y_max;
    }
    for (int i = 0; i < 5; ++i) {
      v[lay.assignment(0, i)] = row0[i];
      v[lay.assignment(1, i)] = row1[i];
    }
    MilpOutcome out;
    out.status = MilpStatus::Optimal;
    out.incumbent = v;
    out.objective_value = 1.0;
    return out;
  };

  // Case "a": obstacles 1-2 in the first cluster, 3-5 in the second.
  std::vector<std::uint8_t> a0{1, 1, 0, 0, 0}, a1{0, 0, 1, 1, 1};
  Plan pa = decode_plan(m, craft(a0, a1, {1.0, 1.0, 4.0, 6.0}, {8.0, 2.0, 18.0, 10.0}),
                        s, mode);
  REQUIRE(pa.cluster_info.has_value());
  CHECK(pa.cluster_info->assignment[0] == a0);
  CHECK(pa.cluster_info->assignment[1] == a1);
  CHECK(pa.cluster_info->clusters[0].x_max == 4.0);
  CHECK(pa.cluster_info->clusters[1].y_max == 10.0);
  CHECK(pa.arrival_step == 1);

  // Case "b": the third obstacle moves to the first cluster.
  std::vector<std::uint8_t> b0{1, 1, 1, 0, 0}, b1{0, 0, 0, 1, 1};
  Plan pb = decode_plan(m, craft(b0, b1, {1.0, 1.0, 10.0, 10.0}, {15.0, 2.0, 18.0, 7.0}),
                        s, mode);
  CHECK(pb.cluster_info->assignment[0] == b0);
  CHECK(pb.cluster_info->assignment[1] == b1);

  // An assigned cluster that fails to contain its obstacle is rejected.
  CHECK_THROWS_AS(
      decode_plan(m, craft(a0, a1, {1.0, 1.0, 4.0, 6.0}, {8.0, 2.0, 10.0, 10.0}), s,
                  mode),
      FormulationError);

  // Corrupt arrival encodings are rejected.
  MilpOutcome none = craft(a0, a1, {1.0, 1.0, 4.0, 6.0}, {8.0, 2.0, 18.0, 10.0});
  (*none.incumbent)[lay.arrival(1)] = 0.0;
  CHECK_THROWS_AS(decode_plan(m, none, s, mode), FormulationError);
  MilpOutcome dbl = craft(a0, a1, {1.0, 1.0, 4.0, 6.0}, {8.0, 2.0, 18.0, 10.0});
  (*dbl.incumbent)[lay.arrival(2)] = 1.0;
  CHECK_THROWS_AS(decode_plan(m, dbl, s, mode), FormulationError);

  MilpOutcome empty;
  CHECK_THROWS_AS(decode_plan(m, empty, s, mode), FormulationError);
  MilpOutcome tiny = craft(a0, a1, {1.0, 1.0, 4.0, 6.0}, {8.0, 2.0, 18.0, 10.0});
  tiny.incumbent = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(decode_plan(m, tiny, s, mode), FormulationError);
}

TEST_CASE("a start inside the target set plans one step at unit cost",
          "[formulation]") {
  Scenario s;
  s.dynamics = zoh_discretize(double_integrator_2d(), 1.0);
  s.workspace = {0.0, 0.0, 10.0, 10.0};
  s.terminal_box.lo = Eigen::Vector4d(4.0, -0.01, 4.0, -0.01);
  s.terminal_box.hi = Eigen::Vector4d(6.0, 0.01, 6.0, 0.01);
  s.v_max = Eigen::Vector2d(2.0, 2.0);
  s.a_max = Eigen::Vector2d(1.0, 1.0);
  s.max_horizon = 3;
  Eigen::Vector4d x0(5.0, 0.0, 5.0, 0.0);

  MilpModel m = build_unclustered(s, x0);
  MilpOutcome out = solve_milp(m);
  REQUIRE(out.status == MilpStatus::Optimal);
  CHECK(std::abs(out.objective_value - 1.0) <= 1e-7);

  Plan plan = decode_plan(m, out, s, PlanningMode::unclustered());
  CHECK(plan.arrival_step == 1);
  CHECK((plan.states[1] - x0).cwiseAbs().maxCoeff() <= 1e-7);
  for (const auto& u : plan.controls) CHECK(u.cwiseAbs().maxCoeff() <= 1e-7);
  CHECK(validate_plan(plan, s).ok());
}

TEST_CASE("clustered costs bracket the unclustered optimum", "[formulation]") {
  Scenario s = corridor_scenario();
  Eigen::Vector4d x0 = corridor_start();

  MilpModel mu = build_unclustered(s, x0);
  MilpOutcome ou = solve_milp(mu);
  REQUIRE(ou.status == MilpStatus::Optimal);
  Plan pu = decode_plan(mu, ou, s, PlanningMode::unclustered());

  MilpModel m2 = build_clustered(s, x0, 2);
  MilpOutcome o2 = solve_milp(m2);
  REQUIRE(o2.status == MilpStatus::Optimal);
  Plan p2 = decode_plan(m2, o2, s, PlanningMode::clustered(2));

  MilpModel m1 = build_clustered(s, x0, 1);
  MilpOutcome o1 = solve_milp(m1);
  REQUIRE(o1.status == MilpStatus::Optimal);
  Plan p1 = decode_plan(m1, o1, s, PlanningMode::clustered(1));

  // Clusters only ever cover more ground than the obstacles they contain, so
  // the clustered optimum cannot beat the unclustered one; and with as many
  // clusters as obstacles they can shrink onto them exactly.
  CHECK(ou.objective_value <= o2.objective_value + 1e-4);
  CHECK(o2.objective_value <= o1.objective_value + 1e-4);
  CHECK(std::abs(o2.objective_value - ou.objective_value) <= 1e-4);

  for (const Plan* p : {&pu, &p2, &p1}) {
    ValidationReport rep = validate_plan(*p, s);
    CAPTURE(rep.violations.size());
    CHECK(rep.ok());
    CHECK(p->arrival_step >= 2);
    // Post-arrival controls are forced off by the shutoff rows.
    for (int j = p->arrival_step; j <= s.max_horizon; ++j)
      CHECK(p->controls[j].cwiseAbs().maxCoeff() <= 1e-7);
    CHECK(std::abs(p->cost - (p->arrival_step + s.gamma * effort_sum(*p))) <= 1e-6);
  }

  // Every obstacle belongs to exactly one cluster in the decoded assignment.
  REQUIRE(p2.cluster_info.has_value());
  for (std::size_t i = 0; i < s.obstacles.size(); ++i)
    CHECK(p2.cluster_info->assignment[0][i] + p2.cluster_info->assignment[1][i] == 1);

  // The ordering rows relabel clusters without touching the optimum.
  MilpModel msym = build_clustered(s, x0, 2, true);
  MilpOutcome osym = solve_milp(msym);
  REQUIRE(osym.status == MilpStatus::Optimal);
  CHECK(std::abs(osym.objective_value - o2.objective_value) <= 1e-4);
  Plan psym = decode_plan(msym, osym, s, PlanningMode::clustered(2));
  REQUIRE(psym.cluster_info.has_value());
  CHECK(psym.cluster_info->clusters[0].x_min <=
        psym.cluster_info->clusters[1].x_min + 1e-9);

  // Tampering with certified plans is caught, one defect family at a time.
  {
    Plan bad = pu;
    bad.states[2][0] += 1e-3;
    ValidationReport rep = validate_plan(bad, s);
    REQUIRE(rep.count(Violation::Kind::Dynamics) >= 1);
    double worst = 0.0;
    for (const auto& v : rep.violations)
      if (v.kind == Violation::Kind::Dynamics) worst = std::max(worst, v.amount);
    CHECK(worst >= 9e-4);
  }
  {
    Plan bad = pu;
    bad.states[1][0] = 3.5;  // teleport into the lower wall segment
    bad.states[1][2] = 1.0;
    CHECK(validate_plan(bad, s).count(Violation::Kind::ObstacleAvoidance) >= 1);
  }
  {
    Plan bad = pu;
    bad.controls[0][0] = s.a_max[0] + 0.1;
    CHECK(validate_plan(bad, s).count(Violation::Kind::ControlBounds) >= 1);
  }
  {
    Plan bad = pu;
    bad.cost += 0.01;
    CHECK(validate_plan(bad, s).count(Violation::Kind::Cost) == 1);
  }
  {
    Plan bad = pu;
    bad.arrival_step = 1;  // nowhere near the target yet
    CHECK(validate_plan(bad, s).count(Violation::Kind::Terminal) >= 1);
  }
  {
    Plan bad = p2;
    bad.cluster_info->assignment[0][0] = 0;
    bad.cluster_info->assignment[1][0] = 0;
    CHECK(validate_plan(bad, s).count(Violation::Kind::ExactlyOne) == 1);
  }
  {
    Plan bad = p2;
    // Shrink whichever cluster owns obstacle 0 until containment breaks.
    int owner = bad.cluster_info->assignment[0][0] ? 0 : 1;
    bad.cluster_info->clusters[owner].x_max = s.obstacles[0].x_max - 0.5;
    CHECK(validate_plan(bad, s).count(Violation::Kind::Containment) >= 1);
  }
}

TEST_CASE("points outside a containing cluster are outside its obstacles",
          "[formulation]") {
  Rng rng(0xC0FFEEu);
  int outside_cluster = 0, inside_cluster = 0;
  for (int trial = 0; trial < 400; ++trial) {
    Rect obs{rng.uniform(0.0, 8.0), rng.uniform(0.0, 8.0), 0.0, 0.0};
    obs.x_max = obs.x_min + rng.uniform(0.1, 3.0);
    obs.y_max = obs.y_min + rng.uniform(0.1, 3.0);
    Rect cluster{obs.x_min - rng.uniform(0.0, 2.0), obs.y_min - rng.uniform(0.0, 2.0),
                 obs.x_max + rng.uniform(0.0, 2.0), obs.y_max + rng.uniform(0.0, 2.0)};
    // Half the probes aim at the cluster box so both branches get exercised.
    double px, py;
    if (trial % 2 == 0) {
      px = rng.uniform(cluster.x_min, cluster.x_max);
      py = rng.uniform(cluster.y_min, cluster.y_max);
    } else {
      px = rng.uniform(-2.0, 13.0);
      py = rng.uniform(-2.0, 13.0);
    }
    if (cluster.contains_interior(px, py)) {
      ++inside_cluster;
      continue;
    }
    ++outside_cluster;
    REQUIRE(!obs.contains_interior(px, py));
  }
  CHECK(outside_cluster > 50);
  CHECK(inside_cluster > 50);
}

TEST_CASE("scenario and input defects are rejected", "[formulation]") {
  Scenario base = corridor_scenario();
  Eigen::Vector4d x0 = corridor_start();

  // Defaults derived by finalization.
  Scenario fin = finalize_scenario(base);
  CHECK(fin.big_m.obstacle == 8.0 + 2.6);
  CHECK(fin.big_m.cluster == 8.0 + 2.6);
  CHECK(fin.big_m.contain == 8.0);
  CHECK(fin.big_m.terminal == 8.0 + 2.6);
  // Explicit values survive finalization untouched.
  Scenario pinned = base;
  pinned.big_m.obstacle = 50.0;
  CHECK(finalize_scenario(pinned).big_m.obstacle == 50.0);

  Scenario bad = base;
  bad.workspace = {5.0, 0.0, 4.0, 6.0};
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.obstacles[0].x_max = 9.0;
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.obstacles[1] = {4.0, 2.0, 3.0, 2.5};
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;  // target patch overlapping an obstacle interior
  bad.terminal_box.lo = Eigen::Vector4d(3.5, -0.3, 2.0, -0.3);
  bad.terminal_box.hi = Eigen::Vector4d(4.5, 0.3, 2.5, 0.3);
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  // Touching an obstacle face is allowed.
  bad = base;
  bad.terminal_box.lo = Eigen::Vector4d(4.0, -0.3, 0.0, -0.3);
  bad.terminal_box.hi = Eigen::Vector4d(5.0, 0.3, 1.0, 0.3);
  CHECK_NOTHROW(finalize_scenario(bad));

  bad = base;
  bad.gamma = -0.1;
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);
  bad.gamma = std::nan("");
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.v_max[1] = 0.0;
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.max_horizon = 0;
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.big_m.obstacle = 1.0;  // smaller than the workspace span
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.big_m.terminal = 0.5;
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  bad = base;
  bad.terminal_box.lo[0] = bad.terminal_box.hi[0] + 1.0;
  CHECK_THROWS_AS(finalize_scenario(bad), FormulationError);

  CHECK_THROWS_AS(build_unclustered(base, {-1.0, 0.0, 3.0, 0.0}), FormulationError);
  CHECK_THROWS_AS(build_unclustered(base, {9.0, 0.0, 3.0, 0.0}), FormulationError);
  CHECK_THROWS_AS(build_unclustered(base, {3.5, 0.0, 1.0, 0.0}), FormulationError);
  // On an obstacle face is outside the open interior, hence accepted.
  CHECK_NOTHROW(build_unclustered(base, {3.0, 0.0, 1.0, 0.0}));
  CHECK_THROWS_AS(build_clustered(base, x0, 0), FormulationError);
}
