#include <catch2/catch_amalgamated.hpp>

#include <sstream>

#include "clustermpc/milp_model.hpp"
#include "test_support.hpp"

using namespace clustermpc;

TEST_CASE("variables get sequential handles and keep their specs", "[model]") {
  MilpModel m;
  VarHandle b = m.add_binary("b_1_3_2");
  CHECK(b.index == 0);
  VarHandle r = m.add_continuous("rx_4", -20.0, 20.0);
  CHECK(r.index == 1);
  CHECK(m.var(r).lower == -20.0);
  CHECK(m.var(r).upper == 20.0);
  CHECK(m.var(b).kind == VarKind::Binary);
  CHECK(m.num_vars() == 2);
}

TEST_CASE("duplicate names are rejected", "[model]") {
  MilpModel m;
  m.add_binary("b_1_3_2");
  CHECK_THROWS_AS(m.add_binary("b_1_3_2"), ModelError);
  CHECK_THROWS_AS(m.add_continuous("b_1_3_2", 0, 1), ModelError);
}

TEST_CASE("binary bounds other than [0,1] are rejected", "[model]") {
  MilpModel m;
  CHECK_THROWS_AS(m.add_var({"b", VarKind::Binary, 0.0, 2.0}), ModelError);
  CHECK_THROWS_AS(m.add_var({"b", VarKind::Binary, -1.0, 1.0}), ModelError);
}

TEST_CASE("crossed or NaN bounds are rejected", "[model]") {
  MilpModel m;
  CHECK_THROWS_AS(m.add_continuous("x", 1.0, 0.0), ModelError);
  CHECK_THROWS_AS(m.add_continuous("y", 0.0, std::numeric_limits<double>::quiet_NaN()),
                  ModelError);
}

TEST_CASE("constraints get sequential ids and reject bad input", "[model]") {
  MilpModel m;
  VarHandle x = m.add_continuous("x", 0, 1);
  VarHandle y = m.add_continuous("y", 0, 1);
  CHECK(m.add_constraint({{x, 1.0}, {y, 1.0}}, Relation::LessEq, 1.0) == 0);
  CHECK(m.add_constraint({{x, 1.0}}, Relation::Equal, 0.5) == 1);

  MilpModel other;
  VarHandle z = other.add_continuous("z", 0, 1);
  CHECK_THROWS_AS(m.add_constraint({{z, 1.0}}, Relation::LessEq, 1.0), ModelError);

  CHECK_THROWS_AS(
      m.add_constraint({{x, std::numeric_limits<double>::quiet_NaN()}}, Relation::LessEq, 1.0),
      ModelError);
  CHECK_THROWS_AS(m.add_constraint({{x, 1.0}}, Relation::LessEq, kInf), ModelError);

  // Empty coefficient list is legal; it reads 0 <= rhs.
  CHECK(m.add_constraint({}, Relation::LessEq, -1.0) == 2);
}

TEST_CASE("relax drops integrality and nothing else", "[model]") {
  MilpModel m;
  VarHandle b = m.add_binary("b");
  VarHandle x = m.add_continuous("x", -2.0, 3.0);
  m.add_constraint({{b, 2.0}, {x, 1.0}}, Relation::LessEq, 2.5);
  m.add_constraint({{x, 1.0}}, Relation::GreaterEq, -1.0);
  m.add_constraint({{b, 1.0}, {x, -1.0}}, Relation::Equal, 0.0);
  m.set_objective_coeff(b, 4.0);
  m.set_objective_coeff(x, -1.0);
  m.set_objective_offset(7.0);

  LpProblem p = m.relax();
  REQUIRE(p.num_vars == 2);
  CHECK(p.lower[0] == 0.0);
  CHECK(p.upper[0] == 1.0);
  CHECK(p.lower[1] == -2.0);
  CHECK(p.upper[1] == 3.0);
  CHECK(p.objective[0] == 4.0);
  CHECK(p.objective[1] == -1.0);
  CHECK(p.objective_offset == 7.0);
  REQUIRE(p.constraints.size() == 3);
  CHECK(p.constraints[0].rel == Relation::LessEq);
  CHECK(p.constraints[1].rel == Relation::GreaterEq);
  CHECK(p.constraints[2].rel == Relation::Equal);
  CHECK(p.constraints[0].terms.size() == 2);

  // Round-trip: any point scores the same objective in model and relaxation.
  Eigen::Vector2d pt(1.0, 1.0);
  CHECK(m.objective_value(pt) ==
        Catch::Approx(p.objective.dot(pt) + p.objective_offset).margin(1e-15));
}

TEST_CASE("duplicate handles in a constraint are summed", "[model]") {
  MilpModel m;
  VarHandle x = m.add_continuous("x", 0, 10);
  m.add_constraint({{x, 0.5}, {x, 0.5}}, Relation::LessEq, 4.0);
  LpProblem p = m.relax();
  REQUIRE(p.constraints[0].terms.size() == 1);
  CHECK(p.constraints[0].terms[0].second == 1.0);
}

TEST_CASE("evaluation helpers score points independently", "[model]") {
  MilpModel m;
  VarHandle b = m.add_binary("b");
  VarHandle x = m.add_continuous("x", 0.0, 2.0);
  m.add_constraint({{b, 1.0}, {x, 1.0}}, Relation::LessEq, 2.0);
  m.set_objective_coeff(x, 1.0);
  m.set_objective_offset(1.0);

  Eigen::Vector2d good(1.0, 1.0);
  CHECK(m.max_violation(good) == 0.0);
  CHECK(m.integrality_violation(good) == 0.0);
  CHECK(m.objective_value(good) == 2.0);

  Eigen::Vector2d bad(0.5, 1.8);
  CHECK(m.max_violation(bad) == Catch::Approx(0.3));       // row breach
  CHECK(m.integrality_violation(bad) == Catch::Approx(0.5));

  Eigen::Vector2d out_of_box(0.0, 2.5);
  CHECK(m.max_violation(out_of_box) == Catch::Approx(0.5));  // bound breach

  Eigen::VectorXd wrong_size(3);
  CHECK_THROWS_AS(m.max_violation(wrong_size), ModelError);
}

TEST_CASE("dump layout is stable", "[model]") {
  MilpModel m;
  VarHandle b = m.add_binary("b0");
  VarHandle x = m.add_continuous("x0", -1.5, kInf);
  m.add_constraint({{b, 2.0}, {x, -1.0}}, Relation::LessEq, 0.25);
  m.add_constraint({}, Relation::GreaterEq, -1.0);
  m.set_objective_coeff(x, 1.0);
  m.set_objective_offset(3.0);

  std::ostringstream os;
  m.dump(os);
  CHECK(os.str() ==
        "minimize\n"
        " obj: + 1 x0 + 3\n"
        "subject to\n"
        " c0: + 2 b0 - 1 x0 <= 0.25\n"
        " c1: 0 >= -1\n"
        "bounds\n"
        " 0 <= b0 <= 1\n"
        " -1.5 <= x0 <= inf\n"
        "binary\n"
        " b0\n"
        "end\n");
}
