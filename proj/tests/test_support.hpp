#pragma once

// Shared helpers for the test suite: a deterministic RNG (so failures
// reproduce across machines and standard-library versions), a brute-force
// vertex-enumeration LP oracle, and an exhaustive MILP oracle built on top
// of it.  The oracles are deliberately naive -- they share no code or
// algorithmic ideas with the solvers under test.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "clustermpc/lp_simplex.hpp"

namespace testsupport {

// SplitMix64: tiny, seedable, identical output everywhere.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double a, double b) { return a + (b - a) * next_double(); }

  // Uniform integer in [a, b], inclusive.
  int uniform_int(int a, int b) {
    return a + static_cast<int>(next_u64() % static_cast<std::uint64_t>(b - a + 1));
  }

  bool coin(double p = 0.5) { return next_double() < p; }

 private:
  std::uint64_t state_;
};

enum class OracleStatus { Optimal, Infeasible };

struct OracleResult {
  OracleStatus status = OracleStatus::Infeasible;
  Eigen::VectorXd solution;
  double objective = std::numeric_limits<double>::quiet_NaN();
};

// Every vertex of the feasible region is the unique solution of n active
// constraints drawn from the rows and the variable bounds.  Enumerate all
// such intersections, keep the feasible ones, take the best objective.
// Only correct when the feasible set is a polytope with at least one vertex;
// the tests use it exclusively on problems with finite variable boxes, where
// that always holds.
inline OracleResult lp_vertex_oracle(const clustermpc::LpProblem& p) {
  const int n = p.num_vars;
  struct Hyperplane {
    Eigen::VectorXd normal;
    double rhs;
  };
  std::vector<Hyperplane> pool;
  for (const auto& c : p.constraints) {
    Hyperplane h{Eigen::VectorXd::Zero(n), c.rhs};
    for (const auto& [j, a] : c.terms) h.normal[j] += a;
    pool.push_back(std::move(h));
  }
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(p.lower[j])) {
      Hyperplane h{Eigen::VectorXd::Zero(n), p.lower[j]};
      h.normal[j] = 1.0;
      pool.push_back(std::move(h));
    }
    if (std::isfinite(p.upper[j]) && p.upper[j] != p.lower[j]) {
      Hyperplane h{Eigen::VectorXd::Zero(n), p.upper[j]};
      h.normal[j] = 1.0;
      pool.push_back(std::move(h));
    }
  }

  auto feasible = [&](const Eigen::VectorXd& x) {
    const double tol = 1e-7;
    for (int j = 0; j < n; ++j) {
      if (x[j] < p.lower[j] - tol || x[j] > p.upper[j] + tol) return false;
    }
    for (const auto& c : p.constraints) {
      double lhs = 0.0;
      for (const auto& [j, a] : c.terms) lhs += a * x[j];
      double slack = c.rhs - lhs;
      double scale = 1.0 + std::abs(c.rhs);
      switch (c.rel) {
        case clustermpc::Relation::LessEq:
          if (slack < -tol * scale) return false;
          break;
        case clustermpc::Relation::GreaterEq:
          if (slack > tol * scale) return false;
          break;
        case clustermpc::Relation::Equal:
          if (std::abs(slack) > tol * scale) return false;
          break;
      }
    }
    return true;
  };

  OracleResult best;
  const int pool_size = static_cast<int>(pool.size());
  std::vector<int> pick(n);

  // Iterate over all size-n index subsets of the pool in lexicographic order.
  auto consider = [&](const std::vector<int>& idx) {
    Eigen::MatrixXd a(n, n);
    Eigen::VectorXd b(n);
    for (int r = 0; r < n; ++r) {
      a.row(r) = pool[idx[r]].normal.transpose();
      b[r] = pool[idx[r]].rhs;
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(a);
    lu.setThreshold(1e-9);
    if (lu.rank() < n) return;
    Eigen::VectorXd x = lu.solve(b);
    if (!x.allFinite() || !feasible(x)) return;
    double obj = p.objective.dot(x) + p.objective_offset;
    if (best.status == OracleStatus::Infeasible || obj < best.objective - 1e-12) {
      best.status = OracleStatus::Optimal;
      best.objective = obj;
      best.solution = x;
    }
  };

  if (n == 0) {
    Eigen::VectorXd x(0);
    if (feasible(x)) {
      best.status = OracleStatus::Optimal;
      best.objective = p.objective_offset;
      best.solution = x;
    }
    return best;
  }
  if (pool_size < n) return best;

  for (int r = 0; r < n; ++r) pick[r] = r;
  for (;;) {
    consider(pick);
    int r = n - 1;
    while (r >= 0 && pick[r] == pool_size - n + r) --r;
    if (r < 0) break;
    ++pick[r];
    for (int t = r + 1; t < n; ++t) pick[t] = pick[t - 1] + 1;
  }
  return best;
}

// Exhaustive MILP oracle: for every 0/1 assignment of the flagged variables,
// substitute them out of the rows and objective, then ask the vertex oracle
// about the residual continuous problem.  Exponential in the binary count
// and combinatorial in the continuous one, so callers keep both small.
inline OracleResult milp_brute_oracle(const clustermpc::LpProblem& p,
                                      const std::vector<int>& binary_vars) {
  const int nb = static_cast<int>(binary_vars.size());
  const int n = p.num_vars;
  std::vector<int> is_bin(n, -1);
  for (int k = 0; k < nb; ++k) is_bin[binary_vars[k]] = k;

  // Map of the surviving continuous variables.
  std::vector<int> cont;
  for (int j = 0; j < n; ++j)
    if (is_bin[j] < 0) cont.push_back(j);
  const int ncont = static_cast<int>(cont.size());
  std::vector<int> new_index(n, -1);
  for (int c = 0; c < ncont; ++c) new_index[cont[c]] = c;

  OracleResult best;
  for (std::uint64_t mask = 0; mask < (1ull << nb); ++mask) {
    auto bin_value = [&](int k) { return (mask >> k) & 1 ? 1.0 : 0.0; };

    clustermpc::LpProblem red;
    red.num_vars = ncont;
    red.objective.resize(ncont);
    red.lower.resize(ncont);
    red.upper.resize(ncont);
    red.objective_offset = p.objective_offset;
    for (int c = 0; c < ncont; ++c) {
      red.objective[c] = p.objective[cont[c]];
      red.lower[c] = p.lower[cont[c]];
      red.upper[c] = p.upper[cont[c]];
    }
    for (int k = 0; k < nb; ++k)
      red.objective_offset += p.objective[binary_vars[k]] * bin_value(k);

    bool box_ok = true;
    for (int k = 0; k < nb && box_ok; ++k) {
      double v = bin_value(k);
      int j = binary_vars[k];
      if (v < p.lower[j] - 1e-12 || v > p.upper[j] + 1e-12) box_ok = false;
    }
    if (!box_ok) continue;

    for (const auto& c : p.constraints) {
      clustermpc::LpConstraint rc;
      rc.rel = c.rel;
      rc.rhs = c.rhs;
      for (const auto& [j, a] : c.terms) {
        if (is_bin[j] >= 0)
          rc.rhs -= a * bin_value(is_bin[j]);
        else
          rc.terms.emplace_back(new_index[j], a);
      }
      red.constraints.push_back(std::move(rc));
    }

    OracleResult r = lp_vertex_oracle(red);
    if (r.status != OracleStatus::Optimal) continue;
    if (best.status == OracleStatus::Infeasible || r.objective < best.objective - 1e-12) {
      best.status = OracleStatus::Optimal;
      best.objective = r.objective;
      best.solution.resize(n);
      for (int k = 0; k < nb; ++k) best.solution[binary_vars[k]] = bin_value(k);
      for (int c = 0; c < ncont; ++c) best.solution[cont[c]] = r.solution[c];
    }
  }
  return best;
}

// Random LP with finite boxes, guaranteed feasible: constraints are aimed at
// a known interior point and given nonnegative slack.
inline clustermpc::LpProblem random_feasible_lp(Rng& rng, int n, int m) {
  clustermpc::LpProblem p;
  p.num_vars = n;
  p.objective.resize(n);
  p.lower.resize(n);
  p.upper.resize(n);
  Eigen::VectorXd anchor(n);
  for (int j = 0; j < n; ++j) {
    double a = rng.uniform(-10.0, 5.0);
    double b = a + rng.uniform(0.5, 12.0);
    p.lower[j] = a;
    p.upper[j] = b;
    p.objective[j] = rng.uniform(-5.0, 5.0);
    anchor[j] = rng.uniform(a + 0.1 * (b - a), b - 0.1 * (b - a));
  }
  for (int i = 0; i < m; ++i) {
    clustermpc::LpConstraint c;
    double lhs = 0.0;
    for (int j = 0; j < n; ++j) {
      if (!rng.coin(0.7)) continue;
      double a = rng.uniform(-3.0, 3.0);
      if (a == 0.0) continue;
      c.terms.emplace_back(j, a);
      lhs += a * anchor[j];
    }
    double slack = rng.uniform(0.0, 4.0);
    int kind = rng.uniform_int(0, 2);
    if (kind == 0) {
      c.rel = clustermpc::Relation::LessEq;
      c.rhs = lhs + slack;
    } else if (kind == 1) {
      c.rel = clustermpc::Relation::GreaterEq;
      c.rhs = lhs - slack;
    } else {
      c.rel = clustermpc::Relation::Equal;
      c.rhs = lhs;
    }
    p.constraints.push_back(std::move(c));
  }
  return p;
}

// Random LP with finite boxes and unconstrained-signed rows; may be
// infeasible, never unbounded.
inline clustermpc::LpProblem random_boxed_lp(Rng& rng, int n, int m) {
  clustermpc::LpProblem p = random_feasible_lp(rng, n, m);
  for (auto& c : p.constraints) c.rhs += rng.uniform(-3.0, 3.0);
  return p;
}

}  // namespace testsupport
