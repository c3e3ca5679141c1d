#pragma once

// Continuous-time LTI plant descriptions and zero-order-hold discretization.
// The planner's plant is a pair of decoupled double integrators; its A_c is
// nilpotent, so the augmented-matrix Taylor series below terminates and the
// discrete matrices are exact.

#include <cmath>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace clustermpc {

struct LtiContinuous {
  Eigen::MatrixXd A_c;
  Eigen::MatrixXd B_c;
};

struct LtiDiscrete {
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  double Ts = 0.0;
};

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Particle in the plane: state [r_x, v_x, r_y, v_y], input [a_x, a_y].
/// Velocity integrates acceleration, position integrates velocity, the two
/// axes never couple.
inline LtiContinuous double_integrator_2d() {
  LtiContinuous sys;
  sys.A_c = Eigen::MatrixXd::Zero(4, 4);
  sys.A_c(0, 1) = 1.0;
  sys.A_c(2, 3) = 1.0;
  sys.B_c = Eigen::MatrixXd::Zero(4, 2);
  sys.B_c(1, 0) = 1.0;
  sys.B_c(3, 1) = 1.0;
  return sys;
}

/// Zero-order-hold discretization: A = exp(A_c Ts), B = ∫ exp(A_c τ) dτ B_c,
/// both read off the exponential of the augmented matrix [[A_c, B_c], [0, 0]]
/// scaled by Ts.  The Taylor series stops once a term's norm falls below
/// 1e-15 of the running sum, which is an exact stop for nilpotent A_c.
inline LtiDiscrete zoh_discretize(const LtiContinuous& sys, double Ts) {
  if (!(Ts > 0.0) || !std::isfinite(Ts))
    throw DynamicsError("sample period must be positive and finite, got " +
                        std::to_string(Ts));
  const Eigen::Index n = sys.A_c.rows();
  const Eigen::Index m = sys.B_c.cols();
  if (sys.A_c.cols() != n)
    throw DynamicsError("A_c must be square");
  if (sys.B_c.rows() != n)
    throw DynamicsError("B_c has " + std::to_string(sys.B_c.rows()) +
                        " rows for a " + std::to_string(n) + "-state system");
  if (!sys.A_c.allFinite() || !sys.B_c.allFinite())
    throw DynamicsError("system matrices contain non-finite entries");

  const Eigen::Index d = n + m;
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(d, d);
  aug.topLeftCorner(n, n) = sys.A_c * Ts;
  aug.topRightCorner(n, m) = sys.B_c * Ts;

  Eigen::MatrixXd sum = Eigen::MatrixXd::Identity(d, d);
  Eigen::MatrixXd term = Eigen::MatrixXd::Identity(d, d);
  for (int k = 1; k <= 500; ++k) {
    term = (term * aug / static_cast<double>(k)).eval();
    sum += term;
    double tn = term.cwiseAbs().maxCoeff();
    if (tn <= 1e-15 * std::max(1.0, sum.cwiseAbs().maxCoeff())) break;
    if (k == 500)
      throw DynamicsError("matrix exponential series did not converge");
  }

  LtiDiscrete out;
  out.A = sum.topLeftCorner(n, n);
  out.B = sum.topRightCorner(n, m);
  out.Ts = Ts;
  if (!out.A.allFinite() || !out.B.allFinite())
    throw DynamicsError("discretization produced non-finite entries");
  return out;
}

}  // namespace clustermpc
