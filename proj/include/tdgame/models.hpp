#pragma once

// System definitions for two agents coupled through delayed state exchange:
//
//   x1' = f1(x1(t), x2(t - d2(t)), u1(t))
//   x2' = f2(x2(t), x1(t - d1(t)), u2(t))
//
// plus the point-mass (double integrator) specialization, its symmetric
// error-coordinate reduction and the augmented affine form used to expose
// the delays as inputs.

#include <cmath>
#include <functional>
#include <string>

#include <Eigen/Dense>

#include "tdgame/errors.hpp"

namespace tdgame {

using Vec = Eigen::VectorXd;

// Spring gain k, damping gain b, control bound u_max.
struct CouplingParams {
  double k = 1.0;
  double b = 0.15;
  double u_max = 0.4;

  void validate() const {
    if (!(k > 0.0) || !std::isfinite(k)) throw ConfigError("coupling: k must be > 0");
    if (!(b >= 0.0) || !std::isfinite(b)) throw ConfigError("coupling: b must be >= 0");
    if (!(u_max >= 0.0) || !std::isfinite(u_max))
      throw ConfigError("coupling: u_max must be >= 0");
  }
};

// f_i(own state, other agent's delayed state (or its estimate), own input).
using AgentRhs = std::function<Vec(const Vec& self, const Vec& other, const Vec& u)>;

// Estimate of x(t - d) from the current state x and its derivative y.
using DelayedEstimate = std::function<Vec(const Vec& x, const Vec& y, double d)>;

inline Vec first_order_estimate(const Vec& x, const Vec& y, double d) { return x - y * d; }

struct CoupledTdsModel {
  int n = 0;  // state dimension per agent
  int m = 0;  // input dimension per agent
  CouplingParams params;
  AgentRhs f1;
  AgentRhs f2;
  // Used by the algebraic-constraint approximation. Defaults to x - y d.
  DelayedEstimate estimate = first_order_estimate;
  // True when f_i is affine in the estimate argument and the estimate is
  // affine in y; enables a direct linear solve of the constraints.
  bool affine_in_estimate = false;
  std::string name = "custom";

  int state_dim() const { return 2 * n; }
  int input_dim() const { return 2 * m; }

  Vec agent1(const Vec& x) const { return x.head(n); }
  Vec agent2(const Vec& x) const { return x.segment(n, n); }

  // Full right-hand side given the (already looked-up) delayed states.
  Vec rhs(const Vec& x, const Vec& x1_delayed, const Vec& x2_delayed, const Vec& u) const {
    Vec out(2 * n);
    out.head(n) = f1(x.head(n), x2_delayed.segment(n, n), u.head(m));
    out.segment(n, n) = f2(x.segment(n, n), x1_delayed.head(n), u.segment(m, m));
    return out;
  }
};

// ---------------------------------------------------------------------------
// Double integrator pair. Per-agent state is [v, p].

// Acceleration of agent 1: -k (p1 - p2d) - b v1 + u1. With b > 0 the damper
// dissipates, so the delay-free uncontrolled pair is stable.
inline double double_integrator_rhs(const Vec& x1, const Vec& x2_delayed, double u1,
                                    const CouplingParams& params) {
  const double v1 = x1(0);
  const double p1 = x1(1);
  const double p2d = x2_delayed(1);
  return -params.k * (p1 - p2d) - params.b * v1 + u1;
}

// Second-order Taylor estimate of a double integrator's past state:
// p(t-d) ~ p - v d + a d^2 / 2, v(t-d) ~ v - a d, with y = [a, v].
inline Vec double_integrator_estimate(const Vec& x, const Vec& y, double d) {
  Vec out(2);
  out(0) = x(0) - y(0) * d;
  out(1) = x(1) - x(0) * d + 0.5 * y(0) * d * d;
  return out;
}

inline CoupledTdsModel double_integrator_pair(const CouplingParams& params) {
  params.validate();
  CoupledTdsModel model;
  model.n = 2;
  model.m = 1;
  model.params = params;
  model.name = "double_integrator";
  auto f = [params](const Vec& self, const Vec& other, const Vec& u) {
    Vec out(2);
    out(0) = double_integrator_rhs(self, other, u(0), params);
    out(1) = self(0);
    return out;
  };
  model.f1 = f;
  model.f2 = f;
  model.estimate = double_integrator_estimate;
  model.affine_in_estimate = true;
  return model;
}

// Position and velocity mismatch between the agents.
struct ErrorState {
  double e_p = 0.0;
  double e_v = 0.0;
};

// Reads (e_p, e_v) from a full double-integrator state [v1, p1, v2, p2].
inline ErrorState error_state(const Vec& x) { return {x(1) - x(3), x(0) - x(2)}; }

// Symmetric split of an error state into the full state (zero mean motion).
inline Vec state_from_error(const ErrorState& e) {
  Vec x(4);
  x << 0.5 * e.e_v, 0.5 * e.e_p, -0.5 * e.e_v, -0.5 * e.e_p;
  return x;
}

// Input split: agent inputs (u/2, -u/2) realize the error-coordinate input u.
inline Vec inputs_from_error_control(double u_e) {
  Vec u(2);
  u << 0.5 * u_e, -0.5 * u_e;
  return u;
}

struct ErrorRates {
  double e_p_dot = 0.0;
  double e_v_dot = 0.0;
};

// Symmetric-delay error dynamics obtained by subtracting the two rows of the
// second-order-substituted coupling equations (d1 = d2 = d):
//   e_p' = e_v
//   e_v' = [-2k e_p + (k d - b) e_v + u_e + w] / (1 + k d^2 / 2)
inline ErrorRates error_dynamics_rhs(const ErrorState& e, double d, double u_e, double w,
                                     const CouplingParams& params) {
  const double k = params.k;
  const double c = 1.0 + 0.5 * k * d * d;
  return {e.e_v, (-2.0 * k * e.e_p + (k * d - params.b) * e.e_v + u_e + w) / c};
}

// x' = A(d) x + B(d) u for x = [v1, p1, v2, p2], u = [u1, u2].
struct PolynomialDelayModel {
  Eigen::Matrix4d A;
  Eigen::Matrix<double, 4, 2> B;
  double det = 1.0;
};

// Closed-form solution of
//   tau1 - (k d2^2 / 2) tau2 = -k (p1 - p2 + v2 d2) - b v1 + u1
//   tau2 - (k d1^2 / 2) tau1 = -k (p2 - p1 + v1 d1) - b v2 + u2
// Entries are polynomial in (d1, d2) up to the common factor 1 / det.
inline PolynomialDelayModel polynomial_delay_matrices(double k, double b, double d1, double d2) {
  const double a1 = 0.5 * k * d1 * d1;
  const double a2 = 0.5 * k * d2 * d2;
  const double det = 1.0 - a1 * a2;
  if (std::abs(det) < 1e-9) {
    throw SingularCouplingError("polynomial delay model: coupling determinant vanished "
                                "(delay too large for the quadratic truncation)",
                                det);
  }
  // Right-hand sides r1, r2 as rows over [v1, p1, v2, p2, u1, u2].
  Eigen::Matrix<double, 1, 6> r1, r2;
  r1 << -b, -k, -k * d2, k, 1.0, 0.0;
  r2 << -k * d1, k, -b, -k, 0.0, 1.0;
  const Eigen::Matrix<double, 1, 6> tau1 = (r1 + a2 * r2) / det;
  const Eigen::Matrix<double, 1, 6> tau2 = (r2 + a1 * r1) / det;

  PolynomialDelayModel out;
  out.det = det;
  out.A.setZero();
  out.B.setZero();
  out.A.row(0) = tau1.head<4>();
  out.A(1, 0) = 1.0;
  out.A.row(2) = tau2.head<4>();
  out.A(3, 2) = 1.0;
  out.B.row(0) = tau1.tail<2>();
  out.B.row(2) = tau2.tail<2>();
  return out;
}

// ---------------------------------------------------------------------------
// Augmented affine form: the delayed copies become states x_hat_i driven by
// rate inputs w_i, and the delays themselves evolve as d_i' = 1 - d_i w_i.

struct AugmentedAffineState {
  Vec x1, x2;
  Vec x_hat1, x_hat2;  // estimates of x1(t - d1), x2(t - d2)
  double d1 = 0.0;
  double d2 = 0.0;
  Vec u1, u2;
  double w1 = 0.0;
  double w2 = 0.0;
};

struct AugmentedDerivative {
  Vec x1, x2;
  Vec x_hat1, x_hat2;
  double d1 = 0.0;
  double d2 = 0.0;
};

inline AugmentedDerivative augmented_affine_rhs(const AugmentedAffineState& s, const AgentRhs& f1,
                                                const AgentRhs& f2) {
  if (s.w1 < 0.0 || s.w2 < 0.0) throw PreconditionError("augmented rhs: w_i must be >= 0");
  AugmentedDerivative out;
  out.x1 = f1(s.x1, s.x_hat2, s.u1);
  out.x2 = f2(s.x2, s.x_hat1, s.u2);
  out.x_hat1 = (s.x1 - s.x_hat1) * s.w1;
  out.x_hat2 = (s.x2 - s.x_hat2) * s.w2;
  out.d1 = 1.0 - s.d1 * s.w1;
  out.d2 = 1.0 - s.d2 * s.w2;
  return out;
}

}  // namespace tdgame
