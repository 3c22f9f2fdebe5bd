#pragma once

// Delay-free approximation of the coupled system: the delayed arguments are
// replaced by Taylor estimates built from the state derivatives y_i, which
// turns the dynamics into algebraic constraints
//
//   y1 = f1(x1, est(x2, y2, d2), u1) + w1
//   y2 = f2(x2, est(x1, y1, d1), u2) + w2
//
// w_i lumps the truncation error. This header solves the constraints and
// measures w on true delayed trajectories.

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

#include "tdgame/dde_sim.hpp"
#include "tdgame/errors.hpp"
#include "tdgame/models.hpp"

namespace tdgame {

struct ConstraintSolution {
  Vec y1;
  Vec y2;
  double residual_norm = 0.0;
  int iterations = 0;
};

struct ConstraintSolveOptions {
  int max_iterations = 100;
  double tolerance = 1e-10;
  double damping = 0.5;  // used once the plain iteration stops contracting
};

namespace detail {

struct ConstraintMap {
  const CoupledTdsModel& model;
  const Vec& x1;
  const Vec& x2;
  double d1, d2;
  const Vec& u1;
  const Vec& u2;
  const Vec& w1;
  const Vec& w2;

  Vec operator()(const Vec& y) const {
    const int n = model.n;
    Vec out(2 * n);
    out.head(n) = model.f1(x1, model.estimate(x2, y.segment(n, n), d2), u1) + w1;
    out.segment(n, n) = model.f2(x2, model.estimate(x1, y.head(n), d1), u2) + w2;
    return out;
  }
};

}  // namespace detail

// Solves the algebraic constraints for (y1, y2). Models flagged as affine in
// the estimate are solved directly as (I - J) y = F(0); otherwise a fixed-point
// iteration is run, switching to damped updates when it stops contracting.
inline ConstraintSolution solve_constraints(const CoupledTdsModel& model, const Vec& x1,
                                            const Vec& x2, double d1, double d2, const Vec& u1,
                                            const Vec& u2, const Vec& w1, const Vec& w2,
                                            const ConstraintSolveOptions& opts = {}) {
  const int n = model.n;
  const detail::ConstraintMap F{model, x1, x2, d1, d2, u1, u2, w1, w2};
  ConstraintSolution sol;
  auto finish = [&](const Vec& y, int iterations) {
    sol.y1 = y.head(n);
    sol.y2 = y.segment(n, n);
    sol.residual_norm = (F(y) - y).norm();
    sol.iterations = iterations;
    return sol;
  };

  const Vec zero = Vec::Zero(2 * n);
  const Vec f0 = F(zero);
  if (d1 == 0.0 && d2 == 0.0) return finish(f0, 1);

  if (model.affine_in_estimate) {
    Eigen::MatrixXd J(2 * n, 2 * n);
    for (int j = 0; j < 2 * n; ++j) J.col(j) = F(Vec::Unit(2 * n, j)) - f0;
    const Eigen::MatrixXd A = Eigen::MatrixXd::Identity(2 * n, 2 * n) - J;
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    if (!lu.isInvertible()) {
      throw SingularCouplingError("constraint solve: coupling matrix is singular", 0.0);
    }
    return finish(lu.solve(f0), 1);
  }

  Vec y = f0;
  double prev = (F(y) - y).norm();
  double factor = 1.0;
  double contraction = 0.0;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    const Vec fy = F(y);
    const double res = (fy - y).norm();
    if (res <= opts.tolerance) return finish(y, it);
    y = y + factor * (fy - y);
    const double next = (F(y) - y).norm();
    contraction = prev > 0.0 ? next / prev : 0.0;
    if (next >= prev && factor == 1.0) factor = opts.damping;
    prev = next;
    if (!y.allFinite()) break;
  }
  throw ConstraintSolveError("constraint solve did not converge in the iteration budget",
                             contraction);
}

// Delay-free shorthand with zero truncation inputs.
inline ConstraintSolution solve_constraints(const CoupledTdsModel& model, const Vec& x1,
                                            const Vec& x2, double d1, double d2, const Vec& u1,
                                            const Vec& u2) {
  const Vec zero = Vec::Zero(model.n);
  return solve_constraints(model, x1, x2, d1, d2, u1, u2, zero, zero);
}

// ---------------------------------------------------------------------------

struct ResidualRecord {
  std::vector<double> times;
  std::vector<double> w_norms;
  std::vector<double> d_values;

  double max_norm() const {
    double m = 0.0;
    for (double w : w_norms) m = std::max(m, w);
    return m;
  }
};

// Exact truncation residual along a true delayed trajectory:
//   w1 = f1(x1, x2(t - d2), u1) - f1(x1, x2 - y2 d2, u1)
// and symmetrically for w2, with y from solve_constraints at each sample.
// Delayed states are read back from the trajectory itself (constant
// pre-history at the first sample).
inline ResidualRecord residual_w(const CoupledTdsModel& model, const Trajectory& traj) {
  const int n = model.n;
  const int m = model.m;
  ResidualRecord rec;
  if (traj.empty()) return rec;
  HistoryBuffer hist(traj.times.front(), traj.states.front());
  for (std::size_t i = 0; i < traj.size(); ++i) hist.push(traj.times[i], traj.states[i]);

  rec.times.reserve(traj.size());
  rec.w_norms.reserve(traj.size());
  rec.d_values.reserve(traj.size());
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double t = traj.times[i];
    const Vec& x = traj.states[i];
    const Vec x1 = x.head(n);
    const Vec x2 = x.segment(n, n);
    const Vec u1 = traj.inputs[i].head(m);
    const Vec u2 = traj.inputs[i].segment(m, m);
    const double d1 = traj.delays[i][0];
    const double d2 = traj.delays[i][1];

    const Vec x1_true = hist.lookup(t - d1).head(n);
    const Vec x2_true = hist.lookup(t - d2).segment(n, n);
    const ConstraintSolution y = solve_constraints(model, x1, x2, d1, d2, u1, u2);

    const Vec w1 = model.f1(x1, x2_true, u1) - model.f1(x1, first_order_estimate(x2, y.y2, d2), u1);
    const Vec w2 = model.f2(x2, x1_true, u2) - model.f2(x2, first_order_estimate(x1, y.y1, d1), u2);
    rec.times.push_back(t);
    rec.w_norms.push_back(std::sqrt(w1.squaredNorm() + w2.squaredNorm()));
    rec.d_values.push_back(std::max(d1, d2));
  }
  return rec;
}

inline void write_residual_csv(std::ostream& os, const ResidualRecord& rec) {
  os << "t,d,w_norm\n";
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    os << format_number(rec.times[i]) << ',' << format_number(rec.d_values[i]) << ','
       << format_number(rec.w_norms[i]) << '\n';
  }
}

// Rollout used to probe residual scaling at each delay magnitude.
struct ResidualScenario {
  Vec x0;              // defaults to the double-integrator state with e_p = 1
  double horizon = 10.0;
  double dt = 1e-3;
  DdeController controller;
};

struct ResidualFit {
  std::vector<double> delays;
  std::vector<double> max_norms;
  std::vector<double> pair_exponents;  // log(w_i / w_{i+1}) / log(d_i / d_{i+1})
  double exponent = std::numeric_limits<double>::quiet_NaN();  // log-log slope
  double log_intercept = std::numeric_limits<double>::quiet_NaN();
  double c_w = std::numeric_limits<double>::quiet_NaN();  // best C in max|w| ~ C d^2
  bool exact = false;  // every residual below 1e-12
};

// Fits max|w| against the delay magnitude in log-log space over constant-delay
// rollouts of `model`.
inline ResidualFit estimate_residual_constant(const CoupledTdsModel& model,
                                              const std::vector<double>& d_list,
                                              ResidualScenario scenario = {}) {
  if (d_list.size() < 3)
    throw PreconditionError("residual fit needs at least three delay magnitudes");
  for (double d : d_list)
    if (!(d > 0.0)) throw PreconditionError("residual fit: delays must be positive");
  if (scenario.x0.size() == 0) scenario.x0 = state_from_error({1.0, 0.0});

  ResidualFit fit;
  fit.delays = d_list;
  for (double d : d_list) {
    const DelaySignal sig = DelaySignal::constant(d);
    const Trajectory traj = simulate(model, scenario.x0, sig, sig, scenario.controller,
                                     scenario.horizon, scenario.dt);
    fit.max_norms.push_back(residual_w(model, traj).max_norm());
  }
  fit.exact = std::all_of(fit.max_norms.begin(), fit.max_norms.end(),
                          [](double w) { return w < 1e-12; });
  if (fit.exact) return fit;

  for (std::size_t i = 0; i + 1 < d_list.size(); ++i) {
    fit.pair_exponents.push_back(std::log(fit.max_norms[i] / fit.max_norms[i + 1]) /
                                 std::log(d_list[i] / d_list[i + 1]));
  }
  const std::size_t k = d_list.size();
  double sx = 0, sy = 0, sxx = 0, sxy = 0, s2 = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double lx = std::log(d_list[i]);
    const double ly = std::log(fit.max_norms[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    s2 += ly - 2.0 * lx;
  }
  const double kk = static_cast<double>(k);
  fit.exponent = (kk * sxy - sx * sy) / (kk * sxx - sx * sx);
  fit.log_intercept = (sy - fit.exponent * sx) / kk;
  fit.c_w = std::exp(s2 / kk);
  return fit;
}

}  // namespace tdgame
