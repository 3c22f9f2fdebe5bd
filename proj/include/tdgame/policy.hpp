#pragma once

// Feedback extraction from a solved value function, and adapters that drive
// either the approximate error dynamics or the true delayed simulator.

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "tdgame/dde_sim.hpp"
#include "tdgame/errors.hpp"
#include "tdgame/hji.hpp"
#include "tdgame/models.hpp"

namespace tdgame {

struct GradientSample {
  Costate p{};
  bool clamped = false;  // query was outside the grid hull
};

// Nodal central-difference gradients blended trilinearly. Points outside the
// hull are projected onto it and flagged.
inline GradientSample grad_value(const ValueFunction& V, const Point& x) {
  const Grid& g = V.grid;
  GradientSample out;
  std::array<int, 3> lo{};
  std::array<double, 3> frac{};
  for (int a = 0; a < 3; ++a) {
    const Axis& ax = g.axes[a];
    double xa = x[a];
    if (xa < ax.min || xa > ax.max) {
      out.clamped = true;
      xa = std::clamp(xa, ax.min, ax.max);
    }
    const double s = (xa - ax.min) / ax.spacing();
    lo[a] = std::clamp(static_cast<int>(s), 0, ax.count - 2);
    frac[a] = std::clamp(s - lo[a], 0.0, 1.0);
  }
  for (int c = 0; c < 8; ++c) {
    double wgt = 1.0;
    std::array<int, 3> id{};
    for (int a = 0; a < 3; ++a) {
      const int bit = (c >> a) & 1;
      id[a] = lo[a] + bit;
      wgt *= bit ? frac[a] : 1.0 - frac[a];
    }
    if (wgt == 0.0) continue;
    const Costate pn = node_gradient(V, id[0], id[1], id[2]);
    for (int a = 0; a < 3; ++a) out.p[a] += wgt * pn[a];
  }
  return out;
}

// u* = -u_max sign(p . g_u). The input gain on e_v' is positive, so only the
// sign of dV/de_v matters; a zero component gives u = 0.
inline double optimal_control(const ValueFunction& V, const Point& x, double u_max) {
  const double p1 = grad_value(V, x).p[1];
  return p1 > 0.0 ? -u_max : (p1 < 0.0 ? u_max : 0.0);
}

struct AdversaryAction {
  double w_d = 0.0;  // delay-rate input, d' = 1 - d w_d
  double w = 0.0;    // truncation-error input
};

inline AdversaryAction optimal_adversary(const ValueFunction& V, const Point& x,
                                         const HamiltonianSpec& spec) {
  const SaddleInputs s = saddle_inputs(spec, x, grad_value(V, x).p);
  return {s.w_d, s.w};
}

// ---------------------------------------------------------------------------

enum class PolicySource { value_function, zero, constant, scripted };

using ScriptedControl = std::function<double(double t, const ErrorState& e, double d)>;

struct ControlPolicy {
  PolicySource source = PolicySource::zero;
  std::shared_ptr<const ValueFunction> value;
  double u_max = 0.4;
  double dt_ctrl = 0.05;
  double active_from = 0.0;  // u = 0 before this time
  double constant = 0.0;
  ScriptedControl scripted;
  std::string provenance;  // e.g. the value file the policy was loaded from

  static ControlPolicy zero() { return {}; }
  static ControlPolicy constant_input(double u, double u_max) {
    ControlPolicy p;
    p.source = PolicySource::constant;
    p.constant = u;
    p.u_max = u_max;
    return p;
  }
  static ControlPolicy from_value(std::shared_ptr<const ValueFunction> V, double u_max,
                                  double dt_ctrl = 0.05, double active_from = 0.0) {
    if (!V) throw ConfigError("control policy: missing value function");
    ControlPolicy p;
    p.source = PolicySource::value_function;
    p.value = std::move(V);
    p.u_max = u_max;
    p.dt_ctrl = dt_ctrl;
    p.active_from = active_from;
    return p;
  }

  // Error-coordinate input, saturated to [-u_max, u_max].
  double evaluate(double t, const ErrorState& e, double d) const {
    if (t < active_from) return 0.0;
    double u = 0.0;
    switch (source) {
      case PolicySource::zero:
        break;
      case PolicySource::constant:
        u = constant;
        break;
      case PolicySource::value_function:
        u = optimal_control(*value, {e.e_p, e.e_v, d}, u_max);
        break;
      case PolicySource::scripted:
        if (scripted) u = scripted(t, e, d);
        break;
    }
    return std::clamp(u, -u_max, u_max);
  }
};

// Controller for the double-integrator pair: reads (e_p, e_v) from the true
// state, d from the current delay, and splits u_e symmetrically.
inline DdeController make_dde_controller(const ControlPolicy& policy) {
  if (policy.source == PolicySource::zero) return {{}, policy.dt_ctrl};
  DdeController c;
  c.dt_ctrl = policy.dt_ctrl;
  c.law = [policy](const ControlContext& ctx) {
    const double d = std::max(ctx.d1, ctx.d2);
    return inputs_from_error_control(policy.evaluate(ctx.t, error_state(ctx.x), d));
  };
  return c;
}

// ---------------------------------------------------------------------------

enum class AdversarySource { value_function, sinusoidal, constant, scripted };

struct AdversaryPolicy {
  AdversarySource source = AdversarySource::constant;
  std::shared_ptr<const ValueFunction> value;
  HamiltonianSpec spec;
  double omega = 0.5;
  double phase = 0.0;
  DelayRateLaw scripted;

  // Delay signal realizing this adversary with d(0) = d0.
  DelaySignal delay_signal(double d0) const {
    const double d_max = spec.d_max;
    switch (source) {
      case AdversarySource::constant:
        return DelaySignal::constant(d_max);
      case AdversarySource::sinusoidal:
        return DelaySignal::sinusoidal(d_max, omega, phase);
      case AdversarySource::scripted:
        return DelaySignal::policy(d_max, d0, scripted);
      case AdversarySource::value_function: {
        auto V = value;
        auto sp = spec;
        return DelaySignal::policy(d_max, d0, [V, sp](double, const Vec& x, double d) {
          const ErrorState e = error_state(x);
          return optimal_adversary(*V, {e.e_p, e.e_v, d}, sp).w_d;
        });
      }
    }
    return DelaySignal::constant(d_max);
  }
};

// ---------------------------------------------------------------------------
// Rollouts of the approximate error dynamics (the model the game is solved on).

struct ApproxRollout {
  std::vector<double> t;
  std::vector<Point> x;  // (e_p, e_v, d)
  std::vector<double> u;
  std::vector<double> w;
  double running_cost = 0.0;  // integral of the stage cost
};

using ApproxControl = std::function<double(double t, const Point& x)>;
using ApproxAdversary = std::function<SaddleInputs(double t, const Point& x)>;  // w, w_d used

// RK4 on (e_p, e_v, d) with inputs held over each step and the delay kept in
// [0, d_max]. Stage cost is integrated with the same RK4 weights.
inline ApproxRollout rollout_approx(const HamiltonianSpec& spec, const Point& x0,
                                    const ApproxControl& control, const ApproxAdversary& adversary,
                                    const CostSpec& cost, double T, double dt) {
  if (!(T > 0.0) || !(dt > 0.0)) throw PreconditionError("rollout: T and dt must be positive");
  const long steps = std::lround(T / dt);
  ApproxRollout r;
  Point x = x0;
  for (long i = 0; i <= steps; ++i) {
    const double t = static_cast<double>(i) * dt;
    SaddleInputs in = adversary ? adversary(t, x) : SaddleInputs{};
    in.u = control ? std::clamp(control(t, x), -spec.model.u_max, spec.model.u_max) : 0.0;
    in.w = std::clamp(in.w, -spec.L_w * x[2], spec.L_w * x[2]);
    r.t.push_back(t);
    r.x.push_back(x);
    r.u.push_back(in.u);
    r.w.push_back(in.w);
    if (i == steps) break;
    auto f = [&](double s, const Point& y) {
      Point yc = y;
      yc[2] = std::clamp(yc[2], 0.0, spec.d_max);
      SaddleInputs local = in;
      local.w = std::clamp(in.w, -spec.L_w * yc[2], spec.L_w * yc[2]);
      const Point dx = game_dynamics(spec, yc, local);
      return std::array<double, 4>{dx[0], dx[1], dx[2], cost.stage_at(s, yc)};
    };
    auto axpy = [&](const Point& y, const std::array<double, 4>& k, double h) {
      return Point{y[0] + h * k[0], y[1] + h * k[1], y[2] + h * k[2]};
    };
    const auto k1 = f(t, x);
    const auto k2 = f(t + 0.5 * dt, axpy(x, k1, 0.5 * dt));
    const auto k3 = f(t + 0.5 * dt, axpy(x, k2, 0.5 * dt));
    const auto k4 = f(t + dt, axpy(x, k3, dt));
    for (int a = 0; a < 3; ++a) x[a] += dt / 6.0 * (k1[a] + 2 * k2[a] + 2 * k3[a] + k4[a]);
    x[2] = std::clamp(x[2], 0.0, spec.d_max);
    r.running_cost += dt / 6.0 * (k1[3] + 2 * k2[3] + 2 * k3[3] + k4[3]);
  }
  return r;
}

}  // namespace tdgame
