#pragma once

// Fixed-step simulation of the coupled time-delay system with time-varying
// delays. Every delayed argument x_j(s - d_j(s)) at an RK4 stage time s is
// read from a HistoryBuffer, so the integrator behaves like a variable
// transport delay rather than freezing delayed values over a step.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "tdgame/errors.hpp"
#include "tdgame/models.hpp"

namespace tdgame {

// Sampled closed-loop solution. All four lists have equal length.
struct Trajectory {
  int n = 0;  // per-agent state dimension
  int m = 0;  // per-agent input dimension
  std::vector<double> times;
  std::vector<Vec> states;
  std::vector<Vec> inputs;                  // input held from this sample on
  std::vector<std::array<double, 2>> delays;  // (d1, d2)

  std::size_t size() const { return times.size(); }
  bool empty() const { return times.empty(); }
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, double time) : Error(what), time_(time) {}
  double time() const { return time_; }
  const Trajectory& partial() const { return partial_; }
  void attach(Trajectory partial) { partial_ = std::move(partial); }

 private:
  double time_;
  Trajectory partial_;
};

// ---------------------------------------------------------------------------

// Time-stamped record of past states. Between samples the buffer uses cubic
// Hermite interpolation when derivatives are known on both sides of the
// interval and linear interpolation otherwise; both are exact at samples and
// for histories that are affine in time.
class HistoryBuffer {
 public:
  HistoryBuffer() = default;
  HistoryBuffer(double t0, Vec initial_value)
      : t0_(t0), initial_(std::move(initial_value)), dim_(static_cast<int>(initial_.size())) {}

  double t0() const { return t0_; }
  const Vec& initial_value() const { return initial_; }
  int dim() const { return dim_; }
  bool empty() const { return times_.empty(); }
  std::size_t size() const { return times_.size(); }
  double latest_time() const {
    if (times_.empty()) throw ConfigError("history buffer is empty");
    return times_.back();
  }
  Vec latest() const { return sample(times_.size() - 1); }
  double time_at(std::size_t i) const { return times_.at(i); }
  Vec sample(std::size_t i) const { return Eigen::Map<const Vec>(&values_[i * dim_], dim_); }

  void push(double t, const Vec& x) { push_impl(t, x, nullptr); }
  // `left_derivative` is the one-sided derivative arriving at t.
  void push(double t, const Vec& x, const Vec& left_derivative) {
    push_impl(t, x, &left_derivative);
  }
  // One-sided derivative leaving the most recent sample.
  void set_right_derivative(const Vec& dx) {
    if (times_.empty()) throw ConfigError("history buffer is empty");
    check_dim(dx);
    std::copy(dx.data(), dx.data() + dim_, right_.end() - dim_);
    has_right_.back() = 1;
  }

  Vec lookup(double t) const {
    if (times_.empty()) throw ConfigError("history lookup on an empty buffer");
    const double first = times_.front();
    if (t <= t0_ && t != first) return initial_;
    if (t < first) {
      // Between the start of recorded history and the first sample.
      const double a = (t - t0_) / (first - t0_);
      return initial_ + a * (sample(0) - initial_);
    }
    const std::size_t last = times_.size() - 1;
    if (t >= times_[last]) {
      if (t == times_[last] || last == 0) return sample(last);
      const double step = times_[last] - times_[last - 1];
      if (t > times_[last] + step * (1.0 + 1e-9) + 1e-12) {
        throw PreconditionError("history lookup beyond the one-step extrapolation window");
      }
      const double a = (t - times_[last - 1]) / step;
      return sample(last - 1) + a * (sample(last) - sample(last - 1));
    }
    const auto it = std::upper_bound(times_.begin(), times_.end(), t);
    const std::size_t hi = static_cast<std::size_t>(it - times_.begin());
    const std::size_t lo = hi - 1;
    if (t == times_[lo]) return sample(lo);
    const double h = times_[hi] - times_[lo];
    const double s = (t - times_[lo]) / h;
    if (has_right_[lo] && has_left_[hi]) {
      const double s2 = s * s;
      const double s3 = s2 * s;
      const double h00 = 2 * s3 - 3 * s2 + 1;
      const double h10 = s3 - 2 * s2 + s;
      const double h01 = -2 * s3 + 3 * s2;
      const double h11 = s3 - s2;
      Eigen::Map<const Vec> m0(&right_[lo * dim_], dim_);
      Eigen::Map<const Vec> m1(&left_[hi * dim_], dim_);
      return h00 * sample(lo) + (h10 * h) * m0 + h01 * sample(hi) + (h11 * h) * m1;
    }
    return sample(lo) + s * (sample(hi) - sample(lo));
  }

 private:
  void check_dim(const Vec& x) const {
    if (static_cast<int>(x.size()) != dim_)
      throw ConfigError("history buffer: dimension mismatch");
  }
  void push_impl(double t, const Vec& x, const Vec* left) {
    if (dim_ == 0) dim_ = static_cast<int>(x.size());
    check_dim(x);
    if (!times_.empty() && !(t > times_.back()))
      throw PreconditionError("history buffer: sample times must be strictly increasing");
    times_.push_back(t);
    values_.insert(values_.end(), x.data(), x.data() + dim_);
    if (left) {
      check_dim(*left);
      left_.insert(left_.end(), left->data(), left->data() + dim_);
    } else {
      left_.insert(left_.end(), dim_, 0.0);
    }
    right_.insert(right_.end(), dim_, 0.0);
    has_left_.push_back(left ? 1 : 0);
    has_right_.push_back(0);
  }

  double t0_ = 0.0;
  Vec initial_;
  int dim_ = 0;
  std::vector<double> times_;
  std::vector<double> values_;
  std::vector<double> left_;
  std::vector<double> right_;
  std::vector<char> has_left_;
  std::vector<char> has_right_;
};

inline Vec history_lookup(const HistoryBuffer& buf, double t_query) { return buf.lookup(t_query); }

// ---------------------------------------------------------------------------

enum class DelayKind { constant, sinusoidal, piecewise_constant, policy_driven };

// Delay-rate law for policy-driven delays: d' = 1 - d * rate(t, x, d).
using DelayRateLaw = std::function<double(double t, const Vec& x, double d)>;

struct DelaySignal {
  DelayKind kind = DelayKind::constant;
  double d_max = 0.0;
  double omega = 0.5;  // sinusoidal
  double phase = 0.0;  // sinusoidal
  double t_on = 0.0;   // the delay is zero before t_on
  std::vector<double> breaks;  // piecewise: ascending segment start times
  std::vector<double> levels;  // piecewise: level per segment
  DelayRateLaw rate;           // policy-driven
  double initial = 0.0;        // policy-driven d(0)

  static DelaySignal none() { return constant(0.0); }
  static DelaySignal constant(double d_max, double t_on = 0.0) {
    DelaySignal s;
    s.kind = DelayKind::constant;
    s.d_max = d_max;
    s.t_on = t_on;
    return s;
  }
  static DelaySignal sinusoidal(double d_max, double omega = 0.5, double phase = 0.0,
                                double t_on = 0.0) {
    DelaySignal s;
    s.kind = DelayKind::sinusoidal;
    s.d_max = d_max;
    s.omega = omega;
    s.phase = phase;
    s.t_on = t_on;
    return s;
  }
  static DelaySignal piecewise(double d_max, std::vector<double> breaks,
                               std::vector<double> levels) {
    if (breaks.size() != levels.size() || breaks.empty())
      throw ConfigError("piecewise delay: breaks and levels must be nonempty and equal length");
    if (!std::is_sorted(breaks.begin(), breaks.end()))
      throw ConfigError("piecewise delay: breaks must be ascending");
    DelaySignal s;
    s.kind = DelayKind::piecewise_constant;
    s.d_max = d_max;
    s.breaks = std::move(breaks);
    s.levels = std::move(levels);
    return s;
  }
  static DelaySignal policy(double d_max, double initial, DelayRateLaw rate) {
    DelaySignal s;
    s.kind = DelayKind::policy_driven;
    s.d_max = d_max;
    s.initial = initial;
    s.rate = std::move(rate);
    return s;
  }
};

inline double clamp_delay(double d, double d_max) { return std::clamp(d, 0.0, d_max); }

// Open-loop delay value. Policy-driven signals depend on the closed loop and
// report their initial value here; `simulate` integrates them.
inline double eval_delay(const DelaySignal& sig, double t) {
  if (t < sig.t_on) return 0.0;
  double d = 0.0;
  switch (sig.kind) {
    case DelayKind::constant:
      d = sig.d_max;
      break;
    case DelayKind::sinusoidal:
      d = 0.5 * sig.d_max * (1.0 + std::sin(sig.omega * t + sig.phase));
      break;
    case DelayKind::piecewise_constant: {
      const auto it = std::upper_bound(sig.breaks.begin(), sig.breaks.end(), t);
      const std::size_t i = it == sig.breaks.begin() ? 0 : static_cast<std::size_t>(it - sig.breaks.begin()) - 1;
      d = sig.levels[i];
      break;
    }
    case DelayKind::policy_driven:
      d = sig.initial;
      break;
  }
  return clamp_delay(d, sig.d_max);
}

// Policy-driven delay over one step with the rate held at w:
// d(s) = 1/w + (d0 - 1/w) exp(-w s), or d0 + s when w = 0.
inline double held_rate_delay(double d0, double w, double elapsed, double d_max) {
  const double d = w > 0.0 ? 1.0 / w + (d0 - 1.0 / w) * std::exp(-w * elapsed) : d0 + elapsed;
  return clamp_delay(d, d_max);
}

// ---------------------------------------------------------------------------

struct ControlContext {
  double t = 0.0;
  const Vec& x;           // full current state [x1; x2]
  const Vec& x1_delayed;  // x1(t - d1)
  const Vec& x2_delayed;  // x2(t - d2)
  double d1 = 0.0;
  double d2 = 0.0;
};

using ControlLaw = std::function<Vec(const ControlContext&)>;

// Feedback law sampled with a zero-order hold every dt_ctrl seconds
// (dt_ctrl <= 0 samples every integration step). An empty law means u = 0.
struct DdeController {
  ControlLaw law;
  double dt_ctrl = 0.0;
};

namespace detail {

inline void check_state(const Vec& x, double t) {
  if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e12) {
    char msg[96];
    std::snprintf(msg, sizeof msg, "simulation diverged at t = %.6g", t);
    throw DivergenceError(msg, t);
  }
}

}  // namespace detail

// One classical RK4 step of the delayed system from t to t + dt with input u
// held. `delay1(s)` and `delay2(s)` give d1, d2 at stage time s. Delayed
// queries landing inside the current step interpolate between the step's
// start state and the stage state, so d = 0 reproduces plain RK4. The new
// state is appended to `buf` (with its one-sided derivative) and returned.
template <class Delay1, class Delay2>
Vec step_dde(const CoupledTdsModel& model, HistoryBuffer& buf, double t, double dt, const Vec& u,
             Delay1&& delay1, Delay2&& delay2) {
  if (!(dt > 0.0)) throw PreconditionError("step_dde: dt must be positive");
  const double t_last = buf.latest_time();
  if (std::abs(t_last - t) > 1e-9 * std::max(1.0, std::abs(t)))
    throw PreconditionError("step_dde: buffer does not end at the step start time");
  const Vec x0 = buf.latest();

  auto delayed = [&](double s, const Vec& stage_state, double d) -> Vec {
    const double q = s - d;
    if (q <= t_last) return buf.lookup(q);
    if (q >= s) return stage_state;
    const double a = (q - t_last) / (s - t_last);
    return x0 + a * (stage_state - x0);
  };
  auto f = [&](double s, const Vec& y) -> Vec {
    const double d1 = delay1(s);
    const double d2 = delay2(s);
    return model.rhs(y, delayed(s, y, d1), delayed(s, y, d2), u);
  };

  const Vec k1 = f(t, x0);
  buf.set_right_derivative(k1);
  const Vec y2 = x0 + 0.5 * dt * k1;
  const Vec k2 = f(t + 0.5 * dt, y2);
  const Vec y3 = x0 + 0.5 * dt * k2;
  const Vec k3 = f(t + 0.5 * dt, y3);
  const Vec y4 = x0 + dt * k3;
  const Vec k4 = f(t + dt, y4);
  Vec x1 = x0 + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  detail::check_state(x1, t + dt);

  const double t1 = t + dt;
  auto end_lookup = [&](double d) -> Vec {
    const double q = t1 - d;
    if (q <= t_last) return buf.lookup(q);
    return x0 + ((q - t_last) / dt) * (x1 - x0);
  };
  const Vec dx1 = model.rhs(x1, end_lookup(delay1(t1)), end_lookup(delay2(t1)), u);
  buf.push(t1, x1, dx1);
  return x1;
}

// Convenience overload for open-loop delay signals: samples the controller at
// t and holds it over the step.
inline Vec step_dde(const CoupledTdsModel& model, HistoryBuffer& buf, double t, double dt,
                    const DdeController& controller, const DelaySignal& sig1,
                    const DelaySignal& sig2) {
  Vec u = Vec::Zero(model.input_dim());
  if (controller.law) {
    const double d1 = eval_delay(sig1, t);
    const double d2 = eval_delay(sig2, t);
    const Vec x = buf.latest();
    const Vec x1d = buf.lookup(t - d1).head(model.n);
    const Vec x2d = buf.lookup(t - d2).segment(model.n, model.n);
    u = controller.law(ControlContext{t, x, x1d, x2d, d1, d2});
  }
  return step_dde(model, buf, t, dt, u, [&](double s) { return eval_delay(sig1, s); },
                  [&](double s) { return eval_delay(sig2, s); });
}

struct SimulationOptions {
  // Constant pre-history value; defaults to x0.
  std::optional<Vec> prehistory;
};

// Closed-loop rollout over [0, T] with fixed step dt. Sample i is at t = i dt.
inline Trajectory simulate(const CoupledTdsModel& model, const Vec& x0, const DelaySignal& sig1,
                           const DelaySignal& sig2, const DdeController& controller, double T,
                           double dt, const SimulationOptions& options = {}) {
  if (!(T > 0.0)) throw PreconditionError("simulate: horizon must be positive");
  if (!(dt > 0.0)) throw PreconditionError("simulate: dt must be positive");
  if (static_cast<int>(x0.size()) != model.state_dim())
    throw ConfigError("simulate: initial state has the wrong dimension");

  const long steps = std::lround(T / dt);
  Trajectory traj;
  traj.n = model.n;
  traj.m = model.m;
  traj.times.reserve(steps + 1);
  traj.states.reserve(steps + 1);
  traj.inputs.reserve(steps + 1);
  traj.delays.reserve(steps + 1);

  HistoryBuffer buf(0.0, options.prehistory.value_or(x0));
  buf.push(0.0, x0);

  const bool driven1 = sig1.kind == DelayKind::policy_driven;
  const bool driven2 = sig2.kind == DelayKind::policy_driven;
  double d1 = eval_delay(sig1, 0.0);
  double d2 = eval_delay(sig2, 0.0);
  Vec u = Vec::Zero(model.input_dim());
  double last_sample = -1.0;
  Vec x = x0;

  try {
    for (long i = 0; i < steps; ++i) {
      const double t = static_cast<double>(i) * dt;
      if (!driven1) d1 = eval_delay(sig1, t);
      if (!driven2) d2 = eval_delay(sig2, t);
      if (d1 < 0.0 || d1 > sig1.d_max || d2 < 0.0 || d2 > sig2.d_max)
        throw Error("simulate: delay left [0, d_max]");

      const bool sample = controller.law &&
                          (i == 0 || t >= last_sample + controller.dt_ctrl - 1e-9 * dt);
      if (sample) {
        const Vec x1d = buf.lookup(t - d1).head(model.n);
        const Vec x2d = buf.lookup(t - d2).segment(model.n, model.n);
        u = controller.law(ControlContext{t, x, x1d, x2d, d1, d2});
        if (static_cast<int>(u.size()) != model.input_dim())
          throw ConfigError("controller returned an input of the wrong dimension");
        last_sample = t;
      }
      const double w1 = driven1 ? sig1.rate(t, x, d1) : 0.0;
      const double w2 = driven2 ? sig2.rate(t, x, d2) : 0.0;

      traj.times.push_back(t);
      traj.states.push_back(x);
      traj.inputs.push_back(u);
      traj.delays.push_back({d1, d2});

      const double d1_start = d1;
      const double d2_start = d2;
      auto delay1 = [&](double s) {
        return driven1 ? held_rate_delay(d1_start, w1, s - t, sig1.d_max) : eval_delay(sig1, s);
      };
      auto delay2 = [&](double s) {
        return driven2 ? held_rate_delay(d2_start, w2, s - t, sig2.d_max) : eval_delay(sig2, s);
      };
      x = step_dde(model, buf, t, dt, u, delay1, delay2);
      if (driven1) d1 = delay1(t + dt);
      if (driven2) d2 = delay2(t + dt);
    }
  } catch (DivergenceError& e) {
    e.attach(std::move(traj));
    throw;
  }
  const double t_end = static_cast<double>(steps) * dt;
  if (!driven1) d1 = eval_delay(sig1, t_end);
  if (!driven2) d2 = eval_delay(sig2, t_end);
  traj.times.push_back(t_end);
  traj.states.push_back(x);
  traj.inputs.push_back(u);
  traj.delays.push_back({d1, d2});
  return traj;
}

// ---------------------------------------------------------------------------
// CSV export: t,e_p,e_v,d,u followed by the raw state columns and any extra
// columns. For the double integrator u is the error-coordinate input u1 - u2.

struct ExtraColumn {
  std::string name;
  std::vector<double> values;
};

inline std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_trajectory_csv(std::ostream& os, const Trajectory& traj,
                                 const std::vector<ExtraColumn>& extra = {}) {
  const bool di = traj.n == 2;
  os << "t,e_p,e_v,d,u";
  if (di) {
    os << ",v1,p1,v2,p2";
  } else {
    for (int i = 0; i < 2 * traj.n; ++i) os << ",x" << i;
  }
  for (const auto& c : extra) os << ',' << c.name;
  os << '\n';
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Vec& x = traj.states[i];
    const Vec& u = traj.inputs[i];
    double e_p = 0.0;
    double e_v = 0.0;
    if (di) {
      const ErrorState e = error_state(x);
      e_p = e.e_p;
      e_v = e.e_v;
    } else {
      e_p = x(0) - x(traj.n);
    }
    const double u_e = traj.m > 0 ? u(0) - u(traj.m) : 0.0;
    os << format_number(traj.times[i]) << ',' << format_number(e_p) << ',' << format_number(e_v)
       << ',' << format_number(traj.delays[i][1]) << ',' << format_number(u_e);
    for (int j = 0; j < x.size(); ++j) os << ',' << format_number(x(j));
    for (const auto& c : extra) os << ',' << format_number(c.values.at(i));
    os << '\n';
  }
}

}  // namespace tdgame
