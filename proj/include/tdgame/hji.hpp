#pragma once

// Backward grid solver for the Hamilton-Jacobi-Isaacs equation
//
//   0 = V_t + min_u max_{w, w_d} { l_t + grad V . f(x, u, w, w_d) },  V(x, T) = l_T(x)
//
// on a rectangular grid over (e_p, e_v, d). The delay is an adversarial
// state driven by the rate input w_d through d' = 1 - d w_d, and the lumped
// truncation error w is a second adversarial input bounded by L_w d.
//
// Numerics: first-order central differences with local Lax-Friedrichs
// dissipation, extrapolating boundaries, TVD-RK2 in time.

#include <algorithm>
#include <array>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "tdgame/errors.hpp"
#include "tdgame/models.hpp"

namespace tdgame {

using Point = std::array<double, 3>;    // (e_p, e_v, d)
using Costate = std::array<double, 3>;  // dV/d(e_p, e_v, d)

struct Axis {
  double min = 0.0;
  double max = 1.0;
  int count = 3;

  double spacing() const { return (max - min) / (count - 1); }
  double coord(int i) const { return i == count - 1 ? max : min + i * spacing(); }
};

struct Grid {
  std::array<Axis, 3> axes;

  static Grid make(const Axis& a0, const Axis& a1, const Axis& a2) {
    Grid g{{a0, a1, a2}};
    g.validate();
    return g;
  }

  // e_p in [-2.4, 2.4], e_v in [-5, 5], d in [0, T*].
  static Grid default_for(double t_star, int n_ep = 101, int n_ev = 101, int n_d = 21) {
    return make({-2.4, 2.4, n_ep}, {-5.0, 5.0, n_ev}, {0.0, t_star, n_d});
  }

  void validate() const {
    for (const Axis& a : axes) {
      if (a.count < 3) throw ConfigError("grid: every axis needs at least 3 nodes");
      if (!(a.max > a.min)) throw ConfigError("grid: axis spacing must be positive");
    }
  }

  int count(int axis) const { return axes[axis].count; }
  double spacing(int axis) const { return axes[axis].spacing(); }
  std::size_t size() const {
    return static_cast<std::size_t>(axes[0].count) * axes[1].count * axes[2].count;
  }
  std::size_t stride(int axis) const {
    if (axis == 2) return 1;
    if (axis == 1) return static_cast<std::size_t>(axes[2].count);
    return static_cast<std::size_t>(axes[1].count) * axes[2].count;
  }
  std::size_t index(int i, int j, int k) const {
    return (static_cast<std::size_t>(i) * axes[1].count + j) * axes[2].count + k;
  }
  Point point(int i, int j, int k) const {
    return {axes[0].coord(i), axes[1].coord(j), axes[2].coord(k)};
  }
  Point point(std::size_t idx) const {
    const int k = static_cast<int>(idx % axes[2].count);
    const int j = static_cast<int>((idx / axes[2].count) % axes[1].count);
    const int i = static_cast<int>(idx / (static_cast<std::size_t>(axes[2].count) * axes[1].count));
    return point(i, j, k);
  }
  // Nearest node index along an axis.
  int nearest(int axis, double x) const {
    const Axis& a = axes[axis];
    const long i = std::lround((x - a.min) / a.spacing());
    return static_cast<int>(std::clamp<long>(i, 0, a.count - 1));
  }
  bool contains(const Point& x) const {
    for (int a = 0; a < 3; ++a)
      if (x[a] < axes[a].min || x[a] > axes[a].max) return false;
    return true;
  }
  bool same_shape(const Grid& o) const {
    for (int a = 0; a < 3; ++a) {
      if (axes[a].count != o.axes[a].count || axes[a].min != o.axes[a].min ||
          axes[a].max != o.axes[a].max)
        return false;
    }
    return true;
  }
};

struct ValueFunction {
  Grid grid;
  std::vector<double> values;
  double time = 0.0;

  double at(int i, int j, int k) const { return values[grid.index(i, j, k)]; }
  double min() const { return *std::min_element(values.begin(), values.end()); }
  double max() const { return *std::max_element(values.begin(), values.end()); }
  double range() const { return max() - min(); }

  // Trilinear interpolation; points outside the grid are clamped to the hull.
  double interpolate(const Point& x) const {
    std::array<int, 3> lo{};
    std::array<double, 3> frac{};
    for (int a = 0; a < 3; ++a) {
      const Axis& ax = grid.axes[a];
      const double s = std::clamp((x[a] - ax.min) / ax.spacing(), 0.0, double(ax.count - 1));
      lo[a] = std::min(static_cast<int>(s), ax.count - 2);
      frac[a] = s - lo[a];
    }
    double v = 0.0;
    for (int c = 0; c < 8; ++c) {
      double wgt = 1.0;
      std::array<int, 3> idx{};
      for (int a = 0; a < 3; ++a) {
        const int bit = (c >> a) & 1;
        idx[a] = lo[a] + bit;
        wgt *= bit ? frac[a] : 1.0 - frac[a];
      }
      if (wgt != 0.0) v += wgt * at(idx[0], idx[1], idx[2]);
    }
    return v;
  }
};

// Gradient at a node: central differences inside, one-sided at the boundary.
inline Costate node_gradient(const ValueFunction& V, int i, int j, int k) {
  const Grid& g = V.grid;
  const std::array<int, 3> id{i, j, k};
  const std::size_t c = g.index(i, j, k);
  Costate p{};
  for (int a = 0; a < 3; ++a) {
    const int n = g.count(a);
    const std::size_t s = g.stride(a);
    const double h = g.spacing(a);
    if (id[a] == 0) {
      p[a] = (V.values[c + s] - V.values[c]) / h;
    } else if (id[a] == n - 1) {
      p[a] = (V.values[c] - V.values[c - s]) / h;
    } else {
      p[a] = (V.values[c + s] - V.values[c - s]) / (2.0 * h);
    }
  }
  return p;
}

// ---------------------------------------------------------------------------
// Costs and input sets.

struct CostSpec {
  std::function<double(double t, const Point& x)> stage;  // empty: zero
  std::function<double(const Point& x)> terminal;         // empty: zero
  bool stage_time_invariant = false;  // lets solvers tabulate l_t once per node

  double stage_at(double t, const Point& x) const { return stage ? stage(t, x) : 0.0; }
  double terminal_at(const Point& x) const { return terminal ? terminal(x) : 0.0; }

  // l_t = |e_v|^2, l_T = 0.
  static CostSpec stabilization() {
    CostSpec c;
    c.stage = [](double, const Point& x) { return x[1] * x[1]; };
    c.stage_time_invariant = true;
    return c;
  }
  // l_t = 0, l_T = |e_p|.
  static CostSpec terminal_position() {
    CostSpec c;
    c.terminal = [](const Point& x) { return std::abs(x[0]); };
    return c;
  }
};

// Per-node table of a time-invariant stage cost, filled by Game::bind.
class StageTable {
 public:
  void bind(const Grid& g, const CostSpec& cost) {
    values_.clear();
    if (!cost.stage || !cost.stage_time_invariant) return;
    values_.resize(g.size());
    for (std::size_t n = 0; n < g.size(); ++n) values_[n] = cost.stage(0.0, g.point(n));
  }
  double at(const CostSpec& cost, std::size_t node, double t, const Point& x) const {
    return values_.empty() ? cost.stage_at(t, x) : values_[node];
  }

 private:
  std::vector<double> values_;
};

struct HamiltonianSpec {
  CouplingParams model;
  double d_max = 0.25;      // T*
  double L_w = 5.0;         // |w| <= L_w d
  double w_rate_max = 20.0;  // w_d in [0, w_rate_max]
  bool control = true;
  bool adversary_w = true;
  bool adversary_delay = true;

  void validate() const {
    model.validate();
    if (!(d_max >= 0.0)) throw ConfigError("hamiltonian: d_max must be >= 0");
    if (!(L_w >= 0.0)) throw ConfigError("hamiltonian: L_w must be >= 0");
    if (!(w_rate_max >= 0.0)) throw ConfigError("hamiltonian: w_rate_max must be >= 0");
  }
};

struct SaddleInputs {
  double u = 0.0;
  double w = 0.0;
  double w_d = 0.0;
};

// d' for a given rate input. Without the delay adversary the delay is held.
// At the upper bound the rate is clipped to be non-positive (reflecting clamp).
inline double delay_rate(const HamiltonianSpec& spec, double d, double w_d) {
  double r = spec.adversary_delay ? 1.0 - d * w_d : 0.0;
  if (d >= spec.d_max * (1.0 - 1e-12)) r = std::min(r, 0.0);
  return r;
}

// Error dynamics plus delay dynamics at (x, inputs).
inline Point game_dynamics(const HamiltonianSpec& spec, const Point& x, const SaddleInputs& in) {
  const ErrorRates r = error_dynamics_rhs({x[0], x[1]}, x[2], in.u, in.w, spec.model);
  return {r.e_p_dot, r.e_v_dot, delay_rate(spec, x[2], in.w_d)};
}

namespace detail {

inline double sign_or_zero(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Drift part of e_v' and the positive input gain 1 / (1 + k d^2 / 2).
inline void ev_drift(const HamiltonianSpec& spec, const Point& x, double& drift, double& gain) {
  const double k = spec.model.k;
  gain = 1.0 / (1.0 + 0.5 * k * x[2] * x[2]);
  drift = (-2.0 * k * x[0] + (k * x[2] - spec.model.b) * x[1]) * gain;
}

// max over the delay-rate box of p_d * d'.
inline double max_delay_term(const HamiltonianSpec& spec, double d, double p_d) {
  const double hi = delay_rate(spec, d, 0.0);
  const double lo = delay_rate(spec, d, spec.w_rate_max);
  return p_d >= 0.0 ? p_d * hi : p_d * lo;
}

}  // namespace detail

// Saddle point of l + p . f. The dynamics are affine in every input and the
// boxes are decoupled, so each input sits on a face of its box chosen by the
// sign of its switching function. Ties pick the box interior: u = 0, w = 0,
// and the delay-holding rate w_d = 1/d.
inline SaddleInputs saddle_inputs(const HamiltonianSpec& spec, const Point& x, const Costate& p) {
  SaddleInputs s;
  const double sv = detail::sign_or_zero(p[1]);
  if (spec.control) s.u = -spec.model.u_max * sv;
  if (spec.adversary_w) s.w = spec.L_w * x[2] * sv;
  if (spec.adversary_delay) {
    if (p[2] > 0.0) {
      s.w_d = 0.0;
    } else if (p[2] < 0.0) {
      s.w_d = spec.w_rate_max;
    } else {
      s.w_d = x[2] > 0.0 ? std::min(1.0 / x[2], spec.w_rate_max) : 0.0;
    }
  }
  return s;
}

// min_u max_{w, w_d} { stage + p . f } in closed form.
inline double hamiltonian_value(const HamiltonianSpec& spec, const Point& x, const Costate& p,
                                double stage) {
  double drift = 0.0;
  double gain = 0.0;
  detail::ev_drift(spec, x, drift, gain);
  double h = stage + p[0] * x[1] + p[1] * drift;
  const double ap = std::abs(p[1]) * gain;
  if (spec.control) h -= spec.model.u_max * ap;
  if (spec.adversary_w) h += spec.L_w * x[2] * ap;
  h += detail::max_delay_term(spec, x[2], p[2]);
  return h;
}

inline double hamiltonian(const Point& x, const Costate& p, const CostSpec& cost,
                          const HamiltonianSpec& spec, double t) {
  return hamiltonian_value(spec, x, p, cost.stage_at(t, x));
}

// Upper bound of |dH/dp_a| over inputs and over the state box x +/- half.
inline Costate delay_game_dissipation(const HamiltonianSpec& spec, const Point& x,
                                      const Point& half) {
  const double k = spec.model.k;
  const double ep = std::abs(x[0]) + half[0];
  const double ev = std::abs(x[1]) + half[1];
  const double dlo = std::clamp(x[2] - half[2], 0.0, spec.d_max);
  const double dhi = std::clamp(x[2] + half[2], 0.0, spec.d_max);
  const double gain = 1.0 / (1.0 + 0.5 * k * dlo * dlo);
  const double coupling = std::max(std::abs(k * dlo - spec.model.b), std::abs(k * dhi - spec.model.b));
  double a1 = 2.0 * k * ep + coupling * ev;
  if (spec.control) a1 += spec.model.u_max;
  if (spec.adversary_w) a1 += spec.L_w * dhi;
  const double a2 = spec.adversary_delay ? std::max(1.0, std::abs(1.0 - dhi * spec.w_rate_max)) : 0.0;
  return {ev, a1 * gain, a2};
}

// ---------------------------------------------------------------------------
// Games: anything exposing a nodal Hamiltonian and a dissipation bound.

template <class G>
concept HjGame = requires(const G& g, const Grid& grid, std::size_t node, const Point& x,
                          const Costate& p, double t) {
  { g.hamiltonian(node, x, p, t) } -> std::convertible_to<double>;
  { g.dissipation(x, x) } -> std::convertible_to<Costate>;
};

// Step one: stabilizing control against delay and truncation adversaries.
class DelayGame {
 public:
  DelayGame(HamiltonianSpec spec, CostSpec cost) : spec_(spec), cost_(std::move(cost)) {
    spec_.validate();
  }

  const HamiltonianSpec& spec() const { return spec_; }
  const CostSpec& cost() const { return cost_; }

  void bind(const Grid& g) { stage_.bind(g, cost_); }

  double hamiltonian(std::size_t node, const Point& x, const Costate& p, double t) const {
    return hamiltonian_value(spec_, x, p, stage_.at(cost_, node, t, x));
  }
  Costate dissipation(const Point& x, const Point& half) const {
    return delay_game_dissipation(spec_, x, half);
  }

 private:
  HamiltonianSpec spec_;
  CostSpec cost_;
  StageTable stage_;
};

// Step two: the control is a fixed feedback field (one value per node) and
// only the adversaries optimize.
class ClosedLoopDelayGame {
 public:
  ClosedLoopDelayGame(HamiltonianSpec spec, CostSpec cost, std::vector<double> control_field)
      : spec_(spec), cost_(std::move(cost)), u_(std::move(control_field)) {
    spec_.control = false;
    spec_.validate();
    u_max_ = spec.model.u_max;
  }

  const std::vector<double>& control_field() const { return u_; }
  void bind(const Grid& g) { stage_.bind(g, cost_); }

  double hamiltonian(std::size_t node, const Point& x, const Costate& p, double t) const {
    double drift = 0.0;
    double gain = 0.0;
    detail::ev_drift(spec_, x, drift, gain);
    double h = stage_.at(cost_, node, t, x) + p[0] * x[1] + p[1] * (drift + u_[node] * gain);
    if (spec_.adversary_w) h += spec_.L_w * x[2] * std::abs(p[1]) * gain;
    h += detail::max_delay_term(spec_, x[2], p[2]);
    return h;
  }
  Costate dissipation(const Point& x, const Point& half) const {
    Costate a = delay_game_dissipation(spec_, x, half);
    const double dlo = std::clamp(x[2] - half[2], 0.0, spec_.d_max);
    a[1] += u_max_ / (1.0 + 0.5 * spec_.model.k * dlo * dlo);
    return a;
  }

 private:
  HamiltonianSpec spec_;
  CostSpec cost_;
  std::vector<double> u_;
  double u_max_ = 0.0;
  StageTable stage_;
};

// Input-free constant flow x' = c with an optional stage cost.
class LinearFlowGame {
 public:
  explicit LinearFlowGame(Point velocity, CostSpec cost = {})
      : c_(velocity), cost_(std::move(cost)) {}

  double hamiltonian(std::size_t, const Point& x, const Costate& p, double t) const {
    return cost_.stage_at(t, x) + p[0] * c_[0] + p[1] * c_[1] + p[2] * c_[2];
  }
  Costate dissipation(const Point&, const Point&) const {
    return {std::abs(c_[0]), std::abs(c_[1]), std::abs(c_[2])};
  }

 private:
  Point c_;
  CostSpec cost_;
};

// ---------------------------------------------------------------------------
// Solver.

struct SolveOptions {
  double cfl = 0.5;
  int slice_stride = 10;  // store every n-th backward step
  // Upper bound on memory spent on stored slices; the stride is widened to
  // respect it. The terminal and final slices are always kept.
  std::size_t max_slice_bytes = std::size_t{256} << 20;
  bool store_slices = true;
};

struct HjiSolution {
  std::vector<ValueFunction> slices;  // decreasing time; back() is t = 0
  std::vector<double> dt_history;
  std::vector<double> cfl_history;
  int steps = 0;
  int slice_stride = 0;

  const ValueFunction& final_value() const { return slices.back(); }
};

// Per-axis local dissipation at every node, over a one-cell box.
template <HjGame G>
std::array<std::vector<double>, 3> dissipation_field(const Grid& grid, const G& game) {
  std::array<std::vector<double>, 3> alpha;
  for (auto& a : alpha) a.resize(grid.size());
  const Point half{grid.spacing(0), grid.spacing(1), grid.spacing(2)};
  for (std::size_t n = 0; n < grid.size(); ++n) {
    const Costate a = game.dissipation(grid.point(n), half);
    for (int ax = 0; ax < 3; ++ax) alpha[ax][n] = a[ax];
  }
  return alpha;
}

// CFL-limited step: cfl / sum_a (max alpha_a / dx_a).
inline double cfl_time_step(const Grid& grid, const std::array<std::vector<double>, 3>& alpha,
                            double cfl) {
  double rate = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double amax = *std::max_element(alpha[a].begin(), alpha[a].end());
    rate += amax / grid.spacing(a);
  }
  return rate > 0.0 ? cfl / rate : std::numeric_limits<double>::infinity();
}

namespace detail {

// One forward-Euler step in backward time: out = V + dt * (H(p_mean) +
// sum_a alpha_a (p+ - p-) / 2), evaluated at time t.
template <HjGame G>
void lf_apply(const ValueFunction& V, const G& game,
              const std::array<std::vector<double>, 3>& alpha, double t, double dt,
              std::vector<double>& out) {
  const Grid& g = V.grid;
  const int n0 = g.count(0), n1 = g.count(1), n2 = g.count(2);
  const std::array<std::size_t, 3> stride{g.stride(0), g.stride(1), g.stride(2)};
  const std::array<double, 3> inv{1.0 / g.spacing(0), 1.0 / g.spacing(1), 1.0 / g.spacing(2)};
  const std::array<int, 3> counts{n0, n1, n2};
  const double* v = V.values.data();
  out.resize(V.values.size());
  double* o = out.data();

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
  for (int i = 0; i < n0; ++i) {
    const double xp = g.axes[0].coord(i);
    for (int j = 0; j < n1; ++j) {
      const double xv = g.axes[1].coord(j);
      for (int k = 0; k < n2; ++k) {
        const std::size_t c = g.index(i, j, k);
        const std::array<int, 3> id{i, j, k};
        Costate pm{}, pp{}, mean{};
        for (int a = 0; a < 3; ++a) {
          const std::size_t s = stride[a];
          double fwd, bwd;
          if (id[a] == 0) {
            fwd = (v[c + s] - v[c]) * inv[a];
            bwd = fwd;
          } else if (id[a] == counts[a] - 1) {
            bwd = (v[c] - v[c - s]) * inv[a];
            fwd = bwd;
          } else {
            fwd = (v[c + s] - v[c]) * inv[a];
            bwd = (v[c] - v[c - s]) * inv[a];
          }
          pp[a] = fwd;
          pm[a] = bwd;
          mean[a] = 0.5 * (fwd + bwd);
        }
        const Point x{xp, xv, g.axes[2].coord(k)};
        double rate = game.hamiltonian(c, x, mean, t);
        for (int a = 0; a < 3; ++a) rate += 0.5 * alpha[a][c] * (pp[a] - pm[a]);
        o[c] = v[c] + dt * rate;
      }
    }
  }
}

inline bool all_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail

// A single Lax-Friedrichs update from time V.time to V.time - dt.
template <HjGame G>
ValueFunction lax_friedrichs_step(const ValueFunction& V, G game, double dt) {
  if constexpr (requires { game.bind(V.grid); }) game.bind(V.grid);
  const auto alpha = dissipation_field(V.grid, game);
  ValueFunction out{V.grid, {}, V.time - dt};
  detail::lf_apply(V, game, alpha, V.time, dt, out.values);
  if (!detail::all_finite(out.values)) {
    const double cfl = dt / cfl_time_step(V.grid, alpha, 1.0);
    throw InstabilityError("HJ update produced a non-finite value", 0, cfl);
  }
  return out;
}

inline ValueFunction terminal_value(const Grid& grid, const CostSpec& cost, double T) {
  ValueFunction V{grid, std::vector<double>(grid.size()), T};
  for (std::size_t n = 0; n < grid.size(); ++n) V.values[n] = cost.terminal_at(grid.point(n));
  return V;
}

// Backward integration from V(., T) = terminal down to t = 0 with TVD-RK2.
template <HjGame G>
HjiSolution solve_hji(const Grid& grid, G game, const ValueFunction& terminal, double T,
                      const SolveOptions& opts = {}) {
  if (!(T > 0.0)) throw PreconditionError("solve_hji: horizon must be positive");
  grid.validate();
  if (!terminal.grid.same_shape(grid)) throw ConfigError("solve_hji: terminal grid mismatch");
  if constexpr (requires { game.bind(grid); }) game.bind(grid);

  // The shipped games have state-only dissipation bounds, so alpha is fixed
  // over the solve and the step size is uniform.
  const auto alpha = dissipation_field(grid, game);
  const double dt_max = cfl_time_step(grid, alpha, opts.cfl);
  const long steps = std::max<long>(1, static_cast<long>(std::ceil(T / dt_max - 1e-9)));
  const double dt = T / static_cast<double>(steps);
  const double cfl_number = dt * opts.cfl / dt_max;

  HjiSolution sol;
  sol.steps = static_cast<int>(steps);
  const std::size_t slice_bytes = grid.size() * sizeof(double);
  long stride = std::max(1, opts.slice_stride);
  if (opts.store_slices && slice_bytes > 0) {
    const long budget = static_cast<long>(opts.max_slice_bytes / slice_bytes);
    if (budget > 2) stride = std::max(stride, (steps + budget - 3) / (budget - 2));
    else stride = steps;
  }
  sol.slice_stride = static_cast<int>(stride);

  ValueFunction V = terminal;
  V.time = T;
  if (opts.store_slices) sol.slices.push_back(V);

  std::vector<double> stage1, stage2;
  ValueFunction tmp{grid, {}, 0.0};
  for (long s = 0; s < steps; ++s) {
    const double t = T - static_cast<double>(s) * dt;
    detail::lf_apply(V, game, alpha, t, dt, stage1);
    tmp.values.swap(stage1);
    tmp.time = t - dt;
    detail::lf_apply(tmp, game, alpha, t - dt, dt, stage2);
    for (std::size_t n = 0; n < V.values.size(); ++n)
      V.values[n] = 0.5 * (V.values[n] + stage2[n]);
    tmp.values.swap(stage1);
    V.time = s + 1 == steps ? 0.0 : T - static_cast<double>(s + 1) * dt;
    if (!detail::all_finite(V.values)) {
      char msg[128];
      std::snprintf(msg, sizeof msg, "HJ solve became non-finite at step %ld (CFL %.3g)", s,
                    cfl_number);
      throw InstabilityError(msg, static_cast<int>(s), cfl_number);
    }
    sol.dt_history.push_back(dt);
    sol.cfl_history.push_back(cfl_number);
    const bool last = s + 1 == steps;
    if (opts.store_slices && !last && (s + 1) % stride == 0) sol.slices.push_back(V);
  }
  sol.slices.push_back(V);
  return sol;
}

// Step-one solve for the stabilizing control.
inline HjiSolution solve_delay_game(const Grid& grid, const HamiltonianSpec& spec,
                                    const CostSpec& cost, double T, const SolveOptions& opts = {}) {
  const DelayGame game(spec, cost);
  return solve_hji(grid, game, terminal_value(grid, cost, T), T, opts);
}

// Step-two solve: the feedback u(x) is plugged into the dynamics and only
// the delay (and truncation) adversaries remain.
inline HjiSolution solve_hjb_closed_loop(const Grid& grid, const HamiltonianSpec& spec,
                                         const std::function<double(const Point&)>& control_law,
                                         const CostSpec& cost, double T,
                                         const SolveOptions& opts = {}) {
  std::vector<double> field(grid.size());
  for (std::size_t n = 0; n < grid.size(); ++n) {
    field[n] = std::clamp(control_law(grid.point(n)), -spec.model.u_max, spec.model.u_max);
  }
  const ClosedLoopDelayGame game(spec, cost, std::move(field));
  return solve_hji(grid, game, terminal_value(grid, cost, T), T, opts);
}

// ---------------------------------------------------------------------------
// Safe sets.

struct SafeSet {
  double threshold = 0.0;
  std::vector<std::uint8_t> mask;  // per node: V <= threshold
  std::vector<double> slice_area;  // per d node: cells x cell area in (e_p, e_v)
  std::vector<double> slice_d;
};

inline SafeSet extract_safe_set(const ValueFunction& V, double threshold) {
  const Grid& g = V.grid;
  SafeSet s;
  s.threshold = threshold;
  s.mask.resize(g.size());
  s.slice_area.assign(g.count(2), 0.0);
  s.slice_d.resize(g.count(2));
  const double cell = g.spacing(0) * g.spacing(1);
  for (int k = 0; k < g.count(2); ++k) s.slice_d[k] = g.axes[2].coord(k);
  for (int i = 0; i < g.count(0); ++i)
    for (int j = 0; j < g.count(1); ++j)
      for (int k = 0; k < g.count(2); ++k) {
        const std::size_t c = g.index(i, j, k);
        const bool in = V.values[c] <= threshold;
        s.mask[c] = in ? 1 : 0;
        if (in) s.slice_area[k] += cell;
      }
  return s;
}

// ---------------------------------------------------------------------------
// Serialization. Dump = one text header line, then row-major float64 values.

inline void write_value_dump(std::ostream& os, const ValueFunction& V) {
  const Grid& g = V.grid;
  char line[512];
  std::snprintf(line, sizeof line,
                "axes: e_p,e_v,d; counts: %d,%d,%d; mins: %.17g,%.17g,%.17g; "
                "maxs: %.17g,%.17g,%.17g; time: %.17g\n",
                g.count(0), g.count(1), g.count(2), g.axes[0].min, g.axes[1].min, g.axes[2].min,
                g.axes[0].max, g.axes[1].max, g.axes[2].max, V.time);
  os << line;
  os.write(reinterpret_cast<const char*>(V.values.data()),
           static_cast<std::streamsize>(V.values.size() * sizeof(double)));
}

inline ValueFunction read_value_dump(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw ConfigError("value dump: missing header");
  int c0, c1, c2;
  double m0, m1, m2, x0, x1, x2, t;
  if (std::sscanf(header.c_str(),
                  "axes: e_p,e_v,d; counts: %d,%d,%d; mins: %lf,%lf,%lf; maxs: %lf,%lf,%lf; "
                  "time: %lf",
                  &c0, &c1, &c2, &m0, &m1, &m2, &x0, &x1, &x2, &t) != 10) {
    throw ConfigError("value dump: malformed header");
  }
  ValueFunction V{Grid::make({m0, x0, c0}, {m1, x1, c1}, {m2, x2, c2}), {}, t};
  V.values.resize(V.grid.size());
  is.read(reinterpret_cast<char*>(V.values.data()),
          static_cast<std::streamsize>(V.values.size() * sizeof(double)));
  if (is.gcount() != static_cast<std::streamsize>(V.values.size() * sizeof(double)))
    throw ConfigError("value dump: truncated payload");
  return V;
}

// CSV of the (e_p, e_v) slice at d node k.
inline void write_slice_csv(std::ostream& os, const ValueFunction& V, int k) {
  const Grid& g = V.grid;
  char buf[96];
  os << "e_p,e_v,d,V\n";
  for (int i = 0; i < g.count(0); ++i)
    for (int j = 0; j < g.count(1); ++j) {
      const Point x = g.point(i, j, k);
      std::snprintf(buf, sizeof buf, "%.10g,%.10g,%.10g,%.10g\n", x[0], x[1], x[2], V.at(i, j, k));
      os << buf;
    }
}

}  // namespace tdgame
