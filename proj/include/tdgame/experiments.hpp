#pragma once

// Figure pipelines and oracle suites shared by the command-line tool and the
// acceptance checks. Nothing here touches the filesystem.

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "tdgame/affine_approx.hpp"
#include "tdgame/analysis.hpp"
#include "tdgame/dde_sim.hpp"
#include "tdgame/hji.hpp"
#include "tdgame/models.hpp"
#include "tdgame/policy.hpp"
#include "tdgame/scenario.hpp"

namespace tdgame {

using Log = std::function<void(const std::string&)>;

struct CheckLine {
  std::string name;
  bool pass = false;
  std::string detail;
};

inline void note(const Log& log, const std::string& msg) {
  if (log) log(msg);
}

inline std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class... A>
std::string fmtn(const char* f, A... a) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

inline SolveOptions solve_options(const Scenario& s) {
  SolveOptions o;
  o.cfl = s.cfl;
  o.slice_stride = s.slice_stride;
  return o;
}

// Step one of the two-step pipeline: stabilizing value with l_t = e_v^2.
inline HjiSolution solve_stabilization(const Scenario& s, const Log& log = {}) {
  const Grid g = s.grid();
  note(log, fmtn("solving stabilization game on %dx%dx%d, T=%g, T*=%g", g.count(0), g.count(1),
                 g.count(2), s.solve_horizon, s.tstar));
  return solve_delay_game(g, s.hamiltonian_spec(), CostSpec::stabilization(), s.solve_horizon,
                          solve_options(s));
}

// Time in which the error enters and stays inside the box |e_p|,|e_v| < tol.
struct Settling {
  bool settled = false;
  double time = std::numeric_limits<double>::infinity();
};

inline Settling settling_time(const Trajectory& traj, double tol) {
  Settling st;
  for (std::size_t i = traj.size(); i-- > 0;) {
    const ErrorState e = error_state(traj.states[i]);
    if (std::abs(e.e_p) >= tol || std::abs(e.e_v) >= tol) {
      if (i + 1 < traj.size()) {
        st.settled = true;
        st.time = traj.times[i + 1];
      }
      return st;
    }
  }
  st.settled = true;
  st.time = traj.empty() ? 0.0 : traj.times.front();
  return st;
}

// ---------------------------------------------------------------------------
// Stabilization run: no delay, then delay injected, then control applied.

struct Fig3Result {
  std::shared_ptr<const ValueFunction> value;
  int solve_steps = 0;
  Trajectory traj;
  StabilityVerdict phase_a;
  StabilityVerdict phase_b;
  double tail_error = 0.0;  // max |e_p| over the final 10 s
  std::vector<double> phase;  // 0, 1, 2 per sample
  std::vector<CheckLine> checks;
};

inline Fig3Result run_fig3(const Scenario& s, const Log& log = {}) {
  Fig3Result r;
  const HjiSolution sol = solve_stabilization(s, log);
  r.solve_steps = sol.steps;
  r.value = std::make_shared<ValueFunction>(sol.final_value());

  const CoupledTdsModel model = double_integrator_pair(s.model);
  const ControlPolicy policy =
      ControlPolicy::from_value(r.value, s.model.u_max, s.dt_ctrl, s.control_on);
  const DelaySignal sig = s.delay_signal();
  note(log, "simulating three-phase run");
  r.traj = simulate(model, state_from_error({s.e_p0, s.e_v0}), sig, sig,
                    make_dde_controller(policy), s.sim_horizon, s.dt);

  for (double t : r.traj.times)
    r.phase.push_back(t < s.delay_on ? 0.0 : (t < s.control_on ? 1.0 : 2.0));
  const double eps = 1e-9;
  r.phase_a = classify_stability(r.traj, 0.0, s.delay_on - eps);
  r.phase_b = classify_stability(r.traj, s.delay_on, s.control_on - eps);
  const double tail_from = s.sim_horizon - 10.0;
  for (std::size_t i = 0; i < r.traj.size(); ++i)
    if (r.traj.times[i] >= tail_from)
      r.tail_error = std::max(r.tail_error, std::abs(error_state(r.traj.states[i]).e_p));

  r.checks.push_back({"three-phase A: delay-free envelope decays", r.phase_a.envelope_ratio < 1.0,
                      fmt("envelope_ratio=%.4f", r.phase_a.envelope_ratio)});
  r.checks.push_back({"three-phase B: injected delay grows envelope", r.phase_b.envelope_ratio > 1.02,
                      fmt("envelope_ratio=%.4f", r.phase_b.envelope_ratio)});
  r.checks.push_back({"three-phase C: controlled error below 0.05 at the end", r.tail_error < 0.05,
                      fmtn("max|e_p| on [%g,%g]=%.4g", tail_from, s.sim_horizon, r.tail_error)});
  return r;
}

// ---------------------------------------------------------------------------
// Safe sets from the two-step pipeline.

struct Fig4Result {
  std::shared_ptr<const ValueFunction> step1;
  ValueFunction step2;
  SafeSet safe;
  std::vector<double> probe_d;
  std::vector<double> probe_area;
  std::array<double, 4> corners{};  // (-,-), (+,+), (-,+), (+,-) at the top delay
  std::vector<CheckLine> checks;
};

inline ValueFunction solve_closed_loop_step(const Scenario& s, const ValueFunction& step1,
                                            const Log& log = {}) {
  const HamiltonianSpec spec = s.hamiltonian_spec();
  auto law = [&step1, u = s.model.u_max](const Point& x) { return optimal_control(step1, x, u); };
  note(log, "solving closed-loop terminal |e_p| problem");
  return solve_hjb_closed_loop(s.grid(), spec, law, CostSpec::terminal_position(),
                               s.solve_horizon, solve_options(s))
      .final_value();
}

inline Fig4Result run_fig4(const Scenario& s, const Log& log = {}) {
  Fig4Result r;
  r.step1 = std::make_shared<ValueFunction>(solve_stabilization(s, log).final_value());
  r.step2 = solve_closed_loop_step(s, *r.step1, log);
  r.safe = extract_safe_set(r.step2, s.threshold);

  const Grid& g = r.step2.grid;
  for (double d : {0.0, 0.5 * s.tstar, s.tstar}) {
    const int k = g.nearest(2, d);
    r.probe_d.push_back(g.axes[2].coord(k));
    r.probe_area.push_back(r.safe.slice_area[k]);
  }
  const int k = g.count(2) - 1, a = g.count(0) - 1, b = g.count(1) - 1;
  r.corners = {r.step2.at(0, 0, k), r.step2.at(a, b, k), r.step2.at(0, b, k), r.step2.at(a, 0, k)};

  bool monotone = r.probe_area[0] > 0.0;
  for (std::size_t i = 1; i < r.probe_area.size(); ++i)
    monotone = monotone && r.probe_area[i] <= r.probe_area[i - 1] + 1e-12;
  r.checks.push_back({"safe-set area non-increasing in d(0)", monotone,
                      fmtn("areas=%.4f,%.4f,%.4f", r.probe_area[0], r.probe_area[1],
                           r.probe_area[2])});
  const double lo = std::min(r.corners[0], r.corners[1]);
  const double hi = std::max(r.corners[2], r.corners[3]);
  r.checks.push_back({"same-sign corners carry the largest values", lo > hi,
                      fmtn("V(-,-)=%.4f V(+,+)=%.4f V(-,+)=%.4f V(+,-)=%.4f", r.corners[0],
                           r.corners[1], r.corners[2], r.corners[3])});
  return r;
}

// ---------------------------------------------------------------------------
// Trajectory fan from the [-1,1]^2 lattice under two delay kinds.

struct FanRun {
  ErrorState x0;
  std::string kind;
  Trajectory traj;
  Settling settle;
  double max_abs_u = 0.0;
  double worst_w_ratio = 0.0;  // max |w| / d over samples with d > 0
  double w_at_zero_delay = 0.0;  // max |w| where d = 0
};

struct Fig5Result {
  std::shared_ptr<const ValueFunction> value;
  std::vector<FanRun> runs;
  double mean_settle_constant = 0.0;
  double mean_settle_sinusoidal = 0.0;
  std::vector<CheckLine> checks;
};

inline Fig5Result run_fig5(const Scenario& s, const Log& log = {}) {
  Fig5Result r;
  r.value = std::make_shared<ValueFunction>(solve_stabilization(s, log).final_value());
  const CoupledTdsModel model = double_integrator_pair(s.model);
  const DdeController ctrl =
      make_dde_controller(ControlPolicy::from_value(r.value, s.model.u_max, s.dt_ctrl));

  for (const char* kind : {"constant", "sinusoidal"}) {
    const DelaySignal sig = std::string(kind) == "constant"
                                ? DelaySignal::constant(s.tstar)
                                : DelaySignal::sinusoidal(s.tstar, s.omega, s.phase);
    for (double ep : {-1.0, 0.0, 1.0})
      for (double ev : {-1.0, 0.0, 1.0}) r.runs.push_back({{ep, ev}, kind, {}, {}, 0.0, 0.0});
    const std::size_t first = r.runs.size() - 9;
    const long count = 9;
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (long i = 0; i < count; ++i) {
      FanRun& run = r.runs[first + i];
      run.traj = simulate(model, state_from_error(run.x0), sig, sig, ctrl, s.sim_horizon, s.dt);
      run.settle = settling_time(run.traj, 0.1);
      for (const Vec& u : run.traj.inputs)
        run.max_abs_u = std::max(run.max_abs_u, std::abs(u(0) - u(1)));
      const ResidualRecord rec = residual_w(model, run.traj);
      for (std::size_t j = 0; j < rec.w_norms.size(); ++j) {
        if (rec.d_values[j] > 0.0)
          run.worst_w_ratio = std::max(run.worst_w_ratio, rec.w_norms[j] / rec.d_values[j]);
        else
          run.w_at_zero_delay = std::max(run.w_at_zero_delay, rec.w_norms[j]);
      }
    }
  }

  bool all_settled = true;
  double max_u = 0.0, w_ratio = 0.0, w_zero = 0.0;
  double sum_c = 0.0, sum_s = 0.0;
  for (const FanRun& run : r.runs) {
    all_settled = all_settled && run.settle.settled;
    max_u = std::max(max_u, run.max_abs_u);
    w_ratio = std::max(w_ratio, run.worst_w_ratio);
    w_zero = std::max(w_zero, run.w_at_zero_delay);
    (run.kind == "constant" ? sum_c : sum_s) += run.settle.time;
  }
  r.mean_settle_constant = sum_c / 9.0;
  r.mean_settle_sinusoidal = sum_s / 9.0;
  const double ratio = r.mean_settle_constant / r.mean_settle_sinusoidal;

  r.checks.push_back({"fan: all lattice starts settle under both delays", all_settled,
                      fmtn("mean settle const=%.3g sin=%.3g", r.mean_settle_constant,
                           r.mean_settle_sinusoidal)});
  r.checks.push_back({"fan: constant delay settles >= 1.3x slower", all_settled && ratio >= 1.3,
                      fmt("ratio=%.3g", ratio)});
  r.checks.push_back({"fan: control within u_max", max_u <= s.model.u_max + 1e-15,
                      fmt("max|u|=%.6g", max_u)});
  r.checks.push_back({"fan: residual within L_w d", w_ratio <= s.L_w && w_zero == 0.0,
                      fmtn("max |w|/d=%.4g (L_w=%g), max |w| at d=0: %.3g", w_ratio, s.L_w, w_zero)});
  return r;
}

// ---------------------------------------------------------------------------
// Conservativeness sweep.

struct Fig2Result {
  std::vector<SweepRow> rows;
  int certified_growing = 0;
  int uncertified_converged = 0;
  std::vector<CheckLine> checks;
};

inline Fig2Result run_fig2(const Scenario& s, const Log& log = {}) {
  SweepSpec spec;
  spec.horizon = s.sim_horizon;
  spec.dt = s.dt;
  spec.omega = s.omega;
  note(log, "running 5x5x5 conservativeness sweep");
  Fig2Result r;
  r.rows = sweep_conservativeness(spec);
  for (const SweepRow& row : r.rows) {
    if (row.lk.satisfied && row.stability.cls == StabilityClass::growing) ++r.certified_growing;
    if (!row.lk.satisfied && row.stability.cls == StabilityClass::converged)
      ++r.uncertified_converged;
  }
  r.checks.push_back({"sweep: no certified point grows", r.certified_growing == 0,
                      fmt("certified_growing=%g", r.certified_growing)});
  r.checks.push_back({"sweep: some uncertified point converges", r.uncertified_converged > 0,
                      fmt("uncertified_converged=%g", r.uncertified_converged)});
  return r;
}

// ---------------------------------------------------------------------------
// Truncation-residual scaling.

struct Lemma1Result {
  ResidualFit fit;
  std::vector<CheckLine> checks;
};

inline Lemma1Result run_lemma1(const CouplingParams& params = {1.0, 0.15, 0.4}) {
  Lemma1Result r;
  r.fit = estimate_residual_constant(double_integrator_pair(params), {0.2, 0.1, 0.05});
  r.checks.push_back({"residual exponent in [1.8, 2.2]",
                      r.fit.exponent >= 1.8 && r.fit.exponent <= 2.2,
                      fmtn("exponent=%.4f pairs=%.4f,%.4f", r.fit.exponent,
                           r.fit.pair_exponents.at(0), r.fit.pair_exponents.at(1))});
  return r;
}

// ---------------------------------------------------------------------------
// Value sandwich and gap scaling.

struct Theorem2Result {
  std::shared_ptr<const ValueFunction> value;
  SandwichReport sandwich;
  GapReport gap;
  std::vector<CheckLine> checks;
};

inline Theorem2Result run_theorem2(const Scenario& s, const Log& log = {}) {
  Theorem2Result r;
  const CoupledTdsModel model = double_integrator_pair(s.model);
  SandwichOptions opts;
  opts.n_samples = s.samples;
  opts.seed = s.seed;
  opts.horizon = s.solve_horizon;
  opts.dt = s.dt;

  r.value = std::make_shared<ValueFunction>(solve_stabilization(s, log).final_value());
  note(log, "sandwich rollouts");
  r.sandwich = verify_value_sandwich(
      *r.value, model, ControlPolicy::from_value(r.value, s.model.u_max, s.dt_ctrl), s.tstar, opts);

  // One policy for every bound: solved against the largest one.
  Scenario wide = s;
  wide.tstar = 0.4;
  const auto wide_value =
      std::make_shared<ValueFunction>(solve_stabilization(wide, log).final_value());
  note(log, "gap rollouts");
  r.gap = gap_scaling(model, ControlPolicy::from_value(wide_value, s.model.u_max, s.dt_ctrl),
                      {0.1, 0.2, 0.4}, opts);

  r.checks.push_back({"sandwich: no violations", r.sandwich.violations == 0,
                      fmtn("violations=%d worst_margin=%.4g tol=%.4g", r.sandwich.violations,
                           r.sandwich.worst_margin, r.sandwich.tolerance)});
  r.checks.push_back({"gap linear in d_max", r.gap.relative_residual <= 0.25,
                      fmtn("gaps=%.4g,%.4g,%.4g slope=%.4g rel_residual=%.3f", r.gap.worst_gap[0],
                           r.gap.worst_gap[1], r.gap.worst_gap[2], r.gap.slope,
                           r.gap.relative_residual)});
  return r;
}

// ---------------------------------------------------------------------------
// Oracle suites.

// Method-of-steps solution of x' = -x(t-1), x = 1 on [-1, 0]. On [j, j+1] the
// solution is a polynomial in the local time s = t - j; each interval follows
// from P_{j+1}(s) = P_j(1) - int_0^s P_j.
class MethodOfSteps {
 public:
  explicit MethodOfSteps(int intervals) {
    std::vector<double> p{1.0};  // history on [-1, 0]
    double end = 1.0;
    for (int j = 0; j < intervals; ++j) {
      std::vector<double> next(p.size() + 1, 0.0);
      next[0] = end;
      for (std::size_t i = 0; i < p.size(); ++i) next[i + 1] = -p[i] / static_cast<double>(i + 1);
      pieces_.push_back(next);
      end = eval(next, 1.0);
      p = next;
    }
  }
  double operator()(double t) const {
    if (t <= 0.0) return 1.0;
    const std::size_t j = std::min(static_cast<std::size_t>(t), pieces_.size() - 1);
    return eval(pieces_[j], t - static_cast<double>(j));
  }

 private:
  static double eval(const std::vector<double>& c, double s) {
    double v = 0.0;
    for (std::size_t i = c.size(); i-- > 0;) v = v * s + c[i];
    return v;
  }
  std::vector<std::vector<double>> pieces_;
};

// Two identical cross-coupled scalar agents; with equal initial data both
// follow x' = -x(t - 1).
inline CoupledTdsModel unit_delay_test_model() {
  CoupledTdsModel m;
  m.n = 1;
  m.m = 1;
  m.params = {1.0, 0.0, 0.0};
  m.name = "unit_delay";
  auto f = [](const Vec&, const Vec& other, const Vec&) { return Vec(-other); };
  m.f1 = f;
  m.f2 = f;
  return m;
}

inline double dde_oracle_error(double dt, double horizon) {
  const CoupledTdsModel m = unit_delay_test_model();
  const MethodOfSteps exact(static_cast<int>(std::ceil(horizon)) + 1);
  Vec x0(2);
  x0 << 1.0, 1.0;
  const DelaySignal sig = DelaySignal::constant(1.0);
  const Trajectory traj = simulate(m, x0, sig, sig, {}, horizon, dt);
  double err = 0.0;
  for (std::size_t i = 0; i < traj.size(); ++i)
    err = std::max(err, std::abs(traj.states[i](0) - exact(traj.times[i])));
  return err;
}

struct DdeOracleResult {
  double error_fine = 0.0;         // over [0, 2] at dt = 1e-3
  double order_error_coarse = 0.0;  // over [0, 6] at dt = 0.02
  double order_error_fine = 0.0;    // over [0, 6] at dt = 0.01
  double order = 0.0;
  std::vector<CheckLine> checks;
};

// The solution is piecewise polynomial and RK4 with cubic history is exact on
// the first few intervals, so the order is measured further out where the
// polynomial degree exceeds what the scheme integrates exactly.
inline DdeOracleResult run_dde_oracle() {
  DdeOracleResult r;
  r.error_fine = dde_oracle_error(1e-3, 2.0);
  r.order_error_coarse = dde_oracle_error(0.02, 6.0);
  r.order_error_fine = dde_oracle_error(0.01, 6.0);
  r.order = std::log2(r.order_error_coarse / r.order_error_fine);
  r.checks.push_back({"dde method-of-steps error <= 1e-5", r.error_fine <= 1e-5,
                      fmt("max error=%.3g", r.error_fine)});
  r.checks.push_back({"dde observed order >= 3", r.order >= 3.0,
                      fmtn("errors %.3g -> %.3g, order=%.3f", r.order_error_coarse,
                           r.order_error_fine, r.order)});
  return r;
}

// Brute-force min over u of max over (w, w_d) on {lo, mid, hi} box points.
inline double hamiltonian_brute_force(const HamiltonianSpec& spec, const Point& x,
                                      const Costate& p, double stage) {
  const double um = spec.control ? spec.model.u_max : 0.0;
  const double wm = spec.adversary_w ? spec.L_w * x[2] : 0.0;
  const double rm = spec.adversary_delay ? spec.w_rate_max : 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (double u : {-um, 0.0, um}) {
    double worst = -std::numeric_limits<double>::infinity();
    for (double w : {-wm, 0.0, wm})
      for (double wd : {0.0, 0.5 * rm, rm}) {
        const Point f = game_dynamics(spec, x, {u, w, wd});
        worst = std::max(worst, stage + p[0] * f[0] + p[1] * f[1] + p[2] * f[2]);
      }
    best = std::min(best, worst);
  }
  return best;
}

struct HamiltonianOracleResult {
  double max_saddle_error = 0.0;
  double advection_error = 0.0;
  double advection_bound = 0.0;
  std::vector<CheckLine> checks;
};

inline HamiltonianOracleResult run_hamiltonian_oracle(std::uint64_t seed = 7) {
  HamiltonianOracleResult r;
  HamiltonianSpec spec;
  spec.model = {1.0, 0.15, 0.4};
  spec.d_max = 0.5;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    Point x{2.4 * U(rng), 5.0 * U(rng), spec.d_max * 0.5 * (1.0 + U(rng))};
    if (i % 10 == 0) x[2] = spec.d_max;  // exercise the reflecting clamp
    const Costate p{10.0 * U(rng), 10.0 * U(rng), 10.0 * U(rng)};
    const double stage = x[1] * x[1];
    const double h = hamiltonian_value(spec, x, p, stage);
    r.max_saddle_error =
        std::max(r.max_saddle_error, std::abs(h - hamiltonian_brute_force(spec, x, p, stage)));
  }

  const double c = 0.7;
  const Grid g = Grid::make({-2.0, 2.0, 81}, {-1.0, 1.0, 3}, {-1.0, 1.0, 3});
  CostSpec cost;
  cost.terminal = [](const Point& x) { return x[0]; };
  const HjiSolution sol =
      solve_hji(g, LinearFlowGame({c, 0.0, 0.0}), terminal_value(g, cost, 1.0), 1.0);
  const ValueFunction& V = sol.final_value();
  for (std::size_t n = 0; n < g.size(); ++n)
    r.advection_error = std::max(r.advection_error, std::abs(V.values[n] - (g.point(n)[0] + c)));
  r.advection_bound = 2.0 * g.spacing(0) * c;

  r.checks.push_back({"hamiltonian closed form matches corner enumeration",
                      r.max_saddle_error <= 1e-12, fmt("max error=%.3g", r.max_saddle_error)});
  r.checks.push_back({"advection solve matches characteristics",
                      r.advection_error <= r.advection_bound,
                      fmtn("max error=%.3g bound=%.3g", r.advection_error, r.advection_bound)});
  return r;
}

struct LkOracleResult {
  LkVerdict fig3;
  std::vector<CheckLine> checks;
};

inline LkOracleResult run_lk_oracle() {
  LkOracleResult r;
  r.fig3 = lk_condition(1, 1, 0.15, 0.15, 0.25, 0.25);
  const LkVerdict big = lk_condition(1, 1, 0.5, 0.5, 0.5, 0.5);
  r.checks.push_back({"lk: k=1 b=0.15 T=0.25 not certified",
                      !r.fig3.satisfied && std::abs(r.fig3.lhs - 0.09) < 1e-12 &&
                          std::abs(r.fig3.rhs - 0.125) < 1e-12,
                      fmtn("lhs=%.4g rhs=%.4g", r.fig3.lhs, r.fig3.rhs)});
  r.checks.push_back({"lk: strong damping certified", big.satisfied,
                      fmtn("lhs=%.4g rhs=%.4g", big.lhs, big.rhs)});
  return r;
}

}  // namespace tdgame
