#pragma once

// Certificates and empirical checks: the Lyapunov-Krasovskii delay bound,
// a peak-envelope stability classifier, the conservativeness sweep, the
// Gronwall constant of the approximation gap, and Monte-Carlo checks that the
// game value bounds the true delayed cost.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "tdgame/dde_sim.hpp"
#include "tdgame/errors.hpp"
#include "tdgame/hji.hpp"
#include "tdgame/models.hpp"
#include "tdgame/policy.hpp"

namespace tdgame {

struct LkVerdict {
  bool satisfied = false;
  double lhs = 0.0;  // 4 b1 b2
  double rhs = 0.0;  // (T1^2 + T2^2) k1 k2
  double margin = 0.0;
};

// 4 b1 b2 >= (T1^2 + T2^2) k1 k2.
inline LkVerdict lk_condition(double k1, double k2, double b1, double b2, double T1, double T2) {
  for (double v : {k1, k2, b1, b2, T1, T2})
    if (!(v >= 0.0)) throw PreconditionError("lk_condition: arguments must be nonnegative");
  LkVerdict v;
  v.lhs = 4.0 * b1 * b2;
  v.rhs = (T1 * T1 + T2 * T2) * k1 * k2;
  v.margin = v.lhs - v.rhs;
  v.satisfied = v.margin >= 0.0;
  return v;
}

// ---------------------------------------------------------------------------

enum class StabilityClass { converged, bounded_oscillation, growing, indeterminate };

inline const char* to_string(StabilityClass c) {
  switch (c) {
    case StabilityClass::converged: return "converged";
    case StabilityClass::bounded_oscillation: return "bounded_oscillation";
    case StabilityClass::growing: return "growing";
    case StabilityClass::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

struct StabilityOptions {
  double eps_grow = 0.02;
  double eps_conv = 0.05;
  // Peaks smaller than this fraction of the largest peak are treated as
  // noise (chattering around a converged state).
  double peak_floor = 1e-3;
  // final_error is the largest |e_p| over this trailing fraction of the run.
  double final_window = 0.1;
};

struct StabilityVerdict {
  StabilityClass cls = StabilityClass::indeterminate;
  double envelope_ratio = std::numeric_limits<double>::quiet_NaN();
  double final_error = 0.0;
  int peaks = 0;
};

// Envelope ratio: geometric mean of the ratios between successive peaks of
// the same sign, so one ratio spans one full oscillation period.
inline StabilityVerdict classify_stability(const std::vector<double>& t,
                                           const std::vector<double>& e,
                                           const StabilityOptions& opts = {}) {
  StabilityVerdict v;
  const std::size_t n = e.size();
  if (n == 0 || t.size() != n) throw PreconditionError("classify_stability: empty or ragged input");

  const double t_end = t.back();
  const double t_tail = t_end - opts.final_window * (t_end - t.front());
  for (std::size_t i = 0; i < n; ++i)
    if (t[i] >= t_tail) v.final_error = std::max(v.final_error, std::abs(e[i]));

  double biggest = 0.0;
  for (double x : e) biggest = std::max(biggest, std::abs(x));
  const double floor = opts.peak_floor * biggest;

  std::vector<double> pos, neg;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    if (e[i] > e[i - 1] && e[i] >= e[i + 1] && e[i] > floor) pos.push_back(e[i]);
    if (e[i] < e[i - 1] && e[i] <= e[i + 1] && -e[i] > floor) neg.push_back(-e[i]);
  }
  v.peaks = static_cast<int>(pos.size() + neg.size());

  double log_sum = 0.0;
  int ratios = 0;
  for (const auto* seq : {&pos, &neg}) {
    for (std::size_t i = 0; i + 1 < seq->size(); ++i) {
      log_sum += std::log((*seq)[i + 1] / (*seq)[i]);
      ++ratios;
    }
  }
  if (ratios > 0) v.envelope_ratio = std::exp(log_sum / ratios);

  if (ratios > 0 && v.envelope_ratio > 1.0 + opts.eps_grow) {
    v.cls = StabilityClass::growing;
  } else if (v.final_error < opts.eps_conv && (ratios == 0 || v.envelope_ratio < 1.0)) {
    v.cls = StabilityClass::converged;
    if (ratios == 0) v.envelope_ratio = 0.0;
  } else if (ratios > 0) {
    v.cls = StabilityClass::bounded_oscillation;
  }
  return v;
}

// Position error of a double-integrator trajectory restricted to [t0, t1].
inline void error_series(const Trajectory& traj, double t0, double t1, std::vector<double>& t,
                         std::vector<double>& e_p) {
  t.clear();
  e_p.clear();
  for (std::size_t i = 0; i < traj.size(); ++i) {
    if (traj.times[i] < t0 || traj.times[i] > t1) continue;
    t.push_back(traj.times[i]);
    e_p.push_back(error_state(traj.states[i]).e_p);
  }
}

inline StabilityVerdict classify_stability(const Trajectory& traj, double t0, double t1,
                                           const StabilityOptions& opts = {}) {
  std::vector<double> t, e;
  error_series(traj, t0, t1, t, e);
  return classify_stability(t, e, opts);
}

inline StabilityVerdict classify_stability(const Trajectory& traj,
                                           const StabilityOptions& opts = {}) {
  return classify_stability(traj, -std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity(), opts);
}

// ---------------------------------------------------------------------------

struct SweepSpec {
  std::vector<double> k_values{0.02, 0.04, 0.06, 0.08, 0.10};
  std::vector<double> b_values{0.05, 0.10, 0.15, 0.20, 0.25};
  std::vector<double> tstar_values{0.0, 1.0, 2.0, 3.0, 4.0};
  double horizon = 300.0;
  double dt = 0.01;
  double omega = 0.5;
  ErrorState initial{1.0, 0.0};
  StabilityOptions stability;
};

struct SweepRow {
  double k = 0.0;
  double b = 0.0;
  double tstar = 0.0;
  LkVerdict lk;
  StabilityVerdict stability;
};

// Uncontrolled true-delay rollouts under a sinusoidal delay on both links.
// Divergent runs are recorded as growing.
inline std::vector<SweepRow> sweep_conservativeness(const SweepSpec& spec) {
  if (spec.k_values.empty() || spec.b_values.empty() || spec.tstar_values.empty())
    throw PreconditionError("sweep: parameter ranges must be nonempty");
  std::vector<SweepRow> rows;
  for (double k : spec.k_values)
    for (double b : spec.b_values)
      for (double T : spec.tstar_values) rows.push_back({k, b, T, lk_condition(k, k, b, b, T, T), {}});

  const long count = static_cast<long>(rows.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long r = 0; r < count; ++r) {
    SweepRow& row = rows[r];
    const CoupledTdsModel model = double_integrator_pair({row.k, row.b, 0.0});
    const DelaySignal sig = DelaySignal::sinusoidal(row.tstar, spec.omega);
    try {
      const Trajectory traj = simulate(model, state_from_error(spec.initial), sig, sig, {},
                                       spec.horizon, spec.dt);
      row.stability = classify_stability(traj, spec.stability);
    } catch (const DivergenceError&) {
      row.stability.cls = StabilityClass::growing;
      row.stability.envelope_ratio = std::numeric_limits<double>::infinity();
      row.stability.final_error = std::numeric_limits<double>::infinity();
    }
  }
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "k,b,Tstar,lk_lhs,lk_rhs,lk_ok,class,envelope_ratio\n";
  for (const SweepRow& r : rows) {
    os << format_number(r.k) << ',' << format_number(r.b) << ',' << format_number(r.tstar) << ','
       << format_number(r.lk.lhs) << ',' << format_number(r.lk.rhs) << ','
       << (r.lk.satisfied ? 1 : 0) << ',' << to_string(r.stability.cls) << ','
       << format_number(r.stability.envelope_ratio) << '\n';
  }
}

// ---------------------------------------------------------------------------

// C = T e^{L T} - (e^{L T} - 1) / L, the Gronwall factor multiplying d_max in
// the bound on the gap between true and approximate costs.
inline double theorem2_constant(double L, double T) {
  if (!(T > 0.0)) throw PreconditionError("theorem2_constant: horizon must be positive");
  if (!(L >= 1e-12)) return 0.0;
  const double x = L * T;
  if (x < 1e-3) {
    // Series of T e^x - expm1(x)/L; avoids cancellation for small L T.
    return T * x * (0.5 + x * (1.0 / 3.0 + x / 8.0));
  }
  return T * std::exp(x) - std::expm1(x) / L;
}

// ---------------------------------------------------------------------------
// Monte-Carlo comparison of true delayed costs against the game value.

enum class SampledDelayKind { constant, sinusoidal, piecewise };

struct SampledDelay {
  SampledDelayKind kind = SampledDelayKind::constant;
  double level = 1.0;  // constant: fraction of d_max
  double omega = 0.5;
  double phase = 0.0;
  std::vector<double> piece_levels;  // fractions of d_max

  // Realization for a given bound. Shapes are stored as fractions so the
  // same sample can be replayed at several d_max values.
  DelaySignal realize(double d_max, double horizon) const {
    switch (kind) {
      case SampledDelayKind::constant: {
        DelaySignal s = DelaySignal::constant(d_max);
        s.kind = DelayKind::piecewise_constant;
        s.breaks = {0.0};
        s.levels = {level * d_max};
        return s;
      }
      case SampledDelayKind::sinusoidal:
        return DelaySignal::sinusoidal(d_max, omega, phase);
      case SampledDelayKind::piecewise: {
        std::vector<double> breaks, levels;
        const double seg = horizon / static_cast<double>(piece_levels.size());
        for (std::size_t i = 0; i < piece_levels.size(); ++i) {
          breaks.push_back(seg * static_cast<double>(i));
          levels.push_back(piece_levels[i] * d_max);
        }
        return DelaySignal::piecewise(d_max, breaks, levels);
      }
    }
    return DelaySignal::constant(d_max);
  }
};

struct SandwichOptions {
  int n_samples = 100;
  std::uint64_t seed = 1;
  double horizon = 10.0;  // must match the horizon V_upper was solved over
  double dt = 0.01;
  double tol_fraction = 0.1;  // tolerance = fraction of V's range
  double x0_box = 1.0;        // initial (e_p, e_v) uniform in [-box, box]^2
  int pieces = 5;
};

struct SandwichSample {
  SampledDelay delay;
  ErrorState x0;
};

inline std::vector<SandwichSample> draw_sandwich_samples(const SandwichOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<SandwichSample> out;
  out.reserve(opts.n_samples);
  for (int i = 0; i < opts.n_samples; ++i) {
    SandwichSample s;
    switch (i % 3) {
      case 0:
        s.delay.kind = SampledDelayKind::constant;
        s.delay.level = unit(rng);
        break;
      case 1:
        s.delay.kind = SampledDelayKind::sinusoidal;
        s.delay.omega = 0.1 + 1.9 * unit(rng);
        s.delay.phase = 2.0 * M_PI * unit(rng);
        break;
      default:
        s.delay.kind = SampledDelayKind::piecewise;
        for (int p = 0; p < opts.pieces; ++p) s.delay.piece_levels.push_back(unit(rng));
        break;
    }
    s.x0.e_p = opts.x0_box * (2.0 * unit(rng) - 1.0);
    s.x0.e_v = opts.x0_box * (2.0 * unit(rng) - 1.0);
    out.push_back(s);
  }
  return out;
}

// Integral of e_v^2 along a double-integrator trajectory (trapezoid rule).
inline double velocity_cost(const Trajectory& traj) {
  double J = 0.0;
  for (std::size_t i = 1; i < traj.size(); ++i) {
    const double a = error_state(traj.states[i - 1]).e_v;
    const double b = error_state(traj.states[i]).e_v;
    J += 0.5 * (traj.times[i] - traj.times[i - 1]) * (a * a + b * b);
  }
  return J;
}

struct SandwichRow {
  int sample = 0;
  double J_true = 0.0;
  double V_upper = 0.0;
  double margin = 0.0;  // V_upper - J_true
};

struct SandwichReport {
  std::vector<SandwichRow> rows;
  double tolerance = 0.0;
  int violations = 0;  // margin < -tolerance
  double worst_margin = std::numeric_limits<double>::infinity();
};

// Rolls the TRUE delayed system under `policy` for each sampled delay signal
// and initial state, and compares the accumulated e_v^2 cost with
// V_upper(x0, d(0)).
inline SandwichReport verify_value_sandwich(const ValueFunction& V_upper,
                                            const CoupledTdsModel& model,
                                            const ControlPolicy& policy, double d_max,
                                            const SandwichOptions& opts = {}) {
  if (d_max > V_upper.grid.axes[2].max + 1e-12)
    throw PreconditionError("sandwich: d_max exceeds the value function's delay axis");
  const std::vector<SandwichSample> samples = draw_sandwich_samples(opts);
  SandwichReport rep;
  rep.tolerance = opts.tol_fraction * V_upper.range();
  rep.rows.resize(samples.size());
  const DdeController ctrl = make_dde_controller(policy);
  const long count = static_cast<long>(samples.size());
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long i = 0; i < count; ++i) {
    const SandwichSample& s = samples[i];
    const DelaySignal sig = s.delay.realize(d_max, opts.horizon);
    const Trajectory traj =
        simulate(model, state_from_error(s.x0), sig, sig, ctrl, opts.horizon, opts.dt);
    SandwichRow& row = rep.rows[i];
    row.sample = static_cast<int>(i);
    row.J_true = velocity_cost(traj);
    row.V_upper = V_upper.interpolate({s.x0.e_p, s.x0.e_v, eval_delay(sig, 0.0)});
    row.margin = row.V_upper - row.J_true;
  }
  for (const SandwichRow& r : rep.rows) {
    if (r.margin < -rep.tolerance) ++rep.violations;
    rep.worst_margin = std::min(rep.worst_margin, r.margin);
  }
  return rep;
}

inline void write_sandwich_csv(std::ostream& os, const SandwichReport& rep) {
  os << "sample,J_true,V_upper,margin\n";
  for (const SandwichRow& r : rep.rows) {
    os << r.sample << ',' << format_number(r.J_true) << ',' << format_number(r.V_upper) << ','
       << format_number(r.margin) << '\n';
  }
}

struct GapReport {
  std::vector<double> d_max;
  std::vector<double> worst_gap;
  double slope = 0.0;              // C in gap ~ C d_max
  double relative_residual = 0.0;  // ||gap - C d|| / ||gap||
};

// Worst |J_true(d) - J_true(0)| over shared samples at each delay bound, with
// a least-squares line through the origin.
inline GapReport gap_scaling(const CoupledTdsModel& model, const ControlPolicy& policy,
                             const std::vector<double>& d_max_list,
                             const SandwichOptions& opts = {}) {
  if (d_max_list.size() < 2) throw PreconditionError("gap scaling needs at least two bounds");
  const std::vector<SandwichSample> samples = draw_sandwich_samples(opts);
  const DdeController ctrl = make_dde_controller(policy);
  const long count = static_cast<long>(samples.size());

  std::vector<double> nominal(samples.size());
  std::vector<std::vector<double>> gaps(d_max_list.size(), std::vector<double>(samples.size()));
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
  for (long i = 0; i < count; ++i) {
    const Vec x0 = state_from_error(samples[i].x0);
    const DelaySignal none = DelaySignal::none();
    nominal[i] = velocity_cost(simulate(model, x0, none, none, ctrl, opts.horizon, opts.dt));
    for (std::size_t j = 0; j < d_max_list.size(); ++j) {
      const DelaySignal sig = samples[i].delay.realize(d_max_list[j], opts.horizon);
      const double J = velocity_cost(simulate(model, x0, sig, sig, ctrl, opts.horizon, opts.dt));
      gaps[j][i] = std::abs(J - nominal[i]);
    }
  }

  GapReport rep;
  rep.d_max = d_max_list;
  double sdd = 0.0, sdg = 0.0, sgg = 0.0;
  for (std::size_t j = 0; j < d_max_list.size(); ++j) {
    const double g = *std::max_element(gaps[j].begin(), gaps[j].end());
    rep.worst_gap.push_back(g);
    sdd += d_max_list[j] * d_max_list[j];
    sdg += d_max_list[j] * g;
    sgg += g * g;
  }
  rep.slope = sdg / sdd;
  double res = 0.0;
  for (std::size_t j = 0; j < d_max_list.size(); ++j) {
    const double r = rep.worst_gap[j] - rep.slope * d_max_list[j];
    res += r * r;
  }
  rep.relative_residual = sgg > 0.0 ? std::sqrt(res / sgg) : 0.0;
  return rep;
}

}  // namespace tdgame
