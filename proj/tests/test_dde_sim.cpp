#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "tdgame/analysis.hpp"
#include "tdgame/dde_sim.hpp"
#include "tdgame/experiments.hpp"

using namespace tdgame;

namespace {

Vec s1(double a) {
  Vec x(1);
  x << a;
  return x;
}

// x'' = -x as a pair of independent scalar agents: agent state [x, x'].
CoupledTdsModel oscillator() {
  CoupledTdsModel m;
  m.n = 2;
  m.m = 1;
  auto f = [](const Vec& self, const Vec&, const Vec&) {
    Vec d(2);
    d << self(1), -self(0);
    return d;
  };
  m.f1 = f;
  m.f2 = f;
  return m;
}

}  // namespace

TEST(HistoryBuffer, LinearMidpoint) {
  HistoryBuffer buf(0.0, s1(1.0));
  buf.push(0.0, s1(1.0));
  buf.push(1.0, s1(3.0));
  EXPECT_DOUBLE_EQ(history_lookup(buf, 0.5)(0), 2.0);
}

TEST(HistoryBuffer, PreHistoryConstant) {
  HistoryBuffer buf(0.0, s1(7.0));
  buf.push(0.0, s1(1.0));
  buf.push(1.0, s1(2.0));
  EXPECT_EQ(history_lookup(buf, -5.0)(0), 7.0);
}

TEST(HistoryBuffer, OneStepExtrapolation) {
  HistoryBuffer buf(0.0, s1(0.0));
  buf.push(0.0, s1(0.0));
  buf.push(1.0, s1(2.0));
  EXPECT_DOUBLE_EQ(history_lookup(buf, 1.5)(0), 3.0);
  EXPECT_THROW(history_lookup(buf, 2.5), PreconditionError);
}

TEST(HistoryBuffer, ExactAtSamplesAndForAffineHistories) {
  HistoryBuffer buf(0.0, s1(0.5));
  for (int i = 0; i <= 10; ++i) {
    const double t = 0.1 * i;
    buf.push(t, s1(0.5 + 3.0 * t), s1(3.0));
  }
  for (int i = 0; i <= 10; ++i) EXPECT_EQ(buf.lookup(0.1 * i)(0), 0.5 + 3.0 * (0.1 * i));
  for (double t : {0.05, 0.333, 0.77, 0.99}) EXPECT_NEAR(buf.lookup(t)(0), 0.5 + 3.0 * t, 1e-14);
}

TEST(HistoryBuffer, RejectsNonIncreasingTimes) {
  HistoryBuffer buf(0.0, s1(0.0));
  buf.push(0.0, s1(0.0));
  buf.push(1.0, s1(1.0));
  EXPECT_ANY_THROW(buf.push(1.0, s1(1.0)));
}

TEST(DelaySignal, Evaluations) {
  EXPECT_EQ(eval_delay(DelaySignal::constant(0.25), 17.0), 0.25);
  EXPECT_DOUBLE_EQ(eval_delay(DelaySignal::sinusoidal(0.5, 0.5, 0.0), 0.0), 0.25);
  EXPECT_DOUBLE_EQ(eval_delay(DelaySignal::sinusoidal(0.5, 0.5, 0.0), std::numbers::pi), 0.5);
  EXPECT_EQ(eval_delay(DelaySignal::constant(0.25, 10.0), 9.0), 0.0);
  const DelaySignal pw = DelaySignal::piecewise(0.4, {0.0, 1.0, 2.0}, {0.1, 0.3, 0.9});
  EXPECT_EQ(eval_delay(pw, 1.5), 0.3);
  EXPECT_EQ(eval_delay(pw, 5.0), 0.4);  // clamped to d_max
}

TEST(Simulate, ZeroDelayOscillatorMatchesAnalytic) {
  Vec x0(4);
  x0 << 1.0, 0.0, 0.0, 1.0;
  const double T = 2.0 * std::numbers::pi;
  const Trajectory tr = simulate(oscillator(), x0, DelaySignal::none(), DelaySignal::none(), {},
                                 T, T / 6283.0);
  double err = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double t = tr.times[i];
    err = std::max(err, std::abs(tr.states[i](0) - std::cos(t)));
    err = std::max(err, std::abs(tr.states[i](2) - std::sin(t)));
  }
  EXPECT_LE(err, 1e-6);
}

TEST(Simulate, ZeroDelayEqualsPlainRk4) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const Vec x0 = state_from_error({1.0, 0.3});
  const double dt = 0.01;
  const Trajectory tr = simulate(m, x0, DelaySignal::none(), DelaySignal::none(), {}, 5.0, dt);
  const Vec u = Vec::Zero(2);
  auto f = [&](const Vec& x) { return m.rhs(x, x, x, u); };
  Vec x = x0;
  for (std::size_t i = 1; i < tr.size(); ++i) {
    const Vec k1 = f(x), k2 = f(x + 0.5 * dt * k1), k3 = f(x + 0.5 * dt * k2), k4 = f(x + dt * k3);
    x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    EXPECT_LE((tr.states[i] - x).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Simulate, MethodOfStepsPoints) {
  const CoupledTdsModel m = unit_delay_test_model();
  Vec x0(2);
  x0 << 1.0, 1.0;
  const DelaySignal sig = DelaySignal::constant(1.0);
  const Trajectory tr = simulate(m, x0, sig, sig, {}, 2.0, 1e-3);
  EXPECT_NEAR(tr.states[1000](0), 0.0, 1e-12);
  EXPECT_NEAR(tr.states.back()(0), -0.5, 1e-12);
}

TEST(Simulate, MethodOfStepsOracle) {
  EXPECT_LE(dde_oracle_error(1e-3, 2.0), 1e-5);
  const double coarse = dde_oracle_error(0.02, 6.0);
  const double fine = dde_oracle_error(0.01, 6.0);
  EXPECT_GE(coarse / fine, 8.0);
}

TEST(MethodOfSteps, ClosedForms) {
  const MethodOfSteps x(3);
  EXPECT_DOUBLE_EQ(x(0.4), 0.6);
  EXPECT_DOUBLE_EQ(x(1.5), 1.0 - 1.5 + 0.125);
  EXPECT_DOUBLE_EQ(x(-0.3), 1.0);
}

TEST(Simulate, DelayFreeDampedPairDecays) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), DelaySignal::none(),
                                 DelaySignal::none(), {}, 60.0, 0.01);
  const StabilityVerdict v = classify_stability(tr);
  EXPECT_LT(v.envelope_ratio, 1.0);
  EXPECT_EQ(v.cls, StabilityClass::converged);
  double early = 0.0, late = 0.0;
  for (std::size_t i = 0; i < tr.size(); ++i) {
    const double e = std::abs(error_state(tr.states[i]).e_p);
    if (tr.times[i] < 10.0) early = std::max(early, e);
    if (tr.times[i] > 50.0) late = std::max(late, e);
  }
  EXPECT_LT(late, 0.1 * early);
}

TEST(Simulate, InjectedDelayGrows) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const DelaySignal sig = DelaySignal::constant(0.25);
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), sig, sig, {}, 60.0, 0.01);
  EXPECT_EQ(classify_stability(tr).cls, StabilityClass::growing);
}

TEST(Simulate, EquilibriumStays) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const DelaySignal sig = DelaySignal::constant(0.3);
  const Trajectory tr = simulate(m, Vec::Zero(4), sig, sig, {}, 10.0, 0.01);
  for (const Vec& x : tr.states) EXPECT_EQ(x.norm(), 0.0);
}

TEST(Simulate, TrajectoryInvariants) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const DelaySignal sig = DelaySignal::sinusoidal(0.3, 1.3, 0.2);
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), sig, sig, {}, 7.0, 0.01);
  ASSERT_EQ(tr.size(), 701u);
  ASSERT_EQ(tr.states.size(), tr.size());
  ASSERT_EQ(tr.inputs.size(), tr.size());
  ASSERT_EQ(tr.delays.size(), tr.size());
  for (std::size_t i = 0; i < tr.size(); ++i) {
    EXPECT_DOUBLE_EQ(tr.times[i], 0.01 * static_cast<double>(i));
    for (double d : tr.delays[i]) {
      EXPECT_GE(d, 0.0);
      EXPECT_LE(d, 0.3);
    }
  }
}

TEST(Simulate, PolicyDrivenDelayStaysInRange) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const DelaySignal sig = DelaySignal::policy(0.25, 0.0, [](double t, const Vec&, double) {
    return std::fmod(t, 2.0) < 1.0 ? 0.0 : 20.0;
  });
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), sig, sig, {}, 6.0, 0.01);
  double hi = 0.0;
  for (const auto& d : tr.delays) {
    EXPECT_GE(d[0], 0.0);
    EXPECT_LE(d[0], 0.25);
    hi = std::max(hi, d[0]);
  }
  EXPECT_EQ(hi, 0.25);
}

TEST(Simulate, DivergenceCarriesPartialTrajectory) {
  CoupledTdsModel m;
  m.n = 1;
  m.m = 1;
  auto f = [](const Vec& self, const Vec&, const Vec&) { return Vec(50.0 * self); };
  m.f1 = f;
  m.f2 = f;
  Vec x0(2);
  x0 << 1.0, 1.0;
  try {
    simulate(m, x0, DelaySignal::none(), DelaySignal::none(), {}, 10.0, 0.01);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GT(e.time(), 0.0);
    EXPECT_FALSE(e.partial().empty());
  }
}

TEST(Simulate, ControllerHoldsBetweenSamples) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  int calls = 0;
  DdeController c{[&](const ControlContext& ctx) {
                    ++calls;
                    return inputs_from_error_control(ctx.t);
                  },
                  0.05};
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), DelaySignal::none(),
                                 DelaySignal::none(), c, 1.0, 0.01);
  EXPECT_EQ(calls, 20);
  EXPECT_EQ(tr.inputs[3](0), tr.inputs[0](0));
}

TEST(TrajectoryCsv, Header) {
  const CoupledTdsModel m = double_integrator_pair({1.0, 0.15, 0.4});
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), DelaySignal::none(),
                                 DelaySignal::none(), {}, 0.02, 0.01);
  std::ostringstream os;
  write_trajectory_csv(os, tr, {{"phase", {0, 0, 1}}});
  const std::string s = os.str();
  EXPECT_EQ(s.substr(0, s.find('\n')), "t,e_p,e_v,d,u,v1,p1,v2,p2,phase");
  EXPECT_EQ(std::count(s.begin(), s.end(), '\n'), 4);
}
