#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "tdgame/experiments.hpp"
#include "tdgame/policy.hpp"

using namespace tdgame;

namespace {

HamiltonianSpec game_spec() {
  HamiltonianSpec s;
  s.model = {1.0, 0.15, 0.4};
  s.d_max = 0.25;
  return s;
}

const Grid& test_grid() {
  static const Grid g = Grid::make({-2.4, 2.4, 31}, {-5.0, 5.0, 31}, {0.0, 0.25, 6});
  return g;
}

std::shared_ptr<const ValueFunction> solved() {
  static const auto V = std::make_shared<ValueFunction>(
      solve_delay_game(test_grid(), game_spec(), CostSpec::stabilization(), 5.0).final_value());
  return V;
}

ValueFunction field(const std::function<double(const Point&)>& f) {
  const Grid& g = test_grid();
  ValueFunction V{g, std::vector<double>(g.size()), 0.0};
  for (std::size_t n = 0; n < g.size(); ++n) V.values[n] = f(g.point(n));
  return V;
}

}  // namespace

TEST(GradValue, LinearField) {
  const ValueFunction V = field([](const Point& x) { return x[0]; });
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> U(-0.9, 0.9);
  for (int i = 0; i < 200; ++i) {
    const GradientSample g = grad_value(V, {2.4 * U(rng), 5.0 * U(rng), 0.125 + 0.1 * U(rng)});
    EXPECT_NEAR(g.p[0], 1.0, 1e-10);
    EXPECT_NEAR(g.p[1], 0.0, 1e-10);
    EXPECT_NEAR(g.p[2], 0.0, 1e-10);
    EXPECT_FALSE(g.clamped);
  }
}

TEST(GradValue, QuadraticField) {
  const ValueFunction V = field([](const Point& x) { return x[0] * x[0]; });
  const double h = test_grid().spacing(0);
  EXPECT_NEAR(grad_value(V, {1.0, 0.3, 0.1}).p[0], 2.0, h * h);
}

TEST(GradValue, OutsideHullIsClamped) {
  const ValueFunction V = field([](const Point& x) { return x[0] * x[0] + x[1]; });
  const GradientSample out = grad_value(V, {9.0, 1.0, 0.1});
  const GradientSample edge = grad_value(V, {2.4, 1.0, 0.1});
  EXPECT_TRUE(out.clamped);
  EXPECT_EQ(out.p, edge.p);
}

TEST(OptimalControl, SignRule) {
  const ValueFunction up = field([](const Point& x) { return x[1]; });
  const ValueFunction down = field([](const Point& x) { return -x[1]; });
  const ValueFunction flat = field([](const Point& x) { return x[0]; });
  EXPECT_EQ(optimal_control(up, {0.1, 0.2, 0.1}, 0.4), -0.4);
  EXPECT_EQ(optimal_control(down, {0.1, 0.2, 0.1}, 0.4), 0.4);
  EXPECT_EQ(optimal_control(flat, {0.1, 0.2, 0.1}, 0.4), 0.0);
}

TEST(OptimalControl, OddSymmetryOnSolvedValue) {
  const auto V = solved();
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  int mismatches = 0;
  for (int i = 0; i < 500; ++i) {
    const Point x{2.0 * U(rng), 4.0 * U(rng), 0.125 * (1.0 + U(rng))};
    if (optimal_control(*V, x, 0.4) != -optimal_control(*V, {-x[0], -x[1], x[2]}, 0.4)) ++mismatches;
  }
  EXPECT_EQ(mismatches, 0);
}

TEST(OptimalControl, ScaleInvariantAndSaturated) {
  const auto V = solved();
  ValueFunction scaled = *V;
  for (double& v : scaled.values) v *= 3.7;
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const Point x{2.4 * U(rng), 5.0 * U(rng), 0.125 * (1.0 + U(rng))};
    const double u = optimal_control(*V, x, 0.4);
    EXPECT_EQ(u, optimal_control(scaled, x, 0.4));
    EXPECT_LE(std::abs(u), 0.4);
  }
}

TEST(OptimalAdversary, TieHoldsDelay) {
  const ValueFunction V = field([](const Point& x) { return x[0]; });
  const AdversaryAction a = optimal_adversary(V, {0.1, 0.2, 0.2}, game_spec());
  EXPECT_DOUBLE_EQ(a.w_d, 1.0 / 0.2);
  EXPECT_EQ(a.w, 0.0);
}

TEST(OptimalAdversary, MatchesCornerEnumeration) {
  const auto V = solved();
  const HamiltonianSpec spec = game_spec();
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> U(-1.0, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const Point x{2.4 * U(rng), 5.0 * U(rng), 0.125 * (1.0 + U(rng))};
    const Costate p = grad_value(*V, x).p;
    const AdversaryAction a = optimal_adversary(*V, x, spec);
    const Point fa = game_dynamics(spec, x, {0.0, a.w, a.w_d});
    const double chosen = p[1] * fa[1] + p[2] * fa[2];
    double best = -1e300;
    const double wm = spec.L_w * x[2];
    for (double w : {-wm, 0.0, wm})
      for (double wd : {0.0, 0.5 * spec.w_rate_max, spec.w_rate_max}) {
        const Point f = game_dynamics(spec, x, {0.0, w, wd});
        best = std::max(best, p[1] * f[1] + p[2] * f[2]);
      }
    EXPECT_NEAR(chosen, best, 1e-12 * std::max(1.0, std::abs(best)));
  }
}

TEST(OptimalAdversary, DelayStaysNearlyConstantInRollout) {
  const auto V = solved();
  const HamiltonianSpec spec = game_spec();
  const ApproxRollout r = rollout_approx(
      spec, {1.0, 0.0, 0.25}, [&](double, const Point& x) { return optimal_control(*V, x, 0.4); },
      [&](double, const Point& x) {
        const AdversaryAction a = optimal_adversary(*V, x, spec);
        return SaddleInputs{0.0, a.w, a.w_d};
      },
      CostSpec::stabilization(), 5.0, 0.01);
  double mean = 0.0;
  for (const Point& x : r.x) mean += x[2];
  mean /= static_cast<double>(r.x.size());
  double var = 0.0;
  for (const Point& x : r.x) var += (x[2] - mean) * (x[2] - mean);
  const double sd = std::sqrt(var / static_cast<double>(r.x.size()));
  RecordProperty("delay_sd", std::to_string(sd));
  EXPECT_LT(sd, 0.2 * spec.d_max);
}

TEST(SampledConsistency, RolloutCostBelowValue) {
  // Forward rollouts of the approximate game from grid nodes, under u* and a
  // handful of adversary strategies, never cost more than V + 10% of range.
  const auto V = solved();
  const HamiltonianSpec spec = game_spec();
  const Grid& g = test_grid();
  std::vector<ApproxAdversary> adversaries;
  adversaries.push_back([&](double, const Point& x) {
    const AdversaryAction a = optimal_adversary(*V, x, spec);
    return SaddleInputs{0.0, a.w, a.w_d};
  });
  for (double ws : {-1.0, 1.0})
    for (double wd : {0.0, 20.0})
      adversaries.push_back([=](double, const Point& x) { return SaddleInputs{0.0, ws * 5.0 * x[2], wd}; });
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> I(5, 25), K(0, 5);
  const double tol = 0.1 * V->range();
  for (int s = 0; s < 20; ++s) {
    const Point x0 = g.point(I(rng), I(rng), K(rng));
    double worst = 0.0;
    for (const auto& adv : adversaries) {
      const ApproxRollout r = rollout_approx(
          spec, x0, [&](double, const Point& x) { return optimal_control(*V, x, 0.4); }, adv,
          CostSpec::stabilization(), 5.0, 0.01);
      worst = std::max(worst, r.running_cost);
    }
    EXPECT_LE(worst, V->interpolate(x0) + tol) << "node " << x0[0] << "," << x0[1] << "," << x0[2];
  }
}

TEST(DdeController, ZeroPolicyMatchesUncontrolled) {
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  const DelaySignal sig = DelaySignal::constant(0.2);
  const Vec x0 = state_from_error({1.0, 0.0});
  const Trajectory a = simulate(m, x0, sig, sig, make_dde_controller(ControlPolicy::zero()), 10.0, 0.01);
  const Trajectory b = simulate(m, x0, sig, sig, {}, 10.0, 0.01);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a.states[i], b.states[i]);
}

TEST(DdeController, ConstantPolicyInputColumn) {
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), DelaySignal::none(), DelaySignal::none(),
                                 make_dde_controller(ControlPolicy::constant_input(0.4, 0.4)), 3.0, 0.01);
  for (const Vec& u : tr.inputs) EXPECT_DOUBLE_EQ(u(0) - u(1), 0.4);
}

TEST(DdeController, SaturatesConstantInput) {
  EXPECT_EQ(ControlPolicy::constant_input(2.0, 0.4).evaluate(0.0, {0, 0}, 0.0), 0.4);
}

TEST(DdeController, HoldMatchesPerStepWhenEqualToDt) {
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  ControlPolicy p = ControlPolicy::from_value(solved(), 0.4, 0.01);
  const DelaySignal sig = DelaySignal::sinusoidal(0.25);
  const Vec x0 = state_from_error({1.0, 0.0});
  const Trajectory held = simulate(m, x0, sig, sig, make_dde_controller(p), 5.0, 0.01);
  p.dt_ctrl = 0.0;
  const Trajectory every = simulate(m, x0, sig, sig, make_dde_controller(p), 5.0, 0.01);
  for (std::size_t i = 0; i < held.size(); ++i) EXPECT_EQ(held.inputs[i], every.inputs[i]);
}

TEST(DdeController, ActivationTime) {
  const ControlPolicy p = ControlPolicy::from_value(solved(), 0.4, 0.05, 45.0);
  EXPECT_EQ(p.evaluate(44.9, {1.0, 1.0}, 0.1), 0.0);
  EXPECT_NE(p.evaluate(45.0, {1.0, 1.0}, 0.1), 0.0);
  EXPECT_THROW(ControlPolicy::from_value(nullptr, 0.4), ConfigError);
}

TEST(AdversaryPolicy, SignalsStayInRange) {
  AdversaryPolicy a;
  a.spec = game_spec();
  a.source = AdversarySource::value_function;
  a.value = solved();
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  const DelaySignal sig = a.delay_signal(0.1);
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.0}), sig, sig, {}, 5.0, 0.01);
  for (const auto& d : tr.delays) {
    EXPECT_GE(d[0], 0.0);
    EXPECT_LE(d[0], 0.25);
  }
}
