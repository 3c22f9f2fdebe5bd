#include <gtest/gtest.h>

#include <cmath>

#include "tdgame/affine_approx.hpp"

using namespace tdgame;

namespace {

Vec v2(double a, double b) {
  Vec x(2);
  x << a, b;
  return x;
}
Vec s1(double a) {
  Vec x(1);
  x << a;
  return x;
}

CoupledTdsModel scalar_model(AgentRhs f) {
  CoupledTdsModel m;
  m.n = 1;
  m.m = 1;
  m.f1 = f;
  m.f2 = std::move(f);
  return m;
}

// Plugs y back into the constraints.
double constraint_defect(const CoupledTdsModel& m, const Vec& x1, const Vec& x2, double d1,
                         double d2, const Vec& u1, const Vec& u2, const ConstraintSolution& s) {
  const Vec r1 = m.f1(x1, m.estimate(x2, s.y2, d2), u1) - s.y1;
  const Vec r2 = m.f2(x2, m.estimate(x1, s.y1, d1), u2) - s.y2;
  return std::max(r1.cwiseAbs().maxCoeff(), r2.cwiseAbs().maxCoeff());
}

}  // namespace

TEST(SolveConstraints, DelayFreeIsDirectEvaluation) {
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  const Vec x1 = v2(0.3, 1.0), x2 = v2(-0.2, 0.1), u1 = s1(0.2), u2 = s1(-0.1);
  const Vec w1 = v2(0.01, 0.0), w2 = v2(-0.02, 0.0);
  const ConstraintSolution s = solve_constraints(m, x1, x2, 0.0, 0.0, u1, u2, w1, w2);
  EXPECT_EQ(s.iterations, 1);
  EXPECT_EQ((s.y1 - (m.f1(x1, x2, u1) + w1)).norm(), 0.0);
  EXPECT_EQ((s.y2 - (m.f2(x2, x1, u2) + w2)).norm(), 0.0);
}

TEST(SolveConstraints, DoubleIntegratorClosedForm) {
  const auto m = double_integrator_pair({1.0, 0.0, 0.4});
  const Vec x = state_from_error({1.0, 0.0});
  const Vec u = Vec::Zero(1);
  const ConstraintSolution s = solve_constraints(m, x.head(2), x.tail(2), 0.5, 0.5, u, u);
  EXPECT_NEAR(s.y1(0) - s.y2(0), -2.0 / 1.125, 1e-13);
}

TEST(SolveConstraints, MatchesPolynomialModel) {
  const double k = 0.8, b = 0.15, d1 = 0.3, d2 = 0.17;
  const auto m = double_integrator_pair({k, b, 0.4});
  const PolynomialDelayModel pm = polynomial_delay_matrices(k, b, d1, d2);
  Eigen::Vector4d x(0.3, -0.7, 0.5, 0.2);
  Eigen::Vector2d u(0.1, -0.3);
  const Eigen::Vector4d dx = pm.A * x + pm.B * u;
  const ConstraintSolution s = solve_constraints(m, x.head(2), x.tail(2), d1, d2, s1(u(0)), s1(u(1)));
  EXPECT_NEAR(s.y1(0), dx(0), 1e-12);
  EXPECT_NEAR(s.y1(1), dx(1), 1e-12);
  EXPECT_NEAR(s.y2(0), dx(2), 1e-12);
  EXPECT_NEAR(s.y2(1), dx(3), 1e-12);
  EXPECT_LE(constraint_defect(m, x.head(2), x.tail(2), d1, d2, s1(u(0)), s1(u(1)), s), 1e-10);
}

TEST(SolveConstraints, NonlinearFixedPointAgainstBisection) {
  const auto m = scalar_model([](const Vec&, const Vec& other, const Vec&) {
    return Vec(-other.array().cube().matrix());
  });
  const double x = 0.8, d = 0.1;
  const ConstraintSolution s = solve_constraints(m, s1(x), s1(x), d, d, s1(0), s1(0));
  // Symmetric data: y solves g(y) = y + (x - y d)^3 = 0, increasing on the bracket.
  double lo = -2.0, hi = 0.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    (mid + std::pow(x - mid * d, 3) > 0.0 ? hi : lo) = mid;
  }
  EXPECT_NEAR(s.y1(0), 0.5 * (lo + hi), 1e-9);
  EXPECT_NEAR(s.y2(0), 0.5 * (lo + hi), 1e-9);
  EXPECT_LE(constraint_defect(m, s1(x), s1(x), d, d, s1(0), s1(0), s), 1e-10);
}

TEST(SolveConstraints, ReportsNonConvergence) {
  const auto m = scalar_model([](const Vec&, const Vec& other, const Vec&) {
    return Vec(-(other.array().cube() * 50.0).matrix());
  });
  ConstraintSolveOptions o;
  o.max_iterations = 20;
  EXPECT_THROW(solve_constraints(m, s1(2.0), s1(-1.5), 0.9, 0.9, s1(0), s1(0), s1(0), s1(0), o),
               ConstraintSolveError);
}

TEST(ResidualW, ZeroDelayIsZero) {
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  const Trajectory tr = simulate(m, state_from_error({1.0, 0.5}), DelaySignal::none(),
                                 DelaySignal::none(), {}, 10.0, 0.01);
  const ResidualRecord r = residual_w(m, tr);
  ASSERT_EQ(r.w_norms.size(), tr.size());
  EXPECT_LE(r.max_norm(), 1e-12);
}

TEST(ResidualW, AffineInTimeStatesAreExact) {
  // x1 = x2 = t with f = 1 + beta (other - self + d0): the true delayed flow
  // gives f = 1, and the first-order estimate is exact for affine states.
  const double d0 = 0.2, beta = 0.7;
  const auto m = scalar_model([=](const Vec& self, const Vec& other, const Vec&) {
    return Vec(s1(1.0 + beta * (other(0) - self(0) + d0)));
  });
  Trajectory tr;
  tr.n = 1;
  tr.m = 1;
  for (int i = 0; i <= 200; ++i) {
    const double t = 0.01 * i;
    tr.times.push_back(t);
    tr.states.push_back(v2(t, t));
    tr.inputs.push_back(Vec::Zero(2));
    tr.delays.push_back({d0, d0});
  }
  const ResidualRecord r = residual_w(m, tr);
  for (std::size_t i = 0; i < r.times.size(); ++i)
    if (r.times[i] >= d0) EXPECT_LE(r.w_norms[i], 1e-10) << "t=" << r.times[i];
}

TEST(ResidualW, QuadraticScalingWhenHalvingDelay) {
  const auto m = double_integrator_pair({1.0, 0.15, 0.4});
  auto peak = [&](double d) {
    const DelaySignal sig = DelaySignal::constant(d);
    return residual_w(m, simulate(m, state_from_error({1.0, 0.0}), sig, sig, {}, 10.0, 1e-3))
        .max_norm();
  };
  const double ratio = peak(0.2) / peak(0.1);
  EXPECT_GT(ratio, 3.2);
  EXPECT_LT(ratio, 5.2);
}

TEST(ResidualFit, ExponentNearTwo) {
  const ResidualFit f =
      estimate_residual_constant(double_integrator_pair({1.0, 0.15, 0.4}), {0.2, 0.1, 0.05});
  EXPECT_GE(f.exponent, 1.8);
  EXPECT_LE(f.exponent, 2.2);
  EXPECT_FALSE(f.exact);
  EXPECT_EQ(f.pair_exponents.size(), 2u);
}

TEST(ResidualFit, LinearTrajectoryFlagsExact) {
  const auto m = scalar_model([](const Vec&, const Vec&, const Vec&) { return s1(1.0); });
  ResidualScenario sc;
  sc.x0 = v2(0.0, 0.0);
  sc.horizon = 2.0;
  sc.dt = 0.01;
  EXPECT_TRUE(estimate_residual_constant(m, {0.2, 0.1, 0.05}, sc).exact);
}

TEST(ResidualFit, RejectsShortDelayList) {
  EXPECT_THROW(estimate_residual_constant(double_integrator_pair({1.0, 0.15, 0.4}), {0.1}),
               PreconditionError);
}

TEST(ResidualCsv, Header) {
  ResidualRecord r{{0.0, 0.5}, {0.0, 1e-3}, {0.0, 0.1}};
  std::ostringstream os;
  write_residual_csv(os, r);
  EXPECT_EQ(os.str(), "t,d,w_norm\n0,0,0\n0.5,0.1,0.001\n");
}
