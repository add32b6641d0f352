#include "mpfc/sim.hpp"

#include <random>
#include <sstream>

#include <Eigen/Dense>
#include <gtest/gtest.h>

namespace mpfc {
namespace {

// ------------------------------------------------------------- com plane

TEST(ComPlane, FlatStepIsLevel) {
  EXPECT_LE(com_plane(Vec3(0.4, 0.2, 0.0)).norm(), 1e-15);
}

TEST(ComPlane, HandSolvedStepUp) {
  const Vec2 k = com_plane(Vec3(0.5, 0.0, 0.1));
  EXPECT_NEAR(k.x(), 0.2, 1e-15);
  EXPECT_NEAR(k.y(), 0.0, 1e-15);
}

TEST(ComPlane, PassesThroughTheStep) {
  std::mt19937 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int i = 0; i < 100; ++i) {
    const Vec3 p(u(rng), u(rng), 0.3 * u(rng));
    const Vec2 k = com_plane(p);
    EXPECT_NEAR(k.x() * p.x() + k.y() * p.y(), p.z(), 1e-12);
    // Least inclined: no slope across the step direction.
    EXPECT_NEAR(-k.x() * p.y() + k.y() * p.x(), 0.0, 1e-12);
  }
}

TEST(ComPlane, DegenerateStepThrows) {
  EXPECT_THROW(com_plane(Vec3(0.0, 0.0, 0.1)), DegenerateStep);
}

// --------------------------------------------------------------- splines

// Independent oracle: with the junction derivatives fixed, each degree 7
// segment is pinned by eight conditions; the snap integral is then
// integrated by composite Simpson.
double pinned_snap_cost(double w0, double w1, double w2, double h, const Eigen::Vector3d& d) {
  auto segment = [&](double p0, const Eigen::Vector3d& d0, double p1, const Eigen::Vector3d& d1) {
    Eigen::Matrix<double, 8, 8> A = Eigen::Matrix<double, 8, 8>::Zero();
    Eigen::Matrix<double, 8, 1> b;
    auto deriv_row = [&](double t, int k) {
      Eigen::Matrix<double, 1, 8> r = Eigen::Matrix<double, 1, 8>::Zero();
      for (int i = k; i < 8; ++i) {
        double c = 1;
        for (int j = 0; j < k; ++j) c *= i - j;
        r(i) = c * std::pow(t, i - k);
      }
      return r;
    };
    for (int k = 0; k < 4; ++k) {
      A.row(k) = deriv_row(0.0, k);
      A.row(4 + k) = deriv_row(h, k);
      b(k) = k == 0 ? p0 : d0(k - 1);
      b(4 + k) = k == 0 ? p1 : d1(k - 1);
    }
    const Eigen::Matrix<double, 8, 1> c = A.fullPivLu().solve(b);
    const int n = 2000;
    double s = 0;
    for (int i = 0; i <= n; ++i) {
      const double t = h * i / n;
      const double snap = deriv_row(t, 4).dot(c);
      s += (i == 0 || i == n ? 1 : (i % 2 ? 4 : 2)) * snap * snap;
    }
    return s * h / (3 * n);
  };
  const Eigen::Vector3d rest = Eigen::Vector3d::Zero();
  return segment(w0, rest, w1, d) + segment(w1, d, w2, rest);
}

TEST(MinSnapSpline, ConstantWaypointsGiveConstantSpline) {
  const Vec3 w(0.3, -0.2, 0.1);
  const SwingSpline s = min_snap_spline(w, w, w, 0.3);
  EXPECT_LE(s.snap_cost(), 1e-18);
  for (double t = 0; t <= 0.3; t += 0.01) EXPECT_LE((s.eval(t) - w).norm(), 1e-12);
}

TEST(MinSnapSpline, BoundaryConditions) {
  const Vec3 w0(0, -0.2, 0), w2(0.4, -0.2, 0.15);
  const Vec3 w1 = swing_apex_point(w0, w2, 0.07);
  EXPECT_NEAR(w1.z(), 0.22, 1e-15);
  const double T = 0.3;
  const SwingSpline s = min_snap_spline(w0, w1, w2, T);
  EXPECT_LE((s.eval(0) - w0).norm(), 1e-9);
  EXPECT_LE((s.eval(T / 2) - w1).norm(), 1e-9);
  EXPECT_LE((s.eval(T) - w2).norm(), 1e-9);
  for (int k = 1; k <= 3; ++k) {
    EXPECT_LE(s.eval(0, k).norm(), 1e-9 * std::pow(T, -k)) << k;
    EXPECT_LE(s.eval(T, k).norm(), 1e-9 * std::pow(T, -k)) << k;
  }
  // C4 across the junction.
  ASSERT_EQ(s.segments.size(), 2u);
  const double h = s.segments[0].duration;
  for (int k = 0; k <= 4; ++k) {
    const Vec3 left = s.eval(h - 1e-12, k), right = s.eval(h, k);
    EXPECT_LE((left - right).norm(), 1e-6 * (1 + right.norm())) << k;
  }
}

TEST(MinSnapSpline, JunctionPerturbationNeverLowersSnap) {
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    const Vec3 w0(u(rng), u(rng), 0.1 * u(rng)), w2(u(rng), u(rng), 0.1 * u(rng));
    const Vec3 w1 = swing_apex_point(w0, w2, 0.07);
    const double T = 0.3 + 0.2 * u(rng);
    const SwingSpline s = min_snap_spline(w0, w1, w2, T);
    const double h = T / 2;
    for (int axis = 0; axis < 3; ++axis) {
      Eigen::Vector3d d;
      for (int k = 1; k <= 3; ++k) d(k - 1) = s.eval(h, k)(axis);
      const double best = pinned_snap_cost(w0(axis), w1(axis), w2(axis), h, d);
      // Spline's own cost agrees with the quadrature.
      SwingSpline one = s;
      for (auto& seg : one.segments)
        for (int a = 0; a < 3; ++a)
          if (a != axis) seg.coeffs.col(a).setZero();
      EXPECT_NEAR(one.snap_cost(), best, 1e-6 * best + 1e-9);
      for (int k = 0; k < 3; ++k) {
        for (double delta : {1e-3, -1e-3}) {
          Eigen::Vector3d dp = d;
          dp(k) += delta;
          EXPECT_GE(pinned_snap_cost(w0(axis), w1(axis), w2(axis), h, dp), best)
              << "axis " << axis << " derivative " << k + 1;
        }
      }
    }
  }
}

TEST(RetargetSpline, ContinuesFromCurrentState) {
  const SwingSpline s = min_snap_spline(Vec3(0, 0, 0), Vec3(0.2, 0, 0.07), Vec3(0.4, 0, 0), 0.3);
  const double t = 0.2;
  const std::array<Vec3, 4> start = {s.eval(t, 0), s.eval(t, 1), s.eval(t, 2), s.eval(t, 3)};
  const Vec3 w2(0.45, 0.05, 0.02);
  const SwingSpline r = retarget_spline(start, std::nullopt, w2, 0.1);
  for (int k = 0; k < 4; ++k) {
    EXPECT_LE((r.eval(0, k) - start[k]).norm(), 1e-9 * (1 + start[k].norm())) << k;
  }
  EXPECT_LE((r.eval(0.1) - w2).norm(), 1e-9);
  for (int k = 1; k <= 3; ++k) EXPECT_LE(r.eval(0.1, k).norm(), 1e-6) << k;
}

// ------------------------------------------------------------- scenarios

SimConfig flat(double vx, double duration) {
  SimConfig c;
  c.footholds = {box_foothold(Vec2(-3, -3), Vec2(40, 3), 0.0)};
  c.commands = {{0.0, Vec2(vx, 0.0)}};
  c.duration = duration;
  return c;
}

TEST(Simulator, SteppingInPlaceStaysOnReference) {
  SimConfig c;
  c.footholds = {box_foothold(Vec2(-3, -3), Vec2(3, 3), 0.0)};
  c.duration = 20 * c.controller.timing.step_period();
  const SimResult r = run_scenario(c);
  ASSERT_TRUE(r.success) << r.failure;
  ASSERT_EQ(r.touchdowns.size(), 20u);
  GaitCommand g;
  for (const Touchdown& td : r.touchdowns) {
    g.stance = td.step % 2 == 0 ? Stance::kRight : Stance::kLeft;
    const AlipState ref = periodic_reference(g, c.controller.params, c.controller.timing).initial_state;
    EXPECT_LT((td.x_plus - ref).norm(), 1e-6) << "step " << td.step;
  }
  for (const TickLog& t : r.ticks) EXPECT_LT(std::abs(t.u), 1e-6);
}

TEST(Simulator, LogLengthMatchesDuration) {
  SimConfig c = flat(0.0, 1.0);
  c.commands.clear();
  std::ostringstream out;
  const SimResult r = run_scenario(c, &out);
  EXPECT_EQ(r.ticks.size(), 100u);
  const std::string text = out.str();
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 100);
}

TEST(Simulator, ResetMatchesModelAtEveryTouchdown) {
  SimConfig c = flat(0.5, 4.0);
  c.start_on_reference = false;
  const SimResult r = run_scenario(c);
  ASSERT_TRUE(r.success) << r.failure;
  const ResetMap reset = reset_map(c.plant_params, c.controller.timing.double_stance);
  for (const Touchdown& td : r.touchdowns) {
    EXPECT_LE((td.x_plus - reset.apply(td.x_minus, td.p_minus, td.position)).cwiseAbs().maxCoeff(),
              1e-9);
    EXPECT_LE((td.position - td.commanded).norm(), 1e-9);
  }
}

TEST(Simulator, TrackingErrorDecaysOnFlatGround) {
  SimConfig c = flat(0.5, 6.0);
  c.start_on_reference = false;
  const SimResult r = run_scenario(c);
  ASSERT_TRUE(r.success) << r.failure;
  ASSERT_GT(r.step_errors.size(), 8u);
  for (size_t n = 3; n < r.step_errors.size(); ++n) {
    EXPECT_LE(r.step_errors[n], r.step_errors[n - 1] + 1e-12) << n;
  }
}

TEST(Simulator, RecoversFromLateralImpulseWithinFourSteps) {
  SimConfig c = flat(0.3, 5.0);
  const double impulse = 0.15 * c.plant_params.mass * c.plant_params.com_height;
  const double t_hit = 5 * c.controller.timing.step_period() + 0.15;  // mid-stance
  c.disturbances = {{t_hit, Vec2(0.0, impulse)}};
  const SimResult r = run_scenario(c);
  ASSERT_TRUE(r.success) << r.failure;
  double e0 = 0;
  for (const TickLog& t : r.ticks) {
    if (t.time >= t_hit - 1e-9 && t.phase == Phase::kSingleStance) {
      e0 = t.reference_error;
      break;
    }
  }
  // The tick log holds the state after the tick; recompute from the jump.
  e0 = std::max(e0, impulse / (c.plant_params.mass * c.plant_params.com_height));
  int steps = 0;
  bool recovered = false;
  for (size_t n = 0; n < r.touchdowns.size(); ++n) {
    if (r.touchdowns[n].time < t_hit) continue;
    ++steps;
    if (r.step_errors[n] < 0.05 * e0) {
      recovered = true;
      break;
    }
  }
  EXPECT_TRUE(recovered);
  EXPECT_LE(steps, 4);
}

void expect_stairs(double tread, int flights, double speed, double duration) {
  SimConfig c;
  c.footholds = stair_footholds(tread, 0.15, flights, flights, 2.0, 2.0, 6.0, 0.05);
  c.commands = {{0.0, Vec2(speed, 0.0)}};
  c.duration = duration;
  c.start_position = Vec3(-1.0, 0.0, 0.0);
  const SimResult r = run_scenario(c);
  ASSERT_TRUE(r.success) << r.failure;
  EXPECT_LE(r.max_violation, 1e-6);
  EXPECT_NEAR(r.mean_velocity.x(), speed, 0.1 * speed);
  double top = 0;
  for (const Touchdown& td : r.touchdowns) {
    top = std::max(top, td.position.z());
    EXPECT_GE(td.foothold, 0);
  }
  EXPECT_NEAR(top, 0.15 * flights, 1e-9) << "did not reach the top tread";
  EXPECT_NEAR(r.touchdowns.back().position.z(), 0.0, 1e-9) << "did not come back down";
}

TEST(Simulator, MeterStairsAtThreeQuarterSpeed) { expect_stairs(1.0, 3, 0.75, 10.0); }

TEST(Simulator, HalfMeterStairsAtHalfSpeed) { expect_stairs(0.5, 4, 0.5, 10.0); }

TEST(Simulator, SameSeedSameLog) {
  SimConfig c = flat(0.4, 2.0);
  c.plant_perturbation = 0.1;
  c.seed = 42;
  c.disturbances = {{0.7, Vec2(1.0, -2.0)}};
  std::ostringstream a, b;
  run_scenario(c, &a);
  run_scenario(c, &b);
  EXPECT_EQ(a.str(), b.str());
  c.seed = 43;
  std::ostringstream d;
  run_scenario(c, &d);
  EXPECT_NE(a.str(), d.str());
}

TEST(Simulator, PerturbedPlantStillWalks) {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    SimConfig c = flat(0.5, 6.0);
    c.plant_perturbation = 0.1;
    c.seed = seed;
    const SimResult r = run_scenario(c);
    ASSERT_TRUE(r.success) << r.failure;
    // No integral action: model error leaves a steady speed offset.
    EXPECT_NEAR(r.mean_velocity.x(), 0.5, 0.25);
  }
}

TEST(Simulator, TurnsWithYawRate) {
  SimConfig c = flat(0.3, 4.0);
  c.footholds = {box_foothold(Vec2(-10, -10), Vec2(10, 10), 0.0)};
  c.commands[0].yaw_rate = 0.3;
  const SimResult r = run_scenario(c);
  ASSERT_TRUE(r.success) << r.failure;
  EXPECT_NEAR(r.ticks.back().heading, 0.3 * 0.4 * r.steps, 1e-9);
}

TEST(Simulator, CommandsAreClamped) {
  SimConfig c = flat(0.0, 0.1);
  Simulator sim(c);
  CommandPoint cmd;
  cmd.velocity = Vec2(3.0, 4.0);
  cmd.yaw_rate = -2.0;
  const TickLog log = sim.step(cmd);
  EXPECT_NEAR(log.command.velocity.norm(), c.velocity_limit, 1e-12);
  EXPECT_NEAR(log.command.velocity.x() / log.command.velocity.y(), 0.75, 1e-12);
  EXPECT_EQ(log.command.yaw_rate, -c.yaw_rate_limit);
}

TEST(Simulator, FallsBackToPreviousPlanThenFails) {
  SimConfig c = flat(0.3, 1.0);
  Simulator sim(c);
  for (int i = 0; i < 5; ++i) ASSERT_TRUE(sim.step(sim.scripted_command()).solved);
  const Vec3 target = sim.state().target;
  sim.set_footholds({box_foothold(Vec2(20, 20), Vec2(21, 21), 0.0)});
  const TickLog log = sim.step(sim.scripted_command());
  EXPECT_TRUE(log.fallback);
  EXPECT_LE((sim.state().target - target).norm(), 1e-12);
  // The previous plan has no solution of its own; running out of it fails.
  EXPECT_THROW(
      {
        for (int i = 0; i < 200; ++i) sim.step(sim.scripted_command());
      },
      ControllerFailure);
}

TEST(Simulator, NoPlanAtAllFails) {
  SimConfig c = flat(0.3, 1.0);
  c.footholds = {box_foothold(Vec2(20, 20), Vec2(21, 21), 0.0)};
  Simulator sim(c);
  EXPECT_THROW(sim.step(sim.scripted_command()), ControllerFailure);
}

// ---------------------------------------------------------------- config

TEST(SimConfig, RejectsBadPeriod) {
  SimConfig c = flat(0.0, 1.0);
  c.controller_period = 0.007;
  EXPECT_THROW(c.validate(), ConfigError);
  c.controller_period = 0.2;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Scenario, ParsesStairsDocument) {
  const Json j = parse_json(R"({
    "duration": 2.0,
    "seed": 7,
    "terrain": {"stairs": {"tread": 1.0, "rise": 0.15, "up": 2, "down": 2}},
    "commands": [{"time": 0, "velocity": [0.75, 0]}],
    "disturbances": [{"time": 1.0, "impulse": [0, 1.5]}],
    "controller": {"Q": [1, 1, 0.1, 0.1], "timing": {"horizon": 3}}
  })");
  const SimConfig c = scenario_from_json(j);
  EXPECT_EQ(c.footholds.size(), 6u);
  EXPECT_EQ(c.seed, 7u);
  EXPECT_EQ(c.disturbances.size(), 1u);
  EXPECT_EQ(c.commands[0].velocity, Vec2(0.75, 0));
}

TEST(Scenario, RejectsMissingTerrain) {
  EXPECT_THROW(scenario_from_json(parse_json(R"({"duration": 1})")), ConfigError);
  EXPECT_THROW(scenario_from_json(parse_json(R"({"terrain": {"flat": {}}, "duration": "x"})")),
               ConfigError);
  EXPECT_THROW(parse_json("{\"a\": "), ConfigError);
}

}  // namespace
}  // namespace mpfc
