#include "mpfc/mpfc.hpp"

#include <random>

#include <gtest/gtest.h>

#include "support/mpfc_oracle.hpp"

namespace mpfc {
namespace {

using testing::rectangle_foothold;

MpfcConfig config(int horizon = 3) {
  MpfcConfig cfg;
  cfg.timing.horizon = horizon;
  return cfg;
}

GaitCommand walk(double vx, double vy = 0.0) {
  GaitCommand cmd;
  cmd.velocity = Vec2(vx, vy);
  return cmd;
}

// Checks the invariants every returned solution must satisfy.
void expect_valid(const MpfcProblem& prob, const MpfcConfig& cfg,
                  const MpfcSolution& sol) {
  const int N = cfg.timing.horizon, K = cfg.timing.knots;
  ASSERT_EQ(static_cast<int>(sol.footsteps.size()), N);
  ASSERT_EQ(static_cast<int>(sol.assignment.size()), N);
  EXPECT_EQ(sol.footsteps[0], prob.p0);
  const MatX onehot = sol.assignment_matrix(static_cast<int>(prob.footholds.size()));
  for (int n = 1; n < N; ++n) {
    ASSERT_GE(sol.assignment[n], 0);
    EXPECT_EQ(onehot.row(n).sum(), 1.0);
    EXPECT_LE(prob.footholds[sol.assignment[n]].violation(sol.footsteps[n]), 1e-6);
  }
  const ResetMap reset = reset_map(cfg.params, cfg.timing.double_stance);
  for (int n = 0; n < N; ++n) {
    const double dt = n == 0 ? prob.time_remaining / (K - 1) : cfg.timing.knot_dt();
    const DiscreteAlip d = discretize(cfg.params, dt);
    for (int k = 0; k + 1 < K; ++k) {
      EXPECT_LE((sol.x(n, k + 1) - d.A * sol.x(n, k) - d.B * sol.u(n, k)).cwiseAbs().maxCoeff(),
                1e-6);
      EXPECT_LE(std::abs(sol.u(n, k)), cfg.u_max + 1e-6);
    }
    if (n + 1 < N) {
      const AlipState next = reset.apply(sol.x(n, K - 1), sol.footsteps[n], sol.footsteps[n + 1]);
      EXPECT_LE((sol.x(n + 1, 0) - next).cwiseAbs().maxCoeff(), 1e-6);
    }
  }
  EXPECT_LE((sol.x(0, 0) - prob.x0).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(BuildQp, ReferenceIsZeroCostOnOneLargeFoothold) {
  const MpfcConfig cfg = config();
  const Vec3 p0(0.3, -0.2, 0.0);
  const double t_rem = 0.17;
  const ReferenceTrajectory ref =
      reference_trajectory(walk(0.4, 0.1), Stance::kRight, p0, t_rem, cfg);
  const MpfcProblem prob =
      make_problem(ref.x[0], p0, Stance::kRight,
                   {rectangle_foothold(Vec2(-3, -3), Vec2(4, 4), 0.0)}, walk(0.4, 0.1), t_rem, cfg);
  const MpfcSolution sol = solve_mpfc(prob, cfg);
  expect_valid(prob, cfg, sol);
  EXPECT_LE(std::abs(sol.objective), 1e-8);
  for (double u : sol.u_traj) EXPECT_LE(std::abs(u), 1e-6);
  for (int n = 0; n < cfg.timing.horizon; ++n) {
    EXPECT_LE((sol.footsteps[n] - ref.p[n]).norm(), 1e-6);
  }
  EXPECT_TRUE(sol.stats.relaxation_was_integral);
}

TEST(BuildQp, BigMRowsReduceToFootholdRowsAtMuOne) {
  const MpfcConfig cfg = config(2);
  const Foothold fh = rectangle_foothold(Vec2(0, -0.5), Vec2(0.5, 0), 0.05);
  const MpfcProblem prob =
      make_problem(AlipState::Zero(), Vec3::Zero(), Stance::kLeft, {fh}, walk(0), 0.3, cfg);
  const MpfcQp relaxed = build_qp(prob, cfg, {-1});
  const MpfcQp fixed = build_qp(prob, cfg, {0});
  const QpLayout& L = relaxed.layout;
  std::mt19937 rng(1);
  std::normal_distribution<double> nd;
  VecX z(L.num_vars());
  for (auto& v : z) v = nd(rng);
  z(L.mu(1, 0)) = 1.0;
  VecX zf = z.head(fixed.layout.num_vars());
  const VecX p = z.segment<3>(L.p(1));
  // Relaxed rows are F p + M mu <= c + M and +-(f'p + M mu) <= +-b + M.
  const VecX r_relaxed = relaxed.qp.A_in * z - relaxed.qp.b_in;
  const VecX r_fixed = fixed.qp.A_in * zf - fixed.qp.b_in;
  const VecX faces = fh.F * p - fh.c;
  int found = 0;
  for (Eigen::Index i = 0; i < r_relaxed.size(); ++i) {
    for (Eigen::Index j = 0; j < faces.size(); ++j) {
      if (std::abs(r_relaxed(i) - faces(j)) < 1e-12) ++found;
    }
  }
  EXPECT_GE(found, faces.size());
  for (Eigen::Index j = 0; j < faces.size(); ++j) {
    bool in_fixed = false;
    for (Eigen::Index i = 0; i < r_fixed.size(); ++i) in_fixed |= std::abs(r_fixed(i) - faces(j)) < 1e-12;
    EXPECT_TRUE(in_fixed);
  }
  // Plane rows become the equality f'p = b.
  const VecX e_fixed = fixed.qp.A_eq * zf - fixed.qp.b_eq;
  bool plane = false;
  for (Eigen::Index i = 0; i < e_fixed.size(); ++i) plane |= std::abs(e_fixed(i) - (fh.f.dot(p) - fh.b)) < 1e-12;
  EXPECT_TRUE(plane);
}

TEST(BuildQp, RateLimitRowsOnlyInsideWindow) {
  const MpfcConfig cfg = config();
  MpfcProblem prob = make_problem(AlipState::Zero(), Vec3::Zero(), Stance::kLeft,
                                  {rectangle_foothold(Vec2(-2, -2), Vec2(2, 2), 0)},
                                  walk(0.3), 0.3, cfg);
  const std::vector<int> relaxed(cfg.timing.horizon - 1, -1);
  prob.previous_solution = solve_mpfc(prob, cfg);
  EXPECT_FALSE(build_qp(prob, cfg, relaxed).rate_limited);
  prob.time_remaining = 0.2;
  EXPECT_TRUE(build_qp(prob, cfg, relaxed).rate_limited);
  prob.previous_solution->stance = Stance::kRight;
  EXPECT_FALSE(build_qp(prob, cfg, relaxed).rate_limited);
}

TEST(SolveMpfc, SingleFootholdEqualsFixedQp) {
  const MpfcConfig cfg = config();
  std::mt19937 rng(2);
  for (int trial = 0; trial < 10; ++trial) {
    MpfcProblem prob = testing::random_instance(rng, cfg, 1);
    prob.footholds[0] = rectangle_foothold(Vec2(-3, -3), Vec2(3, 3), 0.0);
    const auto fixed = solve_fixed_assignment(prob, cfg, {0, 0});
    ASSERT_TRUE(fixed.has_value());
    const MpfcSolution sol = solve_mpfc(prob, cfg);
    EXPECT_NEAR(sol.objective, fixed->objective, 1e-6);
    expect_valid(prob, cfg, sol);
  }
}

TEST(SolveMpfc, MatchesEnumerationHorizonTwo) {
  const MpfcConfig cfg = config(2);
  std::mt19937 rng(3);
  int feasible = 0;
  for (int trial = 0; trial < 40; ++trial) {
    const int I = 1 + trial % 4;
    const MpfcProblem prob = testing::random_instance(rng, cfg, I);
    const auto oracle = testing::enumerate_assignments(prob, cfg);
    if (!oracle) {
      EXPECT_THROW(solve_mpfc(prob, cfg), AllNodesInfeasible);
      continue;
    }
    ++feasible;
    const MpfcSolution sol = solve_mpfc(prob, cfg);
    EXPECT_NEAR(sol.objective, oracle->objective, 1e-6) << trial;
    expect_valid(prob, cfg, sol);
  }
  EXPECT_GT(feasible, 30);
}

TEST(SolveMpfc, MatchesEnumerationHorizonThree) {
  const MpfcConfig cfg = config(3);
  std::mt19937 rng(4);
  int branched = 0;
  for (int trial = 0; trial < 30; ++trial) {
    const int I = 2 + trial % 4;
    const MpfcProblem prob = testing::random_instance(rng, cfg, I);
    const auto oracle = testing::enumerate_assignments(prob, cfg);
    if (!oracle) {
      EXPECT_THROW(solve_mpfc(prob, cfg), AllNodesInfeasible);
      continue;
    }
    const MpfcSolution sol = solve_mpfc(prob, cfg);
    EXPECT_NEAR(sol.objective, oracle->objective, 1e-6) << trial;
    expect_valid(prob, cfg, sol);
    branched += !sol.stats.relaxation_was_integral;
  }
  EXPECT_GT(branched, 0);
}

TEST(SolveMpfc, RelaxationBoundsTheOptimum) {
  const MpfcConfig cfg = config(3);
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const MpfcProblem prob = testing::random_instance(rng, cfg, 4);
    const MpfcQp root = build_qp(prob, cfg, {-1, -1});
    const auto r = qp::solve_qp(root.qp, cfg.qp);
    MpfcSolution sol;
    try {
      sol = solve_mpfc(prob, cfg);
    } catch (const AllNodesInfeasible&) {
      continue;
    }
    ASSERT_EQ(r.status, qp::QpStatus::kOptimal);
    EXPECT_LE(r.objective + root.constant, sol.objective + 1e-7);
    // Partially fixed nodes bound their completions too.
    for (int i = 0; i < 4; ++i) {
      const auto node = qp::solve_qp(build_qp(prob, cfg, {i, -1}).qp, cfg.qp);
      if (node.status != qp::QpStatus::kOptimal) continue;
      for (int j = 0; j < 4; ++j) {
        if (auto leaf = solve_fixed_assignment(prob, cfg, {i, j})) {
          EXPECT_LE(node.objective + root.constant, leaf->objective + 1e-7);
        }
      }
    }
  }
}

TEST(SolveMpfc, DuplicateFootholdKeepsObjectiveAndLowestIndex) {
  const MpfcConfig cfg = config();
  std::mt19937 rng(6);
  for (int trial = 0; trial < 10; ++trial) {
    MpfcProblem prob = testing::random_instance(rng, cfg, 2);
    MpfcSolution single;
    try {
      single = solve_mpfc(prob, cfg);
    } catch (const AllNodesInfeasible&) {
      continue;
    }
    MpfcProblem twice = prob;
    twice.footholds.insert(twice.footholds.begin() + 1, prob.footholds[1]);
    const MpfcSolution dup = solve_mpfc(twice, cfg);
    EXPECT_NEAR(dup.objective, single.objective, 1e-6);
    for (int n = 1; n < cfg.timing.horizon; ++n) {
      EXPECT_NE(dup.assignment[n], 2) << "copy chosen over the original";
    }
  }
}

TEST(SolveMpfc, AddingFootholdNeverIncreasesObjective) {
  const MpfcConfig cfg = config();
  std::mt19937 rng(7);
  for (int trial = 0; trial < 15; ++trial) {
    MpfcProblem prob = testing::random_instance(rng, cfg, 4);
    MpfcProblem fewer = prob;
    fewer.footholds.pop_back();
    double base;
    try {
      base = solve_mpfc(fewer, cfg).objective;
    } catch (const AllNodesInfeasible&) {
      continue;
    }
    EXPECT_LE(solve_mpfc(prob, cfg).objective, base + 1e-7);
  }
}

TEST(SolveMpfc, FarFootholdCostsOrIsInfeasible) {
  const MpfcConfig cfg = config(2);
  const Vec3 p0 = Vec3::Zero();
  const ReferenceTrajectory ref = reference_trajectory(walk(0.3), Stance::kLeft, p0, 0.3, cfg);
  const Foothold near = rectangle_foothold(Vec2(-0.5, -0.8), Vec2(0.8, 0.3), 0.0);
  const Foothold off = rectangle_foothold(Vec2(0.4, -0.35), Vec2(0.6, -0.25), 0.0);
  const Foothold far = rectangle_foothold(Vec2(4, -0.6), Vec2(4.5, -0.3), 0.0);
  const MpfcProblem prob =
      make_problem(ref.x[0], p0, Stance::kLeft, {near, off, far}, walk(0.3), 0.3, cfg);
  const auto good = solve_fixed_assignment(prob, cfg, {0});
  const auto costly = solve_fixed_assignment(prob, cfg, {1});
  ASSERT_TRUE(good && costly);
  EXPECT_LE(good->objective, 1e-8);
  EXPECT_GT(costly->objective, 1e-3);
  EXPECT_FALSE(solve_fixed_assignment(prob, cfg, {2}).has_value());
  EXPECT_EQ(solve_mpfc(prob, cfg).assignment[1], 0);
}

TEST(SolveMpfc, NoReachableFootholdThrows) {
  const MpfcConfig cfg = config();
  const MpfcProblem prob =
      make_problem(AlipState::Zero(), Vec3::Zero(), Stance::kLeft,
                   {rectangle_foothold(Vec2(5, 5), Vec2(6, 6), 0.0)}, walk(0), 0.3, cfg);
  EXPECT_THROW(solve_mpfc(prob, cfg), AllNodesInfeasible);
}

TEST(SolveMpfc, RateLimitHoldsAcrossConsecutiveSolves) {
  const MpfcConfig cfg = config();
  std::mt19937 rng(9);
  std::normal_distribution<double> noise(0.0, 0.05);
  const Vec3 p0 = Vec3::Zero();
  // Two footholds meeting near the nominal step: noise flips the optimum.
  const Foothold a = rectangle_foothold(Vec2(-0.5, -1.0), Vec2(0.2, 0.5), 0.0);
  const Foothold b = rectangle_foothold(Vec2(0.26, -1.0), Vec2(1.2, 0.5), 0.05);
  const GaitCommand cmd = walk(0.6);
  std::optional<MpfcSolution> prev;
  int active = 0;
  for (int tick = 0; tick < 30; ++tick) {
    const double t_rem = 0.3 - 0.01 * tick;
    if (t_rem < 0) break;
    const ReferenceTrajectory ref = reference_trajectory(cmd, Stance::kLeft, p0, t_rem, cfg);
    const AlipState x0 = ref.x[0] + Vec4(noise(rng), noise(rng), 10 * noise(rng), 10 * noise(rng));
    MpfcProblem prob = make_problem(x0, p0, Stance::kLeft, {a, b}, cmd, t_rem, cfg);
    prob.previous_solution = prev;
    MpfcSolution sol;
    try {
      sol = solve_mpfc(prob, cfg);
    } catch (const AllNodesInfeasible&) {
      continue;
    }
    if (prev && rate_limit_active(prob, cfg)) {
      ++active;
      EXPECT_LE((extract_next_footstep(sol).position - extract_next_footstep(*prev).position)
                    .cwiseAbs()
                    .maxCoeff(),
                cfg.rate_limit_halfwidth + 1e-7);
    }
    prev = sol;
  }
  EXPECT_GT(active, 10);
}

TEST(PruneFootholds, AllWithinReachUnchanged) {
  const MpfcConfig cfg = config();
  std::mt19937 rng(10);
  const MpfcProblem prob = testing::random_instance(rng, cfg, 5);
  const MpfcProblem pruned = prune_footholds(prob, cfg, 10, 2.0);
  EXPECT_EQ(pruned.footholds.size(), prob.footholds.size());
  EXPECT_EQ(pruned.foothold_source, (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(PruneFootholds, DistantFootholdRemoved) {
  const MpfcConfig cfg = config();
  MpfcProblem prob = make_problem(AlipState::Zero(), Vec3::Zero(), Stance::kLeft,
                                  {rectangle_foothold(Vec2(-1, -1), Vec2(1, 1), 0.0),
                                   rectangle_foothold(Vec2(10, 0), Vec2(11, 1), 0.0)},
                                  walk(0), 0.3, cfg);
  const MpfcProblem pruned = prune_footholds(prob, cfg, 10, 1.0);
  ASSERT_EQ(pruned.footholds.size(), 1u);
  EXPECT_EQ(pruned.foothold_source, std::vector<int>{0});
}

TEST(PruneFootholds, StanceFootholdAlwaysKept) {
  const MpfcConfig cfg = config();
  MpfcProblem prob = make_problem(AlipState::Zero(), Vec3::Zero(), Stance::kLeft,
                                  {rectangle_foothold(Vec2(0.5, 0.5), Vec2(1, 1), 0.0),
                                   rectangle_foothold(Vec2(-0.1, -0.1), Vec2(0.1, 0.1), 0.0)},
                                  walk(0), 0.3, cfg);
  const MpfcProblem pruned = prune_footholds(prob, cfg, 1, 0.01);
  ASSERT_EQ(pruned.footholds.size(), 1u);
  EXPECT_EQ(pruned.foothold_source, std::vector<int>{1});
}

TEST(PruneFootholds, FarRemovalsKeepOptimum) {
  const MpfcConfig cfg = config();
  std::mt19937 rng(12);
  const double reach = 0.5;
  int compared = 0;
  for (int trial = 0; trial < 15; ++trial) {
    MpfcProblem prob = testing::random_instance(rng, cfg, 3);
    const double speed = 0.75 + 0.2;  // bounds the generator's |v_d|
    const double far = cfg.timing.horizon * (speed * cfg.timing.step_period() + reach) + 1.0;
    prob.footholds.push_back(rectangle_foothold(prob.p0.head<2>() + Vec2(far, far),
                                                prob.p0.head<2>() + Vec2(far + 1, far + 1), 0));
    prob.foothold_source.push_back(3);
    const MpfcProblem pruned = prune_footholds(prob, cfg, 10, reach);
    EXPECT_EQ(pruned.footholds.size(), 3u);
    try {
      const double full = solve_mpfc(prob, cfg).objective;
      EXPECT_NEAR(solve_mpfc(pruned, cfg).objective, full, 1e-6);
      ++compared;
    } catch (const AllNodesInfeasible&) {
      EXPECT_THROW(solve_mpfc(pruned, cfg), AllNodesInfeasible);
    }
  }
  EXPECT_GT(compared, 5);
}

TEST(ExtractNextFootstep, ReturnsSecondFootstep) {
  MpfcSolution sol;
  sol.footsteps = {Vec3(0, 0, 0), Vec3(1, 2, 3), Vec3(4, 5, 6)};
  sol.assignment = {0, 3, 1};
  const NextFootstep next = extract_next_footstep(sol);
  EXPECT_EQ(next.position, Vec3(1, 2, 3));
  EXPECT_EQ(next.foothold, 3);
}

TEST(MpfcConfig, RejectsInvalidValues) {
  MpfcConfig cfg;
  cfg.u_max = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = MpfcConfig{};
  cfg.Q(0, 0) = -1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

}  // namespace
}  // namespace mpfc
