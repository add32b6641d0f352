#pragma once

#include <optional>
#include <vector>

#include "mpfc/alip_model.hpp"
#include "mpfc/qp.hpp"
#include "mpfc/terrain.hpp"

namespace mpfc {

struct MpfcConfig {
  AlipParams params;
  GaitTiming timing;
  Mat4 Q = Vec4(1.0, 1.0, 0.1, 0.1).asDiagonal();
  double R = 0.1;
  Mat4 Q_f = 10.0 * Mat4(Vec4(1.0, 1.0, 0.1, 0.1).asDiagonal());
  double u_max = 5.0;                  // N m
  Vec2 com_max = Vec2(0.6, 0.4);       // |x_com|, |y_com| bounds, m
  double crossover_margin = 0.0;       // m
  double big_m = 10.0;                 // m
  double rate_limit_halfwidth = 0.10;  // m
  double rate_limit_window = 0.25;     // s
  double bound_tol = 1e-7;             // branch-and-bound pruning
  qp::QpSettings qp;

  void validate() const;
};

struct SolveStats {
  int nodes_explored = 0;
  int qp_solves = 0;
  int qp_max_iter = 0;  // QPs treated as infeasible after hitting max_iter
  double wall_time = 0.0;  // s
  bool relaxation_was_integral = false;
};

struct MpfcSolution {
  int horizon = 0;  // N
  int knots = 0;    // K
  Stance stance = Stance::kLeft;
  double time_remaining = 0.0;
  std::vector<AlipState> x_traj;   // N*K, index n*K + k
  std::vector<double> u_traj;      // N*(K-1), index n*(K-1) + k
  std::vector<Vec3> footsteps;     // p_1 ... p_N, p_1 the stance foot
  /// Foothold index per footstep. Entry 0 is the foothold under the stance
  /// foot, or -1 when it is on none of them.
  std::vector<int> assignment;
  double objective = 0.0;
  SolveStats stats;

  const AlipState& x(int n, int k) const { return x_traj[n * knots + k]; }
  double u(int n, int k) const { return u_traj[n * (knots - 1) + k]; }
  /// N x |I| one-hot matrix; row 0 follows assignment[0].
  MatX assignment_matrix(int num_footholds) const;
};

struct MpfcProblem {
  AlipState x0 = AlipState::Zero();   // stance frame
  Vec3 p0 = Vec3::Zero();             // stance foot, yaw frame
  Stance stance = Stance::kLeft;
  std::vector<Foothold> footholds;    // yaw frame
  /// Desired state per knot, N*K, and nominal footsteps p_1..p_N.
  std::vector<AlipState> x_ref;
  std::vector<Vec3> p_ref;
  double time_remaining = 0.0;        // in the current single stance
  std::optional<MpfcSolution> previous_solution;
  /// Index of each foothold in the unpruned list.
  std::vector<int> foothold_source;

  void validate(const MpfcConfig& cfg) const;
};

/// Periodic orbit for the command re-anchored at the current stance and
/// phase, sampled at the knots of the horizon.
struct ReferenceTrajectory {
  std::vector<AlipState> x;  // N*K
  std::vector<Vec3> p;       // N, starting at p0
};
ReferenceTrajectory reference_trajectory(const GaitCommand& command,
                                         Stance stance, const Vec3& p0,
                                         double time_remaining,
                                         const MpfcConfig& cfg);

/// Fills the reference from the command.
MpfcProblem make_problem(const AlipState& x0, const Vec3& p0, Stance stance,
                         std::vector<Foothold> footholds,
                         const GaitCommand& command, double time_remaining,
                         const MpfcConfig& cfg);

/// Variable layout: states, inputs, footsteps p_2..p_N, then one block of
/// |I| relaxed binaries per step whose foothold is not fixed.
struct QpLayout {
  int N = 0, K = 0, num_footholds = 0;
  std::vector<int> assignment;  // per step 2..N, -1 = relaxed
  std::vector<int> mu_slot;     // per step 2..N, block index or -1

  int num_x() const { return 4 * N * K; }
  int num_u() const { return N * (K - 1); }
  int num_p() const { return 3 * (N - 1); }
  int num_mu() const;
  int num_vars() const { return num_x() + num_u() + num_p() + num_mu(); }
  int x(int n, int k) const { return 4 * (n * K + k); }
  int u(int n, int k) const { return num_x() + n * (K - 1) + k; }
  /// Footstep p_{n+1} for n = 1..N-1 (0-based step index n).
  int p(int n) const { return num_x() + num_u() + 3 * (n - 1); }
  int mu(int n, int i) const {
    return num_x() + num_u() + num_p() + num_footholds * mu_slot[n - 1] + i;
  }
};

struct MpfcQp {
  qp::QpInstance qp;
  QpLayout layout;
  double constant = 0.0;  // add to the QP objective to get the tracking cost
  bool rate_limited = false;
};

/// assignment has N-1 entries for footsteps p_2..p_N; -1 relaxes the step
/// with big-M binaries in [0, 1].
MpfcQp build_qp(const MpfcProblem& prob, const MpfcConfig& cfg,
                const std::vector<int>& assignment);

/// True when the rate-limit box on p_2 applies to this problem.
bool rate_limit_active(const MpfcProblem& prob, const MpfcConfig& cfg);

class AllNodesInfeasible : public Error {
 public:
  using Error::Error;
};

/// Global optimum over foothold assignments by best-first branch-and-bound.
MpfcSolution solve_mpfc(const MpfcProblem& prob, const MpfcConfig& cfg);

/// Solution of the QP for a complete assignment; nullopt if infeasible.
std::optional<MpfcSolution> solve_fixed_assignment(
    const MpfcProblem& prob, const MpfcConfig& cfg,
    const std::vector<int>& assignment);

MpfcProblem prune_footholds(const MpfcProblem& prob, const MpfcConfig& cfg,
                            int max_candidates, double reach_radius);

struct NextFootstep {
  Vec3 position;
  int foothold = -1;
};
NextFootstep extract_next_footstep(const MpfcSolution& sol);

/// Horizontal distance from p to the polygon of a foothold (0 inside).
double planar_distance(const Foothold& fh, const Vec2& p);

}  // namespace mpfc
