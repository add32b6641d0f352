#include "mpfc/mpfc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <queue>
#include <sstream>

#include <Eigen/Eigenvalues>
#include <unsupported/Eigen/MatrixFunctions>

namespace mpfc {

namespace {

constexpr double kRoundTol = 1e-6;

Stance stance_of_step(Stance first, int n) { return n % 2 == 0 ? first : other(first); }

bool psd(const Mat4& m) {
  if (!m.isApprox(m.transpose(), 1e-12)) return false;
  return Eigen::SelfAdjointEigenSolver<Mat4>(m).eigenvalues().minCoeff() >= -1e-12;
}

}  // namespace

void MpfcConfig::validate() const {
  params.validate();
  timing.validate();
  if (!(u_max > 0)) throw ConfigError("MpfcConfig: u_max must be > 0");
  if (!(R > 0)) throw ConfigError("MpfcConfig: R must be > 0");
  if (!psd(Q) || !psd(Q_f)) throw ConfigError("MpfcConfig: Q and Q_f must be PSD");
  if (!(big_m > 0)) throw ConfigError("MpfcConfig: bigM must be > 0");
  if (!(com_max.minCoeff() > 0)) throw ConfigError("MpfcConfig: com_box must be > 0");
  if (rate_limit_halfwidth < 0 || rate_limit_window < 0) {
    throw ConfigError("MpfcConfig: rate limit parameters must be >= 0");
  }
}

void MpfcProblem::validate(const MpfcConfig& cfg) const {
  const int N = cfg.timing.horizon, K = cfg.timing.knots;
  if (footholds.empty()) throw Error("MpfcProblem: no footholds");
  if (!x0.allFinite() || !p0.allFinite()) throw Error("MpfcProblem: non-finite state");
  if (static_cast<int>(x_ref.size()) != N * K || static_cast<int>(p_ref.size()) != N) {
    throw Error("MpfcProblem: reference does not match the horizon");
  }
  if (!(time_remaining >= 0) || time_remaining > cfg.timing.single_stance + 1e-9) {
    throw Error("MpfcProblem: time_remaining outside [0, T_ss]");
  }
}

MatX MpfcSolution::assignment_matrix(int num_footholds) const {
  MatX m = MatX::Zero(horizon, num_footholds);
  for (int n = 0; n < horizon; ++n) {
    if (assignment[n] >= 0) m(n, assignment[n]) = 1.0;
  }
  return m;
}

ReferenceTrajectory reference_trajectory(const GaitCommand& command,
                                         Stance stance, const Vec3& p0,
                                         double time_remaining,
                                         const MpfcConfig& cfg) {
  const int N = cfg.timing.horizon, K = cfg.timing.knots;
  GaitCommand cmd = command;
  cmd.stance = stance;
  const PeriodicReference orbit = periodic_reference(cmd, cfg.params, cfg.timing);
  const Mat4 a = alip_a(cfg.params);
  const double t_rem = std::clamp(time_remaining, 0.0, cfg.timing.single_stance);
  const double dt1 = t_rem / (K - 1);
  const double dt = cfg.timing.knot_dt();

  ReferenceTrajectory ref;
  ref.x.reserve(N * K);
  for (int n = 0; n < N; ++n) {
    const AlipState start = n % 2 == 0 ? orbit.initial_state : orbit.second_state;
    for (int k = 0; k < K; ++k) {
      const double tau =
          n == 0 ? cfg.timing.single_stance - t_rem + k * dt1 : k * dt;
      ref.x.push_back((a * tau).exp() * start);
    }
  }
  ref.p.push_back(p0);
  for (int n = 1; n < N; ++n) {
    ref.p.push_back(ref.p.back() + orbit.footstep_deltas[(n - 1) % 2]);
  }
  return ref;
}

MpfcProblem make_problem(const AlipState& x0, const Vec3& p0, Stance stance,
                         std::vector<Foothold> footholds,
                         const GaitCommand& command, double time_remaining,
                         const MpfcConfig& cfg) {
  MpfcProblem prob;
  prob.x0 = x0;
  prob.p0 = p0;
  prob.stance = stance;
  prob.footholds = std::move(footholds);
  prob.time_remaining = std::clamp(time_remaining, 0.0, cfg.timing.single_stance);
  ReferenceTrajectory ref =
      reference_trajectory(command, stance, p0, prob.time_remaining, cfg);
  prob.x_ref = std::move(ref.x);
  prob.p_ref = std::move(ref.p);
  prob.foothold_source.resize(prob.footholds.size());
  std::iota(prob.foothold_source.begin(), prob.foothold_source.end(), 0);
  return prob;
}

int QpLayout::num_mu() const {
  int blocks = 0;
  for (int s : mu_slot) blocks += s >= 0;
  return blocks * num_footholds;
}

bool rate_limit_active(const MpfcProblem& prob, const MpfcConfig& cfg) {
  return prob.previous_solution.has_value() &&
         prob.previous_solution->stance == prob.stance &&
         prob.previous_solution->footsteps.size() >= 2 &&
         prob.time_remaining <= cfg.rate_limit_window;
}

namespace {

// Dense row builder for the constraint blocks.
struct Rows {
  int n;
  std::vector<VecX> a;
  std::vector<double> b;

  explicit Rows(int vars) : n(vars) {}
  VecX& add(double rhs) {
    a.push_back(VecX::Zero(n));
    b.push_back(rhs);
    return a.back();
  }
  MatX matrix() const {
    MatX m(static_cast<Eigen::Index>(a.size()), n);
    for (size_t i = 0; i < a.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = a[i].transpose();
    return m;
  }
  VecX vector() const {
    return Eigen::Map<const VecX>(b.data(), static_cast<Eigen::Index>(b.size()));
  }
};

}  // namespace

MpfcQp build_qp(const MpfcProblem& prob, const MpfcConfig& cfg,
                const std::vector<int>& assignment) {
  const int N = cfg.timing.horizon, K = cfg.timing.knots;
  const int I = static_cast<int>(prob.footholds.size());
  if (static_cast<int>(assignment.size()) != N - 1) {
    throw Error("build_qp: assignment must have N-1 entries");
  }
  prob.validate(cfg);

  MpfcQp out;
  QpLayout& L = out.layout;
  L.N = N;
  L.K = K;
  L.num_footholds = I;
  L.assignment = assignment;
  int slot = 0;
  for (int a : assignment) {
    if (a < -1 || a >= I) throw Error("build_qp: foothold index out of range");
    L.mu_slot.push_back(a < 0 ? slot++ : -1);
  }
  const int nv = L.num_vars();

  // Cost.
  MatX P = MatX::Zero(nv, nv);
  VecX q = VecX::Zero(nv);
  auto add_state_cost = [&](int n, int k, const Mat4& W) {
    const int i = L.x(n, k);
    const AlipState& xd = prob.x_ref[n * K + k];
    P.block<4, 4>(i, i) += 2.0 * W;
    q.segment<4>(i) -= 2.0 * W * xd;
    out.constant += xd.dot(W * xd);
  };
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k + 1 < K; ++k) {
      add_state_cost(n, k, cfg.Q);
      P(L.u(n, k), L.u(n, k)) += 2.0 * cfg.R;
    }
  }
  add_state_cost(N - 1, K - 1, cfg.Q_f);

  // Dynamics.
  Rows eq(nv), in(nv);
  for (int r = 0; r < 4; ++r) eq.add(prob.x0(r))(L.x(0, 0) + r) = 1.0;
  const double t_rem = std::clamp(prob.time_remaining, 0.0, cfg.timing.single_stance);
  const DiscreteAlip first = discretize(cfg.params, t_rem / (K - 1));
  const DiscreteAlip later = discretize(cfg.params, cfg.timing.knot_dt());
  const ResetMap reset = reset_map(cfg.params, cfg.timing.double_stance);
  const Mat43 Br = reset.Br();
  for (int n = 0; n < N; ++n) {
    const DiscreteAlip& d = n == 0 ? first : later;
    for (int k = 0; k + 1 < K; ++k) {
      for (int r = 0; r < 4; ++r) {
        VecX& row = eq.add(0.0);
        row(L.x(n, k + 1) + r) = 1.0;
        row.segment<4>(L.x(n, k)) -= d.A.row(r).transpose();
        row(L.u(n, k)) -= d.B(r);
      }
    }
    if (n + 1 == N) continue;
    // x_{n+1,1} = Ar x_{n,K} + Br (p_{n+1} - p_n)
    for (int r = 0; r < 4; ++r) {
      const double rhs = n == 0 ? -Br.row(r).dot(prob.p0) : 0.0;
      VecX& row = eq.add(rhs);
      row(L.x(n + 1, 0) + r) = 1.0;
      row.segment<4>(L.x(n, K - 1)) -= reset.Ar.row(r).transpose();
      row.segment<3>(L.p(n + 1)) -= Br.row(r).transpose();
      if (n > 0) row.segment<3>(L.p(n)) += Br.row(r).transpose();
    }
  }

  // CoM box and torque limits.
  for (int n = 0; n < N; ++n) {
    for (int k = 0; k < K; ++k) {
      if (n == 0 && k == 0) continue;
      for (int axis = 0; axis < 2; ++axis) {
        for (double s : {1.0, -1.0}) in.add(cfg.com_max(axis))(L.x(n, k) + axis) = s;
      }
    }
    for (int k = 0; k + 1 < K; ++k) {
      for (double s : {1.0, -1.0}) in.add(cfg.u_max)(L.u(n, k)) = s;
    }
  }

  // Footholds.
  const double M = cfg.big_m;
  for (int n = 1; n < N; ++n) {
    const int a = assignment[n - 1];
    const int p = L.p(n);
    if (a >= 0) {
      const Foothold& fh = prob.footholds[a];
      for (int j = 0; j < fh.num_faces(); ++j) {
        in.add(fh.c(j)).segment<3>(p) = fh.F.row(j).transpose();
      }
      eq.add(fh.b).segment<3>(p) = fh.f;
      continue;
    }
    VecX& sum = eq.add(1.0);
    for (int i = 0; i < I; ++i) {
      const Foothold& fh = prob.footholds[i];
      const int mu = L.mu(n, i);
      sum(mu) = 1.0;
      for (int j = 0; j < fh.num_faces(); ++j) {
        VecX& row = in.add(fh.c(j) + M);
        row.segment<3>(p) = fh.F.row(j).transpose();
        row(mu) = M;
      }
      for (double s : {1.0, -1.0}) {
        VecX& row = in.add(s * fh.b + M);
        row.segment<3>(p) = s * fh.f;
        row(mu) = M;
      }
      in.add(0.0)(mu) = -1.0;
      in.add(1.0)(mu) = 1.0;
    }
  }

  // Feet do not cross: sigma_n (p_{n+1} - p_n)_y >= margin.
  for (int n = 0; n + 1 < N; ++n) {
    const double sigma = sign(stance_of_step(prob.stance, n));
    VecX& row = in.add(-cfg.crossover_margin - (n == 0 ? sigma * prob.p0.y() : 0.0));
    row(L.p(n + 1) + 1) = -sigma;
    if (n > 0) row(L.p(n) + 1) = sigma;
  }

  if (N >= 2 && rate_limit_active(prob, cfg)) {
    out.rate_limited = true;
    const Vec3& center = prob.previous_solution->footsteps[1];
    for (int axis = 0; axis < 3; ++axis) {
      in.add(center(axis) + cfg.rate_limit_halfwidth)(L.p(1) + axis) = 1.0;
      in.add(-center(axis) + cfg.rate_limit_halfwidth)(L.p(1) + axis) = -1.0;
    }
  }

  out.qp = qp::QpInstance(std::move(P), std::move(q), eq.matrix(), eq.vector(),
                          in.matrix(), in.vector());
  return out;
}

// ------------------------------------------------------- branch-and-bound

namespace {

int containing_foothold(const std::vector<Foothold>& footholds, const Vec3& p) {
  for (size_t i = 0; i < footholds.size(); ++i) {
    if (footholds[i].violation(p) <= kRoundTol) return static_cast<int>(i);
  }
  return -1;
}

// Footstep heights do not enter the dynamics, so a relaxed solution leaves
// p_z loose; only the polygon rows decide rounding.
int planar_containing_foothold(const std::vector<Foothold>& footholds, const Vec3& p) {
  for (size_t i = 0; i < footholds.size(); ++i) {
    if ((footholds[i].F * p - footholds[i].c).maxCoeff() <= kRoundTol) return static_cast<int>(i);
  }
  return -1;
}

MpfcSolution unpack(const MpfcProblem& prob, const MpfcQp& m, const VecX& z,
                    double qp_objective) {
  const QpLayout& L = m.layout;
  MpfcSolution sol;
  sol.horizon = L.N;
  sol.knots = L.K;
  sol.stance = prob.stance;
  sol.time_remaining = prob.time_remaining;
  for (int n = 0; n < L.N; ++n)
    for (int k = 0; k < L.K; ++k) sol.x_traj.push_back(z.segment<4>(L.x(n, k)));
  for (int n = 0; n < L.N; ++n)
    for (int k = 0; k + 1 < L.K; ++k) sol.u_traj.push_back(z(L.u(n, k)));
  sol.footsteps.push_back(prob.p0);
  for (int n = 1; n < L.N; ++n) sol.footsteps.push_back(z.segment<3>(L.p(n)));
  sol.assignment.push_back(containing_foothold(prob.footholds, prob.p0));
  for (int a : L.assignment) sol.assignment.push_back(a);
  sol.objective = qp_objective + m.constant;
  return sol;
}

// Carries the shared prefix and the relaxed binaries of steps that stay free.
VecX remap_warm(const QpLayout& from, const VecX& z, const QpLayout& to) {
  VecX w = VecX::Zero(to.num_vars());
  const int prefix = to.num_x() + to.num_u() + to.num_p();
  w.head(prefix) = z.head(prefix);
  for (int n = 1; n < to.N; ++n) {
    if (to.mu_slot[n - 1] < 0) continue;
    for (int i = 0; i < to.num_footholds; ++i) {
      w(to.mu(n, i)) = from.mu_slot[n - 1] >= 0 ? z(from.mu(n, i))
                                                 : (from.assignment[n - 1] == i ? 1.0 : 0.0);
    }
  }
  return w;
}

struct Node {
  std::vector<int> assignment;
  double bound = 0.0;      // max over the path of relaxation objectives
  double objective = 0.0;  // of this node's relaxation
  int depth = 0;
  VecX z;
  QpLayout layout;
};

struct NodeOrder {
  bool operator()(const Node& a, const Node& b) const {
    // priority_queue pops the largest; invert for (bound, depth, index).
    if (a.bound != b.bound) return a.bound > b.bound;
    if (a.depth != b.depth) return a.depth > b.depth;
    return a.assignment > b.assignment;
  }
};

class BranchAndBound {
 public:
  BranchAndBound(const MpfcProblem& prob, const MpfcConfig& cfg)
      : prob_(prob), cfg_(cfg) {}

  MpfcSolution run() {
    const auto t0 = std::chrono::steady_clock::now();
    const int N = cfg_.timing.horizon;
    Node root;
    root.assignment.assign(N - 1, -1);
    if (!relax(root, nullptr)) throw AllNodesInfeasible("MPFC relaxation is infeasible");
    stats_.relaxation_was_integral = process(std::move(root));
    while (!open_.empty()) {
      Node node = open_.top();
      open_.pop();
      if (incumbent_ && node.bound >= incumbent_->objective - cfg_.bound_tol) break;
      branch(node);
    }
    if (!incumbent_) throw AllNodesInfeasible("no foothold sequence admits a feasible plan");
    MpfcSolution sol = *incumbent_;
    stats_.wall_time =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    sol.stats = stats_;
    return sol;
  }

  std::optional<MpfcSolution> leaf_only(const std::vector<int>& assignment) {
    leaf(assignment, nullptr, nullptr);
    if (incumbent_) incumbent_->stats = stats_;
    return incumbent_;
  }

 private:
  std::optional<qp::QpResult> solve(const MpfcQp& m, const VecX* warm) {
    ++stats_.qp_solves;
    std::optional<qp::WarmStart> ws;
    if (warm) ws = qp::WarmStart{*warm, VecX()};
    qp::QpResult r = qp::solve_qp(m.qp, cfg_.qp, ws);
    if (r.status == qp::QpStatus::kMaxIter) ++stats_.qp_max_iter;
    if (r.status != qp::QpStatus::kOptimal) return std::nullopt;
    return r;
  }

  // Solves the relaxation of a node; false when infeasible.
  bool relax(Node& node, const Node* parent) {
    ++stats_.nodes_explored;
    const MpfcQp m = build_qp(prob_, cfg_, node.assignment);
    VecX warm;
    if (parent) warm = remap_warm(parent->layout, parent->z, m.layout);
    const auto r = solve(m, parent ? &warm : nullptr);
    if (!r) return false;
    node.z = r->z;
    node.layout = m.layout;
    node.objective = r->objective + m.constant;
    node.bound = node.objective;
    if (parent) node.bound = std::max(node.bound, parent->bound);
    return true;
  }

  void leaf(const std::vector<int>& assignment, const QpLayout* from, const VecX* z) {
    const MpfcQp m = build_qp(prob_, cfg_, assignment);
    VecX warm;
    if (from) warm = remap_warm(*from, *z, m.layout);
    const auto r = solve(m, from ? &warm : nullptr);
    if (!r) return;
    offer(unpack(prob_, m, r->z, r->objective));
  }

  void offer(MpfcSolution sol) {
    if (!incumbent_ || sol.objective < incumbent_->objective - cfg_.bound_tol ||
        (sol.objective <= incumbent_->objective + cfg_.bound_tol &&
         sol.assignment < incumbent_->assignment)) {
      incumbent_ = std::move(sol);
    }
  }

  // Returns true when the node was resolved without branching.
  bool process(Node node) {
    const bool complete = std::find(node.assignment.begin(), node.assignment.end(), -1) ==
                          node.assignment.end();
    if (complete) {
      const MpfcQp m = build_qp(prob_, cfg_, node.assignment);
      offer(unpack(prob_, m, node.z, node.objective - m.constant));
      return true;
    }
    // Round: every relaxed footstep already inside some foothold means the
    // completed assignment attains the relaxation bound.
    std::vector<int> rounded = node.assignment;
    bool roundable = true;
    for (int n = 1; n < node.layout.N && roundable; ++n) {
      if (rounded[n - 1] >= 0) continue;
      rounded[n - 1] = planar_containing_foothold(prob_.footholds,
                                           node.z.segment<3>(node.layout.p(n)));
      roundable = rounded[n - 1] >= 0;
    }
    if (roundable) {
      leaf(rounded, &node.layout, &node.z);
      if (incumbent_ && incumbent_->objective <= node.bound + cfg_.bound_tol) return true;
    }
    if (!incumbent_ || node.bound < incumbent_->objective - cfg_.bound_tol) {
      open_.push(std::move(node));
    }
    return false;
  }

  void branch(const Node& node) {
    const auto it = std::find(node.assignment.begin(), node.assignment.end(), -1);
    const size_t step = static_cast<size_t>(it - node.assignment.begin());
    for (int i = 0; i < static_cast<int>(prob_.footholds.size()); ++i) {
      Node child;
      child.assignment = node.assignment;
      child.assignment[step] = i;
      child.depth = node.depth + 1;
      if (!relax(child, &node)) continue;
      if (incumbent_ && child.bound >= incumbent_->objective - cfg_.bound_tol) continue;
      process(std::move(child));
    }
  }

  const MpfcProblem& prob_;
  const MpfcConfig& cfg_;
  SolveStats stats_;
  std::optional<MpfcSolution> incumbent_;
  std::priority_queue<Node, std::vector<Node>, NodeOrder> open_;
};

}  // namespace

MpfcSolution solve_mpfc(const MpfcProblem& prob, const MpfcConfig& cfg) {
  cfg.validate();
  prob.validate(cfg);
  return BranchAndBound(prob, cfg).run();
}

std::optional<MpfcSolution> solve_fixed_assignment(
    const MpfcProblem& prob, const MpfcConfig& cfg,
    const std::vector<int>& assignment) {
  cfg.validate();
  prob.validate(cfg);
  if (std::find(assignment.begin(), assignment.end(), -1) != assignment.end()) {
    throw Error("solve_fixed_assignment: assignment must be complete");
  }
  return BranchAndBound(prob, cfg).leaf_only(assignment);
}

// ---------------------------------------------------------------- pruning

double planar_distance(const Foothold& fh, const Vec2& p) {
  const size_t n = fh.verts.size();
  bool inside = true;
  double d = INFINITY;
  for (size_t i = 0; i < n; ++i) {
    const Vec2 a = fh.verts[i].head<2>(), b = fh.verts[(i + 1) % n].head<2>();
    const Vec2 e = b - a;
    if (e.x() * (p.y() - a.y()) - e.y() * (p.x() - a.x()) < 0) inside = false;
    const double t = std::clamp((p - a).dot(e) / e.squaredNorm(), 0.0, 1.0);
    d = std::min(d, (p - (a + t * e)).norm());
  }
  return inside ? 0.0 : d;
}

MpfcProblem prune_footholds(const MpfcProblem& prob, const MpfcConfig& cfg,
                            int max_candidates, double reach_radius) {
  (void)cfg;
  const int I = static_cast<int>(prob.footholds.size());
  // The foothold under the stance foot is kept unconditionally.
  int stance_fh = 0;
  for (int i = 1; i < I; ++i) {
    if (prob.footholds[i].violation(prob.p0) < prob.footholds[stance_fh].violation(prob.p0)) {
      stance_fh = i;
    }
  }
  struct Candidate {
    double distance;
    int index;
  };
  std::vector<Candidate> kept;
  for (int i = 0; i < I; ++i) {
    bool reach = i == stance_fh;
    for (size_t n = 1; n < prob.p_ref.size() && !reach; ++n) {
      reach = planar_distance(prob.footholds[i], prob.p_ref[n].head<2>()) <=
              reach_radius * static_cast<double>(n);
    }
    if (!reach) continue;
    double d = INFINITY;
    const Vec3 c = prob.footholds[i].centroid();
    for (size_t n = 1; n < prob.p_ref.size(); ++n) {
      d = std::min(d, (c.head<2>() - prob.p_ref[n].head<2>()).norm());
    }
    kept.push_back({i == stance_fh ? -1.0 : d, i});
  }
  std::stable_sort(kept.begin(), kept.end(), [](const Candidate& a, const Candidate& b) {
    return a.distance < b.distance;
  });
  if (max_candidates > 0 && static_cast<int>(kept.size()) > max_candidates) {
    kept.resize(std::max(1, max_candidates));
  }
  std::sort(kept.begin(), kept.end(),
            [](const Candidate& a, const Candidate& b) { return a.index < b.index; });

  MpfcProblem out = prob;
  out.footholds.clear();
  out.foothold_source.clear();
  for (const Candidate& c : kept) {
    out.footholds.push_back(prob.footholds[c.index]);
    out.foothold_source.push_back(
        prob.foothold_source.empty() ? c.index : prob.foothold_source[c.index]);
  }
  return out;
}

NextFootstep extract_next_footstep(const MpfcSolution& sol) {
  if (sol.footsteps.size() < 2) return {sol.footsteps.front(), sol.assignment.front()};
  return {sol.footsteps[1], sol.assignment[1]};
}

}  // namespace mpfc
