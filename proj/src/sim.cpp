#include "mpfc/sim.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <ostream>
#include <random>

#include "mpfc/qp.hpp"

namespace mpfc {

namespace {

constexpr double kEps = 1e-9;

double falling(int i, int k) {  // i! / (i-k)!
  double r = 1.0;
  for (int j = 0; j < k; ++j) r *= i - j;
  return r;
}

// Snap Gram matrix of a degree 7 polynomial on [0, 1].
Eigen::Matrix<double, 8, 8> unit_snap_gram() {
  Eigen::Matrix<double, 8, 8> H = Eigen::Matrix<double, 8, 8>::Zero();
  for (int i = 4; i < 8; ++i)
    for (int j = 4; j < 8; ++j) H(i, j) = falling(i, 4) * falling(j, 4) / (i + j - 7);
  return H;
}

Mat3 yaw_rotation(double psi) {
  Mat3 R = Mat3::Identity();
  R.topLeftCorner<2, 2>() << std::cos(psi), -std::sin(psi), std::sin(psi), std::cos(psi);
  return R;
}

// Spline through start (pos and three derivatives), optionally w1 after h1,
// ending at rest at w2 after h1 + h2 (h2 unused without w1).
SwingSpline solve_spline(const std::array<Vec3, 4>& start, const std::optional<Vec3>& w1,
                         const Vec3& w2, double h1, double h2) {
  const int segs = w1 ? 2 : 1;
  const int nv = 8 * segs;
  const std::array<double, 2> h = {h1, h2};
  const Eigen::Matrix<double, 8, 8> H0 = unit_snap_gram();
  // Unknowns are coefficients in normalized time; scale keeps the cost O(1).
  const double hmin = segs == 2 ? std::min(h1, h2) : h1;
  MatX P = MatX::Zero(nv, nv);
  for (int s = 0; s < segs; ++s) P.block<8, 8>(8 * s, 8 * s) = 2.0 * std::pow(hmin / h[s], 7) * H0;

  std::vector<VecX> rows;
  std::vector<std::array<double, 3>> rhs;
  auto row = [&]() -> VecX& {
    rows.push_back(VecX::Zero(nv));
    return rows.back();
  };
  double fact = 1.0;
  for (int k = 0; k < 4; ++k) {
    if (k > 0) fact *= k;
    row()(k) = 1.0;
    const Vec3 v = start[k] * std::pow(h1, k) / fact;
    rhs.push_back({v.x(), v.y(), v.z()});
  }
  const int last = 8 * (segs - 1);
  if (w1) {
    VecX& end1 = row();
    for (int i = 0; i < 8; ++i) end1(i) = 1.0;
    rhs.push_back({w1->x(), w1->y(), w1->z()});
    row()(8) = 1.0;
    rhs.push_back({w1->x(), w1->y(), w1->z()});
    for (int k = 1; k <= 4; ++k) {
      VecX& r = row();
      for (int i = k; i < 8; ++i) r(i) = falling(i, k);
      r(8 + k) = -falling(k, k) * std::pow(h1 / h2, k);
      rhs.push_back({0, 0, 0});
    }
  }
  for (int k = 0; k < 4; ++k) {
    VecX& r = row();
    for (int i = k; i < 8; ++i) r(last + i) = falling(i, k);
    rhs.push_back(k == 0 ? std::array<double, 3>{w2.x(), w2.y(), w2.z()}
                         : std::array<double, 3>{0, 0, 0});
  }
  MatX A(static_cast<Eigen::Index>(rows.size()), nv);
  for (size_t i = 0; i < rows.size(); ++i) A.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();

  SwingSpline out;
  out.segments.resize(static_cast<size_t>(segs));
  for (int s = 0; s < segs; ++s) {
    out.segments[s].start = s == 0 ? 0.0 : h1;
    out.segments[s].duration = h[s];
  }
  for (int axis = 0; axis < 3; ++axis) {
    VecX b(A.rows());
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = rhs[static_cast<size_t>(i)][axis];
    const VecX a = qp::solve_equality_qp(P, VecX::Zero(nv), A, b).z;
    for (int s = 0; s < segs; ++s)
      for (int i = 0; i < 8; ++i)
        out.segments[s].coeffs(i, axis) = a(8 * s + i) / std::pow(h[s], i);
  }
  out.waypoints = {start[0], w1 ? *w1 : out.eval(0.5 * out.duration()), w2};
  return out;
}

}  // namespace

// ---------------------------------------------------------------- geometry

Vec2 com_plane(const Vec3& p) {
  const double d = p.x() * p.x() + p.y() * p.y();
  if (std::sqrt(d) < 1e-6) throw DegenerateStep("com_plane: footstep over the stance foot");
  return Vec2(p.x() * p.z(), p.y() * p.z()) / d;
}

double SwingSpline::duration() const {
  return segments.empty() ? 0.0 : segments.back().start + segments.back().duration;
}

Vec3 SwingSpline::eval(double t, int derivative) const {
  if (segments.empty()) return Vec3::Zero();
  t = std::clamp(t, 0.0, duration());
  size_t s = 0;
  while (s + 1 < segments.size() && t >= segments[s + 1].start) ++s;
  const Segment& seg = segments[s];
  const double x = t - seg.start;
  Vec3 v = Vec3::Zero();
  for (int i = 7; i >= derivative; --i) v = v * x + falling(i, derivative) * seg.coeffs.row(i).transpose();
  return v;
}

double SwingSpline::snap_cost() const {
  double cost = 0.0;
  for (const Segment& seg : segments) {
    Eigen::Matrix<double, 8, 8> H = Eigen::Matrix<double, 8, 8>::Zero();
    for (int i = 4; i < 8; ++i)
      for (int j = 4; j < 8; ++j)
        H(i, j) = falling(i, 4) * falling(j, 4) * std::pow(seg.duration, i + j - 7) / (i + j - 7);
    for (int a = 0; a < 3; ++a) cost += seg.coeffs.col(a).dot(H * seg.coeffs.col(a));
  }
  return cost;
}

SwingSpline min_snap_spline(const Vec3& w0, const Vec3& w1, const Vec3& w2, double T) {
  if (!(T > 0)) throw ConfigError("min_snap_spline: duration must be positive");
  return solve_spline({w0, Vec3::Zero(), Vec3::Zero(), Vec3::Zero()}, w1, w2, 0.5 * T, 0.5 * T);
}

SwingSpline retarget_spline(const std::array<Vec3, 4>& start, const std::optional<Vec3>& w1,
                            const Vec3& w2, double T) {
  if (!(T > 0)) throw ConfigError("retarget_spline: duration must be positive");
  if (w1) return solve_spline(start, w1, w2, 0.5 * T, 0.5 * T);
  return solve_spline(start, std::nullopt, w2, T, 0.0);
}

Vec3 swing_apex_point(const Vec3& w0, const Vec3& w2, double apex) {
  Vec3 w1 = 0.5 * (w0 + w2);
  w1.z() = std::max(w0.z(), w2.z()) + apex;
  return w1;
}

double reference_error(const AlipState& x, const AlipState& ref, const AlipParams& params) {
  const AlipState d = x - ref;
  const double mh = params.mass * params.com_height;
  return std::sqrt(d.head<2>().squaredNorm() + d.tail<2>().squaredNorm() / (mh * mh));
}

// ------------------------------------------------------------------ config

void SimConfig::validate() const {
  plant_params.validate();
  controller.validate();
  const GaitTiming& t = controller.timing;
  if (!(controller_period > 0) || controller_period > 0.5 * t.single_stance + kEps) {
    throw ConfigError("SimConfig: controller_period must be in (0, T_ss/2]");
  }
  auto multiple = [&](double T) {
    const double r = T / controller_period;
    return std::abs(r - std::round(r)) < 1e-6;
  };
  if (!multiple(t.single_stance) || !multiple(t.double_stance)) {
    throw ConfigError("SimConfig: stance durations must be multiples of controller_period");
  }
  if (!(plant_perturbation >= 0 && plant_perturbation < 1)) {
    throw ConfigError("SimConfig: plant_perturbation must be in [0, 1)");
  }
  if (footholds.empty()) throw ConfigError("SimConfig: no footholds");
  for (const auto& fh : footholds) fh.validate();
  if (!(duration >= 0)) throw ConfigError("SimConfig: negative duration");
  if (!(swing_apex >= 0)) throw ConfigError("SimConfig: negative swing_apex");
  if (!(velocity_limit > 0) || !(yaw_rate_limit >= 0)) {
    throw ConfigError("SimConfig: command limits must be positive");
  }
  for (size_t i = 1; i < commands.size(); ++i) {
    if (commands[i].time < commands[i - 1].time) {
      throw ConfigError("SimConfig: commands must be sorted by time");
    }
  }
  for (const auto& c : commands) {
    if (!(c.stance_width > 0)) throw ConfigError("SimConfig: stance_width must be positive");
  }
}

// --------------------------------------------------------------- simulator

Simulator::Simulator(SimConfig cfg) : cfg_(std::move(cfg)), plant_(cfg_.plant_params) {
  cfg_.validate();
  std::sort(cfg_.disturbances.begin(), cfg_.disturbances.end(),
            [](const Disturbance& a, const Disturbance& b) { return a.time < b.time; });
  if (cfg_.plant_perturbation > 0) {
    std::mt19937_64 rng(cfg_.seed);
    std::uniform_real_distribution<double> u(-cfg_.plant_perturbation, cfg_.plant_perturbation);
    plant_.mass *= 1.0 + u(rng);
    plant_.com_height *= 1.0 + u(rng);
  }
  const GaitTiming& timing = cfg_.controller.timing;
  state_.stance = cfg_.start_stance;
  state_.stance_pos = cfg_.start_position;
  state_.heading = cfg_.start_heading;
  state_.command = scripted_command();
  GaitCommand gc;
  gc.velocity = state_.command.velocity;
  gc.stance_width = state_.command.stance_width;
  gc.stance = state_.stance;
  if (cfg_.start_on_reference) {
    state_.x = periodic_reference(gc, cfg_.controller.params, timing).initial_state;
  }
  const Vec3 back = nominal_footstep_delta(gc, other(state_.stance), timing);
  state_.swing_start = state_.stance_pos - yaw_rotation(state_.heading) * back;
  state_.swing_start.z() = state_.stance_pos.z();
  const Vec3 ahead = nominal_footstep_delta(gc, state_.stance, timing);
  state_.target = state_.stance_pos + yaw_rotation(state_.heading) * ahead;
  state_.target.z() = state_.stance_pos.z();
  state_.swing = min_snap_spline(state_.swing_start,
                                 swing_apex_point(state_.swing_start, state_.target, cfg_.swing_apex),
                                 state_.target, timing.single_stance);
}

CommandPoint Simulator::scripted_command() const {
  CommandPoint cmd;
  for (const auto& c : cfg_.commands) {
    if (c.time <= state_.clock + kEps) cmd = c;
  }
  return cmd;
}

void Simulator::set_footholds(std::vector<Foothold> footholds) {
  if (footholds.empty()) throw ConfigError("set_footholds: no footholds");
  cfg_.footholds = std::move(footholds);
  local_step_ = -1;
  // Planned positions stay valid for fallback; foothold indices do not.
  if (state_.last_solution) {
    std::fill(state_.last_solution->assignment.begin(), state_.last_solution->assignment.end(), -1);
  }
  state_.target_foothold = -1;
}

Vec3 Simulator::to_heading(const Vec3& world) const {
  return yaw_rotation(-state_.heading) * world;
}

Vec3 Simulator::to_world(const Vec3& local) const {
  return yaw_rotation(state_.heading) * local;
}

std::vector<Foothold> Simulator::footholds_in_heading_frame() const {
  const Mat3 R = yaw_rotation(state_.heading);
  std::vector<Foothold> out = cfg_.footholds;
  for (Foothold& fh : out) {
    fh.F = fh.F * R;
    fh.f = R.transpose() * fh.f;
    for (Vec3& v : fh.verts) v = R.transpose() * v;
  }
  return out;
}

AlipState Simulator::reference_state(const CommandPoint& command) const {
  GaitCommand gc;
  gc.velocity = command.velocity;
  gc.stance_width = command.stance_width;
  const double t_rem = cfg_.controller.timing.single_stance - state_.phase_time;
  return reference_trajectory(gc, state_.stance, Vec3::Zero(), t_rem, cfg_.controller).x[0];
}

void Simulator::set_target(const Vec3& target, int foothold) {
  state_.target_foothold = foothold;
  if ((target - state_.target).norm() <= kEps) return;
  state_.target = target;
  const double T = cfg_.controller.timing.single_stance;
  const double t = state_.phase_time;
  if (t > kEps && T - t <= cfg_.controller.rate_limit_window + kEps) state_.retargeted_late = true;
  const Vec3 apex = swing_apex_point(state_.swing_start, target, cfg_.swing_apex);
  if (t <= kEps) {
    state_.swing = min_snap_spline(state_.swing_start, apex, target, T);
    return;
  }
  // Re-plan from the current swing foot state; the new spline starts now.
  const std::array<Vec3, 4> start = {state_.swing.eval(t, 0), state_.swing.eval(t, 1),
                                     state_.swing.eval(t, 2), state_.swing.eval(t, 3)};
  const double rest = T - t;
  SwingSpline s = t < 0.5 * T - kEps ? solve_spline(start, apex, target, 0.5 * T - t, 0.5 * T)
                                     : solve_spline(start, std::nullopt, target, rest, 0.0);
  for (auto& seg : s.segments) seg.start += t;
  // Pad with the already flown part so eval keeps using phase time.
  SwingSpline::Segment flown;
  flown.start = 0.0;
  flown.duration = t;
  flown.coeffs.row(0) = start[0].transpose();
  s.segments.insert(s.segments.begin(), flown);
  s.waypoints[0] = state_.swing_start;
  state_.swing = std::move(s);
}

void Simulator::control(TickLog& log) {
  const MpfcConfig& mc = cfg_.controller;
  const double t_rem = mc.timing.single_stance - state_.phase_time;
  if (local_step_ != state_.step) {
    local_footholds_ = footholds_in_heading_frame();
    local_step_ = state_.step;
  }
  GaitCommand gc;
  gc.velocity = state_.command.velocity;
  gc.stance_width = state_.command.stance_width;
  MpfcProblem prob = make_problem(state_.x, to_heading(state_.stance_pos), state_.stance,
                                  local_footholds_, gc, t_rem, mc);
  if (state_.last_solution && state_.last_solution_step == state_.step) {
    prob.previous_solution = state_.last_solution;
  }
  const MpfcProblem pruned = prune_footholds(prob, mc, cfg_.max_candidates, cfg_.reach_radius);
  if (problem_sink_) problem_sink_(pruned);
  MpfcSolution sol;
  try {
    sol = solve_mpfc(pruned, mc);
  } catch (const AllNodesInfeasible&) {
    fallback(log);
    return;
  }
  const NextFootstep next = extract_next_footstep(sol);
  state_.u = sol.u(0, 0);
  // Keep the plan in world coordinates and global foothold indices.
  sol.assignment[0] = -1;
  for (size_t n = 1; n < sol.assignment.size(); ++n) {
    sol.assignment[n] = pruned.foothold_source[static_cast<size_t>(sol.assignment[n])];
  }
  log.solved = true;
  log.stats = sol.stats;
  log.objective = sol.objective;
  for (const Vec3& p : sol.footsteps) log.plan.push_back(to_world(p));
  state_.last_solution = sol;
  state_.last_solution_step = state_.step;
  state_.last_plan_world = log.plan;
  set_target(to_world(next.position), sol.assignment[1]);
}

void Simulator::fallback(TickLog& log) {
  log.fallback = true;
  const MpfcConfig& mc = cfg_.controller;
  if (!state_.last_solution) throw ControllerFailure("no feasible plan and no previous solution");
  const MpfcSolution& prev = *state_.last_solution;
  const int m = state_.step - state_.last_solution_step;
  if (m + 1 >= prev.horizon) throw ControllerFailure("no feasible plan; previous plan exhausted");
  // Time-shift the previous plan: same knot grid, later period.
  const int K = prev.knots;
  double dt = mc.timing.knot_dt(), elapsed = state_.phase_time;
  if (m == 0) {
    dt = prev.time_remaining / (K - 1);
    elapsed = prev.time_remaining - (mc.timing.single_stance - state_.phase_time);
  }
  const int k = std::clamp(static_cast<int>(std::floor(elapsed / std::max(dt, 1e-12))), 0, K - 2);
  state_.u = prev.u(m, k);
  set_target(state_.last_plan_world[static_cast<size_t>(m + 1)],
             prev.assignment[static_cast<size_t>(m + 1)]);
}

void Simulator::touchdown() {
  state_.x_touchdown = state_.x;
  state_.touchdown_from = state_.stance_pos;
  state_.commanded_target = state_.target;
  // The foot lands where the swing trajectory ends.
  state_.target = state_.swing.eval(state_.swing.duration());
  state_.phase = Phase::kDoubleStance;
  state_.phase_ticks = 0;
  state_.phase_time = 0.0;
  state_.u = 0.0;
}

void Simulator::liftoff(TickLog& log) {
  const GaitTiming& timing = cfg_.controller.timing;
  const ResetMap reset = reset_map(plant_, timing.double_stance);
  const Vec3 p_minus = to_heading(state_.touchdown_from);
  const Vec3 p_plus = to_heading(state_.target);
  const AlipState x_plus = reset.change_stance_frame(state_.x, p_minus, p_plus);

  Touchdown td;
  td.time = state_.clock;
  td.step = state_.step;
  td.position = state_.target;
  td.commanded = state_.commanded_target;
  td.foothold = state_.target_foothold;
  if (td.foothold >= 0) {
    td.violation = cfg_.footholds[static_cast<size_t>(td.foothold)].violation(td.position);
  } else {
    td.violation = INFINITY;
    for (const auto& fh : cfg_.footholds) td.violation = std::min(td.violation, fh.violation(td.position));
  }
  td.x_minus = state_.x_touchdown;
  td.x_plus = x_plus;
  td.p_minus = state_.touchdown_from;
  td.retargeted_late = state_.retargeted_late;
  state_.retargeted_late = false;

  const double dpsi = state_.command.yaw_rate * timing.step_period();
  td.heading_change = dpsi;
  const Mat3 Rinv = yaw_rotation(-dpsi);
  AlipState x = x_plus;
  x.head<2>() = Rinv.topLeftCorner<2, 2>() * x_plus.head<2>();
  x.tail<2>() = Rinv.topLeftCorner<2, 2>() * x_plus.tail<2>();

  state_.x = x;
  state_.heading += dpsi;
  state_.swing_start = state_.touchdown_from;
  state_.stance_pos = state_.target;
  state_.stance = other(state_.stance);
  ++state_.step;
  state_.phase = Phase::kSingleStance;
  state_.phase_ticks = 0;
  state_.phase_time = 0.0;

  // Nominal target until the first solve of the new stance.
  GaitCommand gc;
  gc.velocity = state_.command.velocity;
  gc.stance_width = state_.command.stance_width;
  Vec3 nominal = state_.stance_pos + to_world(nominal_footstep_delta(gc, state_.stance, timing));
  nominal.z() = state_.stance_pos.z();
  state_.target = nominal;
  state_.target_foothold = -1;
  state_.swing = min_snap_spline(state_.swing_start,
                                 swing_apex_point(state_.swing_start, nominal, cfg_.swing_apex),
                                 nominal, timing.single_stance);
  log.touchdown = td;
}

TickLog Simulator::step(const CommandPoint& command) {
  const GaitTiming& timing = cfg_.controller.timing;
  const double period = cfg_.controller_period;
  CommandPoint cmd = command;
  if (cmd.velocity.norm() > cfg_.velocity_limit) {
    cmd.velocity *= cfg_.velocity_limit / cmd.velocity.norm();
  }
  cmd.yaw_rate = std::clamp(cmd.yaw_rate, -cfg_.yaw_rate_limit, cfg_.yaw_rate_limit);
  if (!(cmd.stance_width > 0)) cmd.stance_width = 0.2;
  state_.command = cmd;

  TickLog log;
  log.time = state_.clock;
  log.command = cmd;

  while (next_disturbance_ < cfg_.disturbances.size() &&
         cfg_.disturbances[next_disturbance_].time <= state_.clock + kEps) {
    state_.x.tail<2>() += cfg_.disturbances[next_disturbance_].impulse;
    ++next_disturbance_;
  }

  if (state_.phase == Phase::kSingleStance) {
    log.reference_error = reference_error(state_.x, reference_state(cmd), cfg_.controller.params);
    control(log);
  }

  const Mat4 A = alip_a(plant_);
  const Vec4 B = alip_b();
  const Mat43 Bcop = cop_input_matrix(plant_);
  const int substeps = static_cast<int>(std::ceil(period / 1e-3 - 1e-9));
  const double h = period / substeps;
  if (state_.phase == Phase::kSingleStance) {
    const double u = state_.u;
    auto f = [&](const AlipState& x) -> AlipState { return A * x + B * u; };
    for (int i = 0; i < substeps; ++i) {
      const AlipState k1 = f(state_.x), k2 = f(state_.x + 0.5 * h * k1),
                      k3 = f(state_.x + 0.5 * h * k2), k4 = f(state_.x + h * k3);
      state_.x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
  } else {
    // Center of pressure sweeps linearly from the old to the new foot.
    const Vec3 dp = to_heading(state_.target) - to_heading(state_.touchdown_from);
    const double T = timing.double_stance;
    auto f = [&](const AlipState& x, double t) -> AlipState {
      return A * x + Bcop * (dp * (t / T));
    };
    double t = state_.phase_time;
    for (int i = 0; i < substeps; ++i) {
      const AlipState k1 = f(state_.x, t), k2 = f(state_.x + 0.5 * h * k1, t + 0.5 * h),
                      k3 = f(state_.x + 0.5 * h * k2, t + 0.5 * h), k4 = f(state_.x + h * k3, t + h);
      state_.x += h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
      t += h;
    }
  }
  ++state_.tick;
  ++state_.phase_ticks;
  state_.clock = static_cast<double>(state_.tick) * period;
  state_.phase_time = state_.phase_ticks * period;

  log.phase = state_.phase;
  log.u = state_.u;
  if (state_.phase == Phase::kSingleStance && state_.phase_time >= timing.single_stance - kEps) {
    touchdown();
  } else if (state_.phase == Phase::kDoubleStance &&
             state_.phase_time >= timing.double_stance - kEps) {
    liftoff(log);
  }

  log.step = state_.step;
  log.stance = state_.stance;
  log.x = state_.x;
  log.heading = state_.heading;
  log.stance_pos = state_.stance_pos;
  log.target = state_.target;
  log.foothold = state_.target_foothold;
  log.swing_pos = state_.phase == Phase::kSingleStance ? state_.swing.eval(state_.phase_time)
                                                       : state_.target;
  log.com = com_position();
  return log;
}

Vec3 Simulator::com_position() const {
  // During double stance the state is still relative to the old foot.
  const Vec3& foot =
      state_.phase == Phase::kSingleStance ? state_.stance_pos : state_.touchdown_from;
  const Vec3 rel(state_.x.x(), state_.x.y(), 0.0);
  Vec3 com = foot + to_world(rel);
  Vec2 k = Vec2::Zero();
  try {
    k = com_plane(to_heading(state_.target) - to_heading(foot));
  } catch (const DegenerateStep&) {
  }
  com.z() = foot.z() + cfg_.controller.params.com_height + k.dot(rel.head<2>());
  return com;
}

// ------------------------------------------------------------------ logging

Json to_json_record(const TickLog& l, bool include_timing) {
  Json j = {{"t", l.time},
            {"phase", l.phase == Phase::kSingleStance ? "single" : "double"},
            {"step", l.step},
            {"stance", l.stance},
            {"x", l.x},
            {"com", l.com},
            {"stance_pos", l.stance_pos},
            {"swing_pos", l.swing_pos},
            {"heading", l.heading},
            {"u", l.u},
            {"target", l.target},
            {"foothold", l.foothold},
            {"command", {{"velocity", l.command.velocity}, {"yaw_rate", l.command.yaw_rate}}},
            {"solved", l.solved},
            {"fallback", l.fallback},
            {"reference_error", l.reference_error}};
  if (l.solved) {
    j["objective"] = l.objective;
    j["nodes"] = l.stats.nodes_explored;
    j["qp_solves"] = l.stats.qp_solves;
    j["relaxation_was_integral"] = l.stats.relaxation_was_integral;
    j["plan"] = l.plan;
    if (include_timing) j["solve_time"] = l.stats.wall_time;
  }
  if (l.touchdown) {
    const Touchdown& td = *l.touchdown;
    j["touchdown"] = {{"time", td.time},       {"step", td.step},
                      {"position", td.position}, {"commanded", td.commanded},
                      {"foothold", td.foothold},
                      {"violation", td.violation}, {"x_minus", td.x_minus},
                      {"x_plus", td.x_plus},     {"p_minus", td.p_minus}};
  }
  return j;
}

Json summary_json(const SimResult& r) {
  return {{"success", r.success},
          {"failure", r.failure},
          {"failure_time", r.failure_time},
          {"steps", r.steps},
          {"duration", r.duration},
          {"mean_velocity", r.mean_velocity},
          {"max_violation", r.max_violation},
          {"solves", r.solves},
          {"fallbacks", r.fallbacks},
          {"mean_solve_time", r.mean_solve_time},
          {"max_solve_time", r.max_solve_time},
          {"touchdowns", r.touchdowns.size()},
          {"step_errors", r.step_errors}};
}

SimResult run_scenario(const SimConfig& cfg, std::ostream* jsonl, bool keep_ticks,
                       bool log_timing, std::ostream* problems) {
  Simulator sim(cfg);
  if (problems) {
    sim.set_problem_sink([problems](const MpfcProblem& p) { *problems << Json(p).dump() << '\n'; });
  }
  SimResult res;
  const int ticks = static_cast<int>(std::llround(cfg.duration / cfg.controller_period));
  const Vec3 com_start = sim.com_position();
  Vec3 com_end = com_start;
  double solve_sum = 0.0;
  for (int i = 0; i < ticks; ++i) {
    TickLog log;
    try {
      log = sim.step(sim.scripted_command());
    } catch (const ControllerFailure& e) {
      res.success = false;
      res.failure = std::string("step ") + std::to_string(sim.state().step) + ": " + e.what();
      res.failure_time = sim.state().clock;
      break;
    }
    com_end = log.com;
    if (log.solved) {
      ++res.solves;
      solve_sum += log.stats.wall_time;
      res.max_solve_time = std::max(res.max_solve_time, log.stats.wall_time);
    }
    res.fallbacks += log.fallback;
    if (log.touchdown) {
      res.touchdowns.push_back(*log.touchdown);
      res.max_violation = std::max(res.max_violation, log.touchdown->violation);
      res.step_errors.push_back(
          reference_error(sim.state().x, sim.reference_state(sim.state().command),
                          cfg.controller.params));
    }
    if (jsonl) *jsonl << to_json_record(log, log_timing).dump() << '\n';
    const bool diverged = !log.x.allFinite() || log.x.head<2>().norm() > 2.0;
    if (keep_ticks) res.ticks.push_back(std::move(log));
    if (diverged) {
      res.success = false;
      res.failure = "state diverged";
      res.failure_time = sim.state().clock;
      break;
    }
  }
  res.steps = sim.state().step;
  res.duration = sim.state().clock;
  if (res.duration > 0) res.mean_velocity = (com_end - com_start).head<2>() / res.duration;
  res.mean_solve_time = res.solves ? solve_sum / res.solves : 0.0;
  if (res.success && res.max_violation > 1e-6) {
    res.success = false;
    res.failure = "touchdown outside its foothold";
  }
  return res;
}

void write_csv(const SimResult& r, std::ostream& out) {
  out << "time,com_x,com_y,com_z,L_x,L_y,foot_x,foot_y,foot_z,foothold,solve_time_ms,nodes\n";
  char line[512];
  for (const TickLog& l : r.ticks) {
    std::snprintf(line, sizeof line, "%.4f,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%d,%.4f,%d\n",
                  l.time, l.com.x(), l.com.y(), l.com.z(), l.x(2), l.x(3), l.target.x(),
                  l.target.y(), l.target.z(), l.foothold,
                  l.solved ? 1e3 * l.stats.wall_time : 0.0, l.solved ? l.stats.nodes_explored : 0);
    out << line;
  }
}

// ------------------------------------------------------------------ terrain

Foothold box_foothold(const Vec2& lo, const Vec2& hi, double z) {
  return lift_to_foothold({lo, Vec2(hi.x(), lo.y()), hi, Vec2(lo.x(), hi.y())},
                          Plane{0.0, 0.0, z});
}

std::vector<Foothold> stair_footholds(double tread, double rise, int up, int down, double width,
                                      double flat_before, double flat_after, double margin) {
  if (!(tread > 2 * margin) || !(width > 2 * margin) || up < 0 || down < 0) {
    throw ConfigError("stair_footholds: bad dimensions");
  }
  std::vector<Foothold> out;
  const double y0 = -0.5 * width + margin, y1 = 0.5 * width - margin;
  double x = -flat_before;
  auto add = [&](double length, double z) {
    out.push_back(box_foothold(Vec2(x + margin, y0), Vec2(x + length - margin, y1), z));
    x += length;
  };
  add(flat_before, 0.0);
  for (int i = 1; i <= up; ++i) add(tread, rise * i);
  for (int i = down - 1; i >= 0; --i) add(tread, rise * (i + up - down));
  add(flat_after, rise * (up - down));
  return out;
}

std::vector<Foothold> terrain_from_json(const Json& t, const std::string& base_dir) {
  auto resolve = [&](const std::string& file) {
    std::filesystem::path path = file;
    if (path.is_relative()) path = std::filesystem::path(base_dir) / path;
    return path.string();
  };
  try {
    if (t.contains("footholds")) {
      if (t.at("footholds").is_string()) {
        return read_footholds(read_json_file(resolve(t.at("footholds").get<std::string>())));
      }
      return read_footholds(t);
    }
    if (t.contains("stairs")) {
      const Json& s = t.at("stairs");
      return stair_footholds(s.value("tread", 1.0), s.value("rise", 0.15), s.value("up", 3),
                             s.value("down", 3), s.value("width", 2.0),
                             s.value("flat_before", 2.0), s.value("flat_after", 3.0),
                             s.value("margin", 0.05));
    }
    if (t.contains("flat")) {
      const Json& f = t.at("flat");
      return {box_foothold(f.value("lo", Vec2(-5, -5)), f.value("hi", Vec2(50, 5)),
                           f.value("height", 0.0))};
    }
    if (t.contains("heightmap")) {
      SegmentationConfig seg;
      if (t.contains("segmentation")) seg = t.at("segmentation").get<SegmentationConfig>();
      seg.validate();
      return decompose_terrain(read_esri_ascii_file(resolve(t.at("heightmap").get<std::string>())),
                               seg);
    }
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("terrain: ") + e.what());
  }
  throw ConfigError("terrain: needs footholds, stairs, flat or heightmap");
}

SimConfig scenario_from_json(const Json& j, const std::string& base_dir) {
  if (!j.is_object()) throw ConfigError("scenario: expected an object");
  SimConfig c;
  try {
    if (j.contains("controller")) c.controller = j.at("controller").get<MpfcConfig>();
    c.plant_params = c.controller.params;
    if (j.contains("plant")) {
      const Json& p = j.at("plant");
      if (p.contains("params")) c.plant_params = p.at("params").get<AlipParams>();
      if (p.contains("perturbation")) c.plant_perturbation = p.at("perturbation").get<double>();
    }
    if (j.contains("controller_period")) c.controller_period = j.at("controller_period").get<double>();
    if (j.contains("duration")) c.duration = j.at("duration").get<double>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("swing_apex")) c.swing_apex = j.at("swing_apex").get<double>();
    if (j.contains("pruning")) {
      const Json& p = j.at("pruning");
      if (p.contains("max_candidates")) c.max_candidates = p.at("max_candidates").get<int>();
      if (p.contains("reach_radius")) c.reach_radius = p.at("reach_radius").get<double>();
    }
    if (j.contains("limits")) {
      const Json& l = j.at("limits");
      if (l.contains("velocity")) c.velocity_limit = l.at("velocity").get<double>();
      if (l.contains("yaw_rate")) c.yaw_rate_limit = l.at("yaw_rate").get<double>();
    }
    if (j.contains("initial")) {
      const Json& s = j.at("initial");
      if (s.contains("position")) c.start_position = s.at("position").get<Vec3>();
      if (s.contains("stance")) c.start_stance = s.at("stance").get<Stance>();
      if (s.contains("heading")) c.start_heading = s.at("heading").get<double>();
      if (s.contains("on_reference")) c.start_on_reference = s.at("on_reference").get<bool>();
    }
    for (const auto& cp : j.value("commands", Json::array())) {
      CommandPoint p;
      p.time = cp.value("time", 0.0);
      if (cp.contains("velocity")) p.velocity = cp.at("velocity").get<Vec2>();
      p.yaw_rate = cp.value("yaw_rate", 0.0);
      p.stance_width = cp.value("stance_width", 0.2);
      c.commands.push_back(p);
    }
    for (const auto& d : j.value("disturbances", Json::array())) {
      c.disturbances.push_back({d.at("time").get<double>(), d.at("impulse").get<Vec2>()});
    }
    if (!j.contains("terrain")) throw ConfigError("scenario: missing terrain");
    c.footholds = terrain_from_json(j.at("terrain"), base_dir);
  } catch (const Json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  c.validate();
  return c;
}

}  // namespace mpfc
