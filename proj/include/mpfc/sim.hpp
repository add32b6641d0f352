#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "mpfc/io.hpp"
#include "mpfc/mpfc.hpp"

namespace mpfc {

class DegenerateStep : public Error {
 public:
  using Error::Error;
};

class ControllerFailure : public Error {
 public:
  using Error::Error;
};

/// Slopes (k_x, k_y) of the least inclined plane through the stance foot
/// and p (stance frame). Throws DegenerateStep when p is over the stance foot.
Vec2 com_plane(const Vec3& p);

/// Piecewise polynomial of degree 7 per axis; coefficient row i multiplies
/// s^i with s the time since the segment start.
struct SwingSpline {
  struct Segment {
    double start = 0.0;
    double duration = 0.0;
    Eigen::Matrix<double, 8, 3> coeffs = Eigen::Matrix<double, 8, 3>::Zero();
  };
  std::vector<Segment> segments;
  std::array<Vec3, 3> waypoints;

  double duration() const;
  /// derivative-th time derivative at t, clamped to [0, duration].
  Vec3 eval(double t, int derivative = 0) const;
  /// Integral of the squared snap over the spline, summed over axes.
  double snap_cost() const;
};

/// Two segments meeting at w1 at T/2; zero velocity, acceleration and jerk
/// at both ends, C4 at the junction, minimum integrated squared snap.
SwingSpline min_snap_spline(const Vec3& w0, const Vec3& w1, const Vec3& w2, double T);

/// Re-plans from a mid-swing state (position and first three derivatives)
/// to w2, rest at the end. Passes through w1 at mid-time when given.
SwingSpline retarget_spline(const std::array<Vec3, 4>& start, const std::optional<Vec3>& w1,
                            const Vec3& w2, double T);

/// Apex waypoint above the chord midpoint.
Vec3 swing_apex_point(const Vec3& w0, const Vec3& w2, double apex);

struct CommandPoint {
  double time = 0.0;
  Vec2 velocity = Vec2::Zero();  // heading frame
  double yaw_rate = 0.0;         // rad/s
  double stance_width = 0.2;
};

struct Disturbance {
  double time = 0.0;
  Vec2 impulse = Vec2::Zero();  // added to (L_x, L_y), kg m^2/s
};

struct SimConfig {
  AlipParams plant_params;
  /// Relative plant mass and height perturbation, drawn uniformly from the
  /// seed.
  double plant_perturbation = 0.0;
  MpfcConfig controller;
  double controller_period = 0.01;  // s
  std::vector<Foothold> footholds;  // world frame
  std::vector<Disturbance> disturbances;
  std::vector<CommandPoint> commands;  // piecewise constant, sorted by time
  std::uint64_t seed = 0;
  double swing_apex = 0.07;  // m
  double duration = 10.0;    // s
  int max_candidates = 9;
  double reach_radius = 0.5;  // m
  Vec3 start_position = Vec3::Zero();  // initial stance foot
  Stance start_stance = Stance::kLeft;
  double start_heading = 0.0;  // rad
  /// Start on the periodic orbit of the first command at the beginning of
  /// single stance; otherwise at rest over the stance foot.
  bool start_on_reference = true;
  double velocity_limit = 1.0;  // m/s, applied to commands
  double yaw_rate_limit = 0.5;  // rad/s

  void validate() const;
};

enum class Phase { kSingleStance, kDoubleStance };

struct SimState {
  long tick = 0;
  double clock = 0.0;
  Phase phase = Phase::kSingleStance;
  int phase_ticks = 0;
  double phase_time = 0.0;
  int step = 0;  // stance index
  AlipState x = AlipState::Zero();  // relative to the stance foot, heading axes
  Vec3 stance_pos = Vec3::Zero();   // world
  Stance stance = Stance::kLeft;
  double heading = 0.0;
  Vec3 swing_start = Vec3::Zero();  // world, where the swing foot lifted off
  SwingSpline swing;                // world
  Vec3 target = Vec3::Zero();       // world touchdown target
  int target_foothold = -1;         // index into SimConfig::footholds
  CommandPoint command;
  double u = 0.0;
  std::optional<MpfcSolution> last_solution;
  int last_solution_step = -1;
  std::vector<Vec3> last_plan_world;
  bool retargeted_late = false;
  /// Set through double stance: pre-touchdown state and feet.
  AlipState x_touchdown = AlipState::Zero();
  Vec3 touchdown_from = Vec3::Zero();
  Vec3 commanded_target = Vec3::Zero();
};

struct Touchdown {
  double time = 0.0;
  int step = 0;
  Vec3 position = Vec3::Zero();   // world, swing spline endpoint
  Vec3 commanded = Vec3::Zero();  // last controller target
  int foothold = -1;
  double violation = 0.0;
  AlipState x_minus = AlipState::Zero();  // end of single stance
  AlipState x_plus = AlipState::Zero();   // start of next single stance
  Vec3 p_minus = Vec3::Zero();
  double heading_change = 0.0;
  bool retargeted_late = false;  // target moved inside the rate-limit window
};

struct TickLog {
  double time = 0.0;
  Phase phase = Phase::kSingleStance;
  int step = 0;
  Stance stance = Stance::kLeft;
  AlipState x = AlipState::Zero();
  Vec3 com = Vec3::Zero();  // world
  Vec3 stance_pos = Vec3::Zero();
  Vec3 swing_pos = Vec3::Zero();
  double heading = 0.0;
  double u = 0.0;
  Vec3 target = Vec3::Zero();
  int foothold = -1;
  CommandPoint command;
  bool solved = false;
  bool fallback = false;
  SolveStats stats;
  double objective = 0.0;
  std::vector<Vec3> plan;  // world footsteps p_1..p_N
  double reference_error = 0.0;
  std::optional<Touchdown> touchdown;
};

Json to_json_record(const TickLog& log, bool include_timing);

class Simulator {
 public:
  explicit Simulator(SimConfig cfg);

  const SimState& state() const { return state_; }
  const SimConfig& config() const { return cfg_; }
  const AlipParams& plant_params() const { return plant_; }

  /// Advances one controller period under the given command.
  TickLog step(const CommandPoint& command);
  /// Command from the script at the current clock.
  CommandPoint scripted_command() const;

  /// Replaces the terrain; the robot keeps its state.
  void set_footholds(std::vector<Foothold> footholds);

  /// Called with every problem handed to the solver (after pruning).
  void set_problem_sink(std::function<void(const MpfcProblem&)> sink) {
    problem_sink_ = std::move(sink);
  }

  Vec3 com_position() const;  // world

  /// Reference state for the current stance and phase.
  AlipState reference_state(const CommandPoint& command) const;

 private:
  void control(TickLog& log);
  void fallback(TickLog& log);
  void set_target(const Vec3& target, int foothold);
  void touchdown();
  void liftoff(TickLog& log);
  std::vector<Foothold> footholds_in_heading_frame() const;
  Vec3 to_heading(const Vec3& world) const;
  Vec3 to_world(const Vec3& local) const;

  SimConfig cfg_;
  AlipParams plant_;
  SimState state_;
  size_t next_disturbance_ = 0;
  std::vector<Foothold> local_footholds_;  // cached per stance
  int local_step_ = -1;
  std::function<void(const MpfcProblem&)> problem_sink_;
};

struct SimResult {
  bool success = true;
  std::string failure;
  double failure_time = 0.0;
  int steps = 0;
  double duration = 0.0;
  std::vector<Touchdown> touchdowns;
  double max_violation = 0.0;
  Vec2 mean_velocity = Vec2::Zero();  // CoM displacement over time, world
  int solves = 0;
  int fallbacks = 0;
  double mean_solve_time = 0.0;
  double max_solve_time = 0.0;
  /// Reference error at each touchdown (start of single stance).
  std::vector<double> step_errors;
  std::vector<TickLog> ticks;
};

Json summary_json(const SimResult& r);

/// Runs the scripted scenario for cfg.duration. Streams one JSON record per
/// tick to jsonl when given. Keeps the tick logs in the result when
/// keep_ticks is set. Every solver problem goes to problems as one JSON line
/// when given (a replay file for the benchmark).
SimResult run_scenario(const SimConfig& cfg, std::ostream* jsonl = nullptr,
                       bool keep_ticks = true, bool log_timing = false,
                       std::ostream* problems = nullptr);

/// CSV summary: time, CoM, L, footstep, foothold, solve time, nodes.
void write_csv(const SimResult& r, std::ostream& out);

/// Normalized distance between an ALIP state and its reference: positions
/// in metres, momenta divided by m H.
double reference_error(const AlipState& x, const AlipState& ref, const AlipParams& params);

// Terrain builders for scenarios.
Foothold box_foothold(const Vec2& lo, const Vec2& hi, double z);
/// Flat start, then `up` treads rising by `rise`, then `down` treads back
/// to the start level and a flat end. Each tread is inset by margin.
std::vector<Foothold> stair_footholds(double tread, double rise, int up, int down,
                                      double width, double flat_before, double flat_after,
                                      double margin);

/// Terrain object: {"footholds": [...] | file}, {"stairs": {...}},
/// {"flat": {...}} or {"heightmap": file, "segmentation": {...}}.
std::vector<Foothold> terrain_from_json(const Json& terrain, const std::string& base_dir = ".");

/// Scenario document to config. Relative heightmap paths resolve against
/// base_dir.
SimConfig scenario_from_json(const Json& j, const std::string& base_dir = ".");

}  // namespace mpfc
