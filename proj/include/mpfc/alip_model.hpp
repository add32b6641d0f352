#pragma once

#include <array>

#include "mpfc/types.hpp"

namespace mpfc {

struct AlipParams {
  double mass = 30.0;        // kg
  double com_height = 0.85;  // m, above the local terrain plane
  double gravity = 9.81;     // m/s^2

  void validate() const;
};

/// Stance side. The sign convention follows the reference gait: the next
/// footstep is displaced by sign() * stance_width along y, so left stance is
/// -1 (next foot lands to the right) and right stance is +1.
enum class Stance { kLeft, kRight };

constexpr int sign(Stance s) { return s == Stance::kLeft ? -1 : 1; }
constexpr Stance other(Stance s) {
  return s == Stance::kLeft ? Stance::kRight : Stance::kLeft;
}

struct GaitTiming {
  double single_stance = 0.3;  // T_ss
  double double_stance = 0.1;  // T_ds
  int knots = 4;               // K, knot points per single stance
  int horizon = 3;             // N, stance periods planned

  double step_period() const { return single_stance + double_stance; }
  double knot_dt() const { return single_stance / (knots - 1); }
  void validate() const;
};

struct GaitCommand {
  Vec2 velocity = Vec2::Zero();  // desired average horizontal velocity
  double stance_width = 0.2;     // l
  Stance stance = Stance::kLeft; // stance of the first period

  void validate() const;
};

class SingularFixedPoint : public Error {
 public:
  SingularFixedPoint(double condition);
  double condition() const { return condition_; }

 private:
  double condition_;
};

/// Continuous ALIP matrices with sagittal ankle torque.
Mat4 alip_a(const AlipParams& params);
Vec4 alip_b();

/// Derivative A x + B u.
AlipState continuous_dynamics(const AlipState& x, double u,
                              const AlipParams& params);

/// Zero-order-hold discretization over dt.
struct DiscreteAlip {
  Mat4 A;
  Vec4 B;
};
DiscreteAlip discretize(const AlipParams& params, double dt);

/// Input matrix of the double stance dynamics when the center of pressure
/// is treated as a virtual contact, x' = A x + B_cop (p_cop - p_minus).
Mat43 cop_input_matrix(const AlipParams& params);

/// Linear double stance reset
///   x+ = Ar x- + (-Bds - Bfp) p- + (Bds + Bfp) p+.
/// Bds is the first-order-hold integral of the CoP sweep over double stance,
/// Bfp the change of coordinates to the new stance foot.
struct ResetMap {
  Mat4 Ar;
  Mat43 Bds;
  Mat43 Bfp;

  Mat43 Br() const { return Bds + Bfp; }

  /// State at the end of double stance, still relative to p_minus.
  AlipState integrate_double_stance(const AlipState& x_minus,
                                    const Vec3& p_minus,
                                    const Vec3& p_plus) const;
  /// Re-expresses a state relative to p_minus as one relative to p_plus.
  AlipState change_stance_frame(const AlipState& x, const Vec3& p_minus,
                                const Vec3& p_plus) const;
  AlipState apply(const AlipState& x_minus, const Vec3& p_minus,
                  const Vec3& p_plus) const;
};

ResetMap reset_map(const AlipParams& params, double double_stance);

AlipState double_stance_reset(const AlipState& x_minus,
                              const FootstepPosition& p_minus,
                              const FootstepPosition& p_plus,
                              const AlipParams& params,
                              const GaitTiming& timing);

/// x_{n+1,1} = A x_{n,1} + Br (p_{n+1} - p_n), zero ankle torque, with the
/// footstep delta expressed in the current stance frame.
struct StepToStep {
  Mat4 A;
  Mat43 Br;
};
StepToStep step_to_step_matrices(const AlipParams& params,
                                 const GaitTiming& timing);

/// Period-2 orbit of the step-to-step dynamics for a command.
struct PeriodicReference {
  AlipState initial_state;          // x_{1,1}, stance command.stance
  AlipState second_state;           // x_{2,1}, opposite stance
  std::array<Vec3, 2> footstep_deltas;  // p2 - p1, p3 - p2
  double condition = 1.0;           // of the fixed-point system
};

/// Throws SingularFixedPoint if (I - A_s2s^2) is numerically singular.
PeriodicReference periodic_reference(const GaitCommand& command,
                                     const AlipParams& params,
                                     const GaitTiming& timing);

/// Nominal footstep delta leaving a stance of the given side.
Vec3 nominal_footstep_delta(const GaitCommand& command, Stance stance,
                            const GaitTiming& timing);

}  // namespace mpfc
