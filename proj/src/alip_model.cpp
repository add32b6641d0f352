#include "mpfc/alip_model.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

namespace mpfc {

namespace {

// A is a signed permutation scaled by 1/(mH) and mg, so its inverse is exact.
Mat4 alip_a_inverse(const AlipParams& p) {
  const double mh = p.mass * p.com_height;
  const double mg = p.mass * p.gravity;
  Mat4 inv = Mat4::Zero();
  inv(0, 3) = 1.0 / mg;
  inv(1, 2) = -1.0 / mg;
  inv(2, 1) = -mh;
  inv(3, 0) = mh;
  return inv;
}

}  // namespace

void AlipParams::validate() const {
  if (!(mass > 0.0) || !(com_height > 0.0) || !(gravity > 0.0)) {
    throw ConfigError("AlipParams: mass, com_height and gravity must be > 0");
  }
}

void GaitTiming::validate() const {
  if (!(single_stance > 0.0) || !(double_stance > 0.0)) {
    throw ConfigError("GaitTiming: stance durations must be > 0");
  }
  if (knots < 2 || horizon < 1) {
    throw ConfigError("GaitTiming: need knots >= 2 and horizon >= 1");
  }
}

void GaitCommand::validate() const {
  if (!(stance_width > 0.0)) {
    throw ConfigError("GaitCommand: stance_width must be > 0");
  }
  if (!velocity.allFinite()) {
    throw ConfigError("GaitCommand: velocity must be finite");
  }
}

SingularFixedPoint::SingularFixedPoint(double condition)
    : Error([condition] {
        std::ostringstream os;
        os << "periodic reference fixed-point system is singular (condition "
           << condition << ")";
        return os.str();
      }()),
      condition_(condition) {}

Mat4 alip_a(const AlipParams& p) {
  const double mh = p.mass * p.com_height;
  const double mg = p.mass * p.gravity;
  Mat4 a = Mat4::Zero();
  a(0, 3) = 1.0 / mh;
  a(1, 2) = -1.0 / mh;
  a(2, 1) = -mg;
  a(3, 0) = mg;
  return a;
}

Vec4 alip_b() { return Vec4(0.0, 0.0, 0.0, 1.0); }

AlipState continuous_dynamics(const AlipState& x, double u,
                              const AlipParams& params) {
  return alip_a(params) * x + alip_b() * u;
}

DiscreteAlip discretize(const AlipParams& params, double dt) {
  const Mat4 a = alip_a(params);
  DiscreteAlip d;
  d.A = (a * dt).exp();
  d.B = alip_a_inverse(params) * (d.A - Mat4::Identity()) * alip_b();
  return d;
}

Mat43 cop_input_matrix(const AlipParams& p) {
  const double mg = p.mass * p.gravity;
  Mat43 b = Mat43::Zero();
  b(2, 1) = mg;
  b(3, 0) = -mg;
  return b;
}

AlipState ResetMap::integrate_double_stance(const AlipState& x_minus,
                                            const Vec3& p_minus,
                                            const Vec3& p_plus) const {
  return Ar * x_minus + Bds * (p_plus - p_minus);
}

AlipState ResetMap::change_stance_frame(const AlipState& x,
                                        const Vec3& p_minus,
                                        const Vec3& p_plus) const {
  return x + Bfp * (p_plus - p_minus);
}

AlipState ResetMap::apply(const AlipState& x_minus, const Vec3& p_minus,
                          const Vec3& p_plus) const {
  return Ar * x_minus + (-Bds - Bfp) * p_minus + Br() * p_plus;
}

ResetMap reset_map(const AlipParams& params, double double_stance) {
  const Mat4 a = alip_a(params);
  const Mat4 a_inv = alip_a_inverse(params);
  const Mat4 eye = Mat4::Identity();

  ResetMap r;
  r.Ar = (a * double_stance).exp();
  const Mat4 ar_inv = (-a * double_stance).exp();
  r.Bds = r.Ar * a_inv *
          ((1.0 / double_stance) * a_inv * (eye - ar_inv) - ar_inv) *
          cop_input_matrix(params);
  // CoM position relative to the new stance foot.
  r.Bfp = Mat43::Zero();
  r.Bfp.topLeftCorner<2, 2>() = -Mat2::Identity();
  return r;
}

AlipState double_stance_reset(const AlipState& x_minus,
                              const FootstepPosition& p_minus,
                              const FootstepPosition& p_plus,
                              const AlipParams& params,
                              const GaitTiming& timing) {
  return reset_map(params, timing.double_stance)
      .apply(x_minus, p_minus, p_plus);
}

StepToStep step_to_step_matrices(const AlipParams& params,
                                 const GaitTiming& timing) {
  StepToStep s;
  s.A = (alip_a(params) * timing.step_period()).exp();
  s.Br = reset_map(params, timing.double_stance).Br();
  return s;
}

Vec3 nominal_footstep_delta(const GaitCommand& command, Stance stance,
                            const GaitTiming& timing) {
  const double t = timing.step_period();
  return Vec3(command.velocity.x() * t,
              command.velocity.y() * t + sign(stance) * command.stance_width,
              0.0);
}

PeriodicReference periodic_reference(const GaitCommand& command,
                                     const AlipParams& params,
                                     const GaitTiming& timing) {
  params.validate();
  timing.validate();
  command.validate();

  const StepToStep s2s = step_to_step_matrices(params, timing);
  PeriodicReference ref;
  ref.footstep_deltas[0] =
      nominal_footstep_delta(command, command.stance, timing);
  ref.footstep_deltas[1] =
      nominal_footstep_delta(command, other(command.stance), timing);

  // x3 = A^2 x1 + A Br d1 + Br d2 = x1
  const Mat4 lhs = Mat4::Identity() - s2s.A * s2s.A;
  const Vec4 rhs = s2s.A * s2s.Br * ref.footstep_deltas[0] +
                   s2s.Br * ref.footstep_deltas[1];

  Eigen::JacobiSVD<Mat4> svd(lhs);
  const auto& sv = svd.singularValues();
  ref.condition = sv(0) / sv(3);
  if (!(sv(3) > 1e-12 * sv(0))) {
    throw SingularFixedPoint(ref.condition);
  }
  ref.initial_state = lhs.fullPivLu().solve(rhs);
  ref.second_state =
      s2s.A * ref.initial_state + s2s.Br * ref.footstep_deltas[0];
  return ref;
}

}  // namespace mpfc
