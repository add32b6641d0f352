#pragma once

#include <stdexcept>
#include <string>

#include <Eigen/Core>

namespace mpfc {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;
using Mat2 = Eigen::Matrix2d;
using Mat3 = Eigen::Matrix3d;
using Mat4 = Eigen::Matrix4d;
using Mat43 = Eigen::Matrix<double, 4, 3>;
using VecX = Eigen::VectorXd;
using MatX = Eigen::MatrixXd;

/// ALIP state [x_com, y_com, L_x, L_y] expressed in the stance frame.
using AlipState = Vec4;

/// Position of the bottom-center of a stance foot, yaw frame.
using FootstepPosition = Vec3;

/// Base class of every error thrown by this library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace mpfc
