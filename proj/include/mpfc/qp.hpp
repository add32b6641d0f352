#pragma once

#include <optional>

#include "mpfc/types.hpp"

namespace mpfc::qp {

/// minimize 1/2 z'Pz + q'z  s.t.  A_eq z = b_eq,  A_in z <= b_in
struct QpInstance {
  MatX P;
  VecX q;
  MatX A_eq;
  VecX b_eq;
  MatX A_in;
  VecX b_in;

  QpInstance() = default;
  /// Symmetrizes P and checks dimensions. Empty constraint blocks may be
  /// passed as 0-row matrices.
  QpInstance(MatX P, VecX q, MatX A_eq, VecX b_eq, MatX A_in, VecX b_in);

  int num_vars() const { return static_cast<int>(q.size()); }
  int num_eq() const { return static_cast<int>(b_eq.size()); }
  int num_in() const { return static_cast<int>(b_in.size()); }
  double objective(const VecX& z) const;
};

enum class QpStatus { kOptimal, kInfeasible, kMaxIter };

const char* to_string(QpStatus status);

struct QpSettings {
  double tol_feas = 1e-7;
  double tol_opt = 1e-7;
  int max_iter = 100;
  /// Re-solve the identified active set exactly after the interior point
  /// method converges.
  bool polish = true;
};

struct WarmStart {
  VecX z;
  VecX dual_in;
};

struct QpResult {
  QpStatus status = QpStatus::kMaxIter;
  VecX z;
  double objective = 0.0;
  VecX dual_in;  // >= 0
  VecX dual_eq;
  int iterations = 0;
  bool polished = false;
  /// For kInfeasible: optimal value of the phase-1 problem
  /// min t s.t. A_in z <= b_in + t, A_eq z = b_eq (or of the Farkas test).
  double infeasibility = 0.0;
};

struct KktResiduals {
  double primal_eq = 0.0;       // ||A_eq z - b_eq||_inf
  double primal_in = 0.0;       // max(A_in z - b_in)_+
  double stationarity = 0.0;    // ||P z + q + A_eq' y + A_in' lambda||_inf
  double dual_feasibility = 0.0;  // max(-lambda)_+
  double complementarity = 0.0;   // max |lambda_i (b_in - A_in z)_i|
};

KktResiduals kkt_residuals(const QpInstance& inst, const VecX& z,
                           const VecX& dual_eq, const VecX& dual_in);

/// Interior point solve. Deterministic for fixed inputs.
QpResult solve_qp(const QpInstance& inst, const QpSettings& settings = {},
                  const std::optional<WarmStart>& warm = std::nullopt);

class SingularKkt : public Error {
 public:
  using Error::Error;
};

struct EqualityQpSolution {
  VecX z;
  VecX dual_eq;
};

/// Direct KKT solve of min 1/2 z'Pz + q'z s.t. A_eq z = b_eq.
/// Throws SingularKkt when the KKT matrix is singular.
EqualityQpSolution solve_equality_qp(const MatX& P, const VecX& q,
                                     const MatX& A_eq, const VecX& b_eq);

}  // namespace mpfc::qp
