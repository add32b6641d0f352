#include "mpfc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/QR>

namespace mpfc::qp {

namespace {

constexpr double kRegularization = 1e-9;

double inf_norm(const VecX& v) {
  return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff();
}

double max_step(const VecX& v, const VecX& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  }
  return alpha;
}

/// Inequality-only problem obtained after eliminating equalities:
///   min 1/2 w'Hw + g'w  s.t.  G w <= h
struct Reduced {
  MatX H;
  VecX g;
  MatX G;
  VecX h;
};

enum class IpmExit { kConverged, kInfeasible, kMaxIter };

struct IpmState {
  VecX w;
  VecX lambda;
  VecX s;
  int iterations = 0;
  double farkas = 0.0;
  IpmExit exit = IpmExit::kMaxIter;
};

struct IpmTolerances {
  double primal;
  double dual;
  double gap;
};

// Factor M = H + G' D G with growing diagonal regularization.
Eigen::LLT<MatX> factor(const MatX& m) {
  double reg = kRegularization;
  const MatX eye = MatX::Identity(m.rows(), m.cols());
  for (int attempt = 0; attempt < 8; ++attempt) {
    Eigen::LLT<MatX> llt(m + reg * eye);
    if (llt.info() == Eigen::Success) return llt;
    reg *= 100.0;
  }
  return Eigen::LLT<MatX>(m + reg * eye);
}

// Mehrotra predictor-corrector on the reduced problem.
IpmState run_ipm(const Reduced& r, const IpmTolerances& tol, int max_iter,
                 const VecX* warm_w, const VecX* warm_lambda) {
  const Eigen::Index n = r.H.rows();
  const Eigen::Index m = r.G.rows();
  IpmState st;

  if (m == 0) {
    auto llt = factor(r.H);
    st.w = llt.solve(-r.g);
    // One refinement step for the regularized factorization.
    st.w += llt.solve(-r.g - r.H * st.w);
    st.lambda = VecX::Zero(0);
    st.s = VecX::Zero(0);
    st.exit = IpmExit::kConverged;
    return st;
  }

  if (warm_w != nullptr && warm_w->size() == n) {
    st.w = *warm_w;
  } else {
    auto llt = factor(r.H + r.G.transpose() * r.G);
    st.w = llt.solve(-r.g + r.G.transpose() * r.h);
  }
  const VecX resid = r.h - r.G * st.w;
  st.s = resid.cwiseMax(1.0);
  if (warm_lambda != nullptr && warm_lambda->size() == m) {
    st.s = resid.cwiseMax(1e-2);
    st.lambda = warm_lambda->cwiseMax(1e-2);
  } else {
    st.lambda = VecX::Ones(m);
  }

  const double md = static_cast<double>(m);
  int stalled = 0;
  for (st.iterations = 0; st.iterations < max_iter; ++st.iterations) {
    const VecX rd = r.H * st.w + r.g + r.G.transpose() * st.lambda;
    const VecX rp = r.G * st.w + st.s - r.h;
    const double mu = st.s.dot(st.lambda) / md;

    if (inf_norm(rp) <= tol.primal && mu * md <= tol.gap) {
      // Roundoff floors the dual residual; accept a near-stationary point
      // once complementarity is exhausted and leave the rest to polishing.
      const double rd_norm = rd.norm();
      if (rd_norm <= tol.dual ||
          (rd_norm <= 100.0 * tol.dual && mu * md <= 1e-3 * tol.gap)) {
        st.exit = IpmExit::kConverged;
        return st;
      }
    }

    // Farkas certificate from the normalized dual iterate:
    // y >= 0, G'y = 0, h'y < 0 proves G w <= h is empty.
    const double lsum = st.lambda.sum();
    if (lsum > 1e3) {
      const VecX y = st.lambda / lsum;
      const double hy = r.h.dot(y);
      if (inf_norm(r.G.transpose() * y) <= 1e-9 && hy <= -1e-6) {
        st.farkas = -hy;
        st.exit = IpmExit::kInfeasible;
        return st;
      }
    }

    const VecX d = st.lambda.cwiseQuotient(st.s);
    const MatX m_newton =
        r.H + r.G.transpose() * d.asDiagonal() * r.G;
    const auto llt = factor(m_newton);

    auto direction = [&](const VecX& rc, VecX& dw, VecX& dl, VecX& ds) {
      const VecX rc_s = rc.cwiseQuotient(st.s);
      const VecX rhs =
          -rd - r.G.transpose() * (d.cwiseProduct(rp) - rc_s);
      dw = llt.solve(rhs);
      dl = d.cwiseProduct(r.G * dw + rp) - rc_s;
      ds = -(rc + st.s.cwiseProduct(dl)).cwiseQuotient(st.lambda);
    };

    VecX dw, dl, ds;
    const VecX rc_aff = st.s.cwiseProduct(st.lambda);
    direction(rc_aff, dw, dl, ds);
    const double ap = max_step(st.s, ds);
    const double ad = max_step(st.lambda, dl);
    const double mu_aff =
        (st.s + ap * ds).dot(st.lambda + ad * dl) / md;
    const double sigma = std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3);

    const VecX rc = rc_aff + ds.cwiseProduct(dl) -
                    VecX::Constant(m, sigma * mu);
    direction(rc, dw, dl, ds);
    const double alpha =
        std::min(1.0, 0.99 * std::min(max_step(st.s, ds),
                                      max_step(st.lambda, dl)));
    st.w += alpha * dw;
    st.s += alpha * ds;
    st.lambda += alpha * dl;

    // Keep iterates strictly interior.
    st.s = st.s.cwiseMax(1e-300);
    st.lambda = st.lambda.cwiseMax(1e-300);

    stalled = alpha < 1e-8 ? stalled + 1 : 0;
    if (stalled >= 5) break;
    if (!st.w.allFinite()) break;
  }
  st.exit = IpmExit::kMaxIter;
  return st;
}

// Phase 1: min t + eps/2 |w|^2 s.t. G w - t <= h, t >= -1.
// Returns the optimal t, or NaN if it did not converge.
double phase_one(const Reduced& r, int max_iter) {
  const Eigen::Index n = r.H.rows();
  const Eigen::Index m = r.G.rows();
  Reduced p;
  p.H = MatX::Identity(n + 1, n + 1) * 1e-8;
  p.g = VecX::Zero(n + 1);
  p.g(n) = 1.0;
  p.G = MatX::Zero(m + 1, n + 1);
  p.G.topLeftCorner(m, n) = r.G;
  p.G.col(n).head(m).setConstant(-1.0);
  p.G(m, n) = -1.0;
  p.h = VecX(m + 1);
  p.h.head(m) = r.h;
  p.h(m) = 1.0;
  const IpmTolerances tol{1e-10, 1e-10, 1e-12};
  const IpmState st = run_ipm(p, tol, std::max(max_iter, 100), nullptr,
                              nullptr);
  if (st.exit != IpmExit::kConverged) {
    return std::numeric_limits<double>::quiet_NaN();
  }
  return st.w(n);
}

// Exact solve of the active set identified by the interior point iterate,
// with a proximal term so singular Hessian directions stay at the iterate.
bool polish(const Reduced& r, IpmState& st, double tol_feas,
            double tol_opt) {
  const Eigen::Index n = r.H.rows();
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < st.s.size(); ++i) {
    if (st.lambda(i) > st.s(i)) active.push_back(i);
  }
  const Eigen::Index na = static_cast<Eigen::Index>(active.size());
  if (na > n) return false;

  constexpr double kProx = 1e-10;
  MatX kkt = MatX::Zero(n + na, n + na);
  VecX rhs(n + na);
  kkt.topLeftCorner(n, n) = r.H + kProx * MatX::Identity(n, n);
  rhs.head(n) = -r.g + kProx * st.w;
  for (Eigen::Index a = 0; a < na; ++a) {
    kkt.block(n + a, 0, 1, n) = r.G.row(active[a]);
    kkt.block(0, n + a, n, 1) = r.G.row(active[a]).transpose();
    rhs(n + a) = r.h(active[a]);
  }
  Eigen::FullPivLU<MatX> lu(kkt);
  if (lu.rank() < kkt.rows()) return false;
  VecX sol = lu.solve(rhs);
  // Remove the proximal bias with a refinement pass on the exact system.
  MatX exact = kkt;
  exact.topLeftCorner(n, n) = r.H;
  VecX exact_rhs = rhs;
  exact_rhs.head(n) = -r.g;
  sol += lu.solve(exact_rhs - exact * sol);
  if (!sol.allFinite()) return false;

  const VecX w = sol.head(n);
  VecX lambda = VecX::Zero(st.s.size());
  for (Eigen::Index a = 0; a < na; ++a) {
    if (sol(n + a) < -0.1 * tol_opt) return false;
    lambda(active[a]) = std::max(sol(n + a), 0.0);
  }
  const VecX slack = r.h - r.G * w;
  if (slack.size() > 0 && slack.minCoeff() < -0.1 * tol_feas) return false;

  const VecX rd = r.H * w + r.g + r.G.transpose() * lambda;
  const VecX rd_ipm = r.H * st.w + r.g + r.G.transpose() * st.lambda;
  if (rd.norm() > std::max(rd_ipm.norm(), 0.1 * tol_opt)) return false;

  st.w = w;
  st.lambda = lambda;
  st.s = slack.cwiseMax(0.0);
  return true;
}

}  // namespace

QpInstance::QpInstance(MatX P_, VecX q_, MatX A_eq_, VecX b_eq_, MatX A_in_,
                       VecX b_in_)
    : P(std::move(P_)),
      q(std::move(q_)),
      A_eq(std::move(A_eq_)),
      b_eq(std::move(b_eq_)),
      A_in(std::move(A_in_)),
      b_in(std::move(b_in_)) {
  const Eigen::Index n = q.size();
  if (P.rows() != n || P.cols() != n) {
    throw Error("QpInstance: P must be n x n");
  }
  if (A_eq.rows() != b_eq.size() || (A_eq.rows() > 0 && A_eq.cols() != n)) {
    throw Error("QpInstance: A_eq/b_eq dimension mismatch");
  }
  if (A_in.rows() != b_in.size() || (A_in.rows() > 0 && A_in.cols() != n)) {
    throw Error("QpInstance: A_in/b_in dimension mismatch");
  }
  if (A_eq.rows() == 0) A_eq.resize(0, n);
  if (A_in.rows() == 0) A_in.resize(0, n);
  P = 0.5 * (P + P.transpose()).eval();
}

double QpInstance::objective(const VecX& z) const {
  return 0.5 * z.dot(P * z) + q.dot(z);
}

const char* to_string(QpStatus status) {
  switch (status) {
    case QpStatus::kOptimal:
      return "optimal";
    case QpStatus::kInfeasible:
      return "infeasible";
    case QpStatus::kMaxIter:
      return "max_iter";
  }
  return "unknown";
}

KktResiduals kkt_residuals(const QpInstance& inst, const VecX& z,
                           const VecX& dual_eq, const VecX& dual_in) {
  KktResiduals k;
  if (inst.num_eq() > 0) {
    k.primal_eq = inf_norm(inst.A_eq * z - inst.b_eq);
  }
  VecX grad = inst.P * z + inst.q;
  if (inst.num_eq() > 0) grad += inst.A_eq.transpose() * dual_eq;
  if (inst.num_in() > 0) {
    const VecX slack = inst.b_in - inst.A_in * z;
    k.primal_in = std::max(0.0, -slack.minCoeff());
    k.dual_feasibility = std::max(0.0, -dual_in.minCoeff());
    k.complementarity = dual_in.cwiseProduct(slack).cwiseAbs().maxCoeff();
    grad += inst.A_in.transpose() * dual_in;
  }
  k.stationarity = inf_norm(grad);
  return k;
}

QpResult solve_qp(const QpInstance& inst, const QpSettings& settings,
                  const std::optional<WarmStart>& warm) {
  const Eigen::Index n = inst.num_vars();
  QpResult result;
  result.z = VecX::Zero(n);
  result.dual_in = VecX::Zero(inst.num_in());
  result.dual_eq = VecX::Zero(inst.num_eq());

  // Eliminate equalities: z = z_p + Z w with Z an orthonormal null space
  // basis of A_eq.
  VecX z_p = VecX::Zero(n);
  MatX Z = MatX::Identity(n, n);
  if (inst.num_eq() > 0) {
    Eigen::ColPivHouseholderQR<MatX> qr(inst.A_eq.transpose());
    qr.setThreshold(1e-12);
    const Eigen::Index rank = qr.rank();
    const MatX Q = qr.householderQ() * MatX::Identity(n, n);
    Z = Q.rightCols(n - rank);
    z_p = inst.A_eq.completeOrthogonalDecomposition().solve(inst.b_eq);
    const double eq_resid = inf_norm(inst.A_eq * z_p - inst.b_eq);
    if (eq_resid > settings.tol_feas) {
      result.status = QpStatus::kInfeasible;
      result.infeasibility = eq_resid;
      result.z = z_p;
      return result;
    }
  }

  Reduced red;
  red.H = Z.transpose() * inst.P * Z;
  red.g = Z.transpose() * (inst.P * z_p + inst.q);
  red.G = inst.A_in * Z;
  red.h = inst.b_in - inst.A_in * z_p;

  VecX warm_w;
  VecX warm_l;
  if (warm && warm->z.size() == n) {
    warm_w = Z.transpose() * (warm->z - z_p);
  }
  if (warm && warm->dual_in.size() == inst.num_in()) {
    warm_l = warm->dual_in;
  }

  const IpmTolerances tol{0.1 * settings.tol_feas, 0.1 * settings.tol_opt,
                          1e-3 * settings.tol_opt};
  IpmState st =
      run_ipm(red, tol, settings.max_iter,
              warm_w.size() > 0 ? &warm_w : nullptr,
              warm_l.size() > 0 ? &warm_l : nullptr);
  result.iterations = st.iterations;

  if (st.exit == IpmExit::kInfeasible) {
    result.status = QpStatus::kInfeasible;
    result.infeasibility = st.farkas;
    result.z = z_p + Z * st.w;
    return result;
  }
  if (st.exit == IpmExit::kMaxIter) {
    const double t = phase_one(red, settings.max_iter);
    if (std::isfinite(t) && t > settings.tol_feas) {
      result.status = QpStatus::kInfeasible;
      result.infeasibility = t;
    } else {
      result.status = QpStatus::kMaxIter;
    }
    result.z = z_p + Z * st.w;
    return result;
  }

  if (settings.polish && red.G.rows() > 0) {
    result.polished = polish(red, st, settings.tol_feas, settings.tol_opt);
  }

  result.z = z_p + Z * st.w;
  result.dual_in = st.lambda;
  if (inst.num_eq() > 0) {
    // Equality multipliers absorb the gradient component in range(A_eq').
    VecX grad = inst.P * result.z + inst.q;
    if (inst.num_in() > 0) grad += inst.A_in.transpose() * result.dual_in;
    result.dual_eq = inst.A_eq.transpose()
                         .completeOrthogonalDecomposition()
                         .solve(-grad);
  }
  result.objective = inst.objective(result.z);
  const KktResiduals k =
      kkt_residuals(inst, result.z, result.dual_eq, result.dual_in);
  const bool kkt_ok = k.primal_eq <= settings.tol_feas &&
                      k.primal_in <= settings.tol_feas &&
                      k.stationarity <= settings.tol_opt &&
                      k.dual_feasibility <= settings.tol_opt &&
                      k.complementarity <= settings.tol_opt;
  result.status = kkt_ok ? QpStatus::kOptimal : QpStatus::kMaxIter;
  return result;
}

EqualityQpSolution solve_equality_qp(const MatX& P, const VecX& q,
                                     const MatX& A_eq, const VecX& b_eq) {
  const Eigen::Index n = q.size();
  const Eigen::Index me = b_eq.size();
  MatX kkt = MatX::Zero(n + me, n + me);
  kkt.topLeftCorner(n, n) = 0.5 * (P + P.transpose());
  if (me > 0) {
    kkt.topRightCorner(n, me) = A_eq.transpose();
    kkt.bottomLeftCorner(me, n) = A_eq;
  }
  VecX rhs(n + me);
  rhs.head(n) = -q;
  rhs.tail(me) = b_eq;

  Eigen::FullPivLU<MatX> lu(kkt);
  if (lu.rank() < kkt.rows()) {
    throw SingularKkt("equality QP: KKT matrix is singular");
  }
  VecX sol = lu.solve(rhs);
  sol += lu.solve(rhs - kkt * sol);
  return {sol.head(n), sol.tail(me)};
}

}  // namespace mpfc::qp
