#include "varplace/gramian.hpp"

#include <cmath>
#include <limits>

#include <unsupported/Eigen/KroneckerProduct>
#include <unsupported/Eigen/MatrixFunctions>

#include "varplace/error.hpp"

namespace varplace {

namespace {

void check_shapes(const LinearSystem& sys) {
  if (sys.a.rows() != sys.a.cols() || sys.a.rows() == 0)
    throw ValidationError("A must be a non-empty square matrix");
  if (sys.b.rows() != sys.a.rows())
    throw ValidationError("B must have as many rows as A");
}

}  // namespace

bool LinearSystem::is_hurwitz() const {
  check_shapes(*this);
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  return (es.eigenvalues().real().array() < 0.0).all();
}

double LinearSystem::slowest_time_constant() const {
  check_shapes(*this);
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  const double slowest = es.eigenvalues().real().cwiseAbs().minCoeff();
  return slowest > 0.0 ? 1.0 / slowest : std::numeric_limits<double>::infinity();
}

Eigen::MatrixXd analytic_gramian(const LinearSystem& sys) {
  check_shapes(sys);
  const Eigen::Index n = sys.states();
  if (n > 50) throw ValidationError("analytic gramian limited to 50 states");
  if (!sys.is_hurwitz())
    throw ValidationError("A is not Hurwitz; the gramian does not exist");

  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd op =
      Eigen::kroneckerProduct(eye, sys.a) + Eigen::kroneckerProduct(sys.a, eye);
  const Eigen::MatrixXd q = sys.b * sys.b.transpose();
  const Eigen::VectorXd rhs = -Eigen::Map<const Eigen::VectorXd>(q.data(), n * n);
  const Eigen::VectorXd sol = op.fullPivLu().solve(rhs);
  Eigen::MatrixXd w = Eigen::Map<const Eigen::MatrixXd>(sol.data(), n, n);
  return 0.5 * (w + w.transpose());
}

Eigen::MatrixXd linear_impulse_response(const LinearSystem& sys,
                                        Eigen::Index input, double area,
                                        double dt, double t_f) {
  check_shapes(sys);
  if (input < 0 || input >= sys.inputs())
    throw ValidationError("input index out of range");
  if (!(dt > 0.0) || !(t_f >= dt))
    throw ValidationError("need 0 < dt <= t_f");
  const Eigen::Index n = sys.states();
  const auto steps = static_cast<Eigen::Index>(std::llround(t_f / dt));

  // exp([[A, B], [0, 0]] dt) = [[Ad, Bd], [0, I]]
  Eigen::MatrixXd aug = Eigen::MatrixXd::Zero(n + 1, n + 1);
  aug.topLeftCorner(n, n) = sys.a * dt;
  aug.topRightCorner(n, 1) = sys.b.col(input) * dt;
  const Eigen::MatrixXd e = aug.exp();
  const Eigen::MatrixXd ad = e.topLeftCorner(n, n);
  const Eigen::VectorXd bd = e.topRightCorner(n, 1);

  Eigen::MatrixXd x(steps + 1, n);
  x.row(0).setZero();
  if (steps == 0) return x;
  Eigen::VectorXd state = bd * (area / dt);
  x.row(1) = state.transpose();
  for (Eigen::Index k = 2; k <= steps; ++k) {
    state = ad * state;
    x.row(k) = state.transpose();
  }
  return x;
}

}  // namespace varplace
