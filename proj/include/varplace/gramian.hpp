#pragma once

#include <Eigen/Dense>

namespace varplace {

/// dx/dt = A x + B u.
struct LinearSystem {
  Eigen::MatrixXd a;
  Eigen::MatrixXd b;

  Eigen::Index states() const { return a.rows(); }
  Eigen::Index inputs() const { return b.cols(); }
  bool is_hurwitz() const;
  /// 1 / min |Re(lambda)|; the slowest decay time of the free response.
  double slowest_time_constant() const;
};

/// Solves A W + W A' + B B' = 0 by a dense Kronecker-vectorized solve.
/// Throws ValidationError when A is not Hurwitz or larger than 50 states.
Eigen::MatrixXd analytic_gramian(const LinearSystem& sys);

/// Response to a one-step rectangular pulse of area `area` on input
/// `input`, sampled at k*dt, k = 0..round(t_f/dt). The pulse occupies
/// [0, dt) with height area/dt, so sample 0 is zero. Exact for the
/// piecewise-constant input (zero-order-hold discretization).
Eigen::MatrixXd linear_impulse_response(const LinearSystem& sys,
                                        Eigen::Index input, double area,
                                        double dt, double t_f);

}  // namespace varplace
