#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace gpmpc {

/// Solution of min 1/2 x'Hx + g'x  s.t.  lb <= x <= ub with H symmetric
/// positive definite.
struct BoxQpResult {
  Eigen::VectorXd x;
  Eigen::VectorXd lambda_lo, lambda_hi;  // bound multipliers, >= 0 at the solution
  std::vector<std::int8_t> active;       // -1 at lower, +1 at upper, 0 free
  double stationarity = 0.0;             // max |(Hx+g)_i| over the free set
  int iterations = 0;
  bool converged = false;
};

/**
 * Primal active-set method. Fixed variables sit exactly on their bounds and
 * the free block is solved by Cholesky; blocking constraints are added one at
 * a time and the most negative multiplier is released. Deterministic: ties
 * break on the lowest index, no pivoting randomness anywhere.
 */
BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                         const Eigen::VectorXd* x_warm = nullptr,
                         const std::vector<std::int8_t>* active_warm = nullptr,
                         double tol = 1e-10);

}  // namespace gpmpc
