#include "gpmpc/box_qp.hpp"

#include <stdexcept>

namespace gpmpc {

BoxQpResult solve_box_qp(const Eigen::MatrixXd& H, const Eigen::VectorXd& g,
                         const Eigen::VectorXd& lb, const Eigen::VectorXd& ub,
                         const Eigen::VectorXd* x_warm,
                         const std::vector<std::int8_t>* active_warm, double tol) {
  const Eigen::Index n = g.size();
  if (H.rows() != n || H.cols() != n || lb.size() != n || ub.size() != n)
    throw std::invalid_argument("solve_box_qp: dimension mismatch");
  if (((ub - lb).array() < 0.0).any())
    throw std::invalid_argument("solve_box_qp: lb must not exceed ub");

  BoxQpResult res;
  res.active.assign(n, 0);
  Eigen::VectorXd x(n);

  if (active_warm && static_cast<Eigen::Index>(active_warm->size()) == n)
    res.active = *active_warm;
  for (Eigen::Index i = 0; i < n; ++i) {
    const double xi = x_warm && x_warm->size() == n ? (*x_warm)[i] : 0.0;
    x[i] = std::clamp(xi, lb[i], ub[i]);
    if (res.active[i] == -1 || x[i] <= lb[i]) {
      res.active[i] = -1;
      x[i] = lb[i];
    } else if (res.active[i] == +1 || x[i] >= ub[i]) {
      res.active[i] = +1;
      x[i] = ub[i];
    }
  }

  std::vector<Eigen::Index> free_idx;
  free_idx.reserve(n);
  const int max_iter = static_cast<int>(5 * n + 20);

  for (res.iterations = 0; res.iterations < max_iter; ++res.iterations) {
    free_idx.clear();
    for (Eigen::Index i = 0; i < n; ++i)
      if (res.active[i] == 0) free_idx.push_back(i);
    const Eigen::Index nf = static_cast<Eigen::Index>(free_idx.size());

    // Equality-constrained subproblem on the free block.
    Eigen::VectorXd x_eqp = x;
    if (nf > 0) {
      Eigen::MatrixXd hff(nf, nf);
      Eigen::VectorXd rhs(nf);
      for (Eigen::Index a = 0; a < nf; ++a) {
        for (Eigen::Index b = 0; b < nf; ++b) hff(a, b) = H(free_idx[a], free_idx[b]);
        double acc = g[free_idx[a]];
        for (Eigen::Index i = 0; i < n; ++i)
          if (res.active[i] != 0) acc += H(free_idx[a], i) * x[i];
        rhs[a] = -acc;
      }
      Eigen::LLT<Eigen::MatrixXd> llt(hff);
      if (llt.info() != Eigen::Success)
        throw std::runtime_error("solve_box_qp: free-block Cholesky failed (H not SPD?)");
      const Eigen::VectorXd xf = llt.solve(rhs);
      for (Eigen::Index a = 0; a < nf; ++a) x_eqp[free_idx[a]] = xf[a];
    }

    // Step toward the subproblem solution until a bound blocks.
    double alpha = 1.0;
    Eigen::Index blocking = -1;
    std::int8_t blocking_side = 0;
    for (Eigen::Index a = 0; a < nf; ++a) {
      const Eigen::Index i = free_idx[a];
      const double d = x_eqp[i] - x[i];
      if (d > tol && x_eqp[i] > ub[i]) {
        const double ai = (ub[i] - x[i]) / d;
        if (ai < alpha - 1e-15) {
          alpha = ai;
          blocking = i;
          blocking_side = +1;
        }
      } else if (d < -tol && x_eqp[i] < lb[i]) {
        const double ai = (lb[i] - x[i]) / d;
        if (ai < alpha - 1e-15) {
          alpha = ai;
          blocking = i;
          blocking_side = -1;
        }
      }
    }

    if (blocking >= 0) {
      for (Eigen::Index a = 0; a < nf; ++a) {
        const Eigen::Index i = free_idx[a];
        x[i] += alpha * (x_eqp[i] - x[i]);
      }
      res.active[blocking] = blocking_side;
      x[blocking] = blocking_side > 0 ? ub[blocking] : lb[blocking];
      continue;
    }

    x = x_eqp;

    // KKT check: release the most negative bound multiplier, if any.
    const Eigen::VectorXd grad = H * x + g;
    double worst = -tol;
    Eigen::Index worst_idx = -1;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (res.active[i] == 0) continue;
      if (lb[i] == ub[i]) continue;  // pinned variable, multiplier sign is free
      const double mult = res.active[i] == -1 ? grad[i] : -grad[i];
      if (mult < worst) {
        worst = mult;
        worst_idx = i;
      }
    }
    if (worst_idx >= 0) {
      res.active[worst_idx] = 0;
      continue;
    }

    res.converged = true;
    break;
  }

  res.x = x;
  const Eigen::VectorXd grad = H * x + g;
  res.lambda_lo = Eigen::VectorXd::Zero(n);
  res.lambda_hi = Eigen::VectorXd::Zero(n);
  res.stationarity = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (res.active[i] == -1)
      res.lambda_lo[i] = std::max(grad[i], 0.0);
    else if (res.active[i] == +1)
      res.lambda_hi[i] = std::max(-grad[i], 0.0);
    else
      res.stationarity = std::max(res.stationarity, std::abs(grad[i]));
  }
  return res;
}

}  // namespace gpmpc
