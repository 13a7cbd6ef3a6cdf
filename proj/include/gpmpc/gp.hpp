#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace gpmpc {

/// Raised when a Gram matrix cannot be factorized even after jitter escalation.
struct FitError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// RBF kernel hyperparameters with per-dimension length scales.
struct RbfHyperparams {
  Eigen::VectorXd length_scales;  // diagonal of L
  double sigma_f = 1.0;           // signal std
  double sigma_n = 0.1;           // noise std

  static RbfHyperparams isotropic(int dim, double l, double sf, double sn);
  void validate() const;
};

/// Training rows (inputs z, scalar targets y).
struct GpDataset {
  Eigen::MatrixXd z;  // n x d
  Eigen::VectorXd y;  // n

  Eigen::Index size() const { return z.rows(); }
  Eigen::Index dim() const { return z.cols(); }
  void validate() const;
};

/// Noise-free RBF covariance between two inputs. The noise variance sigma_n^2
/// enters only on the diagonal of the training Gram matrix, never in cross-
/// or test-covariances, so the posterior interpolates as sigma_n -> 0.
double rbf_kernel(const Eigen::VectorXd& zi, const Eigen::VectorXd& zj,
                  const RbfHyperparams& hyper);

/**
 * Scalar-output GP posterior with a cached Cholesky factor of
 * K = kappa(Z, Z) + sigma_n^2 I and alpha = K^-1 y. Immutable after fit;
 * concurrent reads are safe.
 */
class GpAxisModel {
 public:
  static GpAxisModel fit(const GpDataset& data, const RbfHyperparams& hyper);

  double predict_mean(const Eigen::VectorXd& z) const;
  double predict_var(const Eigen::VectorXd& z) const;

  /// Analytic gradient of the posterior mean w.r.t. the query.
  Eigen::VectorXd predict_mean_grad(const Eigen::VectorXd& z) const;

  /// Fused mean + derivative for 1-D models; the solver hot path.
  void predict_mean_grad_1d(double z, double& mean, double& dmean) const;
  double predict_mean_1d(double z) const;

  const GpDataset& data() const { return data_; }
  const RbfHyperparams& hyper() const { return hyper_; }
  const Eigen::MatrixXd& chol_lower() const { return chol_l_; }
  const Eigen::VectorXd& alpha() const { return alpha_; }
  double jitter() const { return jitter_; }

 private:
  GpDataset data_;
  RbfHyperparams hyper_;
  Eigen::MatrixXd chol_l_;
  Eigen::VectorXd alpha_;
  double jitter_ = 0.0;
};

/// Log marginal likelihood of the data under the hyperparameters, via the
/// Cholesky factor. Propagates FitError on factorization failure.
double log_marginal_likelihood(const GpDataset& data, const RbfHyperparams& hyper);

/**
 * Maximum-likelihood hyperparameter search: multi-start coordinate-wise
 * golden-section refinement in log space, capped at `budget` likelihood
 * evaluations. The returned set never has lower likelihood than `init`.
 */
RbfHyperparams optimize_hyperparams(const GpDataset& data, const RbfHyperparams& init,
                                    int budget);

/**
 * Regular-interval subsample: grids the input range into n_points targets and
 * keeps the dataset row nearest to each target (deduplicated). When
 * n_points >= n the whole dataset is returned with exact-duplicate rows
 * removed.
 */
GpDataset select_inducing_points(const GpDataset& data, int n_points);

/// Versioned text serialization; round-trips exactly.
void save_gp(const GpAxisModel& model, const std::string& path);
GpAxisModel load_gp(const std::string& path);
std::string gp_to_json(const GpAxisModel& model);
GpAxisModel gp_from_json(const std::string& text);

}  // namespace gpmpc
