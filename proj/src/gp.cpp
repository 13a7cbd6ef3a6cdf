#include "gpmpc/gp.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

namespace gpmpc {

namespace {

constexpr double kLog2Pi = 1.8378770664093453;

Eigen::MatrixXd gram_matrix(const GpDataset& data, const RbfHyperparams& hyper,
                            double jitter) {
  const Eigen::Index n = data.size();
  const Eigen::ArrayXd inv_l2 =
      hyper.length_scales.array().square().inverse();
  const double sf2 = hyper.sigma_f * hyper.sigma_f;
  Eigen::MatrixXd k(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    k(i, i) = sf2 + hyper.sigma_n * hyper.sigma_n + jitter;
    for (Eigen::Index j = 0; j < i; ++j) {
      const Eigen::ArrayXd d = (data.z.row(i) - data.z.row(j)).transpose().array();
      const double v = sf2 * std::exp(-0.5 * (d.square() * inv_l2).sum());
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

// Cholesky with escalating diagonal jitter; throws FitError when even the
// largest jitter cannot rescue the factorization.
std::pair<Eigen::MatrixXd, double> robust_cholesky(const GpDataset& data,
                                                   const RbfHyperparams& hyper) {
  const double sf2 = hyper.sigma_f * hyper.sigma_f;
  for (double scale : {0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    const double jitter = scale * sf2;
    Eigen::LLT<Eigen::MatrixXd> llt(gram_matrix(data, hyper, jitter));
    if (llt.info() == Eigen::Success) return {llt.matrixL(), jitter};
  }
  throw FitError(
      "GP fit: Gram matrix is not positive definite after jitter escalation; "
      "likely duplicate inputs with sigma_n ~ 0 (n=" +
      std::to_string(data.size()) + ", sigma_n=" + std::to_string(hyper.sigma_n) + ")");
}

}  // namespace

RbfHyperparams RbfHyperparams::isotropic(int dim, double l, double sf, double sn) {
  RbfHyperparams h;
  h.length_scales = Eigen::VectorXd::Constant(dim, l);
  h.sigma_f = sf;
  h.sigma_n = sn;
  return h;
}

void RbfHyperparams::validate() const {
  if (length_scales.size() == 0 || !(length_scales.minCoeff() > 0.0))
    throw std::invalid_argument("RbfHyperparams: length scales must be positive");
  if (!(sigma_f > 0.0)) throw std::invalid_argument("RbfHyperparams: sigma_f must be positive");
  if (!(sigma_n >= 0.0) || !std::isfinite(sigma_n))
    throw std::invalid_argument("RbfHyperparams: sigma_n must be nonnegative");
}

void GpDataset::validate() const {
  if (z.rows() != y.size()) throw std::invalid_argument("GpDataset: row count mismatch");
  if (!z.allFinite() || !y.allFinite())
    throw std::invalid_argument("GpDataset: non-finite rows");
}

double rbf_kernel(const Eigen::VectorXd& zi, const Eigen::VectorXd& zj,
                  const RbfHyperparams& hyper) {
  const Eigen::ArrayXd d = (zi - zj).array() / hyper.length_scales.array();
  return hyper.sigma_f * hyper.sigma_f * std::exp(-0.5 * d.square().sum());
}

GpAxisModel GpAxisModel::fit(const GpDataset& data, const RbfHyperparams& hyper) {
  data.validate();
  hyper.validate();
  if (data.size() < 1) throw std::invalid_argument("GP fit: empty dataset");
  if (hyper.length_scales.size() != data.dim())
    throw std::invalid_argument("GP fit: hyperparameter dimension mismatch");

  GpAxisModel m;
  m.data_ = data;
  m.hyper_ = hyper;
  auto [l, jitter] = robust_cholesky(data, hyper);
  m.chol_l_ = std::move(l);
  m.jitter_ = jitter;
  m.alpha_ = m.chol_l_.triangularView<Eigen::Lower>().solve(data.y);
  m.chol_l_.transpose().triangularView<Eigen::Upper>().solveInPlace(m.alpha_);
  return m;
}

double GpAxisModel::predict_mean(const Eigen::VectorXd& z) const {
  double mean = 0.0;
  for (Eigen::Index i = 0; i < data_.size(); ++i)
    mean += alpha_[i] * rbf_kernel(data_.z.row(i).transpose(), z, hyper_);
  return mean;
}

double GpAxisModel::predict_var(const Eigen::VectorXd& z) const {
  const Eigen::Index n = data_.size();
  Eigen::VectorXd k(n);
  for (Eigen::Index i = 0; i < n; ++i)
    k[i] = rbf_kernel(data_.z.row(i).transpose(), z, hyper_);
  const Eigen::VectorXd v = chol_l_.triangularView<Eigen::Lower>().solve(k);
  const double var = hyper_.sigma_f * hyper_.sigma_f - v.squaredNorm();
  return std::max(var, 0.0);
}

Eigen::VectorXd GpAxisModel::predict_mean_grad(const Eigen::VectorXd& z) const {
  const Eigen::ArrayXd inv_l2 = hyper_.length_scales.array().square().inverse();
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(z.size());
  for (Eigen::Index i = 0; i < data_.size(); ++i) {
    const Eigen::VectorXd zi = data_.z.row(i).transpose();
    const double k = rbf_kernel(zi, z, hyper_);
    grad += alpha_[i] * k * ((zi - z).array() * inv_l2).matrix();
  }
  return grad;
}

void GpAxisModel::predict_mean_grad_1d(double z, double& mean, double& dmean) const {
  const double inv_l2 = 1.0 / (hyper_.length_scales[0] * hyper_.length_scales[0]);
  const double sf2 = hyper_.sigma_f * hyper_.sigma_f;
  mean = 0.0;
  dmean = 0.0;
  const Eigen::Index n = data_.size();
  for (Eigen::Index i = 0; i < n; ++i) {
    const double d = data_.z(i, 0) - z;
    const double k = sf2 * std::exp(-0.5 * d * d * inv_l2);
    mean += alpha_[i] * k;
    dmean += alpha_[i] * k * d * inv_l2;
  }
}

double GpAxisModel::predict_mean_1d(double z) const {
  double mean, dmean;
  predict_mean_grad_1d(z, mean, dmean);
  return mean;
}

double log_marginal_likelihood(const GpDataset& data, const RbfHyperparams& hyper) {
  data.validate();
  hyper.validate();
  auto [l, jitter] = robust_cholesky(data, hyper);
  (void)jitter;
  Eigen::VectorXd alpha = l.triangularView<Eigen::Lower>().solve(data.y);
  const double quad = alpha.squaredNorm();  // y^T K^-1 y via the factor
  const double logdet = 2.0 * l.diagonal().array().log().sum();
  return -0.5 * quad - 0.5 * logdet - 0.5 * static_cast<double>(data.size()) * kLog2Pi;
}

namespace {

// Bounded LML evaluation used by the optimizer; factorization failures count
// as -inf so the search simply moves away from them.
class LmlObjective {
 public:
  LmlObjective(const GpDataset& data, int budget) : data_(data), budget_(budget) {}

  double eval(const Eigen::VectorXd& log_theta) {
    if (evals_ >= budget_) return -std::numeric_limits<double>::infinity();
    ++evals_;
    RbfHyperparams h;
    const int d = static_cast<int>(data_.dim());
    h.length_scales = log_theta.head(d).array().exp();
    h.sigma_f = std::exp(log_theta[d]);
    h.sigma_n = std::exp(log_theta[d + 1]);
    try {
      return log_marginal_likelihood(data_, h);
    } catch (const FitError&) {
      return -std::numeric_limits<double>::infinity();
    }
  }

  bool exhausted() const { return evals_ >= budget_; }
  int evals() const { return evals_; }

 private:
  const GpDataset& data_;
  int budget_;
  int evals_ = 0;
};

}  // namespace

RbfHyperparams optimize_hyperparams(const GpDataset& data, const RbfHyperparams& init,
                                    int budget) {
  data.validate();
  init.validate();
  if (budget < 1) throw std::invalid_argument("optimize_hyperparams: budget must be >= 1");
  const int d = static_cast<int>(data.dim());
  const int np = d + 2;

  LmlObjective obj(data, budget);
  auto pack = [d](const RbfHyperparams& h) {
    Eigen::VectorXd t(d + 2);
    t.head(d) = h.length_scales.array().log();
    t[d] = std::log(h.sigma_f);
    t[d + 1] = std::log(std::max(h.sigma_n, 1e-8));
    return t;
  };

  Eigen::VectorXd best = pack(init);
  double best_val = obj.eval(best);

  // Data-driven starting points: length scales from the input span, signal
  // std from the target spread, two noise guesses.
  const double y_std = std::max(std::sqrt((data.y.array() - data.y.mean()).square().mean()), 1e-6);
  std::vector<Eigen::VectorXd> starts;
  for (double l_frac : {0.1, 0.3}) {
    for (double n_frac : {0.3, 0.03}) {
      Eigen::VectorXd t(np);
      for (int k = 0; k < d; ++k) {
        const double span =
            std::max(data.z.col(k).maxCoeff() - data.z.col(k).minCoeff(), 1e-3);
        t[k] = std::log(l_frac * span);
      }
      t[d] = std::log(y_std);
      t[d + 1] = std::log(std::max(n_frac * y_std, 1e-8));
      starts.push_back(t);
    }
  }
  for (const auto& s : starts) {
    if (obj.exhausted()) break;
    const double v = obj.eval(s);
    if (v > best_val) {
      best_val = v;
      best = s;
    }
  }

  // Coordinate-wise golden-section refinement with shrinking brackets.
  constexpr double kGolden = 0.6180339887498949;
  for (double width : {2.0, 0.8, 0.3}) {
    for (int c = 0; c < np && !obj.exhausted(); ++c) {
      double lo = best[c] - width, hi = best[c] + width;
      double x1 = hi - kGolden * (hi - lo);
      double x2 = lo + kGolden * (hi - lo);
      auto at = [&](double v) {
        Eigen::VectorXd t = best;
        t[c] = v;
        return obj.eval(t);
      };
      double f1 = at(x1), f2 = at(x2);
      for (int it = 0; it < 8 && !obj.exhausted(); ++it) {
        if (f1 < f2) {
          lo = x1;
          x1 = x2;
          f1 = f2;
          x2 = lo + kGolden * (hi - lo);
          f2 = at(x2);
        } else {
          hi = x2;
          x2 = x1;
          f2 = f1;
          x1 = hi - kGolden * (hi - lo);
          f1 = at(x1);
        }
      }
      const double cand = f1 > f2 ? x1 : x2;
      const double cand_val = std::max(f1, f2);
      if (cand_val > best_val) {
        best_val = cand_val;
        best[c] = cand;
      }
    }
  }

  if (!std::isfinite(best_val))
    throw FitError("optimize_hyperparams: no hyperparameter candidate factorized");

  RbfHyperparams out;
  out.length_scales = best.head(d).array().exp();
  out.sigma_f = std::exp(best[d]);
  out.sigma_n = std::exp(best[d + 1]);
  return out;
}

GpDataset select_inducing_points(const GpDataset& data, int n_points) {
  data.validate();
  if (n_points < 2) throw std::invalid_argument("select_inducing_points: need n_points >= 2");
  if (data.size() == 0) throw std::invalid_argument("select_inducing_points: empty dataset");

  const Eigen::Index n = data.size();
  const Eigen::Index d = data.dim();
  std::vector<Eigen::Index> picked;

  if (n_points >= n) {
    // Saturation: everything, minus exact duplicates.
    for (Eigen::Index i = 0; i < n; ++i) {
      bool dup = false;
      for (Eigen::Index j : picked)
        if ((data.z.row(i) - data.z.row(j)).norm() == 0.0) {
          dup = true;
          break;
        }
      if (!dup) picked.push_back(i);
    }
  } else {
    Eigen::VectorXd lo(d), hi(d);
    for (Eigen::Index k = 0; k < d; ++k) {
      lo[k] = data.z.col(k).minCoeff();
      hi[k] = data.z.col(k).maxCoeff();
    }
    for (int t = 0; t < n_points; ++t) {
      const double frac = static_cast<double>(t) / (n_points - 1);
      const Eigen::VectorXd target = lo + frac * (hi - lo);
      Eigen::Index arg = 0;
      double dist = std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i) {
        const double di = (data.z.row(i).transpose() - target).norm();
        if (di < dist) {
          dist = di;
          arg = i;
        }
      }
      if (std::find(picked.begin(), picked.end(), arg) == picked.end()) picked.push_back(arg);
    }
  }

  GpDataset out;
  out.z.resize(static_cast<Eigen::Index>(picked.size()), d);
  out.y.resize(static_cast<Eigen::Index>(picked.size()));
  for (size_t i = 0; i < picked.size(); ++i) {
    out.z.row(static_cast<Eigen::Index>(i)) = data.z.row(picked[i]);
    out.y[static_cast<Eigen::Index>(i)] = data.y[picked[i]];
  }
  return out;
}

std::string gp_to_json(const GpAxisModel& model) {
  nlohmann::json j;
  j["format"] = "gpmpc-gp-axis";
  j["version"] = 1;
  j["sigma_f"] = model.hyper().sigma_f;
  j["sigma_n"] = model.hyper().sigma_n;
  j["length_scales"] = std::vector<double>(
      model.hyper().length_scales.data(),
      model.hyper().length_scales.data() + model.hyper().length_scales.size());
  std::vector<std::vector<double>> z(model.data().size());
  for (Eigen::Index i = 0; i < model.data().size(); ++i)
    z[i].assign(model.data().z.row(i).begin(), model.data().z.row(i).end());
  j["z_train"] = z;
  j["y_train"] =
      std::vector<double>(model.data().y.data(), model.data().y.data() + model.data().y.size());
  return j.dump(2);
}

GpAxisModel gp_from_json(const std::string& text) {
  nlohmann::json j = nlohmann::json::parse(text);
  if (j.value("format", "") != "gpmpc-gp-axis")
    throw std::runtime_error("GP model file: unexpected format tag");
  if (j.value("version", 0) != 1)
    throw std::runtime_error("GP model file: unsupported version");
  RbfHyperparams h;
  const auto ls = j.at("length_scales").get<std::vector<double>>();
  h.length_scales = Eigen::Map<const Eigen::VectorXd>(ls.data(), ls.size());
  h.sigma_f = j.at("sigma_f").get<double>();
  h.sigma_n = j.at("sigma_n").get<double>();
  const auto z = j.at("z_train").get<std::vector<std::vector<double>>>();
  const auto y = j.at("y_train").get<std::vector<double>>();
  GpDataset d;
  d.z.resize(static_cast<Eigen::Index>(z.size()), h.length_scales.size());
  for (size_t i = 0; i < z.size(); ++i)
    d.z.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::VectorXd>(z[i].data(), z[i].size()).transpose();
  d.y = Eigen::Map<const Eigen::VectorXd>(y.data(), y.size());
  return GpAxisModel::fit(d, h);
}

void save_gp(const GpAxisModel& model, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("save_gp: cannot open " + path);
  f << gp_to_json(model) << "\n";
}

GpAxisModel load_gp(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("load_gp: cannot open " + path);
  std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return gp_from_json(text);
}

}  // namespace gpmpc
