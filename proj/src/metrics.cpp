#include "trajstack/metrics.hpp"

#include "trajstack/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace trajstack::metrics {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "metrics", op, what);
}

void same_length(const VectorXd& a, const VectorXd& b, const char* op) {
  if (a.size() != b.size()) fail(ErrorKind::InputValidation, op, "lengths differ");
  if (a.size() == 0) fail(ErrorKind::EmptyData, op, "no values");
}

}  // namespace

double mspe(const VectorXd& predicted, const VectorXd& truth) {
  same_length(predicted, truth, "mspe");
  return (predicted - truth).squaredNorm() / static_cast<double>(truth.size());
}

double mse_z(const VectorXd& predicted, const VectorXd& truth) {
  same_length(predicted, truth, "mse_z");
  return (predicted - truth).squaredNorm() / static_cast<double>(truth.size());
}

double rmse_relative(const VectorXd& estimate, const VectorXd& truth) {
  same_length(estimate, truth, "rmse_relative");
  const double den = truth.squaredNorm();
  if (!(den > 0.0)) fail(ErrorKind::DivisionDomain, "rmse_relative", "the true values are all zero");
  return (estimate - truth).squaredNorm() / den;
}

double rmse_relative(double estimate, double truth) {
  if (truth == 0.0) fail(ErrorKind::DivisionDomain, "rmse_relative", "the true value is zero");
  return (estimate - truth) * (estimate - truth) / (truth * truth);
}

Mlpd mlpd(const VectorXd& log_densities) {
  if (log_densities.size() == 0) fail(ErrorKind::EmptyData, "mlpd", "no values");
  Mlpd out;
  double sum = 0.0;
  Index used = 0;
  for (Index i = 0; i < log_densities.size(); ++i) {
    const double v = log_densities(i);
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity()) {
      fail(ErrorKind::Data, "mlpd", "invalid log density at point " + std::to_string(i));
    }
    if (std::isinf(v)) {
      ++out.excluded;
      continue;
    }
    sum += v;
    ++used;
  }
  out.value = used > 0 ? sum / static_cast<double>(used) : -std::numeric_limits<double>::infinity();
  return out;
}

Dic dic(const MatrixXd& log_lik, double log_lik_at_mean) {
  if (log_lik.rows() < 100) fail(ErrorKind::Configuration, "dic", "DIC needs at least 100 draws");
  const double mean_ll = log_lik.rowwise().sum().mean();
  Dic out;
  out.log_lik_at_mean = log_lik_at_mean;
  out.p_d = 2.0 * (log_lik_at_mean - mean_ll);
  out.dic = -2.0 * log_lik_at_mean + 2.0 * out.p_d;
  return out;
}

Waic waic(const MatrixXd& log_lik) {
  const Index S = log_lik.rows();
  if (S < 2) fail(ErrorKind::Configuration, "waic", "WAIC needs at least 2 draws");
  Waic out;
  for (Index i = 0; i < log_lik.cols(); ++i) {
    const auto col = log_lik.col(i);
    const double mx = col.maxCoeff();
    out.lppd += mx + std::log((col.array() - mx).exp().mean());
    const double mean = col.mean();
    out.p_w += (col.array() - mean).square().sum() / static_cast<double>(S - 1);
  }
  out.waic = -2.0 * (out.lppd - out.p_w);
  return out;
}

MatrixXd gaussian_log_lik(const bayes::SparseRowMatrix& U, const VectorXd& y, const bayes::NigDraws& draws) {
  if (U.rows() != y.size() || U.cols() != draws.theta.rows()) {
    fail(ErrorKind::InputValidation, "gaussian_log_lik", "operator, response and draws disagree in shape");
  }
  const Index S = draws.theta.cols();
  const MatrixXd mu = U * draws.theta;  // points × draws
  MatrixXd out(S, y.size());
  const double c = -0.5 * std::log(2.0 * std::numbers::pi);
  for (Index s = 0; s < S; ++s) {
    const double s2 = draws.sigma2(s);
    out.row(s) = (c - 0.5 * std::log(s2) - 0.5 * (y - mu.col(s)).array().square() / s2).matrix().transpose();
  }
  return out;
}

FitCriteria fit_criteria(const model::Fitted& fit, Index n_draws, std::uint64_t seed) {
  const bayes::NigDraws draws = bayes::sample_nig(fit.posterior(), n_draws, seed);
  const bayes::SparseRowMatrix U = fit.observation_operator();
  const VectorXd y = fit.training_response();
  const MatrixXd ll = gaussian_log_lik(U, y, draws);
  bayes::NigDraws mean;
  mean.theta = draws.theta.rowwise().mean();
  mean.sigma2 = VectorXd::Constant(1, draws.sigma2.mean());
  const double at_mean = gaussian_log_lik(U, y, mean).sum();
  return {dic(ll, at_mean), waic(ll)};
}

}  // namespace trajstack::metrics
