#pragma once

#include "trajstack/bayes.hpp"
#include "trajstack/model.hpp"
#include "trajstack/types.hpp"

#include <cstdint>

namespace trajstack::metrics {

/// Mean squared difference; lengths must agree and be at least 1.
double mspe(const VectorXd& predicted, const VectorXd& truth);
double mse_z(const VectorXd& predicted, const VectorXd& truth);

/// sum (est - truth)^2 / sum truth^2
double rmse_relative(const VectorXd& estimate, const VectorXd& truth);
/// (est - truth)^2 / truth^2
double rmse_relative(double estimate, double truth);

struct Mlpd {
  double value = 0.0;    // mean over the finite entries
  Index excluded = 0;    // entries equal to -inf
};

/// Mean of per-point predictive log densities. NaN is an error.
Mlpd mlpd(const VectorXd& log_densities);

struct Dic {
  double dic = 0.0;
  double p_d = 0.0;
  double log_lik_at_mean = 0.0;
};

/// DIC from a draws × points matrix of log likelihoods and the log likelihood
/// at the posterior mean, with p_D = 2 (log p(y | mean) - mean_s log p(y | draw_s)).
/// Needs at least 100 draws.
Dic dic(const MatrixXd& log_lik, double log_lik_at_mean);

struct Waic {
  double waic = 0.0;
  double lppd = 0.0;
  double p_w = 0.0;
};

/// WAIC from a draws × points matrix of log likelihoods (at least 2 draws).
Waic waic(const MatrixXd& log_lik);

/// log N(y_i; (U theta_s)_i, sigma2_s) for every draw s and training point i.
MatrixXd gaussian_log_lik(const bayes::SparseRowMatrix& U, const VectorXd& y, const bayes::NigDraws& draws);

struct FitCriteria {
  Dic dic;
  Waic waic;
};

/// DIC and WAIC of a fitted model on its own training data, conditioning on
/// theta = (beta, z) draws from the exact posterior; the plug-in point is the
/// mean of the draws.
FitCriteria fit_criteria(const model::Fitted& fit, Index n_draws = 2000, std::uint64_t seed = 1);

}  // namespace trajstack::metrics
