#pragma once

#include "trajstack/bayes.hpp"
#include "trajstack/kernels.hpp"
#include "trajstack/types.hpp"

#include <vector>

namespace trajstack::dlm {

/// Filtered posterior after epoch t: sigma^2 ~ IG(n/2, n s/2) and
/// theta_t | sigma^2 ~ N(m, sigma^2 W).
struct DlmState {
  Index t = 0;
  double n = 0.0;
  double s = 0.0;
  VectorXd m;
  MatrixXd W;

  Index dim() const { return m.size(); }
  /// Marginal t_n(m, s W) of the state.
  bayes::StudentT marginal() const { return {n, m, s * W}; }
};

/// Prior state at t = 0. Throws ParameterDomain unless n_sigma, s_sigma > 0
/// and S0 is square with m0's dimension.
DlmState initial_state(double n_sigma, double s_sigma, VectorXd m0, MatrixXd S0);

/// One forward-filter update for y_t = F theta_t + eta, theta_t = G theta_{t-1} + eta_theta,
/// eta ~ N(0, sigma^2 I), eta_theta ~ N(0, sigma^2 S).
DlmState filter_step(const DlmState& state, const VectorXd& y, const MatrixXd& F, const MatrixXd& G,
                     const MatrixXd& S);

/// Rescale rows so that observation noise sigma^2 diag(v) becomes sigma^2 I.
void prewhiten(VectorXd& y, MatrixXd& F, const VectorXd& v);

/// Law of y_{t+h} given data to t, propagating the state h - 1 times
/// without data before the one-step formula.
bayes::StudentT forecast(const DlmState& state, const MatrixXd& F, const MatrixXd& G, const MatrixXd& S,
                         int h = 1);

/// The spatial adaptation: theta_t = (beta_t, z_t) over n fixed locations,
/// F_t = [X_t  I_n], G = diag(I_p, alpha I_n), S = diag(delta_beta^2 I_p, delta_z^2 K).
/// p = 0 gives the trend-free model.
struct SpatialDlm {
  std::vector<Point2> locations;
  Index p = 0;
  kernels::KernelSpec kernel = kernels::Matern{};
  double delta_beta = 1.0;
  double delta_z = 1.0;
  double alpha = 1.0;
  kernels::JitterPolicy jitter;

  Index n() const { return static_cast<Index>(locations.size()); }
  Index dim() const { return p + n(); }
  /// Throws Configuration when the kernel is not purely spatial or scales are invalid.
  void validate() const;
  kernels::Gram spatial_gram() const;
  MatrixXd evolution() const;
  MatrixXd state_scale() const;
  MatrixXd observation(const MatrixXd& x) const;
};

/// Filter a panel: ys[t] is the n-vector at epoch t + 1, xs[t] its n × p covariates
/// (ignored when p = 0). Returns the state after every epoch.
std::vector<DlmState> run_filter(const SpatialDlm& model, const DlmState& prior, const std::vector<VectorXd>& ys,
                                 const std::vector<MatrixXd>& xs = {});

/// Predictive law of y at new locations at the state's epoch.
bayes::StudentT spatial_predict(const DlmState& state, const SpatialDlm& model,
                                const std::vector<Point2>& new_locations, const MatrixXd& x0);

/// The same conditional for the latent z alone: t_n(C0' C^-1 m_z, s (C00 - C0' C^-1 C0)).
bayes::StudentT spatial_predict_latent(const DlmState& state, const SpatialDlm& model,
                                       const std::vector<Point2>& new_locations);

}  // namespace trajstack::dlm
