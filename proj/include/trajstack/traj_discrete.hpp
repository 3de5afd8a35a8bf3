#pragma once

#include "trajstack/bayes.hpp"
#include "trajstack/kernels.hpp"
#include "trajstack/types.hpp"

#include <vector>

namespace trajstack::discrete {

/// Distinct locations of a trajectory and the epoch-to-location map B.
struct LocationIndex {
  std::vector<Point2> distinct;
  std::vector<Index> of_epoch;  // distinct index j(t) for each epoch

  Index epochs() const { return static_cast<Index>(of_epoch.size()); }
  Index n() const { return static_cast<Index>(distinct.size()); }
  /// T × nT selector with (t, n t + j(t)) = 1.
  bayes::SparseRowMatrix selector() const;
};

/// Points within eps of each other in the max norm are one location; the
/// relation is closed transitively so the result does not depend on order
/// beyond naming each group by its first occurrence.
LocationIndex dedup_locations(const std::vector<Point2>& gamma, double eps = 1e-9);

struct DiscreteTrajSpec {
  double delta_beta = 1.0;
  double delta_z = 1.0;
  kernels::KernelSpec kernel = kernels::Matern{1.0, 0.5};
  MatrixXd w_p;  // coefficient correlation; empty means identity
  double a_sigma = 2.0;
  double b_sigma = 1.0;
  /// false drops the latent spatial process, leaving a time-varying regression.
  bool spatial = true;
  double dedup_eps = 1e-9;
  kernels::JitterPolicy jitter;
  bayes::NigOptions nig;

  void validate(Index p) const;
  MatrixXd coefficient_correlation(Index p) const;
};

/// Epoch-indexed layout of theta = (beta_1..beta_T, z_1..z_T).
struct DiscreteLayout {
  Index T = 0;
  Index p = 0;
  Index n = 0;  // distinct locations; 0 without the spatial process

  Index dim() const { return (p + n) * T; }
  Index beta_col(Index t, Index k) const { return t * p + k; }
  Index z_col(Index t, Index j) const { return p * T + t * n + j; }
  /// Interleaves (beta_t, z_t) per epoch so the precision is block tridiagonal.
  Eigen::VectorXi epoch_order() const;
};

struct DiscreteSystem {
  bayes::AugmentedSystem system;
  DiscreteLayout layout;
  LocationIndex locations;
  kernels::Gram spatial;  // K over distinct locations (empty without the spatial process)
  std::vector<Index> observed_epochs;
};

/// Rows of `data` are epochs 1..T. Epochs whose response is NaN, or whose
/// entry in `observed` is false, contribute no data row but keep their
/// states, so they can be predicted exactly afterwards.
DiscreteSystem build_system_discrete(const TrajectoryDataset& data, const DiscreteTrajSpec& spec,
                                     const std::vector<bool>& observed = {});

struct DiscreteFit {
  DiscreteTrajSpec spec;
  DiscreteLayout layout;
  LocationIndex locations;
  kernels::Gram spatial;
  bayes::NigPosterior posterior;
  std::vector<Index> observed_epochs;

  VectorXd beta(Index t) const;
  /// Posterior mean of z_t over the distinct locations.
  VectorXd z(Index t) const;
};

DiscreteFit fit_discrete(const TrajectoryDataset& data, const DiscreteTrajSpec& spec,
                         const std::vector<bool>& observed = {});

/// Marginal laws for one epoch.
struct EpochPrediction {
  bayes::StudentT1 y;
  bayes::StudentT1 z;
  bayes::StudentT beta;
};

/// Law at epoch T + h from the plug-in next-step form: location
/// x' beta_T + kriged z_T, scale (b*/a*)(1 + h delta_beta^2 x' W_p x
/// + delta_z^2 (1 - k' K^-1 k) + (h - 1) delta_z^2). h = 1 is the one-step law.
EpochPrediction predict_next_discrete(const DiscreteFit& fit, const VectorXd& x_next, const Point2& gamma_next,
                                      Index h = 1);

/// Exact posterior predictive at an epoch inside the fitted range (0-based),
/// whether or not it carried data.
EpochPrediction predict_epoch(const DiscreteFit& fit, const VectorXd& x, Index t);

}  // namespace trajstack::discrete
