#pragma once

#include "trajstack/bayes.hpp"
#include "trajstack/kernels.hpp"
#include "trajstack/types.hpp"

#include <memory>
#include <vector>

namespace trajstack::continuous {

struct ContinuousTrajSpec {
  double delta_beta = 1.0;
  double delta_z = 1.0;
  double phi1 = 0.5;
  double phi2 = 0.5;
  double xi = 0.5;
  double a_sigma = 2.0;
  double b_sigma = 1.0;
  kernels::JitterPolicy jitter;
  bayes::NigOptions nig;

  void validate() const;
  kernels::KernelSpec space_time_kernel() const { return kernels::Gneiting{phi1, phi2}; }
  kernels::KernelSpec time_kernel() const { return kernels::SqExp{xi}; }
};

/// theta = (beta_1, ..., beta_p, z), each block one entry per training point.
struct ContinuousLayout {
  Index n = 0;
  Index p = 0;

  Index dim() const { return (p + 1) * n; }
  Index beta_col(Index j, Index i) const { return j * n + i; }
  Index z_col(Index i) const { return p * n + i; }
};

/// Training rows: those with a finite response and, when a mask is given,
/// a true mask entry. Throws InputValidation on exact space-time duplicates.
std::vector<Index> training_rows(const TrajectoryDataset& data, const std::vector<bool>& observed = {});

/// The augmented system over the training rows: n data rows, pn rows for the
/// coefficient processes, n rows for the latent process, with
/// S = I_n ⊕ (I_p ⊗ delta_beta^2 C_xi) ⊕ delta_z^2 K.
bayes::AugmentedSystem build_system_continuous(const TrajectoryDataset& data, const ContinuousTrajSpec& spec,
                                               const std::vector<bool>& observed = {});

/// Sigma = S_p - S_p H^T M^{-1} H S_p with M = I + H S_p H^T, S_p the prior
/// scale of theta and H = [x_1 ... x_p I] the data operator. Every solve goes
/// through one n × n Cholesky, whatever p is.
class DataSpaceScale final : public bayes::PosteriorScale {
 public:
  /// `time` and `space` are the correlation Grams C_xi and K over the
  /// training points, scaled here by delta_beta^2 and delta_z^2.
  DataSpaceScale(kernels::Gram time, kernels::Gram space, double time_scale, double space_scale, MatrixXd x,
                 Eigen::LLT<MatrixXd> m_chol);

  Index size() const override { return layout_.dim(); }
  MatrixXd apply(const MatrixXd& rhs) const override;
  /// A prior draw plus n measurement draws, corrected by conditioning.
  Index noise_size() const override { return layout_.dim() + layout_.n; }
  VectorXd correlate(const VectorXd& eps) const override;
  double condition_estimate() const override;

  /// S_p rhs
  MatrixXd prior_apply(const MatrixXd& rhs) const;
  /// H rhs
  MatrixXd observe(const MatrixXd& rhs) const;
  /// H^T rhs
  MatrixXd observe_adjoint(const MatrixXd& rhs) const;
  const Eigen::LLT<MatrixXd>& m_chol() const { return m_chol_; }
  const kernels::Gram& time_gram() const { return time_; }
  const kernels::Gram& space_gram() const { return space_; }

 private:
  ContinuousLayout layout_;
  kernels::Gram time_, space_;
  double time_scale_, space_scale_;
  MatrixXd x_;  // n × p
  Eigen::LLT<MatrixXd> m_chol_;
};

struct ContinuousFit {
  ContinuousTrajSpec spec;
  ContinuousLayout layout;
  std::vector<SpaceTimePoint> points;  // training points
  MatrixXd x;                          // training covariates
  VectorXd y;
  VectorXd alpha;                      // M^{-1} y
  bayes::NigPosterior posterior;
  double log_evidence = 0.0;

  VectorXd beta(Index j) const { return posterior.m.segment(layout.beta_col(j, 0), layout.n); }
  VectorXd z() const { return posterior.m.segment(layout.z_col(0), layout.n); }
  /// Posterior mean of sum_j x_j beta_j + z at the training points.
  VectorXd signal() const;
  const DataSpaceScale& scale() const;
};

/// Conjugate fit on the training rows (see training_rows).
ContinuousFit fit_continuous(const TrajectoryDataset& data, const ContinuousTrajSpec& spec,
                             const std::vector<bool>& observed = {});

/// Joint laws at new space-time points.
struct ContinuousPrediction {
  bayes::StudentT y;
  bayes::StudentT z;
  std::vector<bayes::StudentT> beta;  // one per covariate
};

/// Plug-in kriging of each process from its posterior mean; the scale
/// omits posterior uncertainty in theta. New points may repeat training
/// points exactly.
ContinuousPrediction predict_points_continuous(const ContinuousFit& fit, const std::vector<SpaceTimePoint>& points,
                                               const MatrixXd& x0);

}  // namespace trajstack::continuous
