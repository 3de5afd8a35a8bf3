#pragma once

#include "trajstack/kernels.hpp"
#include "trajstack/types.hpp"

#include <Eigen/Cholesky>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace trajstack::bayes {

using SparseMatrix = Eigen::SparseMatrix<double>;
using SparseRowMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;
using Permutation = Eigen::PermutationMatrix<Eigen::Dynamic, Eigen::Dynamic, int>;

/// One diagonal block of the noise scale S of an augmented system. Blocks keep
/// their own factorization; S^{-1} is only ever applied, never formed densely
/// across blocks.
class CovBlock {
 public:
  explicit CovBlock(std::string label) : label_(std::move(label)) {}
  virtual ~CovBlock() = default;

  virtual Index rows() const = 0;
  /// S_b^{-1} rhs
  virtual MatrixXd solve(const MatrixXd& rhs) const = 0;
  virtual double log_det() const = 0;
  /// S_b as a dense matrix, for tests and small diagnostics.
  virtual MatrixXd dense() const = 0;
  /// X_b^T S_b^{-1} X_b. The default solves against the touched columns of X_b.
  virtual SparseMatrix sandwich(const SparseMatrix& xb) const;
  virtual double jitter() const { return 0.0; }

  const std::string& label() const { return label_; }

 private:
  std::string label_;
};

/// scale * I
class IdentityBlock final : public CovBlock {
 public:
  IdentityBlock(Index rows, double scale = 1.0, std::string label = "identity");
  Index rows() const override { return rows_; }
  MatrixXd solve(const MatrixXd& rhs) const override { return rhs / scale_; }
  double log_det() const override;
  MatrixXd dense() const override;
  SparseMatrix sandwich(const SparseMatrix& xb) const override;

 private:
  Index rows_;
  double scale_;
};

/// scale * (K + jitter I) for a factored correlation matrix K.
class DenseBlock final : public CovBlock {
 public:
  DenseBlock(kernels::Gram gram, double scale, std::string label);
  /// An arbitrary SPD covariance; fails with NumericalRank if it is not.
  static std::shared_ptr<DenseBlock> from_covariance(const MatrixXd& cov, std::string label);

  Index rows() const override { return gram_.size(); }
  MatrixXd solve(const MatrixXd& rhs) const override { return gram_.solve(rhs) / scale_; }
  double log_det() const override;
  MatrixXd dense() const override;
  double jitter() const override { return gram_.jitter; }
  const kernels::Gram& gram() const { return gram_; }
  double scale() const { return scale_; }

 private:
  kernels::Gram gram_;
  double scale_;
};

/// Random-walk prior scale over `epochs` stacked k-vectors:
///   scale * (I - A⊗I_k)^{-1} (I_T ⊗ K) (I - A^T⊗I_k)^{-1}
/// with A the one-step shift. Its inverse is the block-tridiagonal
/// scale^{-1} L^T (I ⊗ K^{-1}) L where L = I - A⊗I_k takes first differences,
/// and det L = 1.
class RandomWalkBlock final : public CovBlock {
 public:
  RandomWalkBlock(Index epochs, kernels::Gram inner, double scale, std::string label);

  Index rows() const override { return epochs_ * inner_.size(); }
  MatrixXd solve(const MatrixXd& rhs) const override;
  double log_det() const override;
  MatrixXd dense() const override;
  SparseMatrix sandwich(const SparseMatrix& xb) const override;
  double jitter() const override { return inner_.jitter; }

  Index epochs() const { return epochs_; }
  const kernels::Gram& inner() const { return inner_; }
  double scale() const { return scale_; }
  /// The sparse block-tridiagonal S_b^{-1}.
  SparseMatrix precision() const;

 private:
  Index epochs_;
  kernels::Gram inner_;
  double scale_;
};

/// Y = X theta + eta, eta ~ N(0, sigma^2 S) with S block diagonal. The first
/// n_obs rows are genuine observations and must be covered by whole blocks;
/// the remaining rows encode the prior on theta as zero pseudo-observations.
struct AugmentedSystem {
  VectorXd Y;
  SparseRowMatrix X;
  std::vector<std::shared_ptr<const CovBlock>> blocks;
  Index n_obs = 0;
  /// Optional fill-reducing order for the posterior precision
  /// (new position i holds old column order[i]).
  std::optional<Eigen::VectorXi> column_order;

  Index rows() const { return X.rows(); }
  Index params() const { return X.cols(); }
  double max_jitter() const;
  /// Throws InputValidation on inconsistent shapes.
  void validate() const;
  /// S as a dense matrix (tests only; quadratic in rows).
  MatrixXd dense_scale() const;
};

/// The posterior scale Sigma of theta, held in whatever factored form the
/// model makes cheap.
class PosteriorScale {
 public:
  virtual ~PosteriorScale() = default;
  virtual Index size() const = 0;
  /// Sigma rhs
  virtual MatrixXd apply(const MatrixXd& rhs) const = 0;
  /// Length of the standard-normal vector consumed by `correlate`.
  virtual Index noise_size() const { return size(); }
  /// A draw from N(0, Sigma) given eps ~ N(0, I_{noise_size}).
  virtual VectorXd correlate(const VectorXd& eps) const = 0;
  virtual double condition_estimate() const = 0;
};

/// Sigma given as the Cholesky factor of its inverse, dense or sparse
/// depending on size and fill.
class PrecisionFactor final : public PosteriorScale {
 public:
  static std::optional<PrecisionFactor> compute(const SparseMatrix& precision,
                                                const std::optional<Eigen::VectorXi>& order = {});

  Index size() const override { return n_; }
  bool is_sparse() const { return sparse_ != nullptr; }
  /// precision^{-1} rhs
  MatrixXd solve(const MatrixXd& rhs) const;
  MatrixXd apply(const MatrixXd& rhs) const override { return solve(rhs); }
  /// log det of the precision
  double log_det() const;
  VectorXd correlate(const VectorXd& eps) const override;
  /// Squared ratio of extreme Cholesky pivots, a cheap condition estimate.
  double condition_estimate() const override;

 private:
  using SparseLlt = Eigen::SimplicialLLT<SparseMatrix, Eigen::Lower, Eigen::NaturalOrdering<int>>;
  Index n_ = 0;
  std::shared_ptr<const Eigen::LLT<MatrixXd>> dense_;
  std::shared_ptr<const SparseLlt> sparse_;
  Permutation perm_;  // factored matrix is perm * P * perm^T
};

struct NigOptions {
  /// Standard Normal-Inverse-Gamma update b* = b + 1/2 q. Setting false drops
  /// the 1/2, reproducing the literal b* = b + q form.
  bool half_quadratic = true;
};

/// sigma^2 ~ IG(a_star, b_star), theta | sigma^2 ~ N(m, sigma^2 Sigma).
struct NigPosterior {
  VectorXd m;
  double a_star = 0.0;
  double b_star = 0.0;
  double a_prior = 0.0;
  double b_prior = 0.0;
  Index n_obs = 0;
  std::shared_ptr<const PosteriorScale> sigma;
  double condition_estimate = 1.0;
  double jitter = 0.0;
  std::vector<std::string> warnings;

  Index dim() const { return m.size(); }
  /// Dense Sigma; quadratic memory in dim.
  MatrixXd scale() const;
  /// Sigma u for each column of u.
  MatrixXd scale_times(const MatrixXd& u) const { return sigma->apply(u); }
  /// u^T Sigma u
  double quad_scale(const VectorXd& u) const;
  double sigma2_mean() const;  // requires a_star > 1
};

/// Multivariate t_dof(loc, scale).
struct StudentT {
  double dof = 1.0;
  VectorXd loc;
  MatrixXd scale;
};

/// Univariate t_dof(loc, scale) with scale a variance-type parameter.
struct StudentT1 {
  double dof = 1.0;
  double loc = 0.0;
  double scale = 1.0;

  double log_pdf(double x) const;
  double cdf(double x) const;
  double quantile(double p) const;
  /// Defined for dof > 2.
  double variance() const;
};

StudentT1 marginal(const StudentT& t, Index i);

NigPosterior nig_posterior(const AugmentedSystem& sys, double a_prior, double b_prior,
                           const NigOptions& options = {});

/// t_{2a*}(m, (b*/a*) Sigma)
StudentT marginal_theta(const NigPosterior& post);

double t_logdensity(const VectorXd& x, const StudentT& t);

struct NigDraws {
  MatrixXd theta;  // dim × draws
  VectorXd sigma2;
};

NigDraws sample_nig(const NigPosterior& post, Index n_draws, std::uint64_t seed);

/// Log evidence of the n_obs data rows, integrating theta and sigma^2 against
/// the prior the remaining rows encode.
double log_marginal_likelihood(const AugmentedSystem& sys, double a_prior, double b_prior);

/// Posterior precision X^T S^{-1} X and vector X^T S^{-1} Y restricted to rows
/// [begin, end), which must align with block boundaries.
struct NormalEquations {
  SparseMatrix precision;
  VectorXd rhs;
  double y_quad = 0.0;  // Y^T S^{-1} Y over the same rows
};
NormalEquations normal_equations(const AugmentedSystem& sys, Index begin, Index end);

/// (Y - X theta)^T S^{-1} (Y - X theta) over all rows.
double residual_quadratic(const AugmentedSystem& sys, const VectorXd& theta);

}  // namespace trajstack::bayes
