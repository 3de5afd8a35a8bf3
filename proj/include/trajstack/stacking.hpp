#pragma once

#include "trajstack/bayes.hpp"
#include "trajstack/model.hpp"
#include "trajstack/types.hpp"

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace trajstack::stacking {

enum class Scheme { RandomKFold, ExpandingWindow };

struct FoldPlan {
  Scheme scheme = Scheme::RandomKFold;
  Index k = 20;
  std::uint64_t seed = 1;
};

struct Fold {
  std::vector<Index> train;
  std::vector<Index> valid;
};

/// Folds over `pool` (row indices, taken in the given order as time order).
/// Random folds partition the pool; expanding-window folds validate each
/// contiguous block on everything strictly before it, skipping the first.
std::vector<Fold> make_folds(const std::vector<Index>& pool, const FoldPlan& plan);

/// Folds over the observed rows of `data`.
std::vector<Fold> make_folds(const TrajectoryDataset& data, const FoldPlan& plan);

struct StackingResult {
  VectorXd weights;
  double objective = 0.0;
  /// Largest violation of the optimality conditions, scaled to the gradient size.
  double kkt_residual = 0.0;
  Index iterations = 0;
};

/// argmin over the simplex of |y - P a|^2. Among multiple minimizers the one
/// of least |a|^2 is returned.
StackingResult stack_means(const MatrixXd& P, const VectorXd& y);

/// KKT residual of `a` for the mean-stacking problem.
double means_kkt_residual(const MatrixXd& P, const VectorXd& y, const VectorXd& a);

/// argmax over the simplex of sum_i log sum_g a_g exp(L_ig). Entries may be
/// -inf; a row of only -inf is a Data error. Started from uniform weights,
/// so exactly tied candidates keep equal weight.
StackingResult stack_distributions(const MatrixXd& L);

double distributions_objective(const MatrixXd& L, const VectorXd& a);

/// Posterior model probabilities from log evidences (uniform prior when empty).
VectorXd bma_weights(const VectorXd& log_evidence, const VectorXd& prior = {});

/// sum_g a_g t_g for univariate Student-t components.
class Mixture {
 public:
  Mixture(VectorXd weights, std::vector<bayes::StudentT1> components);

  const VectorXd& weights() const { return weights_; }
  const std::vector<bayes::StudentT1>& components() const { return components_; }
  double log_pdf(double x) const;
  double cdf(double x) const;
  /// Requires every component with positive weight to have dof > 1.
  double mean() const;
  /// Requires dof > 2 for every component with positive weight.
  double variance() const;
  double quantile(double p) const;

 private:
  VectorXd weights_;
  std::vector<bayes::StudentT1> components_;
};

Mixture stacked_mixture(const VectorXd& weights, const std::vector<bayes::StudentT1>& components);

enum class Mode { Means, Distributions };

std::string to_string(Mode m);

struct FoldRecord {
  std::vector<Index> valid_rows;  // concatenated over folds
  VectorXd y;                     // observed responses at those rows
  MatrixXd means;                 // rows × candidates
  MatrixXd log_densities;         // rows × candidates
};

struct StackingRun {
  std::vector<model::Candidate> candidates;
  VectorXd weights;  // over all candidates, zero for dropped ones
  double objective = 0.0;
  double kkt_residual = 0.0;
  std::vector<Index> dropped;
  std::vector<std::string> warnings;
  FoldRecord record;
  /// Candidates refitted on the whole pool (null where dropped or failed).
  std::vector<std::shared_ptr<model::Fitted>> fits;

  /// Per-row mixtures of the refitted candidates' laws.
  std::vector<Mixture> predict_y(const std::vector<Index>& rows) const;
  std::vector<Mixture> predict_z(const std::vector<Index>& rows) const;
  /// Weighted posterior means of the coefficients at the rows.
  std::vector<VectorXd> predict_beta(const std::vector<Index>& rows) const;
  /// Mixture of the candidates' inverse-gamma posteriors for sigma^2.
  double sigma2_mean() const;
  double sigma2_quantile(double p) const;
  /// BMA weights from the refitted candidates' evidences (zero where dropped).
  VectorXd bma() const;
  /// The same run re-weighted (fits shared).
  StackingRun reweighted(const VectorXd& w) const;
};

struct StackingOptions {
  Mode mode = Mode::Means;
  model::Priors priors;
  /// Rows eligible for training and validation; all observed rows when empty.
  std::vector<Index> pool;
  /// Run candidate × fold fits on OpenMP threads. The result does not
  /// depend on this flag.
  bool parallel = true;
};

StackingRun run_stacking(const TrajectoryDataset& data, const std::vector<model::Candidate>& grid,
                         const FoldPlan& plan, const StackingOptions& options = {});

}  // namespace trajstack::stacking
