#pragma once

#include "trajstack/bayes.hpp"
#include "trajstack/types.hpp"

#include <memory>
#include <string>
#include <vector>

namespace trajstack::model {

enum class Family { Discrete, Continuous, Nsdlm };

std::string to_string(Family f);
Family family_from_string(const std::string& s);

/// One fixed hyperparameter tuple. Only the fields of its family are read:
/// Discrete uses (phi, nu), Continuous uses (phi1, phi2, xi), Nsdlm uses
/// delta_beta alone.
struct Candidate {
  Family family = Family::Continuous;
  double delta_beta = 1.0;
  double delta_z = 1.0;
  double phi = 1.0;
  double nu = 0.5;
  double phi1 = 0.5;
  double phi2 = 0.5;
  double xi = 0.5;

  std::string describe() const;
  friend bool operator==(const Candidate&, const Candidate&) = default;
};

/// Cartesian product helpers for the usual grids.
std::vector<Candidate> discrete_grid(const std::vector<double>& phi, const std::vector<double>& nu,
                                     const std::vector<double>& delta_beta, const std::vector<double>& delta_z);
std::vector<Candidate> continuous_grid(const std::vector<double>& phi1, const std::vector<double>& phi2,
                                       const std::vector<double>& xi, const std::vector<double>& delta_beta,
                                       const std::vector<double>& delta_z);
std::vector<Candidate> nsdlm_grid(const std::vector<double>& delta_beta);

struct Priors {
  double a_sigma = 2.0;
  double b_sigma = 1.0;
  bayes::NigOptions nig;
};

/// Per-row marginal laws.
struct RowLaw {
  bayes::StudentT1 y;
  bayes::StudentT1 z;  // zero-scale point mass at 0 for models without a latent process
  VectorXd beta;       // posterior (or kriged) mean of the coefficients
};

/// A candidate fitted on some rows of a dataset. Rows are addressed by their
/// index in that dataset, whether or not they were used for fitting.
class Fitted {
 public:
  virtual ~Fitted() = default;

  virtual const Candidate& candidate() const = 0;
  virtual const bayes::NigPosterior& posterior() const = 0;
  virtual double log_evidence() const = 0;
  virtual std::vector<RowLaw> predict(const std::vector<Index>& rows) const = 0;

  /// Rows that carried data, and the map y = U theta + eta on them.
  virtual const std::vector<Index>& training_rows() const = 0;
  virtual bayes::SparseRowMatrix observation_operator() const = 0;
  virtual VectorXd training_response() const = 0;
};

/// Fits `candidate` on the rows of `data` flagged in `train` (all observed
/// rows when empty). Discrete families treat row order as epoch order.
std::shared_ptr<Fitted> fit(const Candidate& candidate, const TrajectoryDataset& data,
                            const std::vector<bool>& train, const Priors& priors = {});

}  // namespace trajstack::model
