#pragma once

#include "trajstack/kernels.hpp"
#include "trajstack/types.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace trajstack::diagnostics {

/// Parameters of the asymptotic variance term for latent prediction in the
/// trend-free spatial DLM. `kernel` is the true K_phi; `working_kernel` the
/// K_phi' used by the fitted model (defaults to `kernel`).
struct VarianceTermInput {
  std::vector<Point2> locations;
  kernels::KernelSpec kernel = kernels::Matern{0.5, 1.0};
  std::optional<kernels::KernelSpec> working_kernel;
  double alpha = 1.0;
  double delta_z = 1.0;  // delta_z' of the working model
  double sigma = 1.0;    // sigma_*
  kernels::JitterPolicy jitter;
  double coincide_eps = 1e-12;

  void validate() const;
  const kernels::KernelSpec& working() const { return working_kernel ? *working_kernel : kernel; }
};

struct VarianceTerm {
  double value = 0.0;  // sigma^2 (delta_z^2 h + g)
  double h = 0.0;      // 1 - k' K^-1 k
  double g = 0.0;      // u' R (R + I)^-2 R u with u = K^-1 k
};

/// E^A at epoch t for targets near a fixed location set. The working Gram is
/// eigendecomposed once; every R_t, W_t, Q_t is then a function of it, so
/// each target costs two n-vector solves and each epoch an O(n) recursion.
class VarianceTermSolver {
 public:
  explicit VarianceTermSolver(VarianceTermInput input);

  VarianceTerm evaluate(const Point2& target, Index t) const;
  /// One value per epoch in `epochs`, sharing the target's solves.
  std::vector<VarianceTerm> evaluate(const Point2& target, const std::vector<Index>& epochs) const;

  const VarianceTermInput& input() const { return input_; }
  double applied_jitter() const { return gram_.jitter; }

 private:
  VarianceTermInput input_;
  std::vector<SpaceTimePoint> points_;
  kernels::Gram gram_;      // K_phi
  MatrixXd eigvecs_;        // of K_phi'
  VectorXd eigvals_;
  bool same_kernel_ = true;
};

/// Convenience single evaluation.
VarianceTerm variance_term_EA(const VarianceTermInput& input, const Point2& target, Index t);

/// Direct matrix recursion R_t = alpha^2 W_{t-1} + delta^2 K', Q_t = R_t + I,
/// W_t = R_t - R_t Q_t^-1 R_t from W_0 = K'; O(t n^3), for testing.
VarianceTerm variance_term_EA_reference(const VarianceTermInput& input, const Point2& target, Index t);

/// Matched-model simulation of the trend-free spatial DLM on uniform
/// locations, fitted with the working parameters below.
struct ConcentrationConfig {
  std::vector<Index> n_list{50, 200, 800};
  Index replicates = 10;
  Index T = 5;
  double sigma = 1.0;
  double delta_z = 1.0;
  double phi = 0.5;
  double nu = 1.0;
  /// Working values; unset means the true ones.
  std::optional<double> fit_phi;
  std::optional<double> fit_delta_z;
  double n_sigma = 2.0;  // prior sigma^2 ~ IG(n_sigma/2, n_sigma s_sigma/2)
  double s_sigma = 1.0;
  double level = 0.95;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct ConcentrationRow {
  Index n = 0;
  double median_mean = 0.0;   // median over replicates of E[sigma^2 | data]
  double median_width = 0.0;  // median width of the central interval
  std::vector<double> means;
  std::vector<double> widths;
};

struct ConcentrationReport {
  std::vector<ConcentrationRow> rows;
  /// Set when there are at least two sizes: median widths strictly decrease.
  std::optional<bool> shrinking;
  std::vector<std::string> notes;
};

ConcentrationReport sigma_concentration_check(const ConcentrationConfig& config);

/// Squared prediction errors of a stacked DLM forecast of y at new
/// locations, regressed on 1/n; the intercept estimates the limiting error.
struct StackingLimitConfig {
  std::vector<Index> n_list{50, 100, 200, 400};
  Index replicates = 20;
  Index n_new = 50;
  Index T = 5;
  double sigma = 1.0;
  double delta_z = 1.0;
  double phi = 0.5;
  double nu = 1.0;
  std::vector<double> candidate_phi{0.25, 0.5, 1.0};
  double n_sigma = 2.0;
  double s_sigma = 1.0;
  std::uint64_t seed = 1;
  bool parallel = true;
};

struct StackingLimitReport {
  std::vector<Index> n;
  std::vector<double> mean_squared_error;  // averaged over replicates and new locations
  double intercept = 0.0;
  double slope = 0.0;
  double target = 0.0;  // sigma^2
};

StackingLimitReport stacking_limit_check(const StackingLimitConfig& config);

}  // namespace trajstack::diagnostics
