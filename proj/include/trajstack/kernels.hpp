#pragma once

#include "trajstack/types.hpp"

#include <Eigen/Cholesky>

#include <array>
#include <span>
#include <string>
#include <type_traits>
#include <variant>

namespace trajstack::kernels {

/// Matérn correlation (2^{1-nu}/Gamma(nu)) (d/phi)^nu K_nu(d/phi); exactly 1 at d = 0.
double matern_corr(double d, double phi, double nu);

/// Non-separable space-time correlation
///   1/(phi1 dt^2 + 1) * exp(-phi2 |ds| / sqrt(1 + phi1 dt^2)).
double gneiting_corr(const SpaceTimePoint& p, const SpaceTimePoint& q, double phi1, double phi2);

/// Squared-exponential temporal correlation exp(-xi^2 dt^2).
double sqexp_corr(double t, double t2, double xi);

struct Matern {
  double phi = 1.0;
  double nu = 0.5;
  friend bool operator==(const Matern&, const Matern&) = default;
};

struct Gneiting {
  double phi1 = 1.0;
  double phi2 = 1.0;
  friend bool operator==(const Gneiting&, const Gneiting&) = default;
};

struct SqExp {
  double xi = 1.0;
  friend bool operator==(const SqExp&, const SqExp&) = default;
};

/// One correlation family with fixed hyperparameters. Matérn reads only the
/// location of a SpaceTimePoint, SqExp only the time, Gneiting both.
class KernelSpec {
 public:
  using Family = std::variant<Matern, Gneiting, SqExp>;

  KernelSpec(Family family);  // NOLINT: implicit from a family is intended
  template <class K>
    requires(std::is_same_v<K, Matern> || std::is_same_v<K, Gneiting> || std::is_same_v<K, SqExp>)
  KernelSpec(K k) : KernelSpec(Family(k)) {}  // NOLINT

  const Family& family() const { return family_; }
  double operator()(const SpaceTimePoint& a, const SpaceTimePoint& b) const;
  std::string describe() const;

  friend bool operator==(const KernelSpec&, const KernelSpec&) = default;

 private:
  Family family_;
};

struct JitterPolicy {
  bool enabled = true;
  std::array<double, 3> ladder{1e-10, 1e-8, 1e-6};
};

/// A correlation matrix with the Cholesky factor of (matrix + jitter I).
/// `matrix` is the raw kernel evaluation; `jitter` records what had to be added.
struct Gram {
  MatrixXd matrix;
  Eigen::LLT<MatrixXd> chol;
  double jitter = 0.0;

  Index size() const { return matrix.rows(); }
  double log_det() const;
  /// (matrix + jitter I)^{-1} rhs
  MatrixXd solve(const MatrixXd& rhs) const { return chol.solve(rhs); }
};

/// Kernel matrix over `points`, upper triangle evaluated and mirrored. The
/// OpenMP version is bitwise identical to the serial one: every entry is an
/// independent scalar evaluation.
MatrixXd gram_matrix(std::span<const SpaceTimePoint> points, const KernelSpec& spec);
MatrixXd gram_matrix_serial(std::span<const SpaceTimePoint> points, const KernelSpec& spec);

/// Rectangular kernel matrix K(a_i, b_j).
MatrixXd cross_matrix(std::span<const SpaceTimePoint> a, std::span<const SpaceTimePoint> b,
                      const KernelSpec& spec);

/// Factor a symmetric correlation-type matrix, escalating diagonal jitter
/// along the policy ladder. Throws NumericalRank naming the most correlated
/// pair of `points` when no rung succeeds. `points` may be empty when the
/// caller has no geometry to report.
Gram factor(MatrixXd matrix, const JitterPolicy& policy,
            std::span<const SpaceTimePoint> points = {});

/// gram_matrix followed by factor.
Gram gram(std::span<const SpaceTimePoint> points, const KernelSpec& spec,
          const JitterPolicy& policy = {});

/// True when the LLT is usable: success and no pivot below n * eps * max diagonal.
bool cholesky_ok(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& matrix);

}  // namespace trajstack::kernels
