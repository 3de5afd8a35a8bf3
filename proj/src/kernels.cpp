#include "trajstack/kernels.hpp"

#include "trajstack/bessel.hpp"
#include "trajstack/error.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

namespace trajstack::kernels {
namespace {

[[noreturn]] void domain_error(const char* op, const std::string& what) {
  throw Error(ErrorKind::ParameterDomain, "kernels", op, what);
}

bool positive(double v) { return std::isfinite(v) && v > 0.0; }

bool finite(const SpaceTimePoint& p) {
  return std::isfinite(p.t) && std::isfinite(p.s.x) && std::isfinite(p.s.y);
}

void validate(const KernelSpec::Family& family) {
  std::visit(
      [](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Matern>) {
          if (!positive(k.phi) || !positive(k.nu)) domain_error("kernel_spec", "matern needs phi > 0, nu > 0");
        } else if constexpr (std::is_same_v<K, Gneiting>) {
          if (!positive(k.phi1) || !positive(k.phi2)) domain_error("kernel_spec", "gneiting needs phi1 > 0, phi2 > 0");
        } else {
          if (!positive(k.xi)) domain_error("kernel_spec", "sqexp needs xi > 0");
        }
      },
      family);
}

}  // namespace

double matern_corr(double d, double phi, double nu) {
  if (!std::isfinite(d) || d < 0.0) domain_error("matern_corr", "distance must be finite and >= 0");
  if (!positive(phi) || !positive(nu)) domain_error("matern_corr", "phi and nu must be positive");
  if (d == 0.0) return 1.0;
  const double x = d / phi;
  const double k = special::bessel_k(nu, x);
  if (k == 0.0) return 0.0;
  if (!std::isfinite(k)) return 1.0;  // x so small that K overflows; the limit is 1
  const double log_corr =
      (1.0 - nu) * std::numbers::ln2 - std::lgamma(nu) + nu * std::log(x) + std::log(k);
  return std::min(1.0, std::exp(log_corr));
}

double gneiting_corr(const SpaceTimePoint& p, const SpaceTimePoint& q, double phi1, double phi2) {
  if (!positive(phi1) || !positive(phi2)) domain_error("gneiting_st_corr", "phi1 and phi2 must be positive");
  if (!finite(p) || !finite(q)) domain_error("gneiting_st_corr", "non-finite space-time point");
  const double dt = p.t - q.t;
  const double temporal = 1.0 + phi1 * dt * dt;
  return std::exp(-phi2 * distance(p.s, q.s) / std::sqrt(temporal)) / temporal;
}

double sqexp_corr(double t, double t2, double xi) {
  if (!positive(xi)) domain_error("sqexp_corr", "xi must be positive");
  if (!std::isfinite(t) || !std::isfinite(t2)) domain_error("sqexp_corr", "non-finite time");
  const double dt = t - t2;
  return std::exp(-xi * xi * dt * dt);
}

KernelSpec::KernelSpec(Family family) : family_(family) { validate(family_); }

double KernelSpec::operator()(const SpaceTimePoint& a, const SpaceTimePoint& b) const {
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Matern>) {
          return matern_corr(distance(a.s, b.s), k.phi, k.nu);
        } else if constexpr (std::is_same_v<K, Gneiting>) {
          return gneiting_corr(a, b, k.phi1, k.phi2);
        } else {
          return sqexp_corr(a.t, b.t, k.xi);
        }
      },
      family_);
}

std::string KernelSpec::describe() const {
  std::ostringstream os;
  os.precision(6);
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, Matern>) {
          os << "matern(phi=" << k.phi << ",nu=" << k.nu << ")";
        } else if constexpr (std::is_same_v<K, Gneiting>) {
          os << "gneiting(phi1=" << k.phi1 << ",phi2=" << k.phi2 << ")";
        } else {
          os << "sqexp(xi=" << k.xi << ")";
        }
      },
      family_);
  return os.str();
}

double Gram::log_det() const {
  return 2.0 * chol.matrixLLT().diagonal().array().log().sum();
}

MatrixXd gram_matrix_serial(std::span<const SpaceTimePoint> points, const KernelSpec& spec) {
  const auto n = static_cast<Index>(points.size());
  MatrixXd k(n, n);
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      k(i, j) = spec(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
    }
  }
  k.triangularView<Eigen::StrictlyLower>() = k.transpose();
  return k;
}

MatrixXd gram_matrix(std::span<const SpaceTimePoint> points, const KernelSpec& spec) {
  const auto n = static_cast<Index>(points.size());
  MatrixXd k(n, n);
#pragma omp parallel for schedule(dynamic, 16) if (n > 64)
  for (Index i = 0; i < n; ++i) {
    for (Index j = i; j < n; ++j) {
      k(i, j) = spec(points[static_cast<std::size_t>(i)], points[static_cast<std::size_t>(j)]);
    }
  }
  k.triangularView<Eigen::StrictlyLower>() = k.transpose();
  return k;
}

MatrixXd cross_matrix(std::span<const SpaceTimePoint> a, std::span<const SpaceTimePoint> b,
                      const KernelSpec& spec) {
  const auto na = static_cast<Index>(a.size());
  const auto nb = static_cast<Index>(b.size());
  MatrixXd k(na, nb);
#pragma omp parallel for schedule(static) if (na * nb > 4096)
  for (Index j = 0; j < nb; ++j) {
    for (Index i = 0; i < na; ++i) {
      k(i, j) = spec(a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(j)]);
    }
  }
  return k;
}

bool cholesky_ok(const Eigen::LLT<MatrixXd>& llt, const MatrixXd& matrix) {
  if (llt.info() != Eigen::Success) return false;
  if (matrix.rows() == 0) return true;
  const auto diag = llt.matrixLLT().diagonal();
  const double floor = static_cast<double>(matrix.rows()) * std::numeric_limits<double>::epsilon() *
                       matrix.diagonal().cwiseAbs().maxCoeff();
  return diag.allFinite() && diag.minCoeff() * diag.minCoeff() > floor;
}

Gram factor(MatrixXd matrix, const JitterPolicy& policy, std::span<const SpaceTimePoint> points) {
  Gram g;
  g.matrix = std::move(matrix);
  const Index n = g.matrix.rows();
  g.chol.compute(g.matrix);
  if (cholesky_ok(g.chol, g.matrix)) return g;
  if (policy.enabled) {
    for (double eps : policy.ladder) {
      MatrixXd shifted = g.matrix;
      shifted.diagonal().array() += eps;
      g.chol.compute(shifted);
      if (cholesky_ok(g.chol, shifted)) {
        g.jitter = eps;
        return g;
      }
    }
  }

  std::ostringstream os;
  os << "Cholesky failed on a " << n << "x" << n << " kernel matrix"
     << (policy.enabled ? " after maximum jitter" : " with jitter disabled");
  if (n > 1) {
    Index bi = 0, bj = 1;
    double best = -std::numeric_limits<double>::infinity();
    for (Index j = 1; j < n; ++j) {
      for (Index i = 0; i < j; ++i) {
        if (g.matrix(i, j) > best) {
          best = g.matrix(i, j);
          bi = i;
          bj = j;
        }
      }
    }
    os << "; closest pair is (" << bi << ", " << bj << ") with correlation " << best;
    if (static_cast<Index>(points.size()) == n) {
      const auto& p = points[static_cast<std::size_t>(bi)];
      const auto& q = points[static_cast<std::size_t>(bj)];
      os << " at (t=" << p.t << ", s=(" << p.s.x << ", " << p.s.y << ")) and (t=" << q.t << ", s=("
         << q.s.x << ", " << q.s.y << "))";
    }
  }
  throw Error(ErrorKind::NumericalRank, "kernels", "gram", os.str());
}

Gram gram(std::span<const SpaceTimePoint> points, const KernelSpec& spec, const JitterPolicy& policy) {
  if (points.empty()) {
    throw Error(ErrorKind::EmptyData, "kernels", "gram", "gram needs at least one point");
  }
  return factor(gram_matrix(points, spec), policy, points);
}

}  // namespace trajstack::kernels
