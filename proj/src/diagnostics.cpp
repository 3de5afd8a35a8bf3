#include "trajstack/diagnostics.hpp"

#include "trajstack/dlm.hpp"
#include "trajstack/error.hpp"
#include "trajstack/rng.hpp"
#include "trajstack/simgen.hpp"
#include "trajstack/stacking.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>

namespace trajstack::diagnostics {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "diagnostics", op, what);
}

std::vector<SpaceTimePoint> as_points(const std::vector<Point2>& locations) {
  std::vector<SpaceTimePoint> pts;
  pts.reserve(locations.size());
  for (const auto& s : locations) pts.push_back({0.0, s});
  return pts;
}

bool is_spatial(const kernels::KernelSpec& k) { return std::holds_alternative<kernels::Matern>(k.family()); }

double median(std::vector<double> v) {
  if (v.empty()) return std::nan("");
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
  std::nth_element(v.begin(), mid, v.end());
  if (v.size() % 2 == 1) return *mid;
  return 0.5 * (*mid + *std::max_element(v.begin(), mid));
}

std::uint64_t replicate_seed(std::uint64_t seed, Index n, Index r) {
  auto rng = CounterRng::stream(seed, "replicate", static_cast<std::uint64_t>(n) * 1000003ULL + static_cast<std::uint64_t>(r));
  return rng();
}

/// Runs body(i) for i < count, in parallel when asked, rethrowing the first failure.
template <class F>
void for_each_index(Index count, bool parallel, F&& body) {
  std::exception_ptr first;
#pragma omp parallel for schedule(dynamic) if (parallel)
  for (Index i = 0; i < count; ++i) {
    try {
      body(i);
    } catch (...) {
#pragma omp critical(trajstack_diagnostics_error)
      if (!first) first = std::current_exception();
    }
  }
  if (first) std::rethrow_exception(first);
}

}  // namespace

void VarianceTermInput::validate() const {
  const char* op = "variance_term_EA";
  if (locations.empty()) fail(ErrorKind::EmptyData, op, "no locations");
  if (!is_spatial(kernel) || !is_spatial(working())) fail(ErrorKind::Configuration, op, "kernels must be spatial (Matern)");
  if (!std::isfinite(alpha) || !std::isfinite(delta_z) || !(delta_z >= 0.0) || !(sigma > 0.0)) {
    fail(ErrorKind::ParameterDomain, op, "alpha must be finite, delta_z >= 0 and sigma > 0");
  }
}

VarianceTermSolver::VarianceTermSolver(VarianceTermInput input) : input_(std::move(input)) {
  input_.validate();
  points_ = as_points(input_.locations);
  gram_ = kernels::gram(points_, input_.kernel, input_.jitter);
  same_kernel_ = input_.working() == input_.kernel;
  const MatrixXd kw = same_kernel_ ? gram_.matrix : kernels::gram_matrix(points_, input_.working());
  const Eigen::SelfAdjointEigenSolver<MatrixXd> eig(kw);
  if (eig.info() != Eigen::Success) fail(ErrorKind::NumericalRank, "variance_term_EA", "eigendecomposition failed");
  eigvecs_ = eig.eigenvectors();
  eigvals_ = eig.eigenvalues().cwiseMax(0.0);
}

VarianceTerm VarianceTermSolver::evaluate(const Point2& target, Index t) const {
  return evaluate(target, std::vector<Index>{t}).front();
}

std::vector<VarianceTerm> VarianceTermSolver::evaluate(const Point2& target, const std::vector<Index>& epochs) const {
  for (Index t : epochs) {
    if (t < 1) fail(ErrorKind::ParameterDomain, "variance_term_EA", "epoch must be >= 1");
  }
  const std::vector<SpaceTimePoint> s0{{0.0, target}};
  const VectorXd k = kernels::cross_matrix(points_, s0, input_.kernel).col(0);

  bool coincides = false;
  for (const auto& s : input_.locations) {
    if (std::hypot(s.x - target.x, s.y - target.y) <= input_.coincide_eps) coincides = true;
  }
  double h = 0.0;
  if (!coincides) {
    const VectorXd w = gram_.chol.matrixL().solve(k);
    h = std::clamp(1.0 - w.squaredNorm(), 0.0, 1.0);
  }

  // With W_0 = K' every R_t, W_t, Q_t shares the eigenvectors of K'. On an
  // eigenvalue lambda, track rho = r / lambda and omega = w / lambda so that
  // vanishing eigenvalues stay exact:
  //   rho_t = alpha^2 omega_{t-1} + delta^2,  r_t = lambda rho_t,  omega_t = rho_t / (1 + r_t).
  // When K = K', v'u = v'k / lambda and r/(1+r) v'u = rho/(1+r) v'k.
  VectorXd coef;
  if (same_kernel_) {
    coef = eigvecs_.transpose() * k;
  } else {
    coef = eigvecs_.transpose() * gram_.solve(k).col(0);
  }
  const double a2 = input_.alpha * input_.alpha;
  const double d2 = input_.delta_z * input_.delta_z;
  const double s2 = input_.sigma * input_.sigma;
  const Index last = *std::max_element(epochs.begin(), epochs.end());
  const Index n = eigvals_.size();
  VectorXd omega = VectorXd::Ones(n);
  std::vector<double> g_at(static_cast<std::size_t>(last + 1), 0.0);
  for (Index t = 1; t <= last; ++t) {
    double g = 0.0;
    for (Index i = 0; i < n; ++i) {
      const double rho = a2 * omega(i) + d2;
      const double r = eigvals_(i) * rho;
      omega(i) = rho / (1.0 + r);
      const double f = same_kernel_ ? rho / (1.0 + r) : r / (1.0 + r);
      g += f * f * coef(i) * coef(i);
    }
    g_at[static_cast<std::size_t>(t)] = g;
  }
  std::vector<VarianceTerm> out;
  for (Index t : epochs) {
    const double g = g_at[static_cast<std::size_t>(t)];
    out.push_back({s2 * (d2 * h + g), h, g});
  }
  return out;
}

VarianceTerm variance_term_EA(const VarianceTermInput& input, const Point2& target, Index t) {
  return VarianceTermSolver(input).evaluate(target, t);
}

VarianceTerm variance_term_EA_reference(const VarianceTermInput& input, const Point2& target, Index t) {
  input.validate();
  if (t < 1) fail(ErrorKind::ParameterDomain, "variance_term_EA", "epoch must be >= 1");
  const auto pts = as_points(input.locations);
  const std::vector<SpaceTimePoint> s0{{0.0, target}};
  const MatrixXd K = kernels::gram_matrix(pts, input.kernel);
  const MatrixXd Kw = kernels::gram_matrix(pts, input.working());
  const VectorXd k = kernels::cross_matrix(pts, s0, input.kernel).col(0);
  const Eigen::LDLT<MatrixXd> kf(K);
  const VectorXd u = kf.solve(k);
  const double h = std::max(0.0, 1.0 - k.dot(u));
  const Index n = K.rows();
  const MatrixXd I = MatrixXd::Identity(n, n);
  MatrixXd W = Kw;
  MatrixXd R;
  MatrixXd Q;
  for (Index step = 1; step <= t; ++step) {
    R = input.alpha * input.alpha * W + input.delta_z * input.delta_z * Kw;
    Q = R + I;
    W = R - R * Q.ldlt().solve(R);
  }
  const VectorXd v = Q.ldlt().solve(R * u);
  const double g = v.squaredNorm();
  return {input.sigma * input.sigma * (input.delta_z * input.delta_z * h + g), h, g};
}

ConcentrationReport sigma_concentration_check(const ConcentrationConfig& c) {
  const char* op = "sigma_concentration_check";
  if (c.n_list.empty() || c.replicates < 1 || c.T < 1) fail(ErrorKind::Configuration, op, "need sizes, replicates and T >= 1");
  if (!(c.level > 0.0 && c.level < 1.0)) fail(ErrorKind::ParameterDomain, op, "level must lie in (0, 1)");
  ConcentrationReport report;
  const double lo = 0.5 * (1.0 - c.level);
  for (Index n : c.n_list) {
    if (n < 1) fail(ErrorKind::Configuration, op, "sizes must be positive");
    ConcentrationRow row;
    row.n = n;
    row.means.assign(static_cast<std::size_t>(c.replicates), 0.0);
    row.widths.assign(static_cast<std::size_t>(c.replicates), 0.0);
    for_each_index(c.replicates, c.parallel, [&](Index r) {
      simgen::DlmSimConfig sc;
      sc.n = n;
      sc.T = c.T;
      sc.p = 0;
      sc.sigma = c.sigma;
      sc.delta_z = c.delta_z;
      sc.phi = c.phi;
      sc.nu = c.nu;
      sc.init_sd = c.sigma;
      sc.correlated_initial = true;
      sc.seed = replicate_seed(c.seed, n, r);
      const simgen::DlmPanel panel = simgen::simulate_dlm(sc);
      dlm::SpatialDlm model;
      model.locations = panel.locations;
      model.kernel = kernels::Matern{c.fit_phi.value_or(c.phi), c.nu};
      model.delta_z = c.fit_delta_z.value_or(c.delta_z);
      const MatrixXd S0 = model.spatial_gram().matrix;
      const auto prior = dlm::initial_state(c.n_sigma, c.s_sigma, VectorXd::Zero(n), S0);
      const auto states = dlm::run_filter(model, prior, panel.y);
      const auto& last = states.back();
      const double a = 0.5 * last.n;
      const double b = 0.5 * last.n * last.s;
      const auto q = [&](double p) { return b / boost::math::gamma_q_inv(a, p); };
      row.means[static_cast<std::size_t>(r)] = a > 1.0 ? b / (a - 1.0) : std::numeric_limits<double>::infinity();
      row.widths[static_cast<std::size_t>(r)] = q(1.0 - lo) - q(lo);
    });
    row.median_mean = median(row.means);
    row.median_width = median(row.widths);
    report.rows.push_back(std::move(row));
  }
  if (report.rows.size() >= 2) {
    bool ok = true;
    for (std::size_t i = 1; i < report.rows.size(); ++i) ok = ok && report.rows[i].median_width < report.rows[i - 1].median_width;
    report.shrinking = ok;
  } else {
    report.notes.push_back("a single sample size gives no trend verdict");
  }
  return report;
}

StackingLimitReport stacking_limit_check(const StackingLimitConfig& c) {
  const char* op = "stacking_limit_check";
  if (c.n_list.size() < 2 || c.replicates < 1 || c.T < 2 || c.n_new < 1 || c.candidate_phi.empty()) {
    fail(ErrorKind::Configuration, op, "need two sizes, replicates, T >= 2, new locations and candidates");
  }
  StackingLimitReport report;
  report.target = c.sigma * c.sigma;
  for (Index n : c.n_list) {
    std::vector<double> sse(static_cast<std::size_t>(c.replicates), 0.0);
    for_each_index(c.replicates, c.parallel, [&](Index r) {
      simgen::DlmSimConfig sc;
      sc.n = n;
      sc.T = c.T;
      sc.p = 0;
      sc.sigma = c.sigma;
      sc.delta_z = c.delta_z;
      sc.phi = c.phi;
      sc.nu = c.nu;
      sc.init_sd = c.sigma;
      sc.correlated_initial = true;
      sc.n_new = c.n_new;
      sc.seed = replicate_seed(c.seed, n, r);
      const simgen::DlmPanel panel = simgen::simulate_dlm(sc);
      const auto G = static_cast<Index>(c.candidate_phi.size());
      MatrixXd forecasts(n, G);
      MatrixXd predictions(c.n_new, G);
      const MatrixXd no_covariates(c.n_new, 0);
      for (Index g = 0; g < G; ++g) {
        dlm::SpatialDlm model;
        model.locations = panel.locations;
        model.kernel = kernels::Matern{c.candidate_phi[static_cast<std::size_t>(g)], c.nu};
        model.delta_z = c.delta_z;
        const auto prior = dlm::initial_state(c.n_sigma, c.s_sigma, VectorXd::Zero(n), model.spatial_gram().matrix);
        const auto states = dlm::run_filter(model, prior, panel.y);
        const MatrixXd F = model.observation(MatrixXd(n, 0));
        forecasts.col(g) = dlm::forecast(states[states.size() - 2], F, model.evolution(), model.state_scale()).loc;
        predictions.col(g) = dlm::spatial_predict(states.back(), model, panel.new_locations, no_covariates).loc;
      }
      const VectorXd w = stacking::stack_means(forecasts, panel.y.back()).weights;
      sse[static_cast<std::size_t>(r)] = (predictions * w - panel.y_new.back()).squaredNorm();
    });
    double total = 0.0;
    for (double s : sse) total += s;
    report.n.push_back(n);
    report.mean_squared_error.push_back(total / static_cast<double>(c.replicates * c.n_new));
  }
  // Ordinary least squares of the error on 1/n.
  const auto m = static_cast<Index>(report.n.size());
  MatrixXd A(m, 2);
  VectorXd b(m);
  for (Index i = 0; i < m; ++i) {
    A(i, 0) = 1.0;
    A(i, 1) = 1.0 / static_cast<double>(report.n[static_cast<std::size_t>(i)]);
    b(i) = report.mean_squared_error[static_cast<std::size_t>(i)];
  }
  const VectorXd coef = A.colPivHouseholderQr().solve(b);
  report.intercept = coef(0);
  report.slope = coef(1);
  return report;
}

}  // namespace trajstack::diagnostics
