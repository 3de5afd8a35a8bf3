#include "trajstack/stacking.hpp"

#include "trajstack/error.hpp"
#include "trajstack/rng.hpp"

#include <Eigen/Dense>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace trajstack::stacking {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "stacking", op, what);
}

/// min 1/2 a'Ha - c'a subject to A a = b and a >= 0, from a feasible start.
/// Primal active set over the bound constraints; each subproblem is solved
/// through a rank-revealing factorization so redundant equalities are harmless.
VectorXd active_set_qp(const MatrixXd& H, const VectorXd& c, const MatrixXd& A, VectorXd a, Index& iterations) {
  const Index G = a.size();
  const Index m = A.rows();
  std::vector<bool> bound(static_cast<std::size_t>(G));
  for (Index i = 0; i < G; ++i) bound[static_cast<std::size_t>(i)] = a(i) <= 0.0;
  const double gscale = 1.0 + H.cwiseAbs().maxCoeff() + c.cwiseAbs().maxCoeff();
  const Index limit = 100 * (G + 1);
  for (iterations = 0; iterations < limit; ++iterations) {
    std::vector<Index> free;
    for (Index i = 0; i < G; ++i)
      if (!bound[static_cast<std::size_t>(i)]) free.push_back(i);
    const auto nf = static_cast<Index>(free.size());
    const VectorXd g = H * a - c;

    MatrixXd kkt = MatrixXd::Zero(nf + m, nf + m);
    VectorXd rhs = VectorXd::Zero(nf + m);
    for (Index r = 0; r < nf; ++r) {
      for (Index s = 0; s < nf; ++s) kkt(r, s) = H(free[r], free[s]);
      for (Index q = 0; q < m; ++q) kkt(r, nf + q) = kkt(nf + q, r) = A(q, free[r]);
      rhs(r) = -g(free[r]);
    }
    const VectorXd sol = Eigen::CompleteOrthogonalDecomposition<MatrixXd>(kkt).solve(rhs);
    VectorXd d = VectorXd::Zero(G);
    for (Index r = 0; r < nf; ++r) d(free[r]) = sol(r);

    if (d.cwiseAbs().maxCoeff() <= 1e-15 * (1.0 + a.cwiseAbs().maxCoeff())) {
      const VectorXd mu = sol.tail(m);
      const VectorXd lambda = g + A.transpose() * mu;
      Index worst = -1;
      double most = -1e-12 * gscale;
      for (Index i = 0; i < G; ++i) {
        if (bound[static_cast<std::size_t>(i)] && lambda(i) < most) {
          most = lambda(i);
          worst = i;
        }
      }
      if (worst < 0) break;
      bound[static_cast<std::size_t>(worst)] = false;
      continue;
    }
    double step = 1.0;
    Index blocking = -1;
    for (Index i : free) {
      if (d(i) < 0.0) {
        const double s = -a(i) / d(i);
        if (s < step) {
          step = s;
          blocking = i;
        }
      }
    }
    a += step * d;
    if (blocking >= 0) {
      a(blocking) = 0.0;
      bound[static_cast<std::size_t>(blocking)] = true;
    }
    a = a.cwiseMax(0.0);
  }
  return a;
}

double log_sum_exp(const VectorXd& v) {
  const double mx = v.maxCoeff();
  if (!std::isfinite(mx)) return mx;
  return mx + std::log((v.array() - mx).exp().sum());
}

VectorXd normalized(VectorXd w) {
  const double s = w.sum();
  if (!(s > 0.0)) fail(ErrorKind::DivisionDomain, "normalize", "weights sum to zero");
  return w / s;
}

}  // namespace

std::vector<Fold> make_folds(const std::vector<Index>& pool, const FoldPlan& plan) {
  if (plan.k < 2) fail(ErrorKind::Configuration, "make_folds", "K must be at least 2");
  const auto n = static_cast<Index>(pool.size());
  if (n < plan.k) {
    fail(ErrorKind::Configuration, "make_folds",
         "K = " + std::to_string(plan.k) + " exceeds the " + std::to_string(n) + " usable rows");
  }
  std::vector<Fold> folds;
  if (plan.scheme == Scheme::RandomKFold) {
    std::vector<Index> order(pool);
    auto rng = CounterRng::stream(plan.seed, "folds");
    std::shuffle(order.begin(), order.end(), rng);
    folds.resize(static_cast<std::size_t>(plan.k));
    for (Index i = 0; i < n; ++i) folds[static_cast<std::size_t>(i % plan.k)].valid.push_back(order[i]);
    for (auto& f : folds) {
      std::sort(f.valid.begin(), f.valid.end());
      for (Index r : pool)
        if (!std::binary_search(f.valid.begin(), f.valid.end(), r)) f.train.push_back(r);
    }
    return folds;
  }
  // Contiguous blocks whose sizes differ by at most one.
  std::vector<Index> start(static_cast<std::size_t>(plan.k + 1));
  for (Index b = 0; b <= plan.k; ++b) start[static_cast<std::size_t>(b)] = b * n / plan.k;
  for (Index b = 1; b < plan.k; ++b) {
    Fold f;
    f.train.assign(pool.begin(), pool.begin() + start[static_cast<std::size_t>(b)]);
    f.valid.assign(pool.begin() + start[static_cast<std::size_t>(b)],
                   pool.begin() + start[static_cast<std::size_t>(b + 1)]);
    folds.push_back(std::move(f));
  }
  return folds;
}

std::vector<Fold> make_folds(const TrajectoryDataset& data, const FoldPlan& plan) {
  std::vector<Index> pool;
  for (Index i = 0; i < data.size(); ++i)
    if (data.observed(i)) pool.push_back(i);
  return make_folds(pool, plan);
}

double means_kkt_residual(const MatrixXd& P, const VectorXd& y, const VectorXd& a) {
  const VectorXd grad = 2.0 * (P.transpose() * (P * a - y));
  const double gmin = grad.minCoeff();
  double worst = std::abs(a.sum() - 1.0) + std::max(0.0, -a.minCoeff());
  for (Index i = 0; i < a.size(); ++i) {
    if (a(i) > 1e-10) worst = std::max(worst, grad(i) - gmin);
  }
  return worst / std::max(1.0, grad.cwiseAbs().maxCoeff());
}

StackingResult stack_means(const MatrixXd& P, const VectorXd& y) {
  const Index G = P.cols();
  if (G < 1) fail(ErrorKind::Configuration, "stack_means", "no candidates");
  if (P.rows() != y.size()) fail(ErrorKind::InputValidation, "stack_means", "P and y disagree in length");
  if (!P.allFinite() || !y.allFinite()) fail(ErrorKind::Data, "stack_means", "non-finite predictive mean");
  StackingResult out;
  if (G == 1) {
    out.weights = VectorXd::Ones(1);
  } else {
    const MatrixXd Q = P.transpose() * P;
    const VectorXd c = P.transpose() * y;
    // A vanishing ridge makes the first pass strictly convex.
    const double ridge = 1e-12 * std::max(Q.diagonal().mean(), 1e-300);
    MatrixXd Hr = Q;
    Hr.diagonal().array() += ridge;
    Index it1 = 0, it2 = 0;
    const VectorXd a1 = active_set_qp(Hr, c, MatrixXd::Ones(1, G), VectorXd::Constant(G, 1.0 / G), it1);

    // Every minimizer shares the fitted vector P a; among those take the
    // smallest |a|^2.
    Eigen::JacobiSVD<MatrixXd> svd(P, Eigen::ComputeThinV);
    const VectorXd sv = svd.singularValues();
    Index rank = 0;
    for (Index i = 0; i < sv.size(); ++i)
      if (sv(i) > 1e-10 * sv(0)) ++rank;
    MatrixXd A(rank + 1, G);
    A.row(0).setOnes();
    A.bottomRows(rank) = svd.matrixV().leftCols(rank).transpose();
    out.weights = active_set_qp(MatrixXd::Identity(G, G), VectorXd::Zero(G), A, a1, it2);
    // Keep the second pass only if it did not lose objective to rounding.
    const double f1 = (y - P * a1).squaredNorm(), f2 = (y - P * out.weights).squaredNorm();
    if (f2 > f1 + 1e-12 * (1.0 + f1)) out.weights = a1;
    out.weights = normalized(out.weights.cwiseMax(0.0));
    out.iterations = it1 + it2;
  }
  out.objective = (y - P * out.weights).squaredNorm();
  out.kkt_residual = means_kkt_residual(P, y, out.weights);
  return out;
}

double distributions_objective(const MatrixXd& L, const VectorXd& a) {
  double f = 0.0;
  for (Index i = 0; i < L.rows(); ++i) {
    VectorXd v(L.cols());
    for (Index g = 0; g < L.cols(); ++g) v(g) = a(g) > 0.0 ? std::log(a(g)) + L(i, g) : -kInf;
    f += log_sum_exp(v);
  }
  return f;
}

StackingResult stack_distributions(const MatrixXd& L) {
  const Index n = L.rows(), G = L.cols();
  if (G < 1) fail(ErrorKind::Configuration, "stack_distributions", "no candidates");
  if (n < 1) fail(ErrorKind::EmptyData, "stack_distributions", "no validation rows");
  MatrixXd W(n, G);
  for (Index i = 0; i < n; ++i) {
    const double mx = L.row(i).maxCoeff();
    if (L.row(i).hasNaN()) {
      fail(ErrorKind::Data, "stack_distributions", "NaN log density in row " + std::to_string(i));
    }
    if (!std::isfinite(mx)) {
      fail(ErrorKind::Data, "stack_distributions",
           "row " + std::to_string(i) + " has zero density under every candidate");
    }
    W.row(i) = (L.row(i).array() - mx).exp();
  }
  StackingResult out;
  VectorXd a = VectorXd::Constant(G, 1.0 / G);
  const double nd = static_cast<double>(n);
  double gap = 0.0;
  const Index limit = G == 1 ? 0 : 200000;
  Index it = 0;
  for (;; ++it) {
    const VectorXd s = W * a;
    const VectorXd grad = W.transpose() * s.cwiseInverse();
    // f* - f(a) <= max_g grad_g - a'grad, and a'grad = n.
    gap = grad.maxCoeff() - nd;
    if (gap <= 1e-11 * nd || it >= limit) break;
    a = a.cwiseProduct(grad) / nd;
    a /= a.sum();
  }
  out.weights = a;
  out.iterations = it;
  out.objective = distributions_objective(L, a);
  out.kkt_residual = std::max(gap, 0.0) / nd;
  return out;
}

VectorXd bma_weights(const VectorXd& log_evidence, const VectorXd& prior) {
  const Index G = log_evidence.size();
  if (G < 1) fail(ErrorKind::Configuration, "bma_weights", "no candidates");
  if (!log_evidence.allFinite()) fail(ErrorKind::Data, "bma_weights", "non-finite log evidence");
  VectorXd lp = log_evidence;
  if (prior.size() != 0) {
    if (prior.size() != G || (prior.array() < 0.0).any()) {
      fail(ErrorKind::Configuration, "bma_weights", "prior must be a simplex vector over the candidates");
    }
    for (Index g = 0; g < G; ++g) lp(g) += prior(g) > 0.0 ? std::log(prior(g)) : -kInf;
  }
  const double z = log_sum_exp(lp);
  return (lp.array() - z).exp();
}

Mixture::Mixture(VectorXd weights, std::vector<bayes::StudentT1> components)
    : weights_(std::move(weights)), components_(std::move(components)) {
  if (static_cast<std::size_t>(weights_.size()) != components_.size() || components_.empty()) {
    fail(ErrorKind::InputValidation, "stacked_mixture", "weights and components disagree in number");
  }
  if ((weights_.array() < 0.0).any() || std::abs(weights_.sum() - 1.0) > 1e-8) {
    fail(ErrorKind::Configuration, "stacked_mixture", "weights must lie on the simplex");
  }
}

double Mixture::log_pdf(double x) const {
  VectorXd v(weights_.size());
  for (Index g = 0; g < weights_.size(); ++g) {
    const auto& c = components_[static_cast<std::size_t>(g)];
    if (weights_(g) <= 0.0) {
      v(g) = -kInf;
    } else if (c.scale <= 0.0) {
      v(g) = x == c.loc ? kInf : -kInf;
    } else {
      v(g) = std::log(weights_(g)) + c.log_pdf(x);
    }
  }
  return log_sum_exp(v);
}

double Mixture::cdf(double x) const {
  double p = 0.0;
  for (Index g = 0; g < weights_.size(); ++g) {
    if (weights_(g) <= 0.0) continue;
    const auto& c = components_[static_cast<std::size_t>(g)];
    p += weights_(g) * (c.scale <= 0.0 ? (x >= c.loc ? 1.0 : 0.0) : c.cdf(x));
  }
  return std::clamp(p, 0.0, 1.0);
}

double Mixture::mean() const {
  double m = 0.0;
  for (Index g = 0; g < weights_.size(); ++g) {
    if (weights_(g) <= 0.0) continue;
    const auto& c = components_[static_cast<std::size_t>(g)];
    if (!(c.dof > 1.0) && c.scale > 0.0) {
      fail(ErrorKind::ParameterDomain, "mixture_mean", "a component has dof <= 1 and no mean");
    }
    m += weights_(g) * c.loc;
  }
  return m;
}

double Mixture::variance() const {
  const double m = mean();
  double second = 0.0;
  for (Index g = 0; g < weights_.size(); ++g) {
    if (weights_(g) <= 0.0) continue;
    const auto& c = components_[static_cast<std::size_t>(g)];
    const double v = c.scale <= 0.0 ? 0.0 : c.variance();
    second += weights_(g) * (v + c.loc * c.loc);
  }
  return std::max(0.0, second - m * m);
}

double Mixture::quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::ParameterDomain, "mixture_quantile", "p must lie in (0, 1)");
  // The mixture quantile lies between the extreme component quantiles.
  double lo = kInf, hi = -kInf;
  for (Index g = 0; g < weights_.size(); ++g) {
    if (weights_(g) <= 0.0) continue;
    const auto& c = components_[static_cast<std::size_t>(g)];
    const double q = c.scale <= 0.0 ? c.loc : c.quantile(p);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * (1.0 + std::abs(lo) + std::abs(hi)); ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

Mixture stacked_mixture(const VectorXd& weights, const std::vector<bayes::StudentT1>& components) {
  return Mixture(weights, components);
}

std::string to_string(Mode m) { return m == Mode::Means ? "means" : "distributions"; }

namespace {

std::vector<Mixture> mixtures(const StackingRun& run, const std::vector<Index>& rows,
                              bayes::StudentT1 model::RowLaw::*field) {
  std::vector<std::vector<bayes::StudentT1>> comps(rows.size());
  std::vector<double> ws;
  for (std::size_t g = 0; g < run.fits.size(); ++g) {
    if (!run.fits[g] || run.weights(static_cast<Index>(g)) <= 0.0) continue;
    ws.push_back(run.weights(static_cast<Index>(g)));
    const auto laws = run.fits[g]->predict(rows);
    for (std::size_t r = 0; r < rows.size(); ++r) comps[r].push_back(laws[r].*field);
  }
  const VectorXd w = normalized(Eigen::Map<VectorXd>(ws.data(), static_cast<Index>(ws.size())));
  std::vector<Mixture> out;
  out.reserve(rows.size());
  for (auto& c : comps) out.emplace_back(w, std::move(c));
  return out;
}

}  // namespace

std::vector<Mixture> StackingRun::predict_y(const std::vector<Index>& rows) const {
  return mixtures(*this, rows, &model::RowLaw::y);
}

std::vector<Mixture> StackingRun::predict_z(const std::vector<Index>& rows) const {
  return mixtures(*this, rows, &model::RowLaw::z);
}

std::vector<VectorXd> StackingRun::predict_beta(const std::vector<Index>& rows) const {
  std::vector<VectorXd> out(rows.size());
  double total = 0.0;
  for (std::size_t g = 0; g < fits.size(); ++g) {
    const double w = weights(static_cast<Index>(g));
    if (!fits[g] || w <= 0.0) continue;
    total += w;
    const auto laws = fits[g]->predict(rows);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (out[r].size() == 0) out[r] = VectorXd::Zero(laws[r].beta.size());
      out[r] += w * laws[r].beta;
    }
  }
  for (auto& b : out) b /= total;
  return out;
}

double StackingRun::sigma2_mean() const {
  double m = 0.0, total = 0.0;
  for (std::size_t g = 0; g < fits.size(); ++g) {
    const double w = weights(static_cast<Index>(g));
    if (!fits[g] || w <= 0.0) continue;
    m += w * fits[g]->posterior().sigma2_mean();
    total += w;
  }
  return m / total;
}

double StackingRun::sigma2_quantile(double p) const {
  if (!(p > 0.0 && p < 1.0)) fail(ErrorKind::ParameterDomain, "sigma2_quantile", "p must lie in (0, 1)");
  std::vector<std::pair<double, const bayes::NigPosterior*>> parts;
  double total = 0.0;
  for (std::size_t g = 0; g < fits.size(); ++g) {
    const double w = weights(static_cast<Index>(g));
    if (!fits[g] || w <= 0.0) continue;
    parts.emplace_back(w, &fits[g]->posterior());
    total += w;
  }
  // Inverse gamma: P(sigma^2 <= x) = Q(a*, b*/x).
  auto cdf = [&](double x) {
    double s = 0.0;
    for (const auto& [w, post] : parts) s += w * boost::math::gamma_q(post->a_star, post->b_star / x);
    return s / total;
  };
  double lo = kInf, hi = 0.0;
  for (const auto& [w, post] : parts) {
    const double q = post->b_star / boost::math::gamma_q_inv(post->a_star, p);
    lo = std::min(lo, q);
    hi = std::max(hi, q);
  }
  for (int it = 0; it < 200 && hi - lo > 1e-13 * hi; ++it) {
    const double mid = 0.5 * (lo + hi);
    (cdf(mid) < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

VectorXd StackingRun::bma() const {
  std::vector<Index> alive;
  for (std::size_t g = 0; g < fits.size(); ++g)
    if (fits[g]) alive.push_back(static_cast<Index>(g));
  VectorXd ev(static_cast<Index>(alive.size()));
  for (std::size_t k = 0; k < alive.size(); ++k)
    ev(static_cast<Index>(k)) = fits[static_cast<std::size_t>(alive[k])]->log_evidence();
  const VectorXd w = bma_weights(ev);
  VectorXd out = VectorXd::Zero(static_cast<Index>(fits.size()));
  for (std::size_t k = 0; k < alive.size(); ++k) out(alive[k]) = w(static_cast<Index>(k));
  return out;
}

StackingRun StackingRun::reweighted(const VectorXd& w) const {
  if (w.size() != weights.size()) fail(ErrorKind::InputValidation, "reweighted", "weight length mismatch");
  StackingRun r = *this;
  r.weights = w;
  return r;
}

StackingRun run_stacking(const TrajectoryDataset& data, const std::vector<model::Candidate>& grid,
                         const FoldPlan& plan, const StackingOptions& options) {
  data.validate();
  const auto G = static_cast<Index>(grid.size());
  if (G < 1) fail(ErrorKind::Configuration, "run_stacking", "empty candidate grid");
  std::vector<Index> pool = options.pool;
  if (pool.empty()) {
    for (Index i = 0; i < data.size(); ++i)
      if (data.observed(i)) pool.push_back(i);
  }
  for (Index r : pool) {
    if (r < 0 || r >= data.size() || !data.observed(r)) {
      fail(ErrorKind::InputValidation, "run_stacking", "pool row " + std::to_string(r) + " has no response");
    }
  }
  const std::vector<Fold> folds = make_folds(pool, plan);
  const auto F = static_cast<Index>(folds.size());

  StackingRun run;
  run.candidates = grid;
  std::vector<Index> offset(static_cast<std::size_t>(F + 1), 0);
  for (Index f = 0; f < F; ++f) {
    offset[static_cast<std::size_t>(f + 1)] =
        offset[static_cast<std::size_t>(f)] + static_cast<Index>(folds[static_cast<std::size_t>(f)].valid.size());
    for (Index r : folds[static_cast<std::size_t>(f)].valid) run.record.valid_rows.push_back(r);
  }
  const Index nv = offset.back();
  run.record.y.resize(nv);
  for (Index k = 0; k < nv; ++k) run.record.y(k) = data.y(run.record.valid_rows[static_cast<std::size_t>(k)]);
  run.record.means.setZero(nv, G);
  run.record.log_densities.setZero(nv, G);

  std::vector<std::string> failure(static_cast<std::size_t>(G * F));
  const Index jobs = G * F;
#pragma omp parallel for schedule(dynamic) if (options.parallel)
  for (Index job = 0; job < jobs; ++job) {
    const Index g = job / F, f = job % F;
    const Fold& fold = folds[static_cast<std::size_t>(f)];
    try {
      std::vector<bool> mask(static_cast<std::size_t>(data.size()), false);
      for (Index r : fold.train) mask[static_cast<std::size_t>(r)] = true;
      const auto fitted = model::fit(grid[static_cast<std::size_t>(g)], data, mask, options.priors);
      const auto laws = fitted->predict(fold.valid);
      for (std::size_t k = 0; k < laws.size(); ++k) {
        const Index row = offset[static_cast<std::size_t>(f)] + static_cast<Index>(k);
        run.record.means(row, g) = laws[k].y.loc;
        run.record.log_densities(row, g) = laws[k].y.log_pdf(data.y(fold.valid[k]));
      }
    } catch (const std::exception& e) {
      failure[static_cast<std::size_t>(job)] = e.what();
    }
  }

  std::vector<Index> alive;
  for (Index g = 0; g < G; ++g) {
    std::string why;
    for (Index f = 0; f < F && why.empty(); ++f) why = failure[static_cast<std::size_t>(g * F + f)];
    if (why.empty()) {
      alive.push_back(g);
    } else {
      run.dropped.push_back(g);
      run.warnings.push_back("dropped " + grid[static_cast<std::size_t>(g)].describe() + ": " + why);
    }
  }

  run.fits.assign(static_cast<std::size_t>(G), nullptr);
  std::vector<std::string> final_failure(static_cast<std::size_t>(G));
  std::vector<bool> pool_mask(static_cast<std::size_t>(data.size()), false);
  for (Index r : pool) pool_mask[static_cast<std::size_t>(r)] = true;
  const auto na = static_cast<Index>(alive.size());
#pragma omp parallel for schedule(dynamic) if (options.parallel)
  for (Index k = 0; k < na; ++k) {
    const Index g = alive[static_cast<std::size_t>(k)];
    try {
      run.fits[static_cast<std::size_t>(g)] = model::fit(grid[static_cast<std::size_t>(g)], data, pool_mask, options.priors);
    } catch (const std::exception& e) {
      final_failure[static_cast<std::size_t>(g)] = e.what();
    }
  }
  std::vector<Index> usable;
  for (Index g : alive) {
    if (run.fits[static_cast<std::size_t>(g)]) {
      usable.push_back(g);
    } else {
      run.dropped.push_back(g);
      run.warnings.push_back("dropped " + grid[static_cast<std::size_t>(g)].describe() +
                             " on the final fit: " + final_failure[static_cast<std::size_t>(g)]);
    }
  }
  std::sort(run.dropped.begin(), run.dropped.end());
  if (usable.empty()) fail(ErrorKind::NumericalRank, "run_stacking", "every candidate failed");

  const auto nu = static_cast<Index>(usable.size());
  MatrixXd P(nv, nu), L(nv, nu);
  for (Index k = 0; k < nu; ++k) {
    P.col(k) = run.record.means.col(usable[static_cast<std::size_t>(k)]);
    L.col(k) = run.record.log_densities.col(usable[static_cast<std::size_t>(k)]);
  }
  const StackingResult res = options.mode == Mode::Means ? stack_means(P, run.record.y) : stack_distributions(L);
  run.weights = VectorXd::Zero(G);
  for (Index k = 0; k < nu; ++k) run.weights(usable[static_cast<std::size_t>(k)]) = res.weights(k);
  run.objective = res.objective;
  run.kkt_residual = res.kkt_residual;
  return run;
}

}  // namespace trajstack::stacking
