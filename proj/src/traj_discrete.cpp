#include "trajstack/traj_discrete.hpp"

#include "trajstack/error.hpp"

#include <cmath>
#include <numeric>

namespace trajstack::discrete {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "traj_discrete", op, what);
}

Index find_root(std::vector<Index>& parent, Index i) {
  while (parent[static_cast<std::size_t>(i)] != i) {
    auto& pi = parent[static_cast<std::size_t>(i)];
    pi = parent[static_cast<std::size_t>(pi)];
    i = pi;
  }
  return i;
}

std::vector<SpaceTimePoint> as_points(const std::vector<Point2>& locations) {
  std::vector<SpaceTimePoint> pts;
  pts.reserve(locations.size());
  for (const auto& s : locations) pts.push_back({0.0, s});
  return pts;
}

bayes::StudentT1 degenerate(double dof) { return {dof, 0.0, 0.0}; }

}  // namespace

bayes::SparseRowMatrix LocationIndex::selector() const {
  bayes::SparseRowMatrix b(epochs(), n() * epochs());
  std::vector<Eigen::Triplet<double>> trips;
  for (Index t = 0; t < epochs(); ++t) trips.emplace_back(t, n() * t + of_epoch[static_cast<std::size_t>(t)], 1.0);
  b.setFromTriplets(trips.begin(), trips.end());
  return b;
}

LocationIndex dedup_locations(const std::vector<Point2>& gamma, double eps) {
  if (gamma.empty()) fail(ErrorKind::EmptyData, "dedup_locations", "no locations");
  if (!(eps >= 0.0)) fail(ErrorKind::ParameterDomain, "dedup_locations", "eps must be >= 0");
  const auto T = static_cast<Index>(gamma.size());
  std::vector<Index> parent(static_cast<std::size_t>(T));
  std::iota(parent.begin(), parent.end(), Index{0});
  // Sort by x so only neighbours within eps along x need comparing.
  std::vector<Index> by_x(parent);
  std::sort(by_x.begin(), by_x.end(), [&](Index a, Index b) {
    return gamma[static_cast<std::size_t>(a)].x < gamma[static_cast<std::size_t>(b)].x;
  });
  for (std::size_t a = 0; a < by_x.size(); ++a) {
    const Point2& pa = gamma[static_cast<std::size_t>(by_x[a])];
    for (std::size_t b = a + 1; b < by_x.size(); ++b) {
      const Point2& pb = gamma[static_cast<std::size_t>(by_x[b])];
      if (pb.x - pa.x > eps) break;
      if (std::abs(pb.y - pa.y) <= eps) {
        const Index ra = find_root(parent, by_x[a]), rb = find_root(parent, by_x[b]);
        // The smaller index stays root, so roots are first occurrences.
        if (ra != rb) parent[static_cast<std::size_t>(std::max(ra, rb))] = std::min(ra, rb);
      }
    }
  }
  LocationIndex out;
  out.of_epoch.resize(static_cast<std::size_t>(T));
  std::vector<Index> slot(static_cast<std::size_t>(T), -1);
  for (Index t = 0; t < T; ++t) {
    const Index r = find_root(parent, t);
    if (slot[static_cast<std::size_t>(r)] < 0) {
      slot[static_cast<std::size_t>(r)] = out.n();
      out.distinct.push_back(gamma[static_cast<std::size_t>(r)]);
    }
    out.of_epoch[static_cast<std::size_t>(t)] = slot[static_cast<std::size_t>(r)];
  }
  return out;
}

void DiscreteTrajSpec::validate(Index p) const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (!positive(delta_beta) || !positive(delta_z)) {
    fail(ErrorKind::ParameterDomain, "discrete_spec", "delta_beta and delta_z must be positive");
  }
  if (!positive(a_sigma) || !positive(b_sigma)) {
    fail(ErrorKind::ParameterDomain, "discrete_spec", "a_sigma and b_sigma must be positive");
  }
  if (spatial && !std::holds_alternative<kernels::Matern>(kernel.family())) {
    fail(ErrorKind::Configuration, "discrete_spec", "the discrete model needs a spatial (matern) kernel");
  }
  if (w_p.size() != 0 && (w_p.rows() != p || w_p.cols() != p)) {
    fail(ErrorKind::Configuration, "discrete_spec", "W_p must be p × p");
  }
}

MatrixXd DiscreteTrajSpec::coefficient_correlation(Index p) const {
  return w_p.size() == 0 ? MatrixXd::Identity(p, p) : w_p;
}

Eigen::VectorXi DiscreteLayout::epoch_order() const {
  Eigen::VectorXi order(dim());
  Index pos = 0;
  for (Index t = 0; t < T; ++t) {
    for (Index k = 0; k < p; ++k) order(pos++) = static_cast<int>(beta_col(t, k));
    for (Index j = 0; j < n; ++j) order(pos++) = static_cast<int>(z_col(t, j));
  }
  return order;
}

DiscreteSystem build_system_discrete(const TrajectoryDataset& data, const DiscreteTrajSpec& spec,
                                     const std::vector<bool>& observed) {
  data.validate();
  const Index T = data.size();
  if (T == 0) fail(ErrorKind::EmptyData, "build_system_discrete", "no epochs");
  const Index p = data.covariates();
  spec.validate(p);
  if (!observed.empty() && static_cast<Index>(observed.size()) != T) {
    fail(ErrorKind::InputValidation, "build_system_discrete", "observed mask length differs from the epochs");
  }
  if (p == 0 && !spec.spatial) {
    fail(ErrorKind::Configuration, "build_system_discrete", "no covariates and no spatial process: nothing to fit");
  }

  DiscreteSystem out;
  if (spec.spatial) {
    out.locations = dedup_locations(data.s, spec.dedup_eps);
    out.spatial = kernels::gram(as_points(out.locations.distinct), spec.kernel, spec.jitter);
  } else {
    out.locations.of_epoch.assign(static_cast<std::size_t>(T), 0);
  }
  DiscreteLayout& lay = out.layout;
  lay.T = T;
  lay.p = p;
  lay.n = spec.spatial ? out.locations.n() : 0;

  for (Index t = 0; t < T; ++t) {
    const bool use = (observed.empty() || observed[static_cast<std::size_t>(t)]) && data.observed(t);
    if (!use) continue;
    if (!data.x.row(t).allFinite()) {
      fail(ErrorKind::InputValidation, "build_system_discrete",
           "non-finite covariate at observed epoch " + std::to_string(t + 1));
    }
    out.observed_epochs.push_back(t);
  }
  const auto n_obs = static_cast<Index>(out.observed_epochs.size());
  const Index rows = n_obs + lay.dim();

  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(static_cast<std::size_t>(n_obs * (p + 1) + lay.dim()));
  bayes::AugmentedSystem& sys = out.system;
  sys.Y = VectorXd::Zero(rows);
  for (Index r = 0; r < n_obs; ++r) {
    const Index t = out.observed_epochs[static_cast<std::size_t>(r)];
    sys.Y(r) = data.y(t);
    for (Index k = 0; k < p; ++k) trips.emplace_back(r, lay.beta_col(t, k), data.x(t, k));
    if (spec.spatial) trips.emplace_back(r, lay.z_col(t, out.locations.of_epoch[static_cast<std::size_t>(t)]), 1.0);
  }
  for (Index c = 0; c < lay.dim(); ++c) trips.emplace_back(n_obs + c, c, 1.0);
  sys.X.resize(rows, lay.dim());
  sys.X.setFromTriplets(trips.begin(), trips.end());
  sys.n_obs = n_obs;

  if (n_obs > 0) sys.blocks.push_back(std::make_shared<bayes::IdentityBlock>(n_obs, 1.0, "measurement"));
  if (p > 0) {
    kernels::JitterPolicy strict = spec.jitter;
    const kernels::Gram wp = kernels::factor(spec.coefficient_correlation(p), strict);
    sys.blocks.push_back(
        std::make_shared<bayes::RandomWalkBlock>(T, wp, spec.delta_beta * spec.delta_beta, "beta_random_walk"));
  }
  if (spec.spatial) {
    sys.blocks.push_back(
        std::make_shared<bayes::RandomWalkBlock>(T, out.spatial, spec.delta_z * spec.delta_z, "z_random_walk"));
  }
  sys.column_order = lay.epoch_order();
  return out;
}

VectorXd DiscreteFit::beta(Index t) const { return posterior.m.segment(layout.beta_col(t, 0), layout.p); }

VectorXd DiscreteFit::z(Index t) const {
  if (layout.n == 0) return VectorXd();
  return posterior.m.segment(layout.z_col(t, 0), layout.n);
}

DiscreteFit fit_discrete(const TrajectoryDataset& data, const DiscreteTrajSpec& spec,
                         const std::vector<bool>& observed) {
  DiscreteSystem built = build_system_discrete(data, spec, observed);
  DiscreteFit fit;
  fit.posterior = bayes::nig_posterior(built.system, spec.a_sigma, spec.b_sigma, spec.nig);
  fit.spec = spec;
  fit.layout = built.layout;
  fit.locations = std::move(built.locations);
  fit.spatial = std::move(built.spatial);
  fit.observed_epochs = std::move(built.observed_epochs);
  return fit;
}

EpochPrediction predict_next_discrete(const DiscreteFit& fit, const VectorXd& x_next, const Point2& gamma_next,
                                      Index h) {
  const DiscreteLayout& lay = fit.layout;
  if (h < 1) fail(ErrorKind::Configuration, "predict_next_discrete", "horizon must be >= 1");
  if (x_next.size() != lay.p) fail(ErrorKind::InputValidation, "predict_next_discrete", "x has the wrong length");
  const bayes::NigPosterior& post = fit.posterior;
  const double c = post.b_star / post.a_star;
  const double dof = 2.0 * post.a_star;
  const double hd = static_cast<double>(h);
  const double db2 = fit.spec.delta_beta * fit.spec.delta_beta;
  const double dz2 = fit.spec.delta_z * fit.spec.delta_z;

  EpochPrediction out;
  const MatrixXd wp = fit.spec.coefficient_correlation(lay.p);
  const VectorXd beta_t = fit.beta(lay.T - 1);
  out.beta = {dof, beta_t, c * hd * db2 * wp};
  double loc = x_next.dot(beta_t);
  double var = 1.0 + hd * db2 * x_next.dot(wp * x_next);
  out.z = degenerate(dof);
  if (lay.n > 0) {
    const std::vector<SpaceTimePoint> target{{0.0, gamma_next}};
    const MatrixXd k = kernels::cross_matrix(as_points(fit.locations.distinct), target, fit.spec.kernel);
    const VectorXd w = fit.spatial.solve(k).col(0);
    const double resid = std::max(0.0, 1.0 - k.col(0).dot(w));
    const double z_loc = w.dot(fit.z(lay.T - 1));
    const double z_var = dz2 * (resid + hd - 1.0);
    out.z = {dof, z_loc, c * z_var};
    loc += z_loc;
    var += z_var;
  }
  out.y = {dof, loc, c * var};
  return out;
}

EpochPrediction predict_epoch(const DiscreteFit& fit, const VectorXd& x, Index t) {
  const DiscreteLayout& lay = fit.layout;
  if (t < 0 || t >= lay.T) fail(ErrorKind::InputValidation, "predict_epoch", "epoch outside the fitted range");
  if (x.size() != lay.p) fail(ErrorKind::InputValidation, "predict_epoch", "x has the wrong length");
  const bayes::NigPosterior& post = fit.posterior;
  const double c = post.b_star / post.a_star;
  const double dof = 2.0 * post.a_star;

  // Columns of Sigma needed: beta_t and, with the spatial process, z_t(j(t)).
  const Index nc = lay.p + (lay.n > 0 ? 1 : 0);
  MatrixXd e = MatrixXd::Zero(lay.dim(), nc);
  for (Index k = 0; k < lay.p; ++k) e(lay.beta_col(t, k), k) = 1.0;
  Index zc = -1;
  if (lay.n > 0) {
    zc = lay.z_col(t, fit.locations.of_epoch[static_cast<std::size_t>(t)]);
    e(zc, lay.p) = 1.0;
  }
  const MatrixXd cols = post.scale_times(e);
  MatrixXd local(nc, nc);  // Sigma restricted to (beta_t, z_t(j))
  for (Index a = 0; a < nc; ++a) {
    for (Index b = 0; b < nc; ++b) {
      local(a, b) = cols(b < lay.p ? lay.beta_col(t, b) : zc, a);
    }
  }
  local = 0.5 * (local + local.transpose()).eval();
  VectorXd u(nc);
  u.head(lay.p) = x;
  if (zc >= 0) u(lay.p) = 1.0;

  EpochPrediction out;
  const VectorXd beta_t = fit.beta(t);
  out.beta = {dof, beta_t, c * local.topLeftCorner(lay.p, lay.p)};
  double loc = x.dot(beta_t);
  out.z = degenerate(dof);
  if (zc >= 0) {
    out.z = {dof, post.m(zc), c * local(lay.p, lay.p)};
    loc += post.m(zc);
  }
  out.y = {dof, loc, c * (1.0 + u.dot(local * u))};
  return out;
}

}  // namespace trajstack::discrete
