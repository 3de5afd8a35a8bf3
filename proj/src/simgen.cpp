#include "trajstack/simgen.hpp"

#include "trajstack/error.hpp"
#include "trajstack/kernels.hpp"
#include "trajstack/rng.hpp"
#include "trajstack/traj_discrete.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace trajstack::simgen {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "simgen", op, what);
}

VectorXd normals(CounterRng& rng, Index n, double sd = 1.0) {
  std::normal_distribution<double> g(0.0, sd);
  VectorXd v(n);
  for (Index i = 0; i < n; ++i) v(i) = g(rng);
  return v;
}

/// A zero-mean Gaussian draw with covariance scale^2 * K, K factored with the
/// usual jitter ladder.
VectorXd gp_draw(const kernels::Gram& k, double scale, CounterRng& rng, std::vector<std::string>& notes,
                 const char* what) {
  if (k.jitter > 0.0) notes.push_back(std::string(what) + ": jitter " + std::to_string(k.jitter));
  const VectorXd draw = k.chol.matrixL() * normals(rng, k.size());
  return scale * draw;
}

void check_positive(double v, const char* name, const char* op) {
  if (!std::isfinite(v) || !(v > 0.0)) fail(ErrorKind::ParameterDomain, op, std::string(name) + " must be positive");
}

}  // namespace

std::vector<bool> Simulated::train_mask() const {
  std::vector<bool> m(static_cast<std::size_t>(data.size()), false);
  for (Index r : train) m[static_cast<std::size_t>(r)] = true;
  return m;
}

std::vector<Point2> random_walk_trajectory(Index T, std::uint64_t seed) {
  if (T < 1) fail(ErrorKind::ParameterDomain, "random_walk_trajectory", "T must be >= 1");
  auto rng = CounterRng::stream(seed, "path");
  std::normal_distribution<double> g;
  std::vector<Point2> path;
  path.reserve(static_cast<std::size_t>(T));
  Point2 cur;
  for (Index t = 0; t < T; ++t) {
    cur.x += g(rng);
    cur.y += g(rng);
    path.push_back(cur);
  }
  return path;
}

std::vector<Point2> uniform_locations(Index n, std::uint64_t seed, const char* name) {
  auto rng = CounterRng::stream(seed, name);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point2> out(static_cast<std::size_t>(n));
  for (auto& s : out) {
    s.x = u(rng);
    s.y = u(rng);
  }
  return out;
}

Simulated simulate_continuous(const ContinuousSimConfig& c) {
  const char* op = "simulate_continuous";
  if (c.n_train < 1 || c.n_held_out < 0 || c.p < 0) fail(ErrorKind::ParameterDomain, op, "invalid sizes");
  if (c.n_train + c.n_held_out > c.path_length) {
    fail(ErrorKind::Configuration, op, "training plus held-out points exceed the path length");
  }
  for (double v : {c.delta_beta, c.delta_z, c.phi1, c.phi2, c.xi, c.x_sd}) check_positive(v, "scale", op);
  if (!(c.sigma >= 0.0)) fail(ErrorKind::ParameterDomain, op, "sigma must be >= 0");

  const Index L = c.path_length;
  if (!c.path.empty() && static_cast<Index>(c.path.size()) != L) {
    fail(ErrorKind::Configuration, op, "given path length differs from path_length");
  }
  const std::vector<Point2> path = c.path.empty() ? random_walk_trajectory(L, c.seed) : c.path;
  std::vector<SpaceTimePoint> pts(static_cast<std::size_t>(L));
  for (Index i = 0; i < L; ++i) pts[static_cast<std::size_t>(i)] = {static_cast<double>(i + 1), path[static_cast<std::size_t>(i)]};

  Simulated sim;
  auto zs = CounterRng::stream(c.seed, "latent");
  const VectorXd z = gp_draw(kernels::gram(pts, kernels::Gneiting{c.phi1, c.phi2}), c.delta_z * c.sigma, zs,
                             sim.notes, "latent process");
  MatrixXd beta(L, c.p);
  if (c.p > 0) {
    const kernels::Gram ct = kernels::gram(pts, kernels::SqExp{c.xi});
    for (Index j = 0; j < c.p; ++j) {
      auto bs = CounterRng::stream(c.seed, "coefficients", static_cast<std::uint64_t>(j));
      beta.col(j) = gp_draw(ct, c.delta_beta * c.sigma, bs, sim.notes, "coefficient process");
    }
  }
  auto xs = CounterRng::stream(c.seed, "covariates");
  MatrixXd x(L, c.p);
  for (Index i = 0; i < L; ++i) x.row(i) = normals(xs, c.p, c.x_sd).transpose();
  auto ns = CounterRng::stream(c.seed, "noise");
  const VectorXd eps = normals(ns, L);

  // One permutation of the path: the first block is held out, training takes
  // the next n_train, so larger n only appends.
  std::vector<Index> perm(static_cast<std::size_t>(L));
  std::iota(perm.begin(), perm.end(), Index{0});
  auto ps = CounterRng::stream(c.seed, "subsample");
  std::shuffle(perm.begin(), perm.end(), ps);
  std::vector<Index> held(perm.begin(), perm.begin() + c.n_held_out);
  std::vector<Index> train(perm.begin() + c.n_held_out, perm.begin() + c.n_held_out + c.n_train);
  std::vector<Index> rows(held);
  rows.insert(rows.end(), train.begin(), train.end());
  std::sort(rows.begin(), rows.end());
  std::sort(held.begin(), held.end());

  const auto n = static_cast<Index>(rows.size());
  TrajectoryDataset& d = sim.data;
  d.t.resize(n);
  d.y.resize(n);
  d.x.resize(n, c.p);
  sim.truth.beta.resize(n, c.p);
  sim.truth.z.resize(n);
  sim.truth.signal.resize(n);
  sim.truth.sigma = c.sigma;
  for (Index j = 0; j < c.p; ++j) d.covariate_names.push_back("x" + std::to_string(j + 1));
  for (Index k = 0; k < n; ++k) {
    const Index i = rows[static_cast<std::size_t>(k)];
    d.t(k) = pts[static_cast<std::size_t>(i)].t;
    d.s.push_back(pts[static_cast<std::size_t>(i)].s);
    d.x.row(k) = x.row(i);
    sim.truth.beta.row(k) = beta.row(i);
    sim.truth.z(k) = z(i);
    sim.truth.signal(k) = x.row(i).dot(beta.row(i)) + z(i);
    d.y(k) = sim.truth.signal(k) + c.sigma * eps(i);
    (std::binary_search(held.begin(), held.end(), i) ? sim.held_out : sim.train).push_back(k);
  }
  return sim;
}

Simulated simulate_discrete(const DiscreteSimConfig& c) {
  const char* op = "simulate_discrete";
  if (c.T < 1 || c.p < 0) fail(ErrorKind::ParameterDomain, op, "invalid sizes");
  for (double v : {c.phi, c.nu, c.x_sd}) check_positive(v, "parameter", op);
  if (!(c.sigma >= 0.0) || !(c.delta_beta >= 0.0) || !(c.delta_z >= 0.0) || !(c.init_sd >= 0.0)) {
    fail(ErrorKind::ParameterDomain, op, "scales must be >= 0");
  }
  Simulated sim;
  const std::vector<Point2> path = random_walk_trajectory(c.T, c.seed);
  const discrete::LocationIndex li = discrete::dedup_locations(path);
  std::vector<SpaceTimePoint> loc;
  for (const auto& s : li.distinct) loc.push_back({0.0, s});
  const kernels::Gram k = kernels::gram(loc, kernels::Matern{c.phi, c.nu});
  if (k.jitter > 0.0) sim.notes.push_back("spatial kernel: jitter " + std::to_string(k.jitter));

  auto states = CounterRng::stream(c.seed, "states");
  VectorXd beta = normals(states, c.p, c.init_sd);
  VectorXd z = normals(states, li.n(), c.init_sd);
  auto xs = CounterRng::stream(c.seed, "covariates");
  auto ns = CounterRng::stream(c.seed, "noise");

  TrajectoryDataset& d = sim.data;
  d.t.resize(c.T);
  d.y.resize(c.T);
  d.x.resize(c.T, c.p);
  d.s = path;
  for (Index j = 0; j < c.p; ++j) d.covariate_names.push_back("x" + std::to_string(j + 1));
  sim.truth.beta.resize(c.T, c.p);
  sim.truth.z.resize(c.T);
  sim.truth.signal.resize(c.T);
  sim.truth.sigma = c.sigma;
  for (Index t = 0; t < c.T; ++t) {
    beta += c.sigma * c.delta_beta * normals(states, c.p);
    const VectorXd innov = k.chol.matrixL() * normals(states, li.n());
    z += c.sigma * c.delta_z * innov;
    const VectorXd xt = normals(xs, c.p, c.x_sd);
    const double zt = z(li.of_epoch[static_cast<std::size_t>(t)]);
    d.t(t) = static_cast<double>(t + 1);
    d.x.row(t) = xt.transpose();
    sim.truth.beta.row(t) = beta.transpose();
    sim.truth.z(t) = zt;
    sim.truth.signal(t) = xt.dot(beta) + zt;
    d.y(t) = sim.truth.signal(t) + c.sigma * normals(ns, 1)(0);
    sim.train.push_back(t);
  }
  return sim;
}

DlmPanel simulate_dlm(const DlmSimConfig& c) {
  const char* op = "simulate_dlm";
  if (c.n < 1 || c.T < 1 || c.p < 0 || c.n_new < 0) fail(ErrorKind::ParameterDomain, op, "invalid sizes");
  if (c.n_new > 0 && c.p > 0) fail(ErrorKind::Configuration, op, "new locations need p = 0");
  for (double v : {c.phi, c.nu, c.x_sd}) check_positive(v, "parameter", op);
  DlmPanel out;
  out.locations = uniform_locations(c.n, c.seed);
  out.new_locations = uniform_locations(c.n_new, c.seed, "new_locations");
  std::vector<SpaceTimePoint> loc;
  for (const auto& s : out.locations) loc.push_back({0.0, s});
  for (const auto& s : out.new_locations) loc.push_back({0.0, s});
  const Index m = c.n + c.n_new;
  const kernels::Gram k = kernels::gram(loc, kernels::Matern{c.phi, c.nu});
  auto states = CounterRng::stream(c.seed, "states");
  auto xs = CounterRng::stream(c.seed, "covariates");
  auto ns = CounterRng::stream(c.seed, "noise");
  auto ns_new = CounterRng::stream(c.seed, "noise_new");
  VectorXd beta = normals(states, c.p, c.init_sd);
  VectorXd z = normals(states, m, c.init_sd);
  if (c.correlated_initial) z = (k.chol.matrixL() * z).eval();
  for (Index t = 0; t < c.T; ++t) {
    beta += c.sigma * c.delta_beta * normals(states, c.p);
    const VectorXd innov = k.chol.matrixL() * normals(states, m);
    z = (c.alpha * z + c.sigma * c.delta_z * innov).eval();
    MatrixXd x(c.n, c.p);
    for (Index i = 0; i < c.n; ++i) x.row(i) = normals(xs, c.p, c.x_sd).transpose();
    out.y.push_back(x * beta + z.head(c.n) + c.sigma * normals(ns, c.n));
    out.x.push_back(std::move(x));
    out.beta.push_back(beta);
    out.z.push_back(z.head(c.n));
    out.z_new.push_back(z.tail(c.n_new));
    out.y_new.push_back(z.tail(c.n_new) + c.sigma * normals(ns_new, c.n_new));
  }
  return out;
}

}  // namespace trajstack::simgen
