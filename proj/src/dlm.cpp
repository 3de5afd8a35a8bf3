#include "trajstack/dlm.hpp"

#include "trajstack/error.hpp"

#include <cmath>

namespace trajstack::dlm {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "dlm", op, what);
}

std::vector<SpaceTimePoint> as_points(const std::vector<Point2>& locations) {
  std::vector<SpaceTimePoint> pts;
  pts.reserve(locations.size());
  for (const auto& s : locations) pts.push_back({0.0, s});
  return pts;
}

MatrixXd symmetrized(const MatrixXd& a) { return 0.5 * (a + a.transpose()); }

struct Kriging {
  MatrixXd weights;   // K^{-1} K0, n × n0
  MatrixXd residual;  // delta_z^2 (K00 - K0' K^{-1} K0)
};

Kriging krige(const SpatialDlm& model, const std::vector<Point2>& new_locations) {
  const auto obs = as_points(model.locations);
  const auto pts = as_points(new_locations);
  const kernels::Gram k = model.spatial_gram();
  const MatrixXd k0 = kernels::cross_matrix(obs, pts, model.kernel);
  const MatrixXd k00 = kernels::gram_matrix(pts, model.kernel);
  Kriging out;
  out.weights = k.solve(k0);
  out.residual = model.delta_z * model.delta_z * symmetrized(k00 - k0.transpose() * out.weights);
  return out;
}

void check_state(const DlmState& state, const SpatialDlm& model, const char* op) {
  model.validate();
  if (state.dim() != model.dim()) {
    fail(ErrorKind::Configuration, op, "state dimension does not match p + n of the spatial model");
  }
}

}  // namespace

DlmState initial_state(double n_sigma, double s_sigma, VectorXd m0, MatrixXd S0) {
  if (!(n_sigma > 0.0) || !(s_sigma > 0.0) || !std::isfinite(n_sigma) || !std::isfinite(s_sigma)) {
    fail(ErrorKind::ParameterDomain, "initial_state", "n_sigma and s_sigma must be positive");
  }
  if (S0.rows() != m0.size() || S0.cols() != m0.size()) {
    fail(ErrorKind::InputValidation, "initial_state", "S0 must be square with the dimension of m0");
  }
  return {0, n_sigma, s_sigma, std::move(m0), symmetrized(S0)};
}

DlmState filter_step(const DlmState& state, const VectorXd& y, const MatrixXd& F, const MatrixXd& G,
                     const MatrixXd& S) {
  const Index d = state.dim();
  if (G.rows() != G.cols() || G.cols() != d || S.rows() != d || S.cols() != d || F.cols() != d ||
      F.rows() != y.size()) {
    fail(ErrorKind::InputValidation, "filter_step", "inconsistent dimensions of y, F, G, S and the state");
  }
  const MatrixXd R = symmetrized(G * state.W * G.transpose() + S);
  const MatrixXd FR = F * R;
  const MatrixXd Q = symmetrized(FR * F.transpose() + MatrixXd::Identity(y.size(), y.size()));
  const Eigen::LLT<MatrixXd> llt(Q);
  if (!kernels::cholesky_ok(llt, Q)) fail(ErrorKind::NumericalRank, "filter_step", "Q_t is not positive definite");
  const VectorXd a = G * state.m;
  const VectorXd e = y - F * a;
  const VectorXd qe = llt.solve(e);
  DlmState next;
  next.t = state.t + 1;
  next.m = a + FR.transpose() * qe;
  next.W = symmetrized(R - FR.transpose() * llt.solve(FR));
  next.n = state.n + static_cast<double>(y.size());
  next.s = (state.n * state.s + e.dot(qe)) / next.n;
  return next;
}

void prewhiten(VectorXd& y, MatrixXd& F, const VectorXd& v) {
  if (v.size() != y.size() || F.rows() != y.size()) {
    fail(ErrorKind::InputValidation, "prewhiten", "variance vector length mismatch");
  }
  if (!(v.array() > 0.0).all()) fail(ErrorKind::ParameterDomain, "prewhiten", "variances must be positive");
  const VectorXd w = v.cwiseSqrt().cwiseInverse();
  y = y.cwiseProduct(w);
  F = w.asDiagonal() * F;
}

bayes::StudentT forecast(const DlmState& state, const MatrixXd& F, const MatrixXd& G, const MatrixXd& S, int h) {
  if (h < 1) fail(ErrorKind::Configuration, "forecast", "horizon must be >= 1");
  const Index d = state.dim();
  if (G.rows() != d || G.cols() != d || S.rows() != d || S.cols() != d || F.cols() != d) {
    fail(ErrorKind::InputValidation, "forecast", "inconsistent dimensions of F, G, S and the state");
  }
  VectorXd m = state.m;
  MatrixXd W = state.W;
  for (int k = 1; k < h; ++k) {
    m = G * m;
    W = symmetrized(G * W * G.transpose() + S);
  }
  const MatrixXd R = G * W * G.transpose() + S;
  return {state.n, F * (G * m),
          state.s * symmetrized(MatrixXd::Identity(F.rows(), F.rows()) + F * R * F.transpose())};
}

void SpatialDlm::validate() const {
  if (!std::holds_alternative<kernels::Matern>(kernel.family())) {
    fail(ErrorKind::Configuration, "spatial_dlm", "the spatial DLM needs a location-only (matern) kernel");
  }
  if (locations.empty()) fail(ErrorKind::EmptyData, "spatial_dlm", "no locations");
  if (p < 0) fail(ErrorKind::Configuration, "spatial_dlm", "p must be >= 0");
  if (!(delta_beta > 0.0) || !(delta_z > 0.0) || !std::isfinite(alpha)) {
    fail(ErrorKind::ParameterDomain, "spatial_dlm", "delta_beta and delta_z must be positive, alpha finite");
  }
}

kernels::Gram SpatialDlm::spatial_gram() const { return kernels::gram(as_points(locations), kernel, jitter); }

MatrixXd SpatialDlm::evolution() const {
  MatrixXd g = MatrixXd::Identity(dim(), dim());
  g.bottomRightCorner(n(), n()) *= alpha;
  return g;
}

MatrixXd SpatialDlm::state_scale() const {
  MatrixXd s = MatrixXd::Zero(dim(), dim());
  s.topLeftCorner(p, p) = delta_beta * delta_beta * MatrixXd::Identity(p, p);
  const kernels::Gram k = spatial_gram();
  MatrixXd kk = k.matrix;
  kk.diagonal().array() += k.jitter;
  s.bottomRightCorner(n(), n()) = delta_z * delta_z * kk;
  return s;
}

MatrixXd SpatialDlm::observation(const MatrixXd& x) const {
  if (p > 0 && (x.rows() != n() || x.cols() != p)) {
    fail(ErrorKind::InputValidation, "spatial_dlm", "covariate matrix must be n × p");
  }
  MatrixXd f(n(), dim());
  if (p > 0) f.leftCols(p) = x;
  f.rightCols(n()) = MatrixXd::Identity(n(), n());
  return f;
}

std::vector<DlmState> run_filter(const SpatialDlm& model, const DlmState& prior, const std::vector<VectorXd>& ys,
                                 const std::vector<MatrixXd>& xs) {
  model.validate();
  if (prior.dim() != model.dim()) fail(ErrorKind::Configuration, "run_filter", "prior dimension is not p + n");
  if (model.p > 0 && xs.size() != ys.size()) {
    fail(ErrorKind::InputValidation, "run_filter", "one covariate matrix per epoch is required");
  }
  const MatrixXd G = model.evolution();
  const MatrixXd S = model.state_scale();
  const MatrixXd f0 = model.observation(MatrixXd::Zero(model.n(), model.p));
  std::vector<DlmState> states;
  states.reserve(ys.size());
  DlmState state = prior;
  for (std::size_t t = 0; t < ys.size(); ++t) {
    const MatrixXd F = model.p > 0 ? model.observation(xs[t]) : f0;
    state = filter_step(state, ys[t], F, G, S);
    states.push_back(state);
  }
  return states;
}

bayes::StudentT spatial_predict(const DlmState& state, const SpatialDlm& model,
                                const std::vector<Point2>& new_locations, const MatrixXd& x0) {
  check_state(state, model, "spatial_predict");
  const auto n0 = static_cast<Index>(new_locations.size());
  if (model.p > 0 && (x0.rows() != n0 || x0.cols() != model.p)) {
    fail(ErrorKind::InputValidation, "spatial_predict", "x0 must be n0 × p");
  }
  const Kriging k = krige(model, new_locations);
  const Index p = model.p;
  VectorXd loc = k.weights.transpose() * state.m.tail(model.n());
  MatrixXd scale = MatrixXd::Identity(n0, n0) + k.residual;
  if (p > 0) {
    loc += x0 * state.m.head(p);
    scale += x0 * state.W.topLeftCorner(p, p) * x0.transpose();
  }
  return {state.n, loc, state.s * symmetrized(scale)};
}

bayes::StudentT spatial_predict_latent(const DlmState& state, const SpatialDlm& model,
                                       const std::vector<Point2>& new_locations) {
  check_state(state, model, "spatial_predict");
  const Kriging k = krige(model, new_locations);
  return {state.n, k.weights.transpose() * state.m.tail(model.n()), state.s * k.residual};
}

}  // namespace trajstack::dlm
