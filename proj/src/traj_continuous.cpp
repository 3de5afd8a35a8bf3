#include "trajstack/traj_continuous.hpp"

#include "trajstack/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <tuple>

namespace trajstack::continuous {
namespace {

[[noreturn]] void fail(ErrorKind kind, const char* op, const std::string& what) {
  throw Error(kind, "traj_continuous", op, what);
}

struct Training {
  std::vector<Index> rows;
  std::vector<SpaceTimePoint> points;
  MatrixXd x;
  VectorXd y;
};

Training gather(const TrajectoryDataset& data, const std::vector<bool>& observed) {
  Training tr;
  tr.rows = training_rows(data, observed);
  const auto n = static_cast<Index>(tr.rows.size());
  tr.x.resize(n, data.covariates());
  tr.y.resize(n);
  for (Index k = 0; k < n; ++k) {
    const Index i = tr.rows[static_cast<std::size_t>(k)];
    tr.points.push_back(data.point(i));
    tr.x.row(k) = data.x.row(i);
    tr.y(k) = data.y(i);
  }
  return tr;
}

MatrixXd data_covariance(const MatrixXd& time, const MatrixXd& space, double time_scale, double space_scale,
                         const MatrixXd& x) {
  MatrixXd m = space_scale * space;
  m.diagonal().array() += 1.0;
  for (Index j = 0; j < x.cols(); ++j) {
    m.noalias() += time_scale * (x.col(j).asDiagonal() * time * x.col(j).asDiagonal());
  }
  return m;
}

}  // namespace

void ContinuousTrajSpec::validate() const {
  for (double v : {delta_beta, delta_z, phi1, phi2, xi, a_sigma, b_sigma}) {
    if (!std::isfinite(v) || !(v > 0.0)) {
      fail(ErrorKind::ParameterDomain, "continuous_spec",
           "delta_beta, delta_z, phi1, phi2, xi, a_sigma and b_sigma must all be positive");
    }
  }
}

std::vector<Index> training_rows(const TrajectoryDataset& data, const std::vector<bool>& observed) {
  data.validate();
  if (!observed.empty() && static_cast<Index>(observed.size()) != data.size()) {
    fail(ErrorKind::InputValidation, "training_rows", "observed mask length differs from the data");
  }
  std::vector<Index> rows;
  std::set<std::tuple<double, double, double>> seen;
  for (Index i = 0; i < data.size(); ++i) {
    if (!data.observed(i) || (!observed.empty() && !observed[static_cast<std::size_t>(i)])) continue;
    if (!data.x.row(i).allFinite() || !std::isfinite(data.t(i))) {
      fail(ErrorKind::InputValidation, "training_rows", "non-finite time or covariate at row " + std::to_string(i));
    }
    const Point2& s = data.s[static_cast<std::size_t>(i)];
    if (!seen.emplace(data.t(i), s.x, s.y).second) {
      fail(ErrorKind::InputValidation, "training_rows",
           "row " + std::to_string(i) + " repeats an earlier space-time point exactly");
    }
    rows.push_back(i);
  }
  if (rows.empty()) fail(ErrorKind::EmptyData, "training_rows", "no observed rows to fit");
  return rows;
}

bayes::AugmentedSystem build_system_continuous(const TrajectoryDataset& data, const ContinuousTrajSpec& spec,
                                               const std::vector<bool>& observed) {
  spec.validate();
  const Training tr = gather(data, observed);
  const ContinuousLayout lay{static_cast<Index>(tr.rows.size()), data.covariates()};
  const Index n = lay.n;

  bayes::AugmentedSystem sys;
  sys.n_obs = n;
  sys.Y = VectorXd::Zero(n + lay.dim());
  sys.Y.head(n) = tr.y;
  std::vector<Eigen::Triplet<double>> trips;
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < lay.p; ++j) trips.emplace_back(i, lay.beta_col(j, i), tr.x(i, j));
    trips.emplace_back(i, lay.z_col(i), 1.0);
  }
  for (Index c = 0; c < lay.dim(); ++c) trips.emplace_back(n + c, c, 1.0);
  sys.X.resize(n + lay.dim(), lay.dim());
  sys.X.setFromTriplets(trips.begin(), trips.end());

  sys.blocks.push_back(std::make_shared<bayes::IdentityBlock>(n, 1.0, "measurement"));
  if (lay.p > 0) {
    const kernels::Gram time = kernels::gram(tr.points, spec.time_kernel(), spec.jitter);
    for (Index j = 0; j < lay.p; ++j) {
      sys.blocks.push_back(std::make_shared<bayes::DenseBlock>(time, spec.delta_beta * spec.delta_beta,
                                                               "beta_" + std::to_string(j + 1)));
    }
  }
  const kernels::Gram space = kernels::gram(tr.points, spec.space_time_kernel(), spec.jitter);
  sys.blocks.push_back(std::make_shared<bayes::DenseBlock>(space, spec.delta_z * spec.delta_z, "z"));
  return sys;
}

DataSpaceScale::DataSpaceScale(kernels::Gram time, kernels::Gram space, double time_scale, double space_scale,
                               MatrixXd x, Eigen::LLT<MatrixXd> m_chol)
    : layout_{space.size(), x.cols()},
      time_(std::move(time)),
      space_(std::move(space)),
      time_scale_(time_scale),
      space_scale_(space_scale),
      x_(std::move(x)),
      m_chol_(std::move(m_chol)) {}

MatrixXd DataSpaceScale::prior_apply(const MatrixXd& rhs) const {
  const Index n = layout_.n;
  MatrixXd out(rhs.rows(), rhs.cols());
  for (Index j = 0; j < layout_.p; ++j) {
    out.middleRows(layout_.beta_col(j, 0), n).noalias() = time_scale_ * time_.matrix * rhs.middleRows(j * n, n);
  }
  out.middleRows(layout_.z_col(0), n).noalias() = space_scale_ * space_.matrix * rhs.middleRows(layout_.z_col(0), n);
  return out;
}

MatrixXd DataSpaceScale::observe(const MatrixXd& rhs) const {
  const Index n = layout_.n;
  MatrixXd out = rhs.middleRows(layout_.z_col(0), n);
  for (Index j = 0; j < layout_.p; ++j) {
    out.noalias() += x_.col(j).asDiagonal() * rhs.middleRows(layout_.beta_col(j, 0), n);
  }
  return out;
}

MatrixXd DataSpaceScale::observe_adjoint(const MatrixXd& rhs) const {
  const Index n = layout_.n;
  MatrixXd out(layout_.dim(), rhs.cols());
  for (Index j = 0; j < layout_.p; ++j) {
    out.middleRows(layout_.beta_col(j, 0), n).noalias() = x_.col(j).asDiagonal() * rhs;
  }
  out.middleRows(layout_.z_col(0), n) = rhs;
  return out;
}

MatrixXd DataSpaceScale::apply(const MatrixXd& rhs) const {
  const MatrixXd sp = prior_apply(rhs);
  return sp - prior_apply(observe_adjoint(m_chol_.solve(observe(sp))));
}

VectorXd DataSpaceScale::correlate(const VectorXd& eps) const {
  const Index n = layout_.n;
  VectorXd prior(layout_.dim());
  for (Index j = 0; j < layout_.p; ++j) {
    const VectorXd draw = time_.chol.matrixL() * eps.segment(layout_.beta_col(j, 0), n);
    prior.segment(layout_.beta_col(j, 0), n) = std::sqrt(time_scale_) * draw;
  }
  const VectorXd draw = space_.chol.matrixL() * eps.segment(layout_.z_col(0), n);
  prior.segment(layout_.z_col(0), n) = std::sqrt(space_scale_) * draw;
  const VectorXd shadow = observe(prior).col(0) + eps.tail(n);
  return prior - prior_apply(observe_adjoint(m_chol_.solve(shadow))).col(0);
}

double DataSpaceScale::condition_estimate() const {
  const VectorXd d = m_chol_.matrixLLT().diagonal();
  const double r = d.maxCoeff() / d.minCoeff();
  return r * r;
}

VectorXd ContinuousFit::signal() const { return y - alpha; }

const DataSpaceScale& ContinuousFit::scale() const {
  return static_cast<const DataSpaceScale&>(*posterior.sigma);
}

ContinuousFit fit_continuous(const TrajectoryDataset& data, const ContinuousTrajSpec& spec,
                             const std::vector<bool>& observed) {
  spec.validate();
  Training tr = gather(data, observed);
  const ContinuousLayout lay{static_cast<Index>(tr.rows.size()), data.covariates()};
  const double db2 = spec.delta_beta * spec.delta_beta;
  const double dz2 = spec.delta_z * spec.delta_z;

  kernels::Gram time = kernels::gram(tr.points, spec.time_kernel(), spec.jitter);
  kernels::Gram space = kernels::gram(tr.points, spec.space_time_kernel(), spec.jitter);
  const MatrixXd m = data_covariance(time.matrix, space.matrix, db2, dz2, tr.x);
  Eigen::LLT<MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) {
    fail(ErrorKind::NumericalRank, "fit_continuous", "I + H S H^T failed to factor");
  }

  ContinuousFit fit;
  fit.spec = spec;
  fit.layout = lay;
  fit.alpha = llt.solve(tr.y);
  const double q = tr.y.dot(fit.alpha);
  const double half_n = 0.5 * static_cast<double>(lay.n);
  const double logdet_m = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  fit.log_evidence = std::lgamma(spec.a_sigma + half_n) - std::lgamma(spec.a_sigma) -
                     half_n * std::log(2.0 * std::numbers::pi * spec.b_sigma) - 0.5 * logdet_m -
                     (spec.a_sigma + half_n) * std::log1p(q / (2.0 * spec.b_sigma));

  auto scale = std::make_shared<DataSpaceScale>(std::move(time), std::move(space), db2, dz2, tr.x, std::move(llt));
  bayes::NigPosterior& post = fit.posterior;
  post.m = scale->prior_apply(scale->observe_adjoint(fit.alpha)).col(0);
  post.a_prior = spec.a_sigma;
  post.b_prior = spec.b_sigma;
  post.n_obs = lay.n;
  post.a_star = spec.a_sigma + half_n;
  post.b_star = spec.b_sigma + (spec.nig.half_quadratic ? 0.5 : 1.0) * q;
  post.condition_estimate = scale->condition_estimate();
  post.jitter = std::max(scale->time_gram().jitter, scale->space_gram().jitter);
  if (post.condition_estimate > 1e12) post.warnings.push_back("ill-conditioned data-space system");
  if (post.jitter > 0.0) post.warnings.push_back("kernel jitter " + std::to_string(post.jitter) + " applied");
  post.sigma = std::move(scale);

  fit.points = std::move(tr.points);
  fit.x = std::move(tr.x);
  fit.y = std::move(tr.y);
  return fit;
}

ContinuousPrediction predict_points_continuous(const ContinuousFit& fit, const std::vector<SpaceTimePoint>& points,
                                               const MatrixXd& x0) {
  const ContinuousLayout& lay = fit.layout;
  const auto n0 = static_cast<Index>(points.size());
  if (x0.rows() != n0 || x0.cols() != lay.p) {
    fail(ErrorKind::InputValidation, "predict_points_continuous", "x0 must be (new points) × p");
  }
  const DataSpaceScale& sc = fit.scale();
  const bayes::NigPosterior& post = fit.posterior;
  const double c = post.b_star / post.a_star;
  const double dof = 2.0 * post.a_star;
  const double db2 = fit.spec.delta_beta * fit.spec.delta_beta;
  const double dz2 = fit.spec.delta_z * fit.spec.delta_z;

  ContinuousPrediction out;
  // C_z^{-1} z_hat = M^{-1} y and C_beta^{-1} beta_hat_j = x_j M^{-1} y exactly,
  // so the locations need no inverse of the (possibly jittered) prior Grams.
  const MatrixXd kz0 = kernels::cross_matrix(fit.points, points, fit.spec.space_time_kernel());
  const MatrixXd kz00 = kernels::gram_matrix(points, fit.spec.space_time_kernel());
  MatrixXd vz = dz2 * (kz00 - kz0.transpose() * sc.space_gram().solve(kz0));
  vz = 0.5 * (vz + vz.transpose()).eval();
  vz.diagonal() = vz.diagonal().cwiseMax(0.0);
  const VectorXd z_loc = dz2 * kz0.transpose() * fit.alpha;
  out.z = {dof, z_loc, c * vz};

  VectorXd y_loc = z_loc;
  MatrixXd vy = vz;
  vy.diagonal().array() += 1.0;
  if (lay.p > 0) {
    const MatrixXd kb0 = kernels::cross_matrix(fit.points, points, fit.spec.time_kernel());
    const MatrixXd kb00 = kernels::gram_matrix(points, fit.spec.time_kernel());
    MatrixXd vb = db2 * (kb00 - kb0.transpose() * sc.time_gram().solve(kb0));
    vb = 0.5 * (vb + vb.transpose()).eval();
    vb.diagonal() = vb.diagonal().cwiseMax(0.0);
    for (Index j = 0; j < lay.p; ++j) {
      const VectorXd b_loc = db2 * kb0.transpose() * fit.x.col(j).cwiseProduct(fit.alpha);
      out.beta.push_back({dof, b_loc, c * vb});
      y_loc += x0.col(j).cwiseProduct(b_loc);
      vy.noalias() += x0.col(j).asDiagonal() * vb * x0.col(j).asDiagonal();
    }
  }
  out.y = {dof, y_loc, c * vy};
  return out;
}

}  // namespace trajstack::continuous
