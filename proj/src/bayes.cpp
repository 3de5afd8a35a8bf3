#include "trajstack/bayes.hpp"

#include "trajstack/error.hpp"
#include "trajstack/rng.hpp"

#include <Eigen/OrderingMethods>
#include <boost/math/distributions/students_t.hpp>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

namespace trajstack::bayes {
namespace {

constexpr Index kDenseLimit = 700;
constexpr double kDenseFill = 0.3;
constexpr double kConditionWarning = 1e12;

using Triplet = Eigen::Triplet<double>;

struct BlockRange {
  const CovBlock* block;
  Index offset;
};

std::vector<BlockRange> block_ranges(const AugmentedSystem& sys) {
  std::vector<BlockRange> out;
  Index offset = 0;
  for (const auto& b : sys.blocks) {
    out.push_back({b.get(), offset});
    offset += b->rows();
  }
  return out;
}

SparseMatrix rows_of(const SparseRowMatrix& x, Index offset, Index rows) {
  return SparseMatrix(x.middleRows(offset, rows));
}

double residual_quadratic_rows(const AugmentedSystem& sys, const VectorXd& theta, Index begin, Index end) {
  double q = 0.0;
  for (const auto& [block, offset] : block_ranges(sys)) {
    if (offset < begin || offset + block->rows() > end) continue;
    const VectorXd r = sys.Y.segment(offset, block->rows()) -
                       sys.X.middleRows(offset, block->rows()) * theta;
    q += r.dot(block->solve(r).col(0));
  }
  return q;
}

}  // namespace

// ---------------------------------------------------------------------------
// Blocks

SparseMatrix CovBlock::sandwich(const SparseMatrix& xb) const {
  std::vector<Index> touched;
  for (Index k = 0; k < xb.outerSize(); ++k) {
    if (xb.col(k).nonZeros() > 0) touched.push_back(k);
  }
  const auto c = static_cast<Index>(touched.size());
  MatrixXd xd = MatrixXd::Zero(rows(), c);
  for (Index j = 0; j < c; ++j) {
    for (SparseMatrix::InnerIterator it(xb, touched[static_cast<std::size_t>(j)]); it; ++it) {
      xd(it.row(), j) = it.value();
    }
  }
  MatrixXd m = xd.transpose() * solve(xd);
  m = 0.5 * (m + m.transpose()).eval();
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(c * c));
  for (Index j = 0; j < c; ++j) {
    for (Index i = 0; i < c; ++i) {
      trips.emplace_back(touched[static_cast<std::size_t>(i)], touched[static_cast<std::size_t>(j)], m(i, j));
    }
  }
  SparseMatrix out(xb.cols(), xb.cols());
  out.setFromTriplets(trips.begin(), trips.end());
  return out;
}

IdentityBlock::IdentityBlock(Index rows, double scale, std::string label)
    : CovBlock(std::move(label)), rows_(rows), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "identity_block", "scale must be positive");
  }
}

double IdentityBlock::log_det() const { return static_cast<double>(rows_) * std::log(scale_); }

MatrixXd IdentityBlock::dense() const { return scale_ * MatrixXd::Identity(rows_, rows_); }

SparseMatrix IdentityBlock::sandwich(const SparseMatrix& xb) const {
  SparseMatrix out = SparseMatrix(xb.transpose() * xb) / scale_;
  return out;
}

DenseBlock::DenseBlock(kernels::Gram gram, double scale, std::string label)
    : CovBlock(std::move(label)), gram_(std::move(gram)), scale_(scale) {
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "dense_block", "scale must be positive");
  }
}

std::shared_ptr<DenseBlock> DenseBlock::from_covariance(const MatrixXd& cov, std::string label) {
  kernels::JitterPolicy none;
  none.enabled = false;
  try {
    return std::make_shared<DenseBlock>(kernels::factor(cov, none), 1.0, std::move(label));
  } catch (const Error& e) {
    throw Error(ErrorKind::NumericalRank, "bayes_core", "dense_block", e.what());
  }
}

double DenseBlock::log_det() const {
  return static_cast<double>(rows()) * std::log(scale_) + gram_.log_det();
}

MatrixXd DenseBlock::dense() const {
  MatrixXd out = gram_.matrix;
  out.diagonal().array() += gram_.jitter;
  return scale_ * out;
}

RandomWalkBlock::RandomWalkBlock(Index epochs, kernels::Gram inner, double scale, std::string label)
    : CovBlock(std::move(label)), epochs_(epochs), inner_(std::move(inner)), scale_(scale) {
  if (epochs < 1) {
    throw Error(ErrorKind::EmptyData, "bayes_core", "random_walk_block", "need at least one epoch");
  }
  if (!(scale > 0.0) || !std::isfinite(scale)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "random_walk_block", "scale must be positive");
  }
}

MatrixXd RandomWalkBlock::solve(const MatrixXd& rhs) const {
  const Index k = inner_.size();
  const Index cols = rhs.cols();
  // Differences u_t = v_t - v_{t-1}, laid out k × (T * cols).
  MatrixXd u(k, epochs_ * cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index t = 0; t < epochs_; ++t) {
      auto col = u.col(c * epochs_ + t);
      col = rhs.col(c).segment(t * k, k);
      if (t > 0) col -= rhs.col(c).segment((t - 1) * k, k);
    }
  }
  const MatrixXd w = inner_.solve(u);
  MatrixXd out(rows(), cols);
  for (Index c = 0; c < cols; ++c) {
    for (Index t = 0; t < epochs_; ++t) {
      auto seg = out.col(c).segment(t * k, k);
      seg = w.col(c * epochs_ + t);
      if (t + 1 < epochs_) seg -= w.col(c * epochs_ + t + 1);
    }
  }
  return out / scale_;
}

double RandomWalkBlock::log_det() const {
  return static_cast<double>(rows()) * std::log(scale_) + static_cast<double>(epochs_) * inner_.log_det();
}

MatrixXd RandomWalkBlock::dense() const {
  const Index k = inner_.size();
  MatrixXd kk = inner_.matrix;
  kk.diagonal().array() += inner_.jitter;
  MatrixXd out(rows(), rows());
  for (Index s = 0; s < epochs_; ++s) {
    for (Index t = 0; t < epochs_; ++t) {
      out.block(s * k, t * k, k, k) = scale_ * static_cast<double>(std::min(s, t) + 1) * kk;
    }
  }
  return out;
}

SparseMatrix RandomWalkBlock::precision() const {
  const Index k = inner_.size();
  MatrixXd kinv = inner_.solve(MatrixXd::Identity(k, k));
  kinv = 0.5 * (kinv + kinv.transpose()).eval();
  kinv /= scale_;
  std::vector<Triplet> trips;
  trips.reserve(static_cast<std::size_t>(3 * epochs_ * k * k));
  for (Index t = 0; t < epochs_; ++t) {
    const double d = t + 1 < epochs_ ? 2.0 : 1.0;
    for (Index j = 0; j < k; ++j) {
      for (Index i = 0; i < k; ++i) {
        trips.emplace_back(t * k + i, t * k + j, d * kinv(i, j));
        if (t + 1 < epochs_) {
          trips.emplace_back(t * k + i, (t + 1) * k + j, -kinv(i, j));
          trips.emplace_back((t + 1) * k + i, t * k + j, -kinv(i, j));
        }
      }
    }
  }
  SparseMatrix p(rows(), rows());
  p.setFromTriplets(trips.begin(), trips.end());
  return p;
}

SparseMatrix RandomWalkBlock::sandwich(const SparseMatrix& xb) const {
  const SparseMatrix p = precision();
  return SparseMatrix(xb.transpose() * (p * xb));
}

// ---------------------------------------------------------------------------
// Augmented system

double AugmentedSystem::max_jitter() const {
  double j = 0.0;
  for (const auto& b : blocks) j = std::max(j, b->jitter());
  return j;
}

void AugmentedSystem::validate() const {
  auto fail = [](const std::string& what) {
    throw Error(ErrorKind::InputValidation, "bayes_core", "augmented_system", what);
  };
  if (Y.size() != X.rows()) fail("Y and X row counts differ");
  Index total = 0;
  bool aligned = n_obs == 0;
  for (const auto& b : blocks) {
    if (!b) fail("null covariance block");
    total += b->rows();
    if (total == n_obs) aligned = true;
  }
  if (total != X.rows()) fail("covariance blocks do not cover the rows of X");
  if (n_obs < 0 || n_obs > X.rows()) fail("n_obs exceeds the row count");
  if (!aligned) fail("n_obs does not fall on a covariance block boundary");
  if (column_order && column_order->size() != X.cols()) fail("column order has the wrong length");
}

MatrixXd AugmentedSystem::dense_scale() const {
  MatrixXd s = MatrixXd::Zero(rows(), rows());
  for (const auto& [block, offset] : block_ranges(*this)) {
    s.block(offset, offset, block->rows(), block->rows()) = block->dense();
  }
  return s;
}

NormalEquations normal_equations(const AugmentedSystem& sys, Index begin, Index end) {
  NormalEquations ne;
  ne.precision.resize(sys.params(), sys.params());
  ne.rhs = VectorXd::Zero(sys.params());
  for (const auto& [block, offset] : block_ranges(sys)) {
    if (offset < begin || offset + block->rows() > end) continue;
    const SparseMatrix xb = rows_of(sys.X, offset, block->rows());
    ne.precision += block->sandwich(xb);
    const VectorXd yb = sys.Y.segment(offset, block->rows());
    if (yb.any()) {
      const VectorXd sy = block->solve(yb).col(0);
      ne.rhs += xb.transpose() * sy;
      ne.y_quad += yb.dot(sy);
    }
  }
  ne.precision.makeCompressed();
  return ne;
}

double residual_quadratic(const AugmentedSystem& sys, const VectorXd& theta) {
  return residual_quadratic_rows(sys, theta, 0, sys.rows());
}

// ---------------------------------------------------------------------------
// Precision factor

std::optional<PrecisionFactor> PrecisionFactor::compute(const SparseMatrix& precision,
                                                        const std::optional<Eigen::VectorXi>& order) {
  PrecisionFactor f;
  f.n_ = precision.rows();
  const double fill = f.n_ == 0 ? 1.0
                                : static_cast<double>(precision.nonZeros()) /
                                      (static_cast<double>(f.n_) * static_cast<double>(f.n_));
  if (f.n_ <= kDenseLimit || fill > kDenseFill) {
    const MatrixXd dense = MatrixXd(precision);
    auto llt = std::make_shared<Eigen::LLT<MatrixXd>>(dense);
    if (!kernels::cholesky_ok(*llt, dense)) return std::nullopt;
    f.dense_ = std::move(llt);
    return f;
  }

  f.perm_.resize(static_cast<int>(f.n_));
  if (order) {
    for (Index i = 0; i < f.n_; ++i) f.perm_.indices()((*order)(i)) = static_cast<int>(i);
  } else {
    Permutation pinv;
    Eigen::AMDOrdering<int> amd;
    amd(precision, pinv);
    f.perm_ = pinv.inverse();
  }
  SparseMatrix permuted;
  permuted = precision.selfadjointView<Eigen::Lower>().twistedBy(f.perm_);
  auto llt = std::make_shared<SparseLlt>(permuted);
  if (llt->info() != Eigen::Success) return std::nullopt;
  f.sparse_ = std::move(llt);
  // Pivot check mirrors the dense path.
  const VectorXd diag = f.sparse_->matrixL().nestedExpression().diagonal();
  const double floor = static_cast<double>(f.n_) * std::numeric_limits<double>::epsilon() *
                       permuted.diagonal().cwiseAbs().maxCoeff();
  if (!diag.allFinite() || diag.minCoeff() * diag.minCoeff() <= floor) return std::nullopt;
  return f;
}

MatrixXd PrecisionFactor::solve(const MatrixXd& rhs) const {
  if (dense_) return dense_->solve(rhs);
  const MatrixXd permuted = perm_ * rhs;
  MatrixXd out = sparse_->solve(permuted);
  return perm_.transpose() * out;
}

double PrecisionFactor::log_det() const {
  if (dense_) return 2.0 * dense_->matrixLLT().diagonal().array().log().sum();
  return 2.0 * sparse_->matrixL().nestedExpression().diagonal().array().log().sum();
}

VectorXd PrecisionFactor::correlate(const VectorXd& eps) const {
  if (dense_) return dense_->matrixU().solve(eps);
  const VectorXd x = sparse_->matrixU().solve(eps);
  return perm_.transpose() * x;
}

double PrecisionFactor::condition_estimate() const {
  const VectorXd diag = dense_ ? VectorXd(dense_->matrixLLT().diagonal())
                               : VectorXd(sparse_->matrixL().nestedExpression().diagonal());
  if (diag.size() == 0) return 1.0;
  const double r = diag.maxCoeff() / diag.minCoeff();
  return r * r;
}

// ---------------------------------------------------------------------------
// Posterior

MatrixXd NigPosterior::scale() const {
  MatrixXd s = sigma->apply(MatrixXd::Identity(dim(), dim()));
  return 0.5 * (s + s.transpose());
}

double NigPosterior::quad_scale(const VectorXd& u) const { return u.dot(sigma->apply(u).col(0)); }

double NigPosterior::sigma2_mean() const {
  if (!(a_star > 1.0)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "sigma2_mean", "posterior mean needs a* > 1");
  }
  return b_star / (a_star - 1.0);
}

NigPosterior nig_posterior(const AugmentedSystem& sys, double a_prior, double b_prior,
                           const NigOptions& options) {
  sys.validate();
  if (!(a_prior > 0.0) || !(b_prior > 0.0) || !std::isfinite(a_prior) || !std::isfinite(b_prior)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "nig_posterior",
                "inverse-gamma prior needs a > 0 and b > 0");
  }
  const NormalEquations ne = normal_equations(sys, 0, sys.rows());
  auto factor = PrecisionFactor::compute(ne.precision, sys.column_order);
  if (!factor) {
    throw Error(ErrorKind::Identifiability, "bayes_core", "nig_posterior",
                "X^T S^-1 X is not positive definite; theta is not identified");
  }
  NigPosterior post;
  auto precision = std::make_shared<const PrecisionFactor>(std::move(*factor));
  post.m = precision->solve(ne.rhs).col(0);
  post.sigma = precision;
  const double q = residual_quadratic(sys, post.m);
  post.a_prior = a_prior;
  post.b_prior = b_prior;
  post.n_obs = sys.n_obs;
  post.a_star = a_prior + 0.5 * static_cast<double>(sys.n_obs);
  post.b_star = b_prior + (options.half_quadratic ? 0.5 : 1.0) * std::max(q, 0.0);
  post.jitter = sys.max_jitter();
  post.condition_estimate = post.sigma->condition_estimate();
  if (post.condition_estimate > kConditionWarning) {
    std::ostringstream os;
    os << "posterior precision condition estimate " << post.condition_estimate << " exceeds 1e12";
    post.warnings.push_back(os.str());
  }
  return post;
}

StudentT marginal_theta(const NigPosterior& post) {
  return {2.0 * post.a_star, post.m, (post.b_star / post.a_star) * post.scale()};
}

double t_logdensity(const VectorXd& x, const StudentT& t) {
  const Index p = t.loc.size();
  if (x.size() != p || t.scale.rows() != p || t.scale.cols() != p) {
    throw Error(ErrorKind::InputValidation, "bayes_core", "t_logdensity", "dimension mismatch");
  }
  const Eigen::LLT<MatrixXd> llt(t.scale);
  if (!kernels::cholesky_ok(llt, t.scale)) {
    throw Error(ErrorKind::NumericalRank, "bayes_core", "t_logdensity", "scale matrix is not positive definite");
  }
  const VectorXd z = llt.matrixL().solve(x - t.loc);
  const double pd = static_cast<double>(p);
  const double logdet = 2.0 * llt.matrixLLT().diagonal().array().log().sum();
  return std::lgamma(0.5 * (t.dof + pd)) - std::lgamma(0.5 * t.dof) -
         0.5 * pd * std::log(t.dof * std::numbers::pi) - 0.5 * logdet -
         0.5 * (t.dof + pd) * std::log1p(z.squaredNorm() / t.dof);
}

double StudentT1::log_pdf(double x) const {
  const double z = (x - loc) * (x - loc) / scale;
  return std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
         0.5 * std::log(dof * std::numbers::pi * scale) - 0.5 * (dof + 1.0) * std::log1p(z / dof);
}

double StudentT1::cdf(double x) const {
  const boost::math::students_t dist(dof);
  return boost::math::cdf(dist, (x - loc) / std::sqrt(scale));
}

double StudentT1::quantile(double p) const {
  const boost::math::students_t dist(dof);
  return loc + std::sqrt(scale) * boost::math::quantile(dist, p);
}

double StudentT1::variance() const {
  if (!(dof > 2.0)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "variance", "t variance needs dof > 2");
  }
  return scale * dof / (dof - 2.0);
}

StudentT1 marginal(const StudentT& t, Index i) { return {t.dof, t.loc(i), t.scale(i, i)}; }

NigDraws sample_nig(const NigPosterior& post, Index n_draws, std::uint64_t seed) {
  if (n_draws < 1) {
    throw Error(ErrorKind::Configuration, "bayes_core", "sample_nig", "n_draws must be >= 1");
  }
  auto rng = CounterRng::stream(seed, "nig");
  std::gamma_distribution<double> gamma(post.a_star, 1.0 / post.b_star);
  std::normal_distribution<double> normal;
  NigDraws d;
  d.theta.resize(post.dim(), n_draws);
  d.sigma2.resize(n_draws);
  VectorXd eps(post.sigma->noise_size());
  for (Index k = 0; k < n_draws; ++k) {
    d.sigma2(k) = 1.0 / gamma(rng);
    for (Index i = 0; i < eps.size(); ++i) eps(i) = normal(rng);
    d.theta.col(k) = post.m + std::sqrt(d.sigma2(k)) * post.sigma->correlate(eps);
  }
  return d;
}

double log_marginal_likelihood(const AugmentedSystem& sys, double a_prior, double b_prior) {
  sys.validate();
  if (!(a_prior > 0.0) || !(b_prior > 0.0)) {
    throw Error(ErrorKind::ParameterDomain, "bayes_core", "log_marginal_likelihood",
                "inverse-gamma prior needs a > 0 and b > 0");
  }
  const NormalEquations prior = normal_equations(sys, sys.n_obs, sys.rows());
  const NormalEquations data = normal_equations(sys, 0, sys.n_obs);
  auto f0 = PrecisionFactor::compute(prior.precision, sys.column_order);
  if (!f0) {
    throw Error(ErrorKind::Identifiability, "bayes_core", "log_marginal_likelihood",
                "prior rows do not identify theta");
  }
  SparseMatrix full = prior.precision + data.precision;
  auto f = PrecisionFactor::compute(full, sys.column_order);
  if (!f) {
    throw Error(ErrorKind::Identifiability, "bayes_core", "log_marginal_likelihood",
                "X^T S^-1 X is not positive definite");
  }
  const VectorXd m0 = f0->solve(prior.rhs).col(0);
  const VectorXd m = f->solve(prior.rhs + data.rhs).col(0);
  const double q0 = residual_quadratic_rows(sys, m0, sys.n_obs, sys.rows());
  const double q = residual_quadratic(sys, m);

  double logdet_data = 0.0;
  for (const auto& [block, offset] : block_ranges(sys)) {
    if (offset + block->rows() <= sys.n_obs) logdet_data += block->log_det();
  }
  const double n = static_cast<double>(sys.n_obs);
  const double a_n = a_prior + 0.5 * n;
  const double b_n = b_prior + 0.5 * std::max(q - q0, 0.0);
  return -0.5 * n * std::log(2.0 * std::numbers::pi) - 0.5 * logdet_data + 0.5 * f0->log_det() -
         0.5 * f->log_det() + a_prior * std::log(b_prior) - a_n * std::log(b_n) + std::lgamma(a_n) -
         std::lgamma(a_prior);
}

}  // namespace trajstack::bayes
