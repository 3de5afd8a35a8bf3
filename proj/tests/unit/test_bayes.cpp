#include "doctest.h"

#include "trajstack/bayes.hpp"
#include "trajstack/error.hpp"
#include "trajstack/rng.hpp"

#include <Eigen/Dense>
#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/sinh_sinh.hpp>

#include <cmath>
#include <numbers>
#include <random>

using namespace trajstack;
using namespace trajstack::bayes;

namespace {

MatrixXd random_matrix(CounterRng& rng, Index r, Index c) {
  std::normal_distribution<double> n;
  MatrixXd m(r, c);
  for (Index j = 0; j < c; ++j)
    for (Index i = 0; i < r; ++i) m(i, j) = n(rng);
  return m;
}

MatrixXd random_spd(CounterRng& rng, Index n) {
  const MatrixXd a = random_matrix(rng, n, n);
  return a * a.transpose() + 0.5 * MatrixXd::Identity(n, n);
}

SparseRowMatrix sparse(const MatrixXd& m) { return m.sparseView(); }

/// Data rows (X, S_d) on top of prior rows theta ~ N(0, sigma^2 S0).
AugmentedSystem regression_system(const MatrixXd& x, const VectorXd& y, const MatrixXd& sd, const MatrixXd& s0) {
  AugmentedSystem sys;
  const Index n = x.rows(), p = x.cols();
  sys.Y = VectorXd::Zero(n + p);
  sys.Y.head(n) = y;
  MatrixXd xa(n + p, p);
  xa << x, MatrixXd::Identity(p, p);
  sys.X = sparse(xa);
  sys.blocks = {DenseBlock::from_covariance(sd, "data"), DenseBlock::from_covariance(s0, "prior")};
  sys.n_obs = n;
  return sys;
}

kernels::Gram gram_of(const MatrixXd& k) {
  kernels::JitterPolicy none;
  none.enabled = false;
  return kernels::factor(k, none);
}

}  // namespace

TEST_SUITE("bayes_core") {

TEST_CASE("nig_posterior examples") {
  SUBCASE("zero data leaves the scale at the prior") {
    AugmentedSystem sys;
    sys.Y = VectorXd::Zero(2);
    sys.X = sparse(MatrixXd::Identity(2, 2));
    sys.blocks = {std::make_shared<IdentityBlock>(2)};
    sys.n_obs = 2;
    const NigPosterior post = nig_posterior(sys, 1.0, 1.0);
    CHECK(post.m.norm() == 0.0);
    CHECK(post.scale().isApprox(MatrixXd::Identity(2, 2)));
    CHECK(post.a_star == 2.0);
    CHECK(post.b_star == 1.0);
  }
  SUBCASE("scalar system") {
    AugmentedSystem sys;
    sys.Y = VectorXd::Constant(1, 3.0);
    sys.X = sparse(MatrixXd::Ones(1, 1));
    sys.blocks = {std::make_shared<IdentityBlock>(1)};
    sys.n_obs = 1;
    const NigPosterior post = nig_posterior(sys, 1.0, 1.0);
    CHECK(post.m(0) == doctest::Approx(3.0));
    CHECK(post.scale()(0, 0) == doctest::Approx(1.0));
    CHECK(post.a_star == 1.5);
    CHECK(post.b_star == doctest::Approx(1.0));
    const StudentT t = marginal_theta(post);
    CHECK(t.dof == 3.0);
    CHECK(t.loc(0) == doctest::Approx(3.0));
    CHECK(t.scale(0, 0) == doctest::Approx(2.0 / 3.0));
  }
}

TEST_CASE("b_star residual form equals the normal-equation identity") {
  auto rng = CounterRng::stream(7, "bstar");
  for (int rep = 0; rep < 20; ++rep) {
    AugmentedSystem sys;
    const MatrixXd x = random_matrix(rng, 4, 3);
    const MatrixXd s = random_spd(rng, 4);
    sys.Y = random_matrix(rng, 4, 1).col(0);
    sys.X = sparse(x);
    sys.blocks = {DenseBlock::from_covariance(s, "s")};
    sys.n_obs = 4;
    const NigPosterior post = nig_posterior(sys, 2.0, 0.5);
    const MatrixXd sinv = s.inverse();
    const MatrixXd prec = x.transpose() * sinv * x;
    const double identity = 0.5 + 0.5 * (sys.Y.dot(sinv * sys.Y) - post.m.dot(prec * post.m));
    CHECK(post.b_star == doctest::Approx(identity).epsilon(1e-9));
    CHECK(post.b_star >= post.b_prior);
    CHECK(post.a_star > post.a_prior);
    // m against a dense solve
    const VectorXd m = prec.ldlt().solve(x.transpose() * sinv * sys.Y);
    CHECK((post.m - m).norm() <= 1e-9 * (1.0 + m.norm()));
  }
}

TEST_CASE("half-quadratic flag doubles the update") {
  AugmentedSystem sys;
  sys.Y = (VectorXd(3) << 1.0, -2.0, 0.5).finished();
  sys.X = sparse((MatrixXd(3, 1) << 1.0, 1.0, 1.0).finished());
  sys.blocks = {std::make_shared<IdentityBlock>(3)};
  sys.n_obs = 3;
  const double q = residual_quadratic(sys, nig_posterior(sys, 1.0, 1.0).m);
  CHECK(nig_posterior(sys, 1.0, 1.0).b_star == doctest::Approx(1.0 + 0.5 * q));
  CHECK(nig_posterior(sys, 1.0, 1.0, {.half_quadratic = false}).b_star == doctest::Approx(1.0 + q));
}

TEST_CASE("marginal_theta substitution and large-shape limit") {
  NigPosterior post;
  post.m = VectorXd::Zero(2);
  post.a_star = 2.0;
  post.b_star = 1.0;
  post.sigma = std::make_shared<const PrecisionFactor>(*PrecisionFactor::compute(sparse(MatrixXd::Identity(2, 2))));
  StudentT t = marginal_theta(post);
  CHECK(t.dof == 4.0);
  CHECK(t.scale.isApprox(0.5 * MatrixXd::Identity(2, 2)));
  post.a_star = 1e6;
  post.b_star = 2e6;
  t = marginal_theta(post);
  CHECK(t.scale.isApprox(2.0 * MatrixXd::Identity(2, 2)));
}

TEST_CASE("prior recovery and scale equivariance") {
  auto rng = CounterRng::stream(3, "prior");
  const MatrixXd x = random_matrix(rng, 5, 2);
  const VectorXd y = random_matrix(rng, 5, 1).col(0);
  const MatrixXd s0 = random_spd(rng, 2);
  AugmentedSystem prior_only;
  prior_only.Y = VectorXd::Zero(2);
  prior_only.X = sparse(MatrixXd::Identity(2, 2));
  prior_only.blocks = {DenseBlock::from_covariance(s0, "prior")};
  prior_only.n_obs = 0;
  const NigPosterior p0 = nig_posterior(prior_only, 2.5, 1.5);
  CHECK(p0.m.norm() == 0.0);
  CHECK(p0.a_star == 2.5);
  CHECK(p0.b_star == 1.5);
  CHECK(p0.scale().isApprox(s0, 1e-12));

  const AugmentedSystem sys = regression_system(x, y, MatrixXd::Identity(5, 5), s0);
  AugmentedSystem scaled = sys;
  scaled.Y *= 4.0;
  const NigPosterior a = nig_posterior(sys, 1.0, 1.0), b = nig_posterior(scaled, 1.0, 1.0);
  CHECK((b.m - 4.0 * a.m).norm() <= 1e-10);
  CHECK(b.b_star - 1.0 == doctest::Approx(16.0 * (a.b_star - 1.0)));
}

TEST_CASE("identifiability and argument errors") {
  AugmentedSystem sys;
  sys.Y = VectorXd::Ones(2);
  sys.X = sparse((MatrixXd(2, 2) << 1.0, 0.0, 1.0, 0.0).finished());
  sys.blocks = {std::make_shared<IdentityBlock>(2)};
  sys.n_obs = 2;
  try {
    (void)nig_posterior(sys, 1.0, 1.0);
    FAIL("expected identifiability error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Identifiability);
    CHECK(e.module() == "bayes_core");
  }
  sys.X = sparse(MatrixXd::Identity(2, 2));
  CHECK_THROWS_AS(nig_posterior(sys, 0.0, 1.0), Error);
  sys.n_obs = 1;
  sys.blocks = {std::make_shared<IdentityBlock>(2)};
  CHECK_THROWS_AS(nig_posterior(sys, 1.0, 1.0), Error);  // n_obs splits a block
  CHECK_THROWS_AS(DenseBlock::from_covariance(MatrixXd::Ones(2, 2), "singular"), Error);
}

TEST_CASE("t_logdensity") {
  const StudentT cauchy{1.0, VectorXd::Zero(1), MatrixXd::Identity(1, 1)};
  CHECK(t_logdensity(VectorXd::Zero(1), cauchy) == doctest::Approx(-1.1447298858494002).epsilon(1e-14));
  const StudentT t{4.0, (VectorXd(2) << 1.0, -1.0).finished(), (MatrixXd(2, 2) << 2.0, 0.3, 0.3, 0.5).finished()};
  const VectorXd d = (VectorXd(2) << 0.4, -1.3).finished();
  CHECK(t_logdensity(t.loc + d, t) == doctest::Approx(t_logdensity(t.loc - d, t)).epsilon(1e-14));
  const StudentT1 u = marginal(t, 0);
  CHECK(u.log_pdf(0.3) == doctest::Approx(t_logdensity(VectorXd::Constant(1, 0.3),
                                                        {4.0, VectorXd::Constant(1, 1.0), MatrixXd::Constant(1, 1, 2.0)})));
  CHECK(u.cdf(u.quantile(0.975)) == doctest::Approx(0.975).epsilon(1e-12));
  CHECK(u.quantile(0.5) == doctest::Approx(1.0));
  CHECK(u.variance() == doctest::Approx(4.0));
  CHECK_THROWS_AS(t_logdensity(VectorXd::Zero(2), {3.0, VectorXd::Zero(2), MatrixXd::Zero(2, 2)}), Error);
}

TEST_CASE("bivariate t density integrates to one") {
  // Polar coordinates around the location: trapezoid in the angle (periodic,
  // spectrally accurate) and a double-exponential rule on the radius.
  const StudentT t{5.0, (VectorXd(2) << 0.5, 2.0).finished(), (MatrixXd(2, 2) << 1.5, -0.4, -0.4, 0.8).finished()};
  boost::math::quadrature::exp_sinh<double> radial;
  const int m = 128;
  double total = 0.0;
  for (int k = 0; k < m; ++k) {
    const double a = 2.0 * std::numbers::pi * k / m;
    const VectorXd dir = (VectorXd(2) << std::cos(a), std::sin(a)).finished();
    total += radial.integrate([&](double r) { return r * std::exp(t_logdensity(t.loc + r * dir, t)); });
  }
  CHECK(std::abs(total * 2.0 * std::numbers::pi / m - 1.0) < 1e-6);
}

TEST_CASE("sample_nig") {
  NigPosterior post;
  post.m = (VectorXd(2) << 1.0, -1.0).finished();
  post.a_star = 6.0;
  post.b_star = 3.0;
  const MatrixXd sigma = (MatrixXd(2, 2) << 1.0, 0.4, 0.4, 0.5).finished();
  post.sigma = std::make_shared<const PrecisionFactor>(*PrecisionFactor::compute(sparse(sigma.inverse())));
  const Index n = 200000;
  const NigDraws d = sample_nig(post, n, 42);
  const double mean = d.sigma2.mean();
  const double var_s2 = 9.0 / (25.0 * 4.0);  // b^2/((a-1)^2 (a-2))
  CHECK(std::abs(mean - 0.6) < 3.0 * std::sqrt(var_s2 / n));
  const MatrixXd centered = d.theta.colwise() - d.theta.rowwise().mean();
  const MatrixXd cov = centered * centered.transpose() / double(n - 1);
  CHECK((cov - 0.6 * sigma).cwiseAbs().maxCoeff() < 0.01);
  const NigDraws again = sample_nig(post, 10, 42);
  CHECK((again.theta.array() == d.theta.leftCols(10).array()).all());
  CHECK((again.sigma2.array() == d.sigma2.head(10).array()).all());
  CHECK_THROWS_AS(sample_nig(post, 0, 1), Error);
}

TEST_CASE("log marginal likelihood: scalar nested quadrature") {
  // y = theta + eta, theta ~ N(0, sigma^2 s0), sigma^2 ~ IG(a, b)
  const double y = 1.3, s0 = 2.0, a = 2.0, b = 1.5;
  const AugmentedSystem sys = regression_system(MatrixXd::Ones(1, 1), VectorXd::Constant(1, y),
                                                MatrixXd::Identity(1, 1), MatrixXd::Constant(1, 1, s0));
  boost::math::quadrature::exp_sinh<double> outer;
  boost::math::quadrature::sinh_sinh<double> inner;
  const double evidence = outer.integrate([&](double s2) {
    const double ig = std::exp(a * std::log(b) - std::lgamma(a) - (a + 1) * std::log(s2) - b / s2);
    const double lik = inner.integrate([&](double th) {
      const double l1 = -0.5 * std::log(2 * std::numbers::pi * s2) - 0.5 * (y - th) * (y - th) / s2;
      const double l0 = -0.5 * std::log(2 * std::numbers::pi * s2 * s0) - 0.5 * th * th / (s2 * s0);
      return std::exp(l1 + l0);
    });
    return ig * lik;
  });
  CHECK(std::abs(log_marginal_likelihood(sys, a, b) - std::log(evidence)) < 1e-5);
}

TEST_CASE("log marginal likelihood equals the multivariate t predictive density") {
  auto rng = CounterRng::stream(9, "evidence");
  for (int rep = 0; rep < 10; ++rep) {
    const MatrixXd x = random_matrix(rng, 5, 3);
    const VectorXd y = random_matrix(rng, 5, 1).col(0);
    const MatrixXd sd = random_spd(rng, 5), s0 = random_spd(rng, 3);
    const double a = 1.5, b = 0.7;
    const AugmentedSystem sys = regression_system(x, y, sd, s0);
    const StudentT pred{2 * a, VectorXd::Zero(5), (b / a) * (sd + x * s0 * x.transpose())};
    CHECK(log_marginal_likelihood(sys, a, b) == doctest::Approx(t_logdensity(y, pred)).epsilon(1e-10));
  }
}

TEST_CASE("evidence drops as an observation moves away from the fit") {
  auto rng = CounterRng::stream(5, "outlier");
  const MatrixXd x = random_matrix(rng, 6, 2);
  VectorXd y = random_matrix(rng, 6, 1).col(0);
  double prev = std::numeric_limits<double>::infinity();
  const double base = nig_posterior(regression_system(x, y, MatrixXd::Identity(6, 6), MatrixXd::Identity(2, 2)), 1, 1)
                          .m.dot(x.row(0));
  for (double shift : {0.0, 1.0, 3.0, 10.0, 100.0}) {
    y(0) = base + shift;
    const double e =
        log_marginal_likelihood(regression_system(x, y, MatrixXd::Identity(6, 6), MatrixXd::Identity(2, 2)), 1, 1);
    CHECK(e < prev);
    prev = e;
  }
}

TEST_CASE("random-walk block against its dense form") {
  auto rng = CounterRng::stream(1, "rw");
  const MatrixXd k = random_spd(rng, 3);
  const RandomWalkBlock blk(4, gram_of(k), 2.5, "rw");
  const MatrixXd dense = blk.dense();
  CHECK(dense.rows() == 12);
  CHECK(dense.block(3, 6, 3, 3).isApprox(2.5 * 2.0 * k));
  const MatrixXd rhs = random_matrix(rng, 12, 2);
  CHECK(blk.solve(rhs).isApprox(dense.ldlt().solve(rhs), 1e-10));
  CHECK(blk.log_det() == doctest::Approx(std::log(dense.determinant())).epsilon(1e-10));
  CHECK(MatrixXd(blk.precision()).isApprox(dense.inverse(), 1e-9));
  const SparseMatrix xb = sparse(random_matrix(rng, 12, 5)).cast<double>();
  const MatrixXd xd = MatrixXd(xb);
  CHECK(MatrixXd(blk.sandwich(xb)).isApprox(xd.transpose() * dense.inverse() * xd, 1e-9));
  // T = 1 reduces to a plain scaled block
  const RandomWalkBlock one(1, gram_of(k), 2.0, "rw1");
  CHECK(one.dense().isApprox(2.0 * k));
}

TEST_CASE("sparse and dense precision factors agree") {
  // Block-tridiagonal SPD matrix large enough to take the sparse path.
  auto rng = CounterRng::stream(2, "sparse");
  const MatrixXd k = random_spd(rng, 4);
  const RandomWalkBlock blk(200, gram_of(k), 1.0, "rw");
  SparseMatrix p = blk.precision();
  for (Index i = 0; i < p.rows(); ++i) p.coeffRef(i, i) += 1.0;
  const auto fs = PrecisionFactor::compute(p);
  REQUIRE(fs);
  CHECK(fs->is_sparse());
  const MatrixXd pd = MatrixXd(p);
  const Eigen::LLT<MatrixXd> ref(pd);
  const MatrixXd rhs = random_matrix(rng, p.rows(), 2);
  CHECK(fs->solve(rhs).isApprox(ref.solve(rhs), 1e-10));
  CHECK(fs->log_det() == doctest::Approx(2.0 * ref.matrixLLT().diagonal().array().log().sum()).epsilon(1e-12));
  Eigen::VectorXi order(p.rows());
  for (Index i = 0; i < p.rows(); ++i) order(i) = static_cast<int>(p.rows() - 1 - i);
  const auto fo = PrecisionFactor::compute(p, order);
  REQUIRE(fo);
  CHECK(fo->solve(rhs).isApprox(ref.solve(rhs), 1e-10));
  // correlate maps the identity to a square root of the inverse
  MatrixXd z(p.rows(), p.rows());
  for (Index i = 0; i < p.rows(); ++i) z.col(i) = fs->correlate(VectorXd::Unit(p.rows(), i));
  CHECK((z * z.transpose() * pd - MatrixXd::Identity(p.rows(), p.rows())).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("normal equations are additive over block ranges") {
  auto rng = CounterRng::stream(4, "ne");
  const AugmentedSystem sys = regression_system(random_matrix(rng, 4, 2), random_matrix(rng, 4, 1).col(0),
                                                random_spd(rng, 4), random_spd(rng, 2));
  const NormalEquations all = normal_equations(sys, 0, sys.rows());
  const NormalEquations d = normal_equations(sys, 0, 4), pr = normal_equations(sys, 4, sys.rows());
  CHECK(MatrixXd(all.precision).isApprox(MatrixXd(d.precision) + MatrixXd(pr.precision)));
  CHECK(all.rhs.isApprox(d.rhs + pr.rhs));
  const MatrixXd xd = MatrixXd(sys.X);
  CHECK(MatrixXd(all.precision).isApprox(xd.transpose() * sys.dense_scale().inverse() * xd, 1e-10));
}

}  // TEST_SUITE
