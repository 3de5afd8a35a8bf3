#include "doctest.h"

#include "trajstack/error.hpp"
#include "trajstack/rng.hpp"
#include "trajstack/traj_continuous.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>

using namespace trajstack;
using namespace trajstack::continuous;

namespace {

TrajectoryDataset make_data(std::uint64_t seed, Index n, Index p, double dt = 1.0) {
  auto rng = CounterRng::stream(seed, "continuous-data");
  std::normal_distribution<double> g;
  TrajectoryDataset d;
  d.t.resize(n);
  d.y.resize(n);
  d.x.resize(n, p);
  Point2 cur;
  for (Index i = 0; i < n; ++i) {
    d.t(i) = 1.0 + dt * static_cast<double>(i) + 0.3 * std::abs(g(rng));
    cur.x += g(rng);
    cur.y += g(rng);
    d.s.push_back(cur);
    d.y(i) = g(rng);
    for (Index j = 0; j < p; ++j) d.x(i, j) = 2.0 * g(rng);
  }
  return d;
}

ContinuousTrajSpec test_spec() {
  ContinuousTrajSpec s;
  s.delta_beta = 0.8;
  s.delta_z = 1.4;
  s.phi1 = 0.7;
  s.phi2 = 0.4;
  s.xi = 0.9;
  s.a_sigma = 3.0;
  s.b_sigma = 1.5;
  return s;
}

}  // namespace

TEST_SUITE("traj_continuous") {

TEST_CASE("augmented system shape and blocks") {
  const TrajectoryDataset d = make_data(1, 2, 1);
  const ContinuousTrajSpec spec = test_spec();
  const bayes::AugmentedSystem sys = build_system_continuous(d, spec);
  CHECK(sys.X.rows() == 6);
  CHECK(sys.X.cols() == 4);
  MatrixXd expect = MatrixXd::Zero(6, 4);
  expect(0, 0) = d.x(0, 0);
  expect(1, 1) = d.x(1, 0);
  expect(0, 2) = expect(1, 3) = 1.0;
  expect.bottomRows(4).setIdentity();
  CHECK((MatrixXd(sys.X) - expect).norm() == 0.0);

  const TrajectoryDataset d5 = make_data(2, 5, 2);
  const bayes::AugmentedSystem s5 = build_system_continuous(d5, spec);
  CHECK(s5.X.rows() == 20);
  CHECK(s5.X.cols() == 15);
  const MatrixXd S = s5.dense_scale();
  std::vector<SpaceTimePoint> pts;
  for (Index i = 0; i < 5; ++i) pts.push_back(d5.point(i));
  const MatrixXd ct = kernels::gram_matrix(pts, kernels::SqExp{spec.xi});
  const MatrixXd kz = kernels::gram_matrix(pts, kernels::Gneiting{spec.phi1, spec.phi2});
  CHECK((S.topLeftCorner(5, 5) - MatrixXd::Identity(5, 5)).norm() == 0.0);
  CHECK((S.block(5, 5, 5, 5) - 0.64 * ct).norm() < 1e-14);
  CHECK((S.block(10, 10, 5, 5) - 0.64 * ct).norm() < 1e-14);
  CHECK((S.block(15, 15, 5, 5) - 1.96 * kz).norm() < 1e-14);
  CHECK(S.block(5, 10, 5, 5).norm() == 0.0);
  CHECK(S.block(0, 5, 5, 15).norm() == 0.0);
}

TEST_CASE("data-space solver matches the augmented conjugate update") {
  const ContinuousTrajSpec spec = test_spec();
  for (Index p : {0, 1, 2}) {
    CAPTURE(p);
    const TrajectoryDataset d = make_data(10 + static_cast<std::uint64_t>(p), 14, p);
    const ContinuousFit fit = fit_continuous(d, spec);
    const bayes::AugmentedSystem sys = build_system_continuous(d, spec);
    const bayes::NigPosterior ref = bayes::nig_posterior(sys, spec.a_sigma, spec.b_sigma);
    CHECK((fit.posterior.m - ref.m).norm() <= 1e-7 * (1.0 + ref.m.norm()));
    const MatrixXd s_ref = ref.scale();
    CHECK((fit.posterior.scale() - s_ref).norm() <= 1e-7 * s_ref.norm());
    CHECK(fit.posterior.a_star == ref.a_star);
    CHECK(fit.posterior.b_star == doctest::Approx(ref.b_star).epsilon(1e-8));
    CHECK(fit.log_evidence ==
          doctest::Approx(bayes::log_marginal_likelihood(sys, spec.a_sigma, spec.b_sigma)).epsilon(1e-8));
    // fitted signal H m
    VectorXd hm = fit.z();
    for (Index j = 0; j < p; ++j) hm += d.x.col(j).cwiseProduct(fit.beta(j));
    CHECK((fit.signal() - hm).norm() < 1e-9 * (1.0 + hm.norm()));
  }
}

TEST_CASE("literal quadratic convention") {
  ContinuousTrajSpec spec = test_spec();
  const TrajectoryDataset d = make_data(3, 6, 1);
  const ContinuousFit half = fit_continuous(d, spec);
  spec.nig.half_quadratic = false;
  const ContinuousFit full = fit_continuous(d, spec);
  CHECK(full.posterior.b_star - spec.b_sigma == doctest::Approx(2.0 * (half.posterior.b_star - spec.b_sigma)));
  CHECK((full.posterior.m - half.posterior.m).norm() == 0.0);
}

TEST_CASE("matheron draws have covariance Sigma exactly") {
  const TrajectoryDataset d = make_data(4, 5, 1);
  const ContinuousFit fit = fit_continuous(d, test_spec());
  const auto& sc = fit.scale();
  CHECK(sc.noise_size() == 15);
  MatrixXd a(sc.size(), sc.noise_size());
  for (Index k = 0; k < sc.noise_size(); ++k) a.col(k) = sc.correlate(VectorXd::Unit(sc.noise_size(), k));
  const MatrixXd sigma = fit.posterior.scale();
  CHECK((a * a.transpose() - sigma).norm() < 1e-10 * sigma.norm());
}

TEST_CASE("zero responses give a zero mean") {
  TrajectoryDataset d = make_data(5, 8, 2);
  d.y.setZero();
  CHECK(fit_continuous(d, test_spec()).posterior.m.norm() == 0.0);
}

TEST_CASE("posterior mean of z against a grid integral") {
  // p = 0, n = 3: E[z | y] by tensor trapezoid over the prior times likelihood.
  TrajectoryDataset d = make_data(6, 3, 0);
  d.y << 0.8, -0.4, 1.1;
  ContinuousTrajSpec spec = test_spec();
  const ContinuousFit fit = fit_continuous(d, spec);
  std::vector<SpaceTimePoint> pts{d.point(0), d.point(1), d.point(2)};
  const MatrixXd prior = spec.delta_z * spec.delta_z * kernels::gram_matrix(pts, kernels::Gneiting{spec.phi1, spec.phi2});
  const Eigen::Matrix3d prec = prior.inverse();
  const int g = 121;
  const double lo = -7.0, h = 14.0 / (g - 1);
  Eigen::Vector3d num = Eigen::Vector3d::Zero();
  double den = 0.0;
  for (int i = 0; i < g; ++i)
    for (int j = 0; j < g; ++j)
      for (int k = 0; k < g; ++k) {
        const Eigen::Vector3d z(lo + i * h, lo + j * h, lo + k * h);
        const Eigen::Vector3d r = d.y - z;
        const double w = std::exp(-0.5 * z.dot(prec * z) - 0.5 * r.squaredNorm());
        num += w * z;
        den += w;
      }
  const Eigen::Vector3d oracle = num / den;
  CHECK((fit.z() - oracle).norm() < 1e-7);
}

TEST_CASE("predictive laws") {
  const TrajectoryDataset d = make_data(7, 6, 1);
  const ContinuousTrajSpec spec = test_spec();
  const ContinuousFit fit = fit_continuous(d, spec);
  const double c = fit.posterior.b_star / fit.posterior.a_star;

  SUBCASE("a training point reproduces the fitted signal") {
    const ContinuousPrediction pr = predict_points_continuous(fit, {d.point(3)}, d.x.row(3));
    CHECK(pr.y.loc(0) == doctest::Approx(fit.signal()(3)).epsilon(1e-10));
    CHECK(pr.z.loc(0) == doctest::Approx(fit.z()(3)).epsilon(1e-10));
    CHECK(pr.beta[0].loc(0) == doctest::Approx(fit.beta(0)(3)).epsilon(1e-10));
    CHECK(pr.y.scale(0, 0) == doctest::Approx(c).epsilon(1e-6));
  }
  SUBCASE("far future reverts to the prior") {
    const double x = 1.7;
    const ContinuousPrediction pr =
        predict_points_continuous(fit, {{1e6, {0.0, 0.0}}}, MatrixXd::Constant(1, 1, x));
    CHECK(std::abs(pr.y.loc(0)) < 1e-10);
    CHECK(pr.y.scale(0, 0) ==
          doctest::Approx(c * (1.0 + spec.delta_z * spec.delta_z + x * x * spec.delta_beta * spec.delta_beta)));
    CHECK(pr.y.dof == 2.0 * fit.posterior.a_star);
  }
  SUBCASE("kriging against joint-Gaussian conditioning") {
    const std::vector<SpaceTimePoint> fresh{{2.5, {0.3, -0.2}}, {4.1, d.s[1]}};
    MatrixXd x0(2, 1);
    x0 << 0.6, -1.3;
    const ContinuousPrediction pr = predict_points_continuous(fit, fresh, x0);
    std::vector<SpaceTimePoint> all = fit.points;
    all.insert(all.end(), fresh.begin(), fresh.end());
    auto conditional = [&](const kernels::KernelSpec& k, const VectorXd& known, double scale2) {
      // precision form: mean_0 = -L00^{-1} L01 known, cov_0 = L00^{-1}
      const MatrixXd lambda = (scale2 * kernels::gram_matrix(all, k)).inverse();
      const MatrixXd l00 = lambda.bottomRightCorner(2, 2);
      const MatrixXd l01 = lambda.bottomLeftCorner(2, 6);
      const MatrixXd cov = l00.inverse();
      return std::make_pair(VectorXd(-cov * l01 * known), cov);
    };
    const auto [zm, zc] = conditional(kernels::Gneiting{spec.phi1, spec.phi2}, fit.z(), spec.delta_z * spec.delta_z);
    const auto [bm, bc] = conditional(kernels::SqExp{spec.xi}, fit.beta(0), spec.delta_beta * spec.delta_beta);
    CHECK((pr.z.loc - zm).norm() < 1e-8);
    CHECK((pr.beta[0].loc - bm).norm() < 1e-8);
    const VectorXd yl = x0.col(0).cwiseProduct(bm) + zm;
    CHECK((pr.y.loc - yl).norm() < 1e-8);
    const MatrixXd yc = c * (MatrixXd::Identity(2, 2) + zc + x0.col(0).asDiagonal() * bc * x0.col(0).asDiagonal());
    CHECK((pr.y.scale - yc).norm() < 1e-8);
  }
  CHECK_THROWS_AS(predict_points_continuous(fit, {d.point(0)}, MatrixXd::Zero(1, 2)), Error);
}

TEST_CASE("invariance under time shifts and planar isometries") {
  const TrajectoryDataset d = make_data(8, 9, 2);
  const ContinuousTrajSpec spec = test_spec();
  const ContinuousFit base = fit_continuous(d, spec);
  const SpaceTimePoint probe{3.3, {0.4, 0.9}};
  const MatrixXd x0 = (MatrixXd(1, 2) << 0.5, -0.8).finished();
  const ContinuousPrediction pb = predict_points_continuous(base, {probe}, x0);

  TrajectoryDataset shifted = d;
  shifted.t.array() += 1000.0;
  const ContinuousFit fs = fit_continuous(shifted, spec);
  const ContinuousPrediction ps = predict_points_continuous(fs, {{probe.t + 1000.0, probe.s}}, x0);
  CHECK((fs.posterior.m - base.posterior.m).norm() < 1e-9);
  CHECK(fs.posterior.b_star == doctest::Approx(base.posterior.b_star).epsilon(1e-12));
  CHECK(ps.y.loc(0) == doctest::Approx(pb.y.loc(0)).epsilon(1e-9));
  CHECK(ps.y.scale(0, 0) == doctest::Approx(pb.y.scale(0, 0)).epsilon(1e-9));

  const double th = 0.6435, cs = std::cos(th), sn = std::sin(th);
  auto move = [&](const Point2& s) { return Point2{cs * s.x - sn * s.y + 5.0, sn * s.x + cs * s.y - 2.0}; };
  TrajectoryDataset rotated = d;
  for (auto& s : rotated.s) s = move(s);
  const ContinuousFit fr = fit_continuous(rotated, spec);
  const ContinuousPrediction pr = predict_points_continuous(fr, {{probe.t, move(probe.s)}}, x0);
  CHECK((fr.posterior.m - base.posterior.m).norm() < 1e-9);
  CHECK(fr.log_evidence == doctest::Approx(base.log_evidence).epsilon(1e-12));
  CHECK(pr.y.loc(0) == doctest::Approx(pb.y.loc(0)).epsilon(1e-9));
  CHECK(pr.y.scale(0, 0) == doctest::Approx(pb.y.scale(0, 0)).epsilon(1e-9));
}

TEST_CASE("revisits and duplicates") {
  TrajectoryDataset d = make_data(9, 6, 1);
  d.s[4] = d.s[1];
  const ContinuousFit fit = fit_continuous(d, test_spec());
  CHECK(fit.posterior.jitter == 0.0);
  CHECK(fit.posterior.m.allFinite());

  d.t(4) = d.t(1);
  CHECK_THROWS_AS(fit_continuous(d, test_spec()), Error);
  try {
    fit_continuous(d, test_spec());
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InputValidation);
  }
  // masking the duplicate away is fine
  std::vector<bool> mask(6, true);
  mask[4] = false;
  CHECK(fit_continuous(d, test_spec(), mask).layout.n == 5);
}

TEST_CASE("spec validation") {
  ContinuousTrajSpec s;
  s.xi = 0.0;
  CHECK_THROWS_AS(s.validate(), Error);
  s.xi = 1.0;
  s.phi1 = -1.0;
  CHECK_THROWS_AS(s.validate(), Error);
  TrajectoryDataset d = make_data(1, 3, 1);
  d.y.setConstant(std::nan(""));
  CHECK_THROWS_AS(fit_continuous(d, ContinuousTrajSpec{}), Error);
}

}  // TEST_SUITE
