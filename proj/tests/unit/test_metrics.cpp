#include "doctest.h"

#include "trajstack/error.hpp"
#include "trajstack/metrics.hpp"
#include "trajstack/model.hpp"
#include "trajstack/rng.hpp"
#include "trajstack/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <numbers>
#include <random>
#include <vector>

using namespace trajstack;
using namespace trajstack::metrics;

namespace {

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Parse;
}

MatrixXd random_matrix(Index r, Index c, std::uint64_t seed, double sd = 1.0) {
  auto rng = CounterRng::stream(seed, "test");
  std::normal_distribution<double> g(0.0, sd);
  MatrixXd m(r, c);
  for (Index i = 0; i < r; ++i)
    for (Index j = 0; j < c; ++j) m(i, j) = g(rng);
  return m;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("mean squared errors") {
  VectorXd a(3);
  a << 1.0, -2.0, 0.5;
  CHECK(mspe(a, a) == 0.0);
  VectorXd p = VectorXd::Zero(2), t(2);
  t << 1.0, 3.0;
  CHECK(mspe(p, t) == doctest::Approx(5.0).epsilon(1e-15));
  CHECK(mse_z(p, t) == doctest::Approx(5.0).epsilon(1e-15));

  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const MatrixXd m = random_matrix(37, 2, seed);
    double acc = 0.0;
    for (Index i = 0; i < m.rows(); ++i) acc += std::pow(m(i, 0) - m(i, 1), 2);
    CHECK(mspe(m.col(0), m.col(1)) == doctest::Approx(acc / 37.0).epsilon(1e-13));
  }
  CHECK(kind_of([&] { mspe(VectorXd::Zero(2), VectorXd::Zero(3)); }) == ErrorKind::InputValidation);
  CHECK_THROWS_AS(mspe(VectorXd(), VectorXd()), Error);
}

TEST_CASE("relative mean squared error") {
  VectorXd w(4);
  w << 0.3, -1.2, 2.0, 0.0;
  CHECK(rmse_relative(w, w) == 0.0);
  CHECK(rmse_relative(VectorXd::Zero(4), w) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rmse_relative(VectorXd(2.0 * w), w) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(rmse_relative(1.5, 1.0) == doctest::Approx(0.25));
  CHECK(rmse_relative(0.0, 2.0) == doctest::Approx(1.0));
  CHECK(kind_of([&] { rmse_relative(w, VectorXd::Zero(4)); }) == ErrorKind::DivisionDomain);
  CHECK(kind_of([&] { rmse_relative(1.0, 0.0); }) == ErrorKind::DivisionDomain);
}

TEST_CASE("mean log predictive density") {
  const double at_mean = -0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(at_mean == doctest::Approx(-0.918939).epsilon(1e-6));
  CHECK(mlpd(VectorXd::Constant(5, at_mean)).value == doctest::Approx(at_mean).epsilon(1e-15));
  CHECK(mlpd(VectorXd::Constant(3, std::log(0.37))).value == doctest::Approx(std::log(0.37)).epsilon(1e-15));

  VectorXd v(4);
  v << -1.0, -std::numeric_limits<double>::infinity(), -3.0, -2.0;
  const Mlpd m = mlpd(v);
  CHECK(m.excluded == 1);
  CHECK(m.value == doctest::Approx(-2.0));
  v(0) = std::nan("");
  CHECK_THROWS_AS(mlpd(v), Error);
  CHECK_THROWS_AS(mlpd(VectorXd()), Error);
}

TEST_CASE("mixture predictive log density matches a Monte Carlo average") {
  // Mixture of two normals scored at draws from itself: the MLPD estimates the
  // negative entropy, which a second, larger sample pins down.
  const double w = 0.3, m1 = -1.0, m2 = 2.0, s1 = 0.5, s2 = 1.5;
  auto logpdf = [&](double x) {
    auto n = [](double x, double m, double s) {
      return std::exp(-0.5 * std::pow((x - m) / s, 2)) / (s * std::sqrt(2.0 * std::numbers::pi));
    };
    return std::log(w * n(x, m1, s1) + (1 - w) * n(x, m2, s2));
  };
  auto sample = [&](std::uint64_t seed, Index n) {
    auto rng = CounterRng::stream(seed, "mix");
    std::uniform_real_distribution<double> u;
    std::normal_distribution<double> g;
    VectorXd ld(n);
    for (Index i = 0; i < n; ++i) ld(i) = logpdf(u(rng) < w ? m1 + s1 * g(rng) : m2 + s2 * g(rng));
    return ld;
  };
  const VectorXd small = sample(1, 20000);
  const VectorXd big = sample(2, 400000);
  const double sd = std::sqrt((small.array() - small.mean()).square().sum() / (small.size() - 1));
  CHECK(std::abs(mlpd(small).value - big.mean()) < 3.0 * sd / std::sqrt(20000.0) + 3.0 * sd / std::sqrt(400000.0));
}

TEST_CASE("deviance information criterion") {
  SUBCASE("identical draws") {
    MatrixXd ll(150, 4);
    ll.rowwise() = Eigen::RowVectorXd::LinSpaced(4, -2.0, -0.5);
    const double at = ll.row(0).sum();
    const Dic d = dic(ll, at);
    CHECK(d.p_d == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(d.dic == doctest::Approx(-2.0 * at).epsilon(1e-14));
  }
  SUBCASE("draw order does not matter") {
    MatrixXd ll = random_matrix(200, 6, 3);
    const Dic a = dic(ll, -1.0);
    std::vector<Index> perm(200);
    std::iota(perm.begin(), perm.end(), Index{0});
    auto rng = CounterRng::stream(4, "perm");
    std::shuffle(perm.begin(), perm.end(), rng);
    MatrixXd shuffled(200, 6);
    for (Index s = 0; s < 200; ++s) shuffled.row(s) = ll.row(perm[static_cast<std::size_t>(s)]);
    const Dic b = dic(shuffled, -1.0);
    CHECK(a.dic == doctest::Approx(b.dic).epsilon(1e-13));
  }
  SUBCASE("one observation with known variance") {
    // log p(y | theta) = -log(2 pi)/2 - (y - theta)^2 / 2, so
    // p_D = mean (y - theta_s)^2 - (y - mean theta)^2 = biased var(theta).
    const double y = 0.7;
    const VectorXd theta = random_matrix(500, 1, 5, 0.8).col(0).array() + 0.4;
    MatrixXd ll(500, 1);
    for (Index s = 0; s < 500; ++s) ll(s, 0) = -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::pow(y - theta(s), 2);
    const double tbar = theta.mean();
    const double at = -0.5 * std::log(2.0 * std::numbers::pi) - 0.5 * std::pow(y - tbar, 2);
    const double var = (theta.array() - tbar).square().mean();
    const Dic d = dic(ll, at);
    CHECK(d.p_d == doctest::Approx(var).epsilon(1e-11));
    CHECK(d.dic == doctest::Approx(-2.0 * at + 2.0 * var).epsilon(1e-11));
  }
  CHECK(kind_of([] { dic(MatrixXd::Zero(99, 3), 0.0); }) == ErrorKind::Configuration);
}

TEST_CASE("widely applicable information criterion") {
  SUBCASE("identical draws") {
    MatrixXd ll(10, 3);
    ll.rowwise() = Eigen::RowVectorXd::LinSpaced(3, -3.0, -1.0);
    const Waic w = waic(ll);
    CHECK(w.p_w == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(w.waic == doctest::Approx(12.0).epsilon(1e-13));
  }
  SUBCASE("second implementation and permutation") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      const MatrixXd ll = random_matrix(50, 8, seed, 2.0).array() - 3.0;
      double lppd = 0.0, pw = 0.0;
      for (Index i = 0; i < ll.cols(); ++i) {
        double sum = 0.0, m = 0.0;
        for (Index s = 0; s < ll.rows(); ++s) {
          sum += std::exp(ll(s, i));
          m += ll(s, i);
        }
        m /= ll.rows();
        lppd += std::log(sum / ll.rows());
        double ss = 0.0;
        for (Index s = 0; s < ll.rows(); ++s) ss += (ll(s, i) - m) * (ll(s, i) - m);
        pw += ss / (ll.rows() - 1);
      }
      const Waic w = waic(ll);
      CHECK(w.lppd == doctest::Approx(lppd).epsilon(1e-12));
      CHECK(w.p_w == doctest::Approx(pw).epsilon(1e-12));
      CHECK(w.waic == doctest::Approx(-2.0 * (lppd - pw)).epsilon(1e-12));
      const Waic r = waic(ll.colwise().reverse());
      CHECK(r.waic == doctest::Approx(w.waic).epsilon(1e-13));
    }
  }
  SUBCASE("very negative log likelihoods stay finite") {
    MatrixXd ll = random_matrix(20, 2, 9).array() - 2000.0;
    CHECK(std::isfinite(waic(ll).waic));
  }
  CHECK(kind_of([] { waic(MatrixXd::Zero(1, 3)); }) == ErrorKind::Configuration);
}

TEST_CASE("fit criteria on a fitted trajectory model") {
  simgen::ContinuousSimConfig c;
  c.path_length = 40;
  c.n_train = 40;
  c.n_held_out = 0;
  c.seed = 3;
  const simgen::Simulated sim = simgen::simulate_continuous(c);
  model::Candidate cand;
  cand.family = model::Family::Continuous;
  const auto fit = model::fit(cand, sim.data, sim.train_mask());
  const FitCriteria a = fit_criteria(*fit, 500, 7);
  const FitCriteria b = fit_criteria(*fit, 500, 7);
  CHECK(a.dic.dic == b.dic.dic);
  CHECK(a.waic.waic == b.waic.waic);
  CHECK(std::isfinite(a.dic.dic));
  CHECK(std::isfinite(a.waic.waic));
  CHECK(a.dic.p_d > 0.0);
  CHECK(a.waic.p_w > 0.0);
}

TEST_CASE("information criteria prefer the generating model") {
  int dic_wins = 0, waic_wins = 0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    simgen::DiscreteSimConfig c;
    c.seed = seed;
    const simgen::Simulated sim = simgen::simulate_discrete(c);
    model::Candidate truth;
    truth.family = model::Family::Discrete;
    truth.phi = c.phi;
    truth.nu = c.nu;
    model::Candidate wrong;
    wrong.family = model::Family::Nsdlm;
    const FitCriteria a = fit_criteria(*model::fit(truth, sim.data, sim.train_mask()), 1000, seed);
    const FitCriteria b = fit_criteria(*model::fit(wrong, sim.data, sim.train_mask()), 1000, seed);
    dic_wins += a.dic.dic < b.dic.dic;
    waic_wins += a.waic.waic < b.waic.waic;
  }
  CHECK(dic_wins >= 14);
  CHECK(waic_wins >= 14);
}

}  // TEST_SUITE
