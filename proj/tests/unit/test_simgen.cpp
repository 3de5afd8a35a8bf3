#include "doctest.h"

#include "trajstack/error.hpp"
#include "trajstack/kernels.hpp"
#include "trajstack/model.hpp"
#include "trajstack/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <set>

using namespace trajstack;
using namespace trajstack::simgen;

TEST_SUITE("simgen") {

TEST_CASE("random walk trajectories") {
  const auto a = random_walk_trajectory(20, 5);
  const auto b = random_walk_trajectory(20, 5);
  REQUIRE(a.size() == 20);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].x == b[i].x);
    CHECK(a[i].y == b[i].y);
  }
  const auto one = random_walk_trajectory(1, 5);
  REQUIRE(one.size() == 1);
  CHECK(one[0].x == a[0].x);
  CHECK(one[0].y == a[0].y);
  CHECK(random_walk_trajectory(20, 6)[0].x != a[0].x);

  const Index T = 10000;
  const auto w = random_walk_trajectory(T, 11);
  for (int coord = 0; coord < 2; ++coord) {
    VectorXd inc(T);
    for (Index t = 0; t < T; ++t) {
      const auto& cur = w[static_cast<std::size_t>(t)];
      const double prev = t == 0 ? 0.0 : (coord == 0 ? w[static_cast<std::size_t>(t - 1)].x : w[static_cast<std::size_t>(t - 1)].y);
      inc(t) = (coord == 0 ? cur.x : cur.y) - prev;
    }
    const double var = (inc.array() - inc.mean()).square().sum() / (T - 1);
    CHECK(std::abs(var - 1.0) < 0.05);
  }
  CHECK_THROWS_AS(random_walk_trajectory(0, 1), Error);
}

TEST_CASE("continuous-time data along a path") {
  ContinuousSimConfig c;
  c.seed = 2;
  SUBCASE("sizes for the in-fill grid") {
    for (Index n = 20; n <= 200; n += 20) {
      c.n_train = n;
      const Simulated s = simulate_continuous(c);
      CHECK(s.data.size() == n + 100);
      CHECK(static_cast<Index>(s.train.size()) == n);
      CHECK(static_cast<Index>(s.held_out.size()) == 100);
      std::set<Index> tr(s.train.begin(), s.train.end());
      for (Index h : s.held_out) CHECK(tr.count(h) == 0);
      CHECK(std::is_sorted(s.data.t.data(), s.data.t.data() + s.data.size()));
      CHECK(s.data.covariates() == 2);
    }
  }
  SUBCASE("larger n only adds training rows") {
    c.n_train = 40;
    const Simulated small = simulate_continuous(c);
    c.n_train = 120;
    const Simulated big = simulate_continuous(c);
    auto times = [](const Simulated& s, const std::vector<Index>& rows) {
      std::set<double> out;
      for (Index r : rows) out.insert(s.data.t(r));
      return out;
    };
    CHECK(times(small, small.held_out) == times(big, big.held_out));
    const auto st = times(small, small.train), bt = times(big, big.train);
    CHECK(std::includes(bt.begin(), bt.end(), st.begin(), st.end()));
    // The same space-time point carries the same draws in both datasets.
    for (Index r = 0; r < small.data.size(); ++r) {
      const double t = small.data.t(r);
      const Index k = std::find(big.data.t.data(), big.data.t.data() + big.data.size(), t) - big.data.t.data();
      REQUIRE(k < big.data.size());
      CHECK(big.data.y(k) == small.data.y(r));
      CHECK(big.truth.z(k) == small.truth.z(r));
    }
  }
  SUBCASE("no noise gives the signal") {
    c.sigma = 0.0;
    c.n_train = 50;
    const Simulated s = simulate_continuous(c);
    for (Index i = 0; i < s.data.size(); ++i) {
      CHECK(s.data.y(i) == s.truth.signal(i));
      CHECK(s.truth.signal(i) == doctest::Approx(s.data.x.row(i).dot(s.truth.beta.row(i)) + s.truth.z(i)).epsilon(1e-14));
    }
  }
  SUBCASE("configuration errors") {
    c.n_train = 250;
    CHECK_THROWS_AS(simulate_continuous(c), Error);
    c.n_train = 10;
    c.phi1 = -1.0;
    CHECK_THROWS_AS(simulate_continuous(c), Error);
  }
}

TEST_CASE("latent covariance matches the space-time kernel") {
  ContinuousSimConfig c;
  c.path_length = 2;
  c.n_train = 2;
  c.n_held_out = 0;
  c.p = 1;
  c.delta_z = 1.3;
  c.path = {Point2{0.0, 0.0}, Point2{0.8, -0.3}};
  const int R = 500;
  double s00 = 0.0, s01 = 0.0, s11 = 0.0, sb = 0.0;
  for (int r = 0; r < R; ++r) {
    c.seed = static_cast<std::uint64_t>(1000 + r);
    const Simulated s = simulate_continuous(c);
    s00 += s.truth.z(0) * s.truth.z(0);
    s01 += s.truth.z(0) * s.truth.z(1);
    s11 += s.truth.z(1) * s.truth.z(1);
    sb += s.truth.beta(0, 0) * s.truth.beta(1, 0);
  }
  const double v = c.delta_z * c.delta_z;
  const double k01 = v * kernels::gneiting_corr({1.0, c.path[0]}, {2.0, c.path[1]}, c.phi1, c.phi2);
  // Var of a product of zero-mean normals: s_aa s_bb + s_ab^2.
  CHECK(std::abs(s00 / R - v) < 3.0 * std::sqrt(2.0 * v * v / R));
  CHECK(std::abs(s11 / R - v) < 3.0 * std::sqrt(2.0 * v * v / R));
  CHECK(std::abs(s01 / R - k01) < 3.0 * std::sqrt((v * v + k01 * k01) / R));
  const double kb = kernels::sqexp_corr(1.0, 2.0, c.xi);
  CHECK(std::abs(sb / R - kb) < 3.0 * std::sqrt((1.0 + kb * kb) / R));
}

TEST_CASE("discrete-time data") {
  DiscreteSimConfig c;
  c.seed = 4;
  const Simulated s = simulate_discrete(c);
  CHECK(s.data.size() == 50);
  CHECK(s.truth.beta.rows() == 50);
  CHECK(s.truth.beta.cols() == 2);
  CHECK(static_cast<Index>(s.train.size()) == 50);
  c.T = 70;
  CHECK(simulate_discrete(c).data.size() == 70);
  c.T = 50;

  const Simulated again = simulate_discrete(c);
  CHECK(again.data.y == s.data.y);
  CHECK(again.truth.z == s.truth.z);

  SUBCASE("no latent innovation keeps the initial field") {
    c.delta_z = 0.0;
    c.delta_beta = 0.0;
    const Simulated f = simulate_discrete(c);
    // Each epoch reads the fixed initial field at its own location, so the
    // coefficients are constant and z depends on the location only.
    for (Index t = 1; t < f.data.size(); ++t) CHECK(f.truth.beta.row(t) == f.truth.beta.row(0));
    for (Index a = 0; a < f.data.size(); ++a)
      for (Index b = 0; b < a; ++b)
        if (f.data.s[static_cast<std::size_t>(a)].x == f.data.s[static_cast<std::size_t>(b)].x) CHECK(f.truth.z(a) == f.truth.z(b));
    // The initial draws do not depend on the innovation scales.
    CHECK(f.data.x == s.data.x);
  }
}

TEST_CASE("dynamic linear model panel") {
  DlmSimConfig c;
  c.seed = 8;
  const DlmPanel p = simulate_dlm(c);
  CHECK(p.y.size() == 20);
  CHECK(p.locations.size() == 50);
  for (const auto& s : p.locations) {
    CHECK(s.x >= 0.0);
    CHECK(s.x <= 1.0);
    CHECK(s.y >= 0.0);
    CHECK(s.y <= 1.0);
  }
  for (std::size_t t = 0; t < p.y.size(); ++t) {
    CHECK(p.x[t].rows() == 50);
    CHECK(p.x[t].cols() == 2);
    CHECK(p.beta[t].size() == 2);
    CHECK(p.z[t].size() == 50);
  }
  c.sigma = 0.0;
  const DlmPanel q = simulate_dlm(c);
  for (std::size_t t = 1; t < q.y.size(); ++t) {
    CHECK(q.beta[t] == q.beta[0]);
    CHECK(q.z[t] == q.z[0]);
    CHECK((q.y[t] - (q.x[t] * q.beta[t] + q.z[t])).norm() == 0.0);
  }
}

TEST_CASE("generated data have finite model evidence") {
  ContinuousSimConfig cc;
  cc.path_length = 60;
  cc.n_train = 40;
  cc.n_held_out = 20;
  const Simulated cs = simulate_continuous(cc);
  const Simulated ds = simulate_discrete(DiscreteSimConfig{});
  for (auto family : {model::Family::Continuous, model::Family::Discrete, model::Family::Nsdlm}) {
    model::Candidate cand;
    cand.family = family;
    CHECK(std::isfinite(model::fit(cand, cs.data, cs.train_mask())->log_evidence()));
    CHECK(std::isfinite(model::fit(cand, ds.data, ds.train_mask())->log_evidence()));
  }
}

}  // TEST_SUITE
