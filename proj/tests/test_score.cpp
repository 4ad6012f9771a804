#include <doctest.h>

#include <cmath>
#include <random>
#include <sstream>
#include <vector>

#include "psld/score.hpp"

using namespace psld;
using namespace psld::score;

namespace {

GmmSpec two_component(const PsldParams& p) {
  std::vector<Eigen::VectorXd> mu{Eigen::Vector2d(-1.5, 0.5), Eigen::Vector2d(2.0, -1.0)};
  Eigen::Matrix2d a, b;
  a << 0.6, 0.2, 0.2, 0.4;
  b << 1.2, -0.3, -0.3, 0.5;
  return GmmSpec::from_data(2, {0.3, 0.7}, mu, {a, b}, p.mass() * p.gamma0, {0, 1});
}

bool close_rel(double a, double b, double rel, double floor = 1e-8) {
  return std::abs(a - b) <= rel * std::max({std::abs(a), std::abs(b), floor});
}

}  // namespace

TEST_CASE("stationary single Gaussian has the equilibrium score") {
  const PsldParams p = PsldParams::critical(0.01);
  std::vector<Eigen::VectorXd> mu{Eigen::Vector2d::Zero()};
  Eigen::Matrix2d eq;
  eq << 1.0, 0.0, 0.0, p.mass();
  const GmmSpec g = GmmSpec::from_blocks(1, {1.0}, mu, {eq});
  for (double t : {1e-5, 0.1, 0.5, 1.0}) {
    const auto s = gmm_marginal_score(g, p, t, std::vector<double>{1.0, 0.0});
    CHECK(s[0] == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(std::abs(s[1]) <= 1e-10);
    const auto s2 = gmm_marginal_score(g, p, t, std::vector<double>{0.3, -0.2});
    CHECK(s2[0] == doctest::Approx(-0.3).epsilon(1e-10));
    CHECK(s2[1] == doctest::Approx(0.2 * p.mass_inv).epsilon(1e-10));
  }
}

TEST_CASE("single component equals the Gaussian score") {
  const PsldParams p = PsldParams::critical(0.02);
  std::vector<Eigen::VectorXd> mu{(Eigen::VectorXd(4) << 1.0, -2.0, 0.5, 0.0).finished()};
  Eigen::MatrixXd c = Eigen::MatrixXd::Identity(4, 4) * 0.3;
  c(0, 1) = c(1, 0) = 0.1;
  GmmSpec g;
  g.d = 2;
  g.weights = {1.0};
  g.means = mu;
  g.covs = {c};
  g.validate();
  const double t = 0.2;
  const Eigen::Matrix2d phi = kernel::mean_transition(p, t);
  const Eigen::Matrix2d sig = kernel::covariance_block(p, 0, 0, t);
  Eigen::MatrixXd a(4, 4), s(4, 4);
  a.setZero();
  s.setZero();
  for (int r = 0; r < 2; ++r)
    for (int q = 0; q < 2; ++q)
      for (int i = 0; i < 2; ++i) {
        a(2 * r + i, 2 * q + i) = phi(r, q);
        s(2 * r + i, 2 * q + i) = sig(r, q);
      }
  const Eigen::MatrixXd cov = a * c * a.transpose() + s;
  const Eigen::VectorXd m = a * mu[0];
  const Eigen::VectorXd z = (Eigen::VectorXd(4) << 0.2, 0.1, -0.7, 1.1).finished();
  const Eigen::VectorXd ref = -cov.inverse() * (z - m);
  const auto got = gmm_marginal_score(g, p, t, std::vector<double>(z.data(), z.data() + 4));
  for (int i = 0; i < 4; ++i) CHECK(std::abs(got[i] - ref[i]) <= 1e-12 * std::max(1.0, std::abs(ref[i])));
}

TEST_CASE("mixture score matches finite differences of log p") {
  const PsldParams p = PsldParams::critical(0.01);
  const GmmSpec g = two_component(p);
  std::mt19937_64 rng(21);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> ut(0.01, 1.0);
  for (int rep = 0; rep < 100; ++rep) {
    const double t = ut(rng);
    const MarginalMixture m(g, p, t);
    std::vector<double> z(4);
    for (auto& v : z) v = 1.5 * n01(rng);
    std::vector<double> s(4);
    m.score(z.data(), s.data());
    for (int i = 0; i < 4; ++i) {
      const double h = 1e-5;
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double fd = (m.log_density(zp.data()) - m.log_density(zm.data())) / (2 * h);
      CHECK(close_rel(s[i], fd, 1e-6, 1e-3));
    }
  }
}

TEST_CASE("mixture score approaches the equilibrium score at t = 1") {
  const PsldParams p = PsldParams::critical(0.01);
  const GmmSpec g = two_component(p);
  for (double x : {-2.0, 0.0, 1.5})
    for (double m : {-1.0, 0.5}) {
      const auto s = gmm_marginal_score(g, p, 1.0, std::vector<double>{x, -x, m, 0.0});
      CHECK(std::abs(s[0] + x) <= 5e-2);
      CHECK(std::abs(s[2] + p.mass_inv * m) <= 5e-2);
    }
}

TEST_CASE("stationary data gives a time-invariant score") {
  PsldParams p = PsldParams::critical(0.01);
  p.gamma0 = 1.0;
  const GmmSpec g = GmmSpec::from_data(1, {1.0}, {Eigen::VectorXd::Zero(1)},
                                       {Eigen::MatrixXd::Identity(1, 1)}, p.mass());
  const std::vector<double> z{0.8, -0.4};
  const auto s0 = gmm_marginal_score(g, p, 1e-3, z);
  for (double t : {0.01, 0.3, 0.9}) {
    const auto s = gmm_marginal_score(g, p, t, z);
    CHECK(s[0] == doctest::Approx(s0[0]).epsilon(1e-8));
    CHECK(s[1] == doctest::Approx(s0[1]).epsilon(1e-8));
  }
}

TEST_CASE("far-away states do not underflow") {
  const PsldParams p = PsldParams::critical(0.01);
  const GmmSpec g = two_component(p);
  const auto s = gmm_marginal_score(g, p, 1e-3, std::vector<double>{300, -400, 50, 80});
  for (double v : s) CHECK(std::isfinite(v));
}

TEST_CASE("score_from_eps") {
  kernel::CholBlock c;
  c.it_xx = 1.0;
  c.it_xm = 0.0;
  c.it_mm = 2.0;
  std::vector<double> out(2);
  score_from_eps(std::vector<double>{0.0, 0.0}, c, out);
  CHECK(out[0] == 0.0);
  CHECK(out[1] == 0.0);
  score_from_eps(std::vector<double>{1.0, 1.0}, c, out);
  CHECK(out[0] == -1.0);
  CHECK(out[1] == -2.0);

  // with the true noise the parameterization reproduces -Sigma^-1 (z - mu)
  const PsldParams p = PsldParams::critical(0.01);
  const std::vector<double> x0{0.4, -1.2};
  const double t = 0.05;
  const std::vector<double> eps{0.3, -1.1, 0.7, 0.2};
  const auto ps = kernel::perturb_sample(p, x0, t, eps);
  const auto k = kernel::kernel_moments_hsm(p, x0, t);
  const auto ch = kernel::chol_block(k, kernel::kCholeskyEpsilon);
  std::vector<double> s(4);
  score_from_eps(eps, ch, s);
  Eigen::Matrix2d cov = k.cov();
  cov(0, 0) += kernel::kCholeskyEpsilon;
  cov(1, 1) += kernel::kCholeskyEpsilon;
  const Eigen::Matrix2d prec = cov.inverse();
  for (int i = 0; i < 2; ++i) {
    const double dx = ps.z[i] - k.mu_x[i], dm = ps.z[2 + i] - k.mu_m[i];
    const double rx = -(prec(0, 0) * dx + prec(0, 1) * dm);
    const double rm = -(prec(1, 0) * dx + prec(1, 1) * dm);
    CHECK(s[i] == doctest::Approx(rx).epsilon(1e-10));
    CHECK(s[2 + i] == doctest::Approx(rm).epsilon(1e-10));
  }
}

TEST_CASE("network forward contracts") {
  Mlp m = make_score_model(2);
  m.init(3);
  CHECK(m.shape().n_out == 4);
  std::vector<double> z{0.1, 0.2, 0.3, 0.4, -1, -2, -3, -4};
  std::vector<double> t{0.5, 0.01};
  std::vector<double> out(8, 7.0);
  m.forward(z.data(), t.data(), 2, out.data());
  for (double v : out) CHECK(v == 0.0);

  m.init(3, false);
  std::vector<double> a(8), b(8);
  m.forward(z.data(), t.data(), 2, a.data());
  m.forward(z.data(), t.data(), 2, b.data());
  CHECK(a == b);
  bool nonzero = false;
  for (double v : a) nonzero |= v != 0.0;
  CHECK(nonzero);

  // batching does not change per-row results
  std::vector<double> single(4);
  m.forward(z.data() + 4, t.data() + 1, 1, single.data());
  for (int i = 0; i < 4; ++i) CHECK(single[i] == doctest::Approx(a[4 + i]).epsilon(1e-14));
}

TEST_CASE("network gradients match finite differences") {
  Mlp::Shape s;
  s.n_in = 2;
  s.n_out = 2;
  s.hidden = 3;
  s.hidden_layers = 1;
  s.n_freq = 2;
  Mlp m(s);
  m.init(5, false);
  std::mt19937_64 rng(9);
  std::normal_distribution<double> g;
  for (double& v : m.params()) v += 0.1 * g(rng);

  const std::size_t batch = 3;
  std::vector<double> z(batch * 2), t{0.2, 0.5, 0.9}, w(batch * 2);
  for (auto& v : z) v = g(rng);
  for (auto& v : w) v = g(rng);
  // loss = sum w . out
  const auto loss = [&](const Mlp& net) {
    std::vector<double> o(batch * 2);
    net.forward(z.data(), t.data(), batch, o.data());
    double l = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) l += w[i] * o[i];
    return l;
  };
  Mlp::Cache cache;
  std::vector<double> o(batch * 2);
  m.forward(z.data(), t.data(), batch, o.data(), &cache);
  std::vector<double> grad(m.num_params(), 0.0), dz(batch * 2);
  m.backward(cache, w.data(), grad.data(), dz.data());

  const double h = 1e-4;
  for (std::size_t i = 0; i < m.num_params(); ++i) {
    Mlp mp = m, mm = m;
    mp.params()[i] += h;
    mm.params()[i] -= h;
    const double fd = (loss(mp) - loss(mm)) / (2 * h);
    CHECK(close_rel(grad[i], fd, 1e-5));
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double keep = z[i];
    z[i] = keep + h;
    const double lp = loss(m);
    z[i] = keep - h;
    const double lm = loss(m);
    z[i] = keep;
    CHECK(close_rel(dz[i], (lp - lm) / (2 * h), 1e-5));
  }

  std::vector<double> zero(batch * 2, 0.0), g0(m.num_params(), 0.0);
  m.backward(cache, zero.data(), g0.data());
  for (double v : g0) CHECK(v == 0.0);
}

TEST_CASE("squared-output gradient vanishes at a zero head") {
  Mlp m = make_score_model(1, 16, 2, 4);
  m.init(1, true);
  std::vector<double> z{0.3, -0.2}, t{0.4}, out(2);
  Mlp::Cache cache;
  m.forward(z.data(), t.data(), 1, out.data(), &cache);
  // d ||out||^2 / d out = 2 out = 0
  std::vector<double> up{2 * out[0], 2 * out[1]};
  std::vector<double> grad(m.num_params(), 0.0);
  m.backward(cache, up.data(), grad.data());
  for (double v : grad) CHECK(v == 0.0);
}

TEST_CASE("checkpoint round trip is exact") {
  Mlp m = make_score_model(2, 8, 2, 3);
  m.init(11, false);
  std::stringstream ss;
  m.save(ss);
  const Mlp r = Mlp::load(ss);
  CHECK(r.params() == m.params());
  CHECK(r.shape().hidden == 8);
  CHECK(r.shape().n_freq == 3);

  std::stringstream bad("psld-mlp 2\n");
  CHECK_THROWS(Mlp::load(bad));
  std::stringstream shortp("psld-mlp 1\n2 2 3 1 1 1000 silu\n5\n1\n");
  CHECK_THROWS(Mlp::load(shortp));
}

TEST_CASE("learned score wraps the network through L^-T") {
  const PsldParams p = PsldParams::critical(0.01);
  Mlp m = make_score_model(1, 4, 1, 2);
  m.init(2, true);
  // bias-only head: eps_theta == (1, 1)
  m.params()[m.num_params() - 2] = 1.0;
  m.params()[m.num_params() - 1] = 1.0;
  const ScoreFn f = learned_score(m, p);
  std::vector<double> z{0.5, 0.5}, s(2);
  const double t = 0.3;
  f(t, z.data(), 1, s.data());
  const auto c = kernel::chol_block(kernel::kernel_moments_hsm(p, std::vector<double>{0.0}, t));
  CHECK(s[0] == doctest::Approx(-(c.it_xx + c.it_xm)));
  CHECK(s[1] == doctest::Approx(-c.it_mm));
}
