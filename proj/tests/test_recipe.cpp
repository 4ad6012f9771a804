#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "psld/params.hpp"
#include "psld/recipe.hpp"

using namespace psld;
using namespace psld::recipe;

TEST_CASE("critical_nu") {
  CHECK(critical_nu(0.01, 4.0) == doctest::Approx(4.01).epsilon(1e-15));
  CHECK(critical_nu(0.0, 4.0) == 4.0);
  CHECK(critical_nu(0.02, 4.0) == doctest::Approx(4.02).epsilon(1e-15));
  CHECK_THROWS_AS(critical_nu(0.01, 0.0), std::domain_error);
  CHECK_THROWS_AS(critical_nu(0.01, -1.0), std::domain_error);
  for (double g : {0.0, 0.005, 0.25, 3.0}) {
    const double nu = critical_nu(g, 4.0);
    CHECK(std::abs((g - nu) * (g - nu) - 16.0) <= 1e-12);
  }
}

TEST_CASE("validate_recipe on PSLD and broken matrices") {
  const PsldParams p = PsldParams::critical(0.01);
  const ValidationReport r = validate_recipe(instantiate_psld(p, 1));
  CHECK(r.psd_ok);
  CHECK(r.skew_ok);

  Eigen::MatrixXd dneg(2, 2);
  dneg << -1, 0, 0, 1;
  Eigen::MatrixXd zero = Eigen::MatrixXd::Zero(2, 2);
  CHECK_FALSE(validate_recipe(RecipeSpec::dense(1, 1, dneg, zero, 4.0,
                                                BetaSchedule::constant(8)))
                  .psd_ok);

  Eigen::MatrixXd qsym(2, 2);
  qsym << 0, 1, 1, 0;
  Eigen::MatrixXd dpos = Eigen::MatrixXd::Identity(2, 2);
  CHECK_FALSE(validate_recipe(RecipeSpec::dense(1, 1, dpos, qsym, 4.0,
                                                BetaSchedule::constant(8)))
                  .skew_ok);

  CHECK_THROWS_AS(RecipeSpec::dense(1, 1, Eigen::MatrixXd::Identity(3, 3), zero,
                                    4.0, BetaSchedule::constant(8)),
                  std::invalid_argument);
}

TEST_CASE("recipe_drift values") {
  const PsldParams p = PsldParams::critical(0.01);
  const RecipeSpec s = instantiate_psld(p, 1);
  const double z[] = {1.0, 0.0};
  const auto f = recipe_drift(s, z, 0.3);
  CHECK(f[0] == doctest::Approx(-0.04).epsilon(1e-14));
  CHECK(f[1] == doctest::Approx(-4.0).epsilon(1e-14));

  const double zero[] = {0.0, 0.0};
  const auto f0 = recipe_drift(s, zero, 0.3);
  CHECK(f0[0] == 0.0);
  CHECK(f0[1] == 0.0);

  // beta(t) = 0.1 at t = 0 on the linear schedule
  const RecipeSpec vp = instantiate_vp(BetaSchedule::linear(0.1, 20.0), 1);
  const double x[] = {1.0};
  CHECK(recipe_drift(vp, x, 0.0)[0] == doctest::Approx(-0.05).epsilon(1e-14));

  const double bad[] = {1.0};
  CHECK_THROWS_AS(recipe_drift(s, bad, 0.1), std::invalid_argument);
}

TEST_CASE("PSLD drift equals the dense path and the SDE matrix") {
  const PsldParams p = PsldParams::critical(0.02);
  const RecipeSpec blocks = instantiate_psld(p, 3);
  const RecipeSpec dense = RecipeSpec::dense(3, 3, blocks.d_mat(), blocks.q_mat(),
                                             p.mass_inv, p.beta);
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> z(6);
    for (auto& v : z) v = g(rng);
    const auto a = recipe_drift(blocks, z, 0.5);
    const auto b = recipe_drift(dense, z, 0.5);
    const double beta = 8.0;
    for (int i = 0; i < 3; ++i) {
      const double fx = 0.5 * beta * (-p.gamma * z[i] + p.mass_inv * z[3 + i]);
      const double fm = 0.5 * beta * (-z[i] - p.nu * z[3 + i]);
      CHECK(a[i] == doctest::Approx(fx).epsilon(1e-13));
      CHECK(a[3 + i] == doctest::Approx(fm).epsilon(1e-13));
      CHECK(b[i] == doctest::Approx(a[i]).epsilon(1e-13));
      CHECK(b[3 + i] == doctest::Approx(a[3 + i]).epsilon(1e-13));
    }
  }
}

TEST_CASE("property: drift is linear in z") {
  const RecipeSpec s = instantiate_psld(PsldParams::critical(0.01), 2);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g;
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> z(4), y(4), zy(4);
    for (auto& v : z) v = g(rng);
    for (auto& v : y) v = g(rng);
    const double a = 3.0 * g(rng);
    for (int i = 0; i < 4; ++i) zy[i] = a * z[i] + y[i];
    const auto fz = recipe_drift(s, z, 0.1);
    const auto fy = recipe_drift(s, y, 0.1);
    const auto fzy = recipe_drift(s, zy, 0.1);
    for (int i = 0; i < 4; ++i)
      CHECK(fzy[i] == doctest::Approx(a * fz[i] + fy[i]).epsilon(1e-12).scale(1.0));
  }
}

TEST_CASE("instantiations") {
  const PsldParams p = PsldParams::critical(0.01);
  const RecipeSpec s = instantiate_psld(p, 2);
  CHECK(s.d_mat().rows() == 4);
  CHECK(s.q_mat().cols() == 4);
  CHECK(s.d_mat()(1, 1) == doctest::Approx(0.005));
  CHECK(s.d_mat()(3, 3) == doctest::Approx(0.5 * 0.25 * 4.01));
  CHECK(s.q_mat()(0, 2) == -0.5);
  CHECK(s.q_mat()(2, 0) == 0.5);
  CHECK(s.q_mat()(0, 1) == 0.0);

  // G = sqrt(2 beta D) = diag(sqrt(Gamma beta), sqrt(M nu beta))
  const RecipeSpec s1 = instantiate_psld(p, 1);
  CHECK(std::sqrt(2.0 * 8.0 * s1.d_mat()(0, 0)) == doctest::Approx(std::sqrt(0.08)));
  CHECK(std::sqrt(2.0 * 8.0 * s1.d_mat()(1, 1)) == doctest::Approx(std::sqrt(8.02)));

  // CLD as PSLD with Gamma = 0, nu_bar = M nu, beta_bar = beta / 2
  const PsldParams c = PsldParams::critical(0.0);
  const RecipeSpec psld0 = instantiate_psld(c, 2);
  const RecipeSpec cld = instantiate_cld(c.mass() * c.nu, c.mass_inv,
                                         BetaSchedule::constant(4.0), 2);
  for (double t : {0.0, 0.3, 0.9}) {
    const double beta = 8.0;
    CHECK((beta * psld0.d_mat() - cld.beta()(t) * cld.d_mat()).norm() < 1e-14);
    CHECK((beta * psld0.q_mat() - cld.beta()(t) * cld.q_mat()).norm() < 1e-14);
  }
  // explicit CLD matrices: D = beta_bar diag(0, nu_bar), Q = beta_bar [[0,-1],[1,0]]
  const RecipeSpec cld1 = instantiate_cld(1.0, 4.0, BetaSchedule::constant(4.0), 1);
  CHECK(cld1.beta()(0.5) * cld1.d_mat()(1, 1) == doctest::Approx(4.0));
  CHECK(cld1.beta()(0.5) * cld1.q_mat()(0, 1) == doctest::Approx(-4.0));

  for (const RecipeSpec& r : {s, cld, instantiate_vp(BetaSchedule::linear(0.1, 20), 3)})
    CHECK(validate_recipe(r).ok());
}

TEST_CASE("recipe_from_linear_sde recovers PSLD and rejects VE") {
  const PsldParams p = PsldParams::critical(0.01);
  Eigen::MatrixXd f(2, 2);
  f << -p.gamma, p.mass_inv, -1.0, -p.nu;
  f *= 0.5;
  Eigen::MatrixXd gg = Eigen::MatrixXd::Zero(2, 2);
  gg(0, 0) = p.gamma;
  gg(1, 1) = p.mass() * p.nu;
  const RecipeSpec s = recipe_from_linear_sde(1, 1, p.mass_inv, f, gg);
  const RecipeSpec ref = instantiate_psld(p, 1);
  CHECK((s.d_mat() - ref.d_mat()).norm() < 1e-14);
  CHECK((s.q_mat() - ref.q_mat()).norm() < 1e-14);

  // VE: zero drift, growing noise
  CHECK_THROWS_AS(instantiate_ve(0.01, 50.0, 0.5, 1), RecipeError);
  CHECK_THROWS_AS(instantiate_ve(0.01, 50.0, 0.0, 3), RecipeError);
}

TEST_CASE("stationarity residual") {
  const PsldParams p = PsldParams::critical(0.01);
  const Grid g{0.02, 6.0};
  const double r_psld = stationarity_residual(instantiate_psld(p, 1), g);
  CHECK(r_psld <= 1e-3);
  const double r_cld = stationarity_residual(
      instantiate_cld(1.0, 4.0, BetaSchedule::constant(4.0), 1), g);
  CHECK(r_cld <= 1e-3);
  const double r_vp =
      stationarity_residual(instantiate_vp(BetaSchedule::linear(0.1, 20), 1), g);
  CHECK(r_vp <= 1e-3);

  // corrupted Q: symmetric off-diagonal
  const RecipeSpec good = instantiate_psld(p, 1);
  Eigen::MatrixXd q = good.q_mat();
  q(0, 1) = q(1, 0);
  const RecipeSpec bad = RecipeSpec::dense(1, 1, good.d_mat(), q, 4.0, p.beta);
  CHECK(stationarity_residual(bad, g) > 0.1);

  // refinement: residual shrinks when h halves
  const double coarse = stationarity_residual(good, Grid{0.04, 6.0});
  const double fine = stationarity_residual(good, Grid{0.02, 6.0});
  CHECK(fine < coarse / 4.0);

  CHECK_THROWS(stationarity_residual(good, Grid{0.2, 6.0}));
  // p_s has std sqrt(M) = 0.5 in m and 1 in x; [-3, 3] is only 3 std in x
  CHECK_THROWS(stationarity_residual(good, Grid{0.02, 3.0}));
  CHECK_THROWS(stationarity_residual(instantiate_psld(p, 2), g));
}
