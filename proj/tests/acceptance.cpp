// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "psld/guidance.hpp"
#include "psld/harness/data.hpp"
#include "psld/harness/metrics.hpp"
#include "psld/harness/train.hpp"
#include "psld/kernel.hpp"
#include "psld/objective.hpp"
#include "psld/recipe.hpp"
#include "psld/sampler.hpp"
#include "psld/score.hpp"

using namespace psld;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const double kGammas[] = {0.0, 0.005, 0.01, 0.02, 0.25};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

double max_moment_err(const kernel::KernelMoments& a, const kernel::KernelMoments& b) {
  double e = std::max({std::abs(a.sxx - b.sxx), std::abs(a.sxm - b.sxm), std::abs(a.smm - b.smm)});
  for (std::size_t i = 0; i < a.mu_x.size(); ++i)
    e = std::max({e, std::abs(a.mu_x[i] - b.mu_x[i]), std::abs(a.mu_m[i] - b.mu_m[i])});
  return e;
}

// 1. closed-form HSM kernel vs RK4 on the moment ODE
Outcome kernel_correctness() {
  double worst = 0.0;
  const std::vector<double> x0{1.0, -0.5}, m0{0.0, 0.0};
  for (double g : kGammas) {
    const PsldParams p = PsldParams::critical(g);
    Eigen::Matrix2d c0 = Eigen::Matrix2d::Zero();
    c0(1, 1) = p.mass() * p.gamma0;
    for (int i = 1; i <= 50; ++i) {
      const double t = i / 50.0;
      worst = std::max(worst, max_moment_err(kernel::kernel_moments_hsm(p, x0, t),
                                             kernel::kernel_moments_ode_oracle(p, x0, m0, c0, t)));
    }
  }
  return {worst <= 1e-6, "max abs err " + fmt("%.2e", worst) + " over 50 t x 5 Gamma"};
}

// 2. moments at t = 1 against p_EQ
Outcome equilibrium() {
  double cov_err = 0.0, gain = 0.0;
  for (double g : kGammas) {
    const PsldParams p = PsldParams::critical(g);
    const kernel::KernelMoments k = kernel::kernel_moments_hsm(p, std::vector<double>{1.0}, 1.0);
    cov_err = std::max({cov_err, std::abs(k.sxx - 1.0), std::abs(k.sxm), std::abs(k.smm - 0.25)});
    gain = std::max(gain, kernel::mean_transition(p, 1.0).cwiseAbs().maxCoeff());
  }
  return {cov_err <= 1e-4, "cov err " + fmt("%.2e", cov_err) + ", mean gain |Phi(1)| " +
                               fmt("%.2e", gain) + " per unit x0"};
}

// 3. Gamma = 0 mean map against the CLD closed form
Outcome cld_reduction() {
  double worst = 0.0;
  const PsldParams p = PsldParams::critical(0.0);
  const double nu_bar = p.mass() * p.nu;
  for (int i = 1; i <= 20; ++i) {
    const double t = i / 20.0;
    const double bb = 0.5 * p.beta.integral(0, t);  // integral of beta_bar = beta / 2
    Eigen::Matrix2d ref;
    ref << 1 + 2 / nu_bar * bb, 4 / (nu_bar * nu_bar) * bb, -bb, 1 - 2 / nu_bar * bb;
    ref *= std::exp(-2.0 / nu_bar * bb);
    worst = std::max(worst, (kernel::mean_transition(p, t) - ref).cwiseAbs().maxCoeff());
  }
  return {worst <= 1e-12, "max abs err " + fmt("%.2e", worst) + " on 20 t"};
}

// 4. Fokker-Planck residual of exp(-H)
Outcome recipe_validity() {
  const recipe::Grid grid{0.02, 6.0};
  const PsldParams p = PsldParams::critical(0.01);
  const recipe::RecipeSpec psld = recipe::instantiate_psld(p, 1);
  const double r_psld = recipe::stationarity_residual(psld, grid);
  const double r_cld = recipe::stationarity_residual(
      recipe::instantiate_cld(1.0, 4.0, BetaSchedule::constant(4.0), 1), grid);
  const double r_vp =
      recipe::stationarity_residual(recipe::instantiate_vp(BetaSchedule::linear(0.1, 20.0), 1), grid);
  Eigen::MatrixXd q = psld.q_mat();
  q(0, 1) = q(1, 0);
  const double r_bad = recipe::stationarity_residual(
      recipe::RecipeSpec::dense(1, 1, psld.d_mat(), q, p.mass_inv, p.beta), grid);
  std::ostringstream os;
  os << "psld " << fmt("%.1e", r_psld) << ", cld " << fmt("%.1e", r_cld) << ", vp "
     << fmt("%.1e", r_vp) << ", corrupted " << fmt("%.3g", r_bad);
  return {r_psld <= 1e-3 && r_cld <= 1e-3 && r_vp <= 1e-3 && r_bad > 0.1, os.str()};
}

// 5. exact-score samplers vs fresh data, permutation energy test at 5%
Outcome sampler_fidelity() {
  const PsldParams p = PsldParams::critical(0.01);
  std::mt19937_64 rng(5);
  const harness::Dataset ds = harness::make_dataset("gmm2", 10, rng);
  const auto score = score::analytic_score(ds.gmm(p), p);
  const std::size_t n = 20000;
  bool ok = true;
  std::ostringstream os;
  for (auto kind : {sampler::Kind::em, sampler::Kind::sscs, sampler::Kind::ode}) {
    sampler::SamplerConfig c;
    c.kind = kind;
    c.nfe = 1000;
    c.ode_rtol = 1e-5;
    const auto run = sampler::sample(p, score, c, n, 2, 100 + static_cast<int>(kind));
    std::vector<double> fresh;
    ds.draw(n, rng, fresh);
    const auto t = harness::permutation_test(run.data_block(), fresh, 2, 199, rng);
    ok = ok && t.p_value > 0.05;
    const char* name = kind == sampler::Kind::em ? "em" : kind == sampler::Kind::sscs ? "sscs" : "ode";
    os << name << " p=" << fmt("%.3f", t.p_value) << " ";
  }
  return {ok, os.str() + "(199 permutations)"};
}

// 6. N = 50, quadratic striding: SSCS beats EM in a one-sided sign test
Outcome low_nfe_ordering() {
  const PsldParams p = PsldParams::critical(0.01);
  std::mt19937_64 rng(6);
  const harness::Dataset ds = harness::make_dataset("gmm2", 10, rng);
  const auto score = score::analytic_score(ds.gmm(p), p);
  sampler::SamplerConfig c;
  c.nfe = 50;
  c.striding = sampler::Striding::quadratic;
  const int seeds = 20;
  const std::size_t n = 100000;
  int wins = 0;
  double em_sum = 0, sscs_sum = 0;
  for (int s = 0; s < seeds; ++s) {
    // shared seed, so both samplers start from the same prior draw
    c.kind = sampler::Kind::em;
    const auto em = sampler::sample(p, score, c, n, 2, s).data_block();
    c.kind = sampler::Kind::sscs;
    const auto ss = sampler::sample(p, score, c, n, 2, s).data_block();
    const double e1 = harness::energy_distance_to_mixture(em, ds.weights, ds.means, ds.covs);
    const double e2 = harness::energy_distance_to_mixture(ss, ds.weights, ds.means, ds.covs);
    wins += e2 < e1;
    em_sum += e1;
    sscs_sum += e2;
  }
  // P(Binomial(20, 1/2) >= wins)
  double pv = 0.0;
  for (int k = wins; k <= seeds; ++k)
    pv += std::exp(std::lgamma(seeds + 1.0) - std::lgamma(k + 1.0) - std::lgamma(seeds - k + 1.0) -
                   seeds * std::log(2.0));
  std::ostringstream os;
  os << wins << "/" << seeds << " wins, sign test p=" << fmt("%.4f", pv) << ", mean ED em "
     << fmt("%.2e", em_sum / seeds) << " sscs " << fmt("%.2e", sscs_sum / seeds);
  return {pv < 0.05, os.str()};
}

// 7. error-scaling coefficients
Outcome error_coefficients() {
  const PsldParams p0 = PsldParams::critical(0.0);
  const PsldParams p1 = PsldParams::critical(0.01);
  PsldParams p4 = PsldParams::critical(4.0);
  p4.nu = 0.0;  // the other critical root for Gamma = 4, M^-1 = 4
  bool ok = true;
  double worst2 = 0.0, worst1 = 1e300;
  for (int i = 0; i <= 200; ++i) {
    const double t = 1e-5 * std::pow(0.05 / 1e-5, i / 200.0);
    const auto a = sampler::error_coefficients(p1, t);
    const auto b = sampler::error_coefficients(p0, t);
    const auto c = sampler::error_coefficients(p4, t);
    ok = ok && std::abs(a.lambda2) < std::abs(b.lambda2) &&
         std::abs(c.lambda1) > 100 * std::abs(a.lambda1);
    worst2 = std::max(worst2, std::abs(a.lambda2) / std::abs(b.lambda2));
    worst1 = std::min(worst1, std::abs(c.lambda1) / std::abs(a.lambda1));
  }
  return {ok, "max |l2(.01)|/|l2(0)| " + fmt("%.4f", worst2) + ", min |l1(4)|/|l1(.01)| " +
                  fmt("%.3g", worst1) + " on 201 t"};
}

bool close_rel(double a, double b) {
  return std::abs(a - b) <= 1e-5 * std::max({std::abs(a), std::abs(b), 1e-6});
}

// central differences against every analytic gradient used in training and guidance
int gradient_checks(const score::Mlp& model, const PsldParams& p, std::mt19937_64& rng,
                    std::size_t& checked) {
  int bad = 0;
  const double h = 1e-5;
  std::vector<double> x0(2 * 16);
  std::normal_distribution<double> g;
  for (double& v : x0) v = 3 * g(rng);
  const auto batch = objective::perturb_hsm(p, x0, 2, objective::draw(16, 4, rng));
  std::vector<double> grad;
  objective::eps_loss_grad(model, batch, grad);
  std::uniform_int_distribution<std::size_t> pick(0, model.num_params() - 1);
  for (int k = 0; k < 64; ++k) {
    const std::size_t i = pick(rng);
    score::Mlp mp = model, mm = model;
    mp.params()[i] += h;
    mm.params()[i] -= h;
    const double fd = (objective::eps_loss(objective::eps_fn(mp), batch).loss -
                       objective::eps_loss(objective::eps_fn(mm), batch).loss) /
                      (2 * h);
    bad += !close_rel(grad[i], fd);
    ++checked;
  }
  // input gradient of a random projection of the output
  score::Mlp::Cache cache;
  std::vector<double> out(batch.z.size()), w(batch.z.size()), dz(batch.z.size());
  for (double& v : w) v = g(rng);
  model.forward(batch.z.data(), batch.t.data(), 16, out.data(), &cache);
  std::vector<double> dtheta(model.num_params(), 0.0);
  model.backward(cache, w.data(), dtheta.data(), dz.data());
  const auto proj = [&](const std::vector<double>& z) {
    std::vector<double> o(z.size());
    model.forward(z.data(), batch.t.data(), 16, o.data());
    double s = 0;
    for (std::size_t i = 0; i < o.size(); ++i) s += w[i] * o[i];
    return s;
  };
  for (std::size_t i = 0; i < batch.z.size(); ++i) {
    std::vector<double> zp = batch.z, zm = batch.z;
    zp[i] += h;
    zm[i] -= h;
    bad += !close_rel(dz[i], (proj(zp) - proj(zm)) / (2 * h));
    ++checked;
  }
  return bad;
}

// 8. trained epsilon model vs the analytic score, same sampler and seed
Outcome training() {
  const PsldParams p = PsldParams::critical(0.01);
  std::mt19937_64 rng(3);
  const harness::Dataset ds = harness::make_dataset("gmm2", 100000, rng);
  score::Mlp init = score::make_score_model(2, 128, 2, 32);
  init.init(11);
  harness::TrainConfig tc;
  tc.iterations = 5000;
  tc.batch_size = 1024;
  tc.learning_rate = 2e-3;
  tc.warmup_steps = 100;
  tc.linear_decay = true;
  tc.ema_rate = 0.99;
  tc.seed = 8;
  const auto r = harness::train_loop(init, ds.x, 2, p, tc);

  sampler::SamplerConfig c;
  c.nfe = 1000;
  const std::size_t n = 10000;
  const auto exact = sampler::sample(p, score::analytic_score(ds.gmm(p), p), c, n, 2, 1).data_block();
  const auto learned = sampler::sample(p, score::learned_score(r.ema, p), c, n, 2, 1).data_block();
  std::vector<double> fresh;
  ds.draw(n, rng, fresh);
  const double e_exact = harness::energy_distance(exact, fresh, 2);
  const double e_learned = harness::energy_distance(learned, fresh, 2);
  const double pop_exact = harness::energy_distance_to_mixture(exact, ds.weights, ds.means, ds.covs);
  const double pop_learned =
      harness::energy_distance_to_mixture(learned, ds.weights, ds.means, ds.covs);

  std::size_t checked = 0;
  const int bad = gradient_checks(r.ema, p, rng, checked);
  std::ostringstream os;
  os << "ED learned " << fmt("%.2e", e_learned) << " vs exact " << fmt("%.2e", e_exact)
     << " (x" << fmt("%.2f", e_learned / e_exact) << "; population x"
     << fmt("%.2f", pop_learned / pop_exact) << "), loss "
     << fmt("%.3f", harness::mean_loss(r, 0, 100)) << " -> "
     << fmt("%.3f", harness::mean_loss(r, 4900, 5000)) << ", gradient checks " << checked - bad
     << "/" << checked;
  return {e_learned <= 3 * e_exact && bad == 0, os.str()};
}

// 9. guidance and imputation with exact scores
Outcome guidance_checks() {
  const PsldParams p = PsldParams::critical(0.01);
  std::mt19937_64 rng(9);
  const harness::Dataset ds = harness::make_dataset("gmm2", 10, rng);
  const auto gmm = ds.gmm(p);
  const auto guided = guidance::guided_score(score::analytic_score(gmm, p),
                                             guidance::gmm_class_grad_fn(gmm, p), 5.0, 0, 2);
  sampler::SamplerConfig c;
  c.nfe = 1000;
  const std::size_t n = 10000;
  const auto run = sampler::sample(p, guided, c, n, 2, 19);
  std::size_t on_target = 0;
  for (std::size_t i = 0; i < n; ++i) on_target += run.z[4 * i] < 0;  // nearer (-3, 0)
  const double frac = static_cast<double>(on_target) / n;

  const harness::Dataset gc = harness::make_dataset("gauss-corr", 10, rng);
  const std::size_t ni = 20000;
  const auto imp = guidance::impute_sample(p, score::analytic_score(gc.gmm(p), p), {1.0, 0.0},
                                           {true, false}, c, ni, 29);
  double m = 0, v = 0;
  for (std::size_t i = 0; i < ni; ++i) m += imp.z[4 * i + 1];
  m /= ni;
  for (std::size_t i = 0; i < ni; ++i) v += (imp.z[4 * i + 1] - m) * (imp.z[4 * i + 1] - m);
  v /= ni - 1;
  const double se = std::sqrt(v / ni);
  const bool imp_ok = std::abs(m - 0.8) <= 3 * se;
  std::ostringstream os;
  os << "guided on target " << fmt("%.4f", frac) << (frac >= 0.99 ? " ok" : " low")
     << "; imputed mean " << fmt("%.4f", m) << " vs 0.8 (3 SE = " << fmt("%.4f", 3 * se) << ")"
     << (imp_ok ? " ok" : " off");
  return {frac >= 0.99 && imp_ok, os.str()};
}

// 10. adaptive ODE cost vs tolerance
Outcome ode_nfe() {
  const PsldParams p = PsldParams::critical(0.01);
  std::mt19937_64 rng(10);
  const harness::Dataset ds = harness::make_dataset("gmm2", 10, rng);
  const auto score = score::analytic_score(ds.gmm(p), p);
  sampler::SamplerConfig c;
  c.kind = sampler::Kind::ode;
  std::vector<double> nfe;
  for (double tol : {1e-5, 1e-4, 1e-3, 1e-2}) {
    c.ode_rtol = tol;
    c.ode_atol = tol;
    nfe.push_back(sampler::sample(p, score, c, 2000, 2, 7).nfe_used);
  }
  bool ok = true;
  for (std::size_t i = 1; i < nfe.size(); ++i) ok = ok && nfe[i] < nfe[i - 1];
  std::ostringstream os;
  os << "mean NFE";
  for (double v : nfe) os << " " << fmt("%.1f", v);
  return {ok, os.str() + " for rtol 1e-5..1e-2"};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"kernel closed form vs RK4 oracle", kernel_correctness},
      {"equilibrium at t = 1", equilibrium},
      {"CLD reduction of the mean map", cld_reduction},
      {"recipe stationarity residuals", recipe_validity},
      {"exact-score samplers vs data (permutation test)", sampler_fidelity},
      {"SSCS beats EM at N = 50", low_nfe_ordering},
      {"error-coefficient trade-off", error_coefficients},
      {"trained model vs analytic score", training},
      {"guidance and imputation", guidance_checks},
      {"ODE NFE decreases with rtol", ode_nfe},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!only.empty() && !only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d: %s  %s: %s [%.1fs]\n", id, o.pass ? "PASS" : "FAIL",
                criteria[k].first, o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed ? 1 : 0;
}
