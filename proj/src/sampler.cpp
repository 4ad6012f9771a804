#include "psld/sampler.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>
#include <string>

#include "psld/errors.hpp"
#include "psld/kernel.hpp"

namespace psld::sampler {

void SamplerConfig::validate() const {
  if (nfe < 1) throw ConfigError("sampler needs at least one step");
  if (!(eps_end > 0.0 && eps_end < kHorizon))
    throw ConfigError("eps_end must lie in (0, 1)");
  if (!(ode_rtol > 0.0) || !(ode_atol > 0.0))
    throw ConfigError("ODE tolerances must be positive");
  if (max_ode_steps < 1) throw ConfigError("max_ode_steps must be positive");
  if (block == 0 || ode_block == 0) throw ConfigError("block sizes must be positive");
}

std::vector<double> SampleRun::data_block() const {
  std::vector<double> x(n * d);
  for (std::size_t i = 0; i < n; ++i)
    std::copy(&z[i * 2 * d], &z[i * 2 * d] + d, &x[i * d]);
  return x;
}

void reverse_drift(const PsldParams& p, const double* z, const double* s,
                   std::size_t d, double t, double* out) {
  const double hb = 0.5 * p.beta(t);
  const double mnu = p.mass() * p.nu;
  for (std::size_t i = 0; i < d; ++i) {
    const double x = z[i], m = z[d + i];
    out[i] = hb * (p.gamma * x - p.mass_inv * m + 2.0 * p.gamma * s[i]);
    out[d + i] = hb * (x + p.nu * m + 2.0 * mnu * s[d + i]);
  }
}

void flow_drift(const PsldParams& p, const double* z, const double* s, std::size_t d,
                double t, double* out) {
  const double hb = 0.5 * p.beta(t);
  const double mnu = p.mass() * p.nu;
  for (std::size_t i = 0; i < d; ++i) {
    const double x = z[i], m = z[d + i];
    out[i] = hb * (p.gamma * x - p.mass_inv * m + p.gamma * s[i]);
    out[d + i] = hb * (x + p.nu * m + mnu * s[d + i]);
  }
}

std::vector<double> quadratic_raw(int n) {
  if (n < 1) throw std::invalid_argument("grid needs at least one step");
  std::vector<double> g(static_cast<std::size_t>(n) + 1);
  for (int i = 0; i <= n; ++i) {
    const double r = static_cast<double>(i) / n;
    g[static_cast<std::size_t>(i)] = r * r;
  }
  return g;
}

// Quadratic striding places the raw points (i/N)^2 in forward time, measured
// from the data end and scaled onto [eps_end, T]; steps are therefore short
// near the data, where the score changes fastest. Read in reverse time this
// is tau_i = (T - eps_end) (1 - ((N - i)/N)^2).
std::vector<double> timestep_grid(const SamplerConfig& c) {
  c.validate();
  const double span = kHorizon - c.eps_end;
  const int n = c.nfe;
  std::vector<double> tau(static_cast<std::size_t>(n) + 1);
  if (c.striding == Striding::uniform) {
    for (int i = 0; i <= n; ++i) tau[static_cast<std::size_t>(i)] = span * i / n;
  } else {
    const std::vector<double> raw = quadratic_raw(n);
    for (int i = 0; i <= n; ++i)
      tau[static_cast<std::size_t>(i)] = span * (1.0 - raw[static_cast<std::size_t>(n - i)]);
  }
  tau.front() = 0.0;
  tau.back() = span;
  return tau;
}

// With N' = [[a, -M^-1/2], [1/2, -a]] (nilpotent under critical damping) the
// flow is Phi' = e^{-lambda B}(I + B N'), lambda = (G + nu)/4, and from a
// point mass the covariance is Sigma_eq - Phi' Sigma_eq Phi'^T. B is the
// (positive) integral of beta over the forward-time image of the interval.
AnalyticStep sscs_analytic_halfstep(const PsldParams& p, double tau, double h) {
  p.validate();
  if (!p.is_critical())
    throw std::domain_error("analytic SSCS step needs critical damping");
  if (!(h >= 0.0) || !(tau >= 0.0) || tau + h > kHorizon + 1e-12)
    throw std::domain_error("analytic step outside the time horizon");
  const double t_hi = kHorizon - tau;
  const double t_lo = std::max(0.0, t_hi - h);
  const double b = p.beta.integral(t_lo, t_hi);
  const double a = 0.25 * (p.nu - p.gamma);
  const double mi = p.mass_inv;
  const double mass = p.mass();
  const double lam = 0.25 * (p.gamma + p.nu);
  const double e1 = std::exp(-lam * b);
  const double e2 = std::exp(-2.0 * lam * b);
  const double relax = -std::expm1(-2.0 * lam * b);

  AnalyticStep s;
  s.mean_map << 1.0 + a * b, -0.5 * mi * b, 0.5 * b, 1.0 - a * b;
  s.mean_map *= e1;
  s.cov(0, 0) = relax + e2 * (-2.0 * a * b - 0.5 * mi * b * b);
  s.cov(0, 1) = s.cov(1, 0) = -a * b * b * e2;
  s.cov(1, 1) = mass * relax + e2 * (2.0 * a * mass * b - 0.5 * b * b);
  return s;
}

void sample_prior(const PsldParams& p, std::size_t d, std::mt19937_64& rng, double* z) {
  std::normal_distribution<double> g;
  const double sm = std::sqrt(p.mass());
  for (std::size_t i = 0; i < d; ++i) z[i] = g(rng);
  for (std::size_t i = 0; i < d; ++i) z[d + i] = sm * g(rng);
}

std::mt19937_64 block_rng(std::uint64_t seed, std::uint64_t b) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(b), static_cast<std::uint32_t>(b >> 32),
                    0x5053u};
  return std::mt19937_64(seq);
}

namespace {

void check_finite(const std::vector<double>& z, const char* who, long step) {
  for (double v : z)
    if (!std::isfinite(v))
      throw NumericError(std::string(who) + ": non-finite state at step " +
                         std::to_string(step));
}

struct Block {
  std::size_t begin, count;
};

template <class Body>
SampleRun run_blocks(const PsldParams& p, const SamplerConfig& c, std::size_t n,
                     std::size_t d, std::size_t block, std::uint64_t seed, Body&& body) {
  p.validate();
  c.validate();
  if (d == 0) throw std::invalid_argument("dimension must be positive");
  SampleRun run;
  run.n = n;
  run.d = d;
  run.z.resize(n * 2 * d);
  double nfe_sum = 0.0;
  std::size_t blocks = 0;
  for (std::size_t b0 = 0, bi = 0; b0 < n; b0 += block, ++bi) {
    const Block blk{b0, std::min(block, n - b0)};
    std::mt19937_64 rng = block_rng(seed, bi);
    std::vector<double> z(blk.count * 2 * d);
    for (std::size_t i = 0; i < blk.count; ++i) sample_prior(p, d, rng, &z[i * 2 * d]);
    const std::size_t calls = body(z, rng, blk, run, bi == 0);
    run.score_calls += calls;
    nfe_sum += static_cast<double>(calls);
    ++blocks;
    std::copy(z.begin(), z.end(), &run.z[blk.begin * 2 * d]);
  }
  run.nfe_used = blocks ? nfe_sum / static_cast<double>(blocks) : 0.0;
  return run;
}

void record(SampleRun& run, bool first, double tau, const std::vector<double>& z,
            std::size_t d) {
  if (!first) return;
  run.trajectory_tau.push_back(tau);
  run.trajectory.emplace_back(z.begin(), z.begin() + static_cast<long>(2 * d));
}

// One noise-free reverse-SDE step of size eps_end at t = eps_end.
std::size_t denoise(const PsldParams& p, const score::ScoreFn& score, double eps,
                    std::vector<double>& z, std::size_t count, std::size_t d) {
  const std::size_t w = 2 * d;
  std::vector<double> s(z.size()), f(w);
  score(eps, z.data(), count, s.data());
  for (std::size_t i = 0; i < count; ++i) {
    reverse_drift(p, &z[i * w], &s[i * w], d, eps, f.data());
    for (std::size_t j = 0; j < w; ++j) z[i * w + j] += eps * f[j];
  }
  return 1;
}

}  // namespace

SampleRun em_sample(const PsldParams& p, const score::ScoreFn& score,
                    const SamplerConfig& c, std::size_t n, std::size_t d,
                    std::uint64_t seed) {
  const std::vector<double> tau = timestep_grid(c);
  const std::size_t w = 2 * d;
  const double mnu = p.mass() * p.nu;
  return run_blocks(p, c, n, d, c.block, seed,
                    [&](std::vector<double>& z, std::mt19937_64& rng, const Block& blk,
                        SampleRun& run, bool first) {
    std::normal_distribution<double> g;
    std::vector<double> s(z.size()), f(w);
    std::size_t calls = 0;
    if (c.record_trajectory) record(run, first, 0.0, z, d);
    for (int k = 0; k < c.nfe; ++k) {
      const double dt = tau[k + 1] - tau[k];
      const double t = kHorizon - tau[k];
      score(t, z.data(), blk.count, s.data());
      ++calls;
      const double bt = p.beta(t);
      const double nx = std::sqrt(p.gamma * bt * dt), nm = std::sqrt(mnu * bt * dt);
      for (std::size_t i = 0; i < blk.count; ++i) {
        double* zi = &z[i * w];
        reverse_drift(p, zi, &s[i * w], d, t, f.data());
        for (std::size_t j = 0; j < d; ++j) zi[j] += dt * f[j] + nx * g(rng);
        for (std::size_t j = d; j < w; ++j) zi[j] += dt * f[j] + nm * g(rng);
      }
      check_finite(z, "em", k);
      if (c.record_trajectory) record(run, first, tau[k + 1], z, d);
    }
    if (c.denoise_last) {
      calls += denoise(p, score, c.eps_end, z, blk.count, d);
      check_finite(z, "em denoise", c.nfe);
    }
    return calls;
  });
}

SampleRun sscs_sample(const PsldParams& p, const score::ScoreFn& score,
                      const SamplerConfig& c, std::size_t n, std::size_t d,
                      std::uint64_t seed) {
  if (!p.is_critical()) throw std::domain_error("SSCS needs critical damping");
  const std::vector<double> tau = timestep_grid(c);
  const std::size_t w = 2 * d;
  const double mnu = p.mass() * p.nu;
  return run_blocks(p, c, n, d, c.block, seed,
                    [&](std::vector<double>& z, std::mt19937_64& rng, const Block& blk,
                        SampleRun& run, bool first) {
    std::normal_distribution<double> g;
    std::vector<double> s(z.size());
    std::size_t calls = 0;

    const auto analytic = [&](double tau0, double h) {
      const AnalyticStep a = sscs_analytic_halfstep(p, tau0, h);
      // Cholesky of the 2x2 block; the xx entry vanishes when Gamma = 0
      const double lxx = std::sqrt(std::max(0.0, a.cov(0, 0)));
      double lxm = 0.0, lmm = std::sqrt(std::max(0.0, a.cov(1, 1)));
      if (lxx > 0.0) {
        lxm = a.cov(0, 1) / lxx;
        lmm = std::sqrt(std::max(0.0, a.cov(1, 1) - lxm * lxm));
      }
      const Eigen::Matrix2d& m = a.mean_map;
      for (std::size_t i = 0; i < blk.count; ++i) {
        double* zi = &z[i * w];
        for (std::size_t j = 0; j < d; ++j) {
          const double x = zi[j], v = zi[d + j];
          const double e1 = g(rng), e2 = g(rng);
          zi[j] = m(0, 0) * x + m(0, 1) * v + lxx * e1;
          zi[d + j] = m(1, 0) * x + m(1, 1) * v + lxm * e1 + lmm * e2;
        }
      }
    };

    if (c.record_trajectory) record(run, first, 0.0, z, d);
    for (int k = 0; k < c.nfe; ++k) {
      const double dt = tau[k + 1] - tau[k];
      const double half = 0.5 * dt;
      analytic(tau[k], half);
      const double ts = c.sscs_score_time == ScoreTime::midpoint ? kHorizon - tau[k] - half
                                                                 : kHorizon - tau[k];
      score(ts, z.data(), blk.count, s.data());
      ++calls;
      const double bdt = p.beta(ts) * dt;
      for (std::size_t i = 0; i < blk.count; ++i) {
        double* zi = &z[i * w];
        const double* si = &s[i * w];
        for (std::size_t j = 0; j < d; ++j) {
          zi[j] += bdt * p.gamma * (zi[j] + si[j]);
          zi[d + j] += bdt * (p.nu * zi[d + j] + mnu * si[d + j]);
        }
      }
      analytic(tau[k] + half, half);
      check_finite(z, "sscs", k);
      if (c.record_trajectory) record(run, first, tau[k + 1], z, d);
    }
    if (c.denoise_last) {
      calls += denoise(p, score, c.eps_end, z, blk.count, d);
      check_finite(z, "sscs denoise", c.nfe);
    }
    return calls;
  });
}

namespace {

// Dormand-Prince 5(4) tableau.
constexpr double kC[7] = {0.0, 1.0 / 5, 3.0 / 10, 4.0 / 5, 8.0 / 9, 1.0, 1.0};
constexpr double kA[7][6] = {
    {},
    {1.0 / 5},
    {3.0 / 40, 9.0 / 40},
    {44.0 / 45, -56.0 / 15, 32.0 / 9},
    {19372.0 / 6561, -25360.0 / 2187, 64448.0 / 6561, -212.0 / 729},
    {9017.0 / 3168, -355.0 / 33, 46732.0 / 5247, 49.0 / 176, -5103.0 / 18656},
    {35.0 / 384, 0.0, 500.0 / 1113, 125.0 / 192, -2187.0 / 6784, 11.0 / 84}};
// fifth-order weights are row 6 of kA; difference to the embedded fourth order
constexpr double kE[7] = {71.0 / 57600,  0.0, -71.0 / 16695, 71.0 / 1920,
                          -17253.0 / 339200, 22.0 / 525, -1.0 / 40};

}  // namespace

SampleRun ode_sample(const PsldParams& p, const score::ScoreFn& score,
                     const SamplerConfig& c, std::size_t n, std::size_t d,
                     std::uint64_t seed) {
  const std::size_t w = 2 * d;
  const double tau_end = kHorizon - c.eps_end;
  return run_blocks(p, c, n, d, c.ode_block, seed,
                    [&](std::vector<double>& z, std::mt19937_64&, const Block& blk,
                        SampleRun& run, bool first) {
    const std::size_t len = z.size();
    std::vector<double> s(len);
    std::size_t calls = 0;
    // dz/dtau at reverse time tau
    const auto rhs = [&](double tau, const std::vector<double>& y, std::vector<double>& out) {
      const double t = kHorizon - tau;
      score(t, y.data(), blk.count, s.data());
      ++calls;
      for (std::size_t i = 0; i < blk.count; ++i)
        flow_drift(p, &y[i * w], &s[i * w], d, t, &out[i * w]);
    };

    std::array<std::vector<double>, 7> k;
    for (auto& v : k) v.resize(len);
    std::vector<double> y_stage(len), y_new(len);
    double tau = 0.0;
    double h = 1e-3;
    double err_prev = 1e-4;
    bool rejected = false;
    long steps = 0;
    rhs(tau, z, k[0]);
    if (c.record_trajectory) record(run, first, 0.0, z, d);
    while (tau < tau_end) {
      if (++steps > c.max_ode_steps)
        throw NumericError("ode: exceeded " + std::to_string(c.max_ode_steps) +
                           " steps at tau=" + std::to_string(tau));
      h = std::min(h, tau_end - tau);
      if (h < 1e-14)
        throw NumericError("ode: step size underflow at tau=" + std::to_string(tau));
      for (int st = 1; st < 7; ++st) {
        for (std::size_t i = 0; i < len; ++i) {
          double acc = 0.0;
          for (int j = 0; j < st; ++j) acc += kA[st][j] * k[j][i];
          y_stage[i] = z[i] + h * acc;
        }
        rhs(tau + kC[st] * h, y_stage, k[st]);
      }
      // y_stage now holds the fifth-order solution (row 6 of the tableau)
      double sq = 0.0;
      for (std::size_t i = 0; i < len; ++i) {
        double e = 0.0;
        for (int j = 0; j < 7; ++j) e += kE[j] * k[j][i];
        e *= h;
        const double sc =
            c.ode_atol + c.ode_rtol * std::max(std::abs(z[i]), std::abs(y_stage[i]));
        sq += (e / sc) * (e / sc);
      }
      const double err = std::sqrt(sq / static_cast<double>(len));
      if (!std::isfinite(err)) throw NumericError("ode: non-finite state at tau=" + std::to_string(tau));
      if (err <= 1.0) {
        tau += h;
        z.swap(y_stage);
        k[0].swap(k[6]);  // first-same-as-last
        double fac = 0.9 * std::pow(std::max(err, 1e-10), -0.7 / 5.0) *
                     std::pow(err_prev, 0.4 / 5.0);
        fac = std::clamp(fac, 0.2, 10.0);
        if (rejected) fac = std::min(fac, 1.0);
        h *= fac;
        err_prev = std::max(err, 1e-4);
        rejected = false;
        if (c.record_trajectory) record(run, first, tau, z, d);
      } else {
        h *= std::max(0.2, 0.9 * std::pow(err, -0.7 / 5.0));
        rejected = true;
      }
    }
    if (c.denoise_last) {
      calls += denoise(p, score, c.eps_end, z, blk.count, d);
      check_finite(z, "ode denoise", steps);
    }
    return calls;
  });
}

SampleRun sample(const PsldParams& p, const score::ScoreFn& score,
                 const SamplerConfig& c, std::size_t n, std::size_t d,
                 std::uint64_t seed) {
  switch (c.kind) {
    case Kind::em: return em_sample(p, score, c, n, d, seed);
    case Kind::sscs: return sscs_sample(p, score, c, n, d, seed);
    case Kind::ode: return ode_sample(p, score, c, n, d, seed);
  }
  throw std::invalid_argument("unknown sampler kind");
}

ErrorCoefficients error_coefficients(const PsldParams& p, double t) {
  if (!(t >= kernel::kTrainTimeCutoff))
    throw std::domain_error("error coefficients need t >= 1e-5");
  const kernel::CholBlock c = kernel::chol_block(
      kernel::covariance_block(p, 0.0, p.mass() * p.gamma0, t), kernel::kCholeskyEpsilon, t);
  const double g2 = p.gamma * p.gamma;
  // scaling of the eps prediction error, so it is the L^-T entries that matter
  return {g2 * c.it_xx, g2 * c.it_xm - p.nu * c.it_mm};
}

}  // namespace psld::sampler
