#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

#include "psld/params.hpp"
#include "psld/score.hpp"

// Reverse-time samplers. Reverse time tau runs from 0 (pure noise, forward
// time T = 1) to T - eps_end; forward time is t = T - tau.

namespace psld::sampler {

enum class Kind { em, sscs, ode };
enum class Striding { uniform, quadratic };
// Where the SSCS Euler step evaluates the score inside its interval.
enum class ScoreTime { midpoint, start };

struct SamplerConfig {
  Kind kind = Kind::em;
  int nfe = 1000;  // N, steps of em / sscs
  Striding striding = Striding::uniform;
  double eps_end = 1e-3;
  bool denoise_last = true;
  double ode_rtol = 1e-5;
  double ode_atol = 1e-5;
  long max_ode_steps = 100000;
  std::size_t ode_block = 16;    // chains integrated jointly by the ODE solver
  std::size_t block = 1024;      // chains sharing one generator stream
  ScoreTime sscs_score_time = ScoreTime::midpoint;
  bool record_trajectory = false;

  void validate() const;
};

struct SampleRun {
  std::size_t n = 0;
  std::size_t d = 0;
  std::vector<double> z;      // n x 2d, chain-index order
  double nfe_used = 0.0;      // score evaluations per chain (block mean for ode)
  std::size_t score_calls = 0;
  // reverse time and state of chain 0 at every step, when requested
  std::vector<double> trajectory_tau;
  std::vector<std::vector<double>> trajectory;

  std::vector<double> data_block() const;  // n x d positions only
};

inline constexpr double kHorizon = 1.0;

// Reverse SDE drift at forward time t for one state of length 2d.
void reverse_drift(const PsldParams& params, const double* z, const double* s,
                   std::size_t d, double t, double* out);
// Probability-flow ODE drift (score terms with weight one).
void flow_drift(const PsldParams& params, const double* z, const double* s,
                std::size_t d, double t, double* out);

// tau_0 = 0 < ... < tau_N = T - eps_end.
std::vector<double> timestep_grid(const SamplerConfig& config);
// The unscaled quadratic grid (i / N)^2, i = 0..N.
std::vector<double> quadratic_raw(int n);

// Exact flow of the linear part of the reverse SDE,
//   dz = beta/2 [[-G, -M^-1], [1, -nu]] z dtau + G dw,
// over reverse time [tau, tau + h]. The state is mapped by mean_map ⊗ I_d
// and receives Gaussian noise with block covariance cov.
struct AnalyticStep {
  Eigen::Matrix2d mean_map;
  Eigen::Matrix2d cov;
};
AnalyticStep sscs_analytic_halfstep(const PsldParams& params, double tau, double h);

// Prior p_EQ = N(0, I) x N(0, M I).
void sample_prior(const PsldParams& params, std::size_t d, std::mt19937_64& rng,
                  double* z);

// Generator of chain block b for master seed `seed`.
std::mt19937_64 block_rng(std::uint64_t seed, std::uint64_t b);

SampleRun em_sample(const PsldParams& params, const score::ScoreFn& score,
                    const SamplerConfig& config, std::size_t n, std::size_t d,
                    std::uint64_t seed);
SampleRun sscs_sample(const PsldParams& params, const score::ScoreFn& score,
                      const SamplerConfig& config, std::size_t n, std::size_t d,
                      std::uint64_t seed);
SampleRun ode_sample(const PsldParams& params, const score::ScoreFn& score,
                     const SamplerConfig& config, std::size_t n, std::size_t d,
                     std::uint64_t seed);
// Dispatch on config.kind.
SampleRun sample(const PsldParams& params, const score::ScoreFn& score,
                 const SamplerConfig& config, std::size_t n, std::size_t d,
                 std::uint64_t seed);

struct ErrorCoefficients {
  double lambda1 = 0.0;
  double lambda2 = 0.0;
};

// lambda1 = Gamma^2 l_xx, lambda2 = Gamma^2 l_xm - nu l_mm from the HSM
// Cholesky factor at forward time t.
ErrorCoefficients error_coefficients(const PsldParams& params, double t);

}  // namespace psld::sampler
