#pragma once

#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include "psld/params.hpp"
#include "psld/score.hpp"

namespace psld::objective {

// Noise predictor eps(z, t) for n rows of width w (per-row times).
using EpsFn = std::function<void(const double* z, const double* t, std::size_t n,
                                 double* out)>;

EpsFn eps_fn(const score::Mlp& model);

// Random inputs of a loss evaluation: times and standard normal noise.
struct Draws {
  std::vector<double> t;    // n
  std::vector<double> eps;  // n x width
};

// t ~ U(1e-5, 1), eps ~ N(0, I_width).
Draws draw(std::size_t n, std::size_t width, std::mt19937_64& rng);

// Perturbed states ready for the loss.
struct PerturbedBatch {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t width = 0;    // 2d, or d for the VP process
  std::vector<double> t;
  std::vector<double> x0;   // n x d
  std::vector<double> z;    // n x width
  std::vector<double> eps;  // n x width
};

// HSM: z_t ~ p(z_t | x_0) with the initial momentum marginalized.
PerturbedBatch perturb_hsm(const PsldParams& params, const std::vector<double>& x0,
                           std::size_t d, const Draws& draws);
// DSM: z_t ~ p(z_t | x_0, m_0) with Sigma_0 = 0.
PerturbedBatch perturb_dsm(const PsldParams& params, const std::vector<double>& x0,
                           const std::vector<double>& m0, std::size_t d,
                           const Draws& draws);
// VP-SDE: x_t = e^{-B/2} x_0 + sqrt(1 - e^{-B}) eps.
PerturbedBatch perturb_vp(const BetaSchedule& beta, const std::vector<double>& x0,
                          std::size_t d, const Draws& draws);

struct LossSample {
  double t = 0.0;
  std::vector<double> x0;
  std::vector<double> eps;
  std::vector<double> z_t;
  double loss = 0.0;
};

struct LossResult {
  double loss = 0.0;  // batch mean
  std::vector<LossSample> samples;
};

// mean_i ||eps_theta(z_i, t_i) - eps_i||^2, summed over the full width.
LossResult eps_loss(const EpsFn& f, const PerturbedBatch& batch);

LossResult hsm_eps_loss(const EpsFn& f, const std::vector<double>& x0, std::size_t d,
                        const PsldParams& params, const Draws& draws);
LossResult dsm_eps_loss(const EpsFn& f, const std::vector<double>& x0,
                        const std::vector<double>& m0, std::size_t d,
                        const PsldParams& params, const Draws& draws);

// Loss and its gradient w.r.t. the network parameters (grad is overwritten).
// Rows are reduced in order, so the result is deterministic.
double eps_loss_grad(const score::Mlp& model, const PerturbedBatch& batch,
                     std::vector<double>& grad);

enum class Weighting {
  ml,           // Gamma beta |r_x|^2 + M nu beta |r_m|^2
  unit,         // |r|^2
  inv_spectral  // |r|^2 / ||L^-T||_2^2, bounded above by the eps loss
};

// Score-space residual r = s_theta - grad log p(z_t | x_0) on HSM draws, with
// s_theta = -L^-T eps_theta.
LossResult weighted_score_loss(const EpsFn& f, const std::vector<double>& x0,
                               std::size_t d, const PsldParams& params,
                               const Draws& draws, Weighting w);

// Largest singular value of the 2x2 upper-triangular L^-T.
double spectral_norm(const kernel::CholBlock& c);

}  // namespace psld::objective
