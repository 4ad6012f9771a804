#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "psld/params.hpp"
#include "psld/recipe.hpp"

// Gaussian perturbation kernel p(z_t | z_0) of the phase-space Langevin
// process under critical damping. All covariances are (2x2 block) ⊗ I_d, so
// only three scalars are carried per time point.

namespace psld::kernel {

// Below this time the HSM covariance is too close to singular to sample from.
inline constexpr double kTrainTimeCutoff = 1e-5;
// Added to the diagonal before the analytic Cholesky factorization.
inline constexpr double kCholeskyEpsilon = 1e-9;

struct KernelMoments {
  std::vector<double> mu_x;
  std::vector<double> mu_m;
  double sxx = 0.0;
  double sxm = 0.0;
  double smm = 0.0;

  Eigen::Matrix2d cov() const;
};

// Lower Cholesky factor L of the 2x2 block and the entries of L^-T.
struct CholBlock {
  double l_xx = 0.0;
  double l_xm = 0.0;
  double l_mm = 0.0;
  double it_xx = 0.0;
  double it_xm = 0.0;
  double it_mm = 0.0;
};

// B(t0, t1) = integral of beta over [t0, t1], 0 <= t0 <= t1 <= 1.
double beta_integral(const BetaSchedule& schedule, double t0, double t1);

struct MeanCoefficients {
  double a1, a2, c1, c2;
};

struct CovarianceCoefficients {
  double a[5];
  double c[5];
  double d[5];
};

MeanCoefficients mean_coefficients(const PsldParams& params);
CovarianceCoefficients covariance_coefficients(const PsldParams& params);

// Phi(t) with mu_t = (Phi(t) ⊗ I_d) z_0. Refuses non-critical parameters.
Eigen::Matrix2d mean_transition(const PsldParams& params, double t);

// Covariance block at time t starting from diag(sxx0, smm0).
Eigen::Matrix2d covariance_block(const PsldParams& params, double sxx0,
                                 double smm0, double t);

// p(z_t | z_0) with z_0 = (x0, m0) and initial covariance diag(sxx0, smm0).
KernelMoments kernel_moments_dsm(const PsldParams& params,
                                 std::span<const double> x0,
                                 std::span<const double> m0, double sxx0,
                                 double smm0, double t);

// p(z_t | x_0): m_0 marginalized with m_0 ~ N(0, M gamma0 I).
KernelMoments kernel_moments_hsm(const PsldParams& params,
                                 std::span<const double> x0, double t);

// Fixed-step RK4 integration of d mu/dt = F mu and
// d Sigma/dt = F Sigma + Sigma F' + G G'. Valid for any parameters,
// critical or not; used as ground truth for the closed forms.
KernelMoments kernel_moments_ode_oracle(const PsldParams& params,
                                        std::span<const double> x0,
                                        std::span<const double> m0,
                                        const Eigen::Matrix2d& cov0, double t,
                                        double step = 1e-5);

struct DenseMoments {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Same oracle for an arbitrary recipe spec (dense matrices, any dimension).
DenseMoments kernel_moments_ode_oracle(const recipe::RecipeSpec& spec,
                                       const Eigen::VectorXd& z0,
                                       const Eigen::MatrixXd& cov0, double t,
                                       double step = 1e-5);

// Analytic Cholesky of the covariance block with eps_diag on the diagonal.
// `t` only labels the error message.
CholBlock chol_block(const Eigen::Matrix2d& cov, double eps_diag = kCholeskyEpsilon,
                     double t = -1.0);
inline CholBlock chol_block(const KernelMoments& m,
                            double eps_diag = kCholeskyEpsilon, double t = -1.0) {
  return chol_block(m.cov(), eps_diag, t);
}

struct PerturbedSample {
  std::vector<double> z;    // (x_t, m_t), length 2d
  std::vector<double> eps;  // the standard normal draw used
};

// z_t = mu_t + (L_t ⊗ I_d) eps for the HSM kernel. Refuses t < 1e-5.
PerturbedSample perturb_sample(const PsldParams& params,
                               std::span<const double> x0, double t,
                               std::span<const double> eps);

// Same for the DSM kernel conditioned on a full (x0, m0).
PerturbedSample perturb_sample_dsm(const PsldParams& params,
                                   std::span<const double> x0,
                                   std::span<const double> m0, double t,
                                   std::span<const double> eps);

}  // namespace psld::kernel
