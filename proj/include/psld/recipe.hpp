#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <span>
#include <vector>

#include "psld/params.hpp"

// Forward processes built from the complete recipe
//   f(z) = -(D + Q) grad H(z),   dz = f dt + sqrt(2 D) dw
// with constant D (PSD), constant Q (skew-symmetric) and the quadratic
// Hamiltonian H(z) = x'x/2 + m' M^-1 m / 2. Both matrices are scaled by the
// schedule beta(t); the stored matrices are the dimensionless factors.

namespace psld::recipe {

inline constexpr double kPsdTolerance = -1e-10;
inline constexpr double kSkewTolerance = 1e-12;

class RecipeSpec {
 public:
  // Augmented spec whose matrices are (block ⊗ I_d), with dim_m == dim_x == d.
  static RecipeSpec from_blocks(std::size_t d, const Eigen::Matrix2d& d_block,
                                const Eigen::Matrix2d& q_block, double mass_inv,
                                BetaSchedule beta);

  // General constant matrices of size dim_x + dim_m.
  static RecipeSpec dense(std::size_t dim_x, std::size_t dim_m,
                          Eigen::MatrixXd d_mat, Eigen::MatrixXd q_mat,
                          double mass_inv, BetaSchedule beta);

  std::size_t dim_x() const { return dim_x_; }
  std::size_t dim_m() const { return dim_m_; }
  std::size_t dim() const { return dim_x_ + dim_m_; }
  double mass_inv() const { return mass_inv_; }
  const BetaSchedule& beta() const { return beta_; }
  const Eigen::MatrixXd& d_mat() const { return d_mat_; }
  const Eigen::MatrixXd& q_mat() const { return q_mat_; }
  // Present when the spec was built from 2x2 blocks.
  const std::optional<Eigen::Matrix2d>& d_block() const { return d_block_; }
  const std::optional<Eigen::Matrix2d>& q_block() const { return q_block_; }

  // Diagonal of the Hamiltonian Hessian: 1 on data coords, M^-1 on momentum.
  Eigen::VectorXd hamiltonian_curvature() const;

 private:
  RecipeSpec() = default;

  std::size_t dim_x_ = 0;
  std::size_t dim_m_ = 0;
  Eigen::MatrixXd d_mat_;
  Eigen::MatrixXd q_mat_;
  double mass_inv_ = 1.0;
  BetaSchedule beta_;
  std::optional<Eigen::Matrix2d> d_block_;
  std::optional<Eigen::Matrix2d> q_block_;
};

struct ValidationReport {
  bool psd_ok = false;
  bool skew_ok = false;
  double min_eigenvalue = 0.0;  // of the symmetrized D
  double max_skew_error = 0.0;  // max |Q + Q'|

  bool ok() const { return psd_ok && skew_ok; }
};

ValidationReport validate_recipe(const RecipeSpec& spec);

// -(D + Q) grad H(z) at time t (tau(z) = 0 for constant matrices).
std::vector<double> recipe_drift(const RecipeSpec& spec,
                                 std::span<const double> z, double t);

struct Grid {
  double h = 0.02;
  double half_width = 6.0;  // grid spans [-half_width, half_width]^n
};

// Max |dp/dt| of the Fokker-Planck operator applied to p_s = exp(-H),
// normalized by max p_s, using fourth-order central differences on the
// interior of the grid. Requires dim() <= 2, h <= 0.1 and a grid that covers
// at least six standard deviations of p_s in every coordinate.
double stationarity_residual(const RecipeSpec& spec, const Grid& grid,
                             double t = 0.5);

// D = beta/2 diag(Gamma, M nu) ⊗ I_d,  Q = beta/2 [[0, -1], [1, 0]] ⊗ I_d.
RecipeSpec instantiate_psld(const PsldParams& params, std::size_t d);

// CLD with friction nu_bar and schedule beta_bar: D = beta_bar diag(0, nu_bar),
// Q = beta_bar [[0, -1], [1, 0]]. Equals PSLD with Gamma = 0, nu_bar = M nu,
// beta = 2 beta_bar.
RecipeSpec instantiate_cld(double nu_bar, double mass_inv,
                           BetaSchedule beta_bar, std::size_t d);

// D = beta(t)/2 I_d, Q = 0, no momentum.
RecipeSpec instantiate_vp(BetaSchedule beta, std::size_t d);

// Expresses the linear SDE dz = F z dt + G dw (instantaneous F and G G') in
// recipe form for the quadratic Hamiltonian: D = G G'/2 and
// Q = -F (Hess H)^-1 - D. Throws RecipeError if the implied Q is not
// skew-symmetric or D is not PSD, i.e. p_s = exp(-H) is not stationary.
RecipeSpec recipe_from_linear_sde(std::size_t dim_x, std::size_t dim_m,
                                  double mass_inv, const Eigen::MatrixXd& drift,
                                  const Eigen::MatrixXd& diffusion_cov);

// VE-SDE at time t: zero drift, g(t)^2 = d sigma^2/dt for the geometric
// sigma(t) = sigma_min (sigma_max / sigma_min)^t. Always rejected.
RecipeSpec instantiate_ve(double sigma_min, double sigma_max, double t,
                          std::size_t d);

class RecipeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace psld::recipe
