#include "psld/recipe.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace psld::recipe {

namespace {

Eigen::MatrixXd kron_identity(const Eigen::Matrix2d& block, std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(2 * n, 2 * n);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      out.block(r * n, c * n, n, n) = block(r, c) * Eigen::MatrixXd::Identity(n, n);
  return out;
}

void check_square(const Eigen::MatrixXd& m, std::size_t n, const char* what) {
  if (m.rows() != static_cast<Eigen::Index>(n) ||
      m.cols() != static_cast<Eigen::Index>(n))
    throw std::invalid_argument(std::string(what) + " must be " +
                                std::to_string(n) + "x" + std::to_string(n));
}

}  // namespace

RecipeSpec RecipeSpec::from_blocks(std::size_t d, const Eigen::Matrix2d& d_block,
                                   const Eigen::Matrix2d& q_block,
                                   double mass_inv, BetaSchedule beta) {
  if (d == 0) throw std::invalid_argument("recipe dimension must be positive");
  RecipeSpec s = dense(d, d, kron_identity(d_block, d), kron_identity(q_block, d),
                       mass_inv, beta);
  s.d_block_ = d_block;
  s.q_block_ = q_block;
  return s;
}

RecipeSpec RecipeSpec::dense(std::size_t dim_x, std::size_t dim_m,
                             Eigen::MatrixXd d_mat, Eigen::MatrixXd q_mat,
                             double mass_inv, BetaSchedule beta) {
  if (dim_x == 0) throw std::invalid_argument("dim_x must be positive");
  check_square(d_mat, dim_x + dim_m, "D");
  check_square(q_mat, dim_x + dim_m, "Q");
  if (dim_m > 0 && !(mass_inv > 0.0))
    throw std::domain_error("mass_inv must be positive");
  beta.validate();
  RecipeSpec s;
  s.dim_x_ = dim_x;
  s.dim_m_ = dim_m;
  s.d_mat_ = std::move(d_mat);
  s.q_mat_ = std::move(q_mat);
  s.mass_inv_ = mass_inv;
  s.beta_ = beta;
  return s;
}

Eigen::VectorXd RecipeSpec::hamiltonian_curvature() const {
  Eigen::VectorXd c(static_cast<Eigen::Index>(dim()));
  for (std::size_t i = 0; i < dim(); ++i)
    c[static_cast<Eigen::Index>(i)] = i < dim_x_ ? 1.0 : mass_inv_;
  return c;
}

ValidationReport validate_recipe(const RecipeSpec& spec) {
  const auto& d = spec.d_mat();
  const auto& q = spec.q_mat();
  if (d.rows() != q.rows() || d.rows() != static_cast<Eigen::Index>(spec.dim()))
    throw std::invalid_argument("validate_recipe: dimension mismatch");
  ValidationReport r;
  const Eigen::MatrixXd sym = 0.5 * (d + d.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym, Eigen::EigenvaluesOnly);
  r.min_eigenvalue = eig.eigenvalues().minCoeff();
  r.max_skew_error = (q + q.transpose()).cwiseAbs().maxCoeff();
  r.psd_ok = r.min_eigenvalue >= kPsdTolerance;
  r.skew_ok = r.max_skew_error <= kSkewTolerance;
  return r;
}

std::vector<double> recipe_drift(const RecipeSpec& spec,
                                 std::span<const double> z, double t) {
  const std::size_t n = spec.dim();
  if (z.size() != n)
    throw std::invalid_argument("recipe_drift: state has length " +
                                std::to_string(z.size()) + ", expected " +
                                std::to_string(n));
  const double beta = spec.beta()(t);
  std::vector<double> out(n, 0.0);
  if (spec.d_block() && spec.q_block()) {
    const std::size_t d = spec.dim_x();
    const Eigen::Matrix2d a = *spec.d_block() + *spec.q_block();
    for (std::size_t i = 0; i < d; ++i) {
      const double gx = z[i];
      const double gm = spec.mass_inv() * z[d + i];
      out[i] = -beta * (a(0, 0) * gx + a(0, 1) * gm);
      out[d + i] = -beta * (a(1, 0) * gx + a(1, 1) * gm);
    }
    return out;
  }
  const Eigen::VectorXd curv = spec.hamiltonian_curvature();
  Eigen::VectorXd grad(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    grad[static_cast<Eigen::Index>(i)] = curv[static_cast<Eigen::Index>(i)] * z[i];
  const Eigen::VectorXd f = -beta * ((spec.d_mat() + spec.q_mat()) * grad);
  for (std::size_t i = 0; i < n; ++i) out[i] = f[static_cast<Eigen::Index>(i)];
  return out;
}

namespace {

// Fourth-order central differences along one axis of a row-major grid with
// `n` nodes per axis; values closer than two nodes to the edge are left 0.
void diff1(const std::vector<double>& in, std::vector<double>& out,
           std::size_t n, std::size_t dims, std::size_t axis, double h) {
  const std::size_t stride = (dims == 2 && axis == 0) ? n : 1;
  const std::size_t total = in.size();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    const std::size_t k = (stride == 1) ? idx % n : idx / n;
    if (k < 2 || k + 2 >= n) continue;
    out[idx] = (-in[idx + 2 * stride] + 8.0 * in[idx + stride] -
                8.0 * in[idx - stride] + in[idx - 2 * stride]) /
               (12.0 * h);
  }
}

void diff2(const std::vector<double>& in, std::vector<double>& out,
           std::size_t n, std::size_t dims, std::size_t axis, double h) {
  const std::size_t stride = (dims == 2 && axis == 0) ? n : 1;
  const std::size_t total = in.size();
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t idx = 0; idx < total; ++idx) {
    const std::size_t k = (stride == 1) ? idx % n : idx / n;
    if (k < 2 || k + 2 >= n) continue;
    out[idx] = (-in[idx + 2 * stride] + 16.0 * in[idx + stride] - 30.0 * in[idx] +
                16.0 * in[idx - stride] - in[idx - 2 * stride]) /
               (12.0 * h * h);
  }
}

}  // namespace

double stationarity_residual(const RecipeSpec& spec, const Grid& grid, double t) {
  const std::size_t dims = spec.dim();
  if (dims > 2)
    throw std::invalid_argument("stationarity_residual: state dimension " +
                                std::to_string(dims) + " exceeds 2");
  if (!(grid.h > 0.0) || grid.h > 0.1)
    throw std::invalid_argument("stationarity_residual: grid spacing h=" +
                                std::to_string(grid.h) + " is too coarse (max 0.1)");
  const Eigen::VectorXd curv = spec.hamiltonian_curvature();
  for (std::size_t i = 0; i < dims; ++i) {
    const double sd = 1.0 / std::sqrt(curv[static_cast<Eigen::Index>(i)]);
    if (grid.half_width < 6.0 * sd - 1e-12)
      throw std::invalid_argument(
          "stationarity_residual: grid does not cover six standard deviations");
  }

  const auto n = static_cast<std::size_t>(std::llround(2.0 * grid.half_width / grid.h)) + 1;
  const double h = 2.0 * grid.half_width / static_cast<double>(n - 1);
  const std::size_t total = dims == 2 ? n * n : n;
  const double beta = spec.beta()(t);
  const Eigen::MatrixXd diff_mat = beta * spec.d_mat();
  const Eigen::MatrixXd a = beta * (spec.d_mat() + spec.q_mat());

  std::vector<double> p(total);
  std::vector<std::vector<double>> flux(dims, std::vector<double>(total));
  for (std::size_t idx = 0; idx < total; ++idx) {
    double coord[2] = {0.0, 0.0};
    coord[0] = -grid.half_width + h * static_cast<double>(dims == 2 ? idx / n : idx);
    if (dims == 2) coord[1] = -grid.half_width + h * static_cast<double>(idx % n);
    double energy = 0.0;
    double grad_h[2] = {0.0, 0.0};
    for (std::size_t i = 0; i < dims; ++i) {
      const double c = curv[static_cast<Eigen::Index>(i)];
      energy += 0.5 * c * coord[i] * coord[i];
      grad_h[i] = c * coord[i];
    }
    p[idx] = std::exp(-energy);
    for (std::size_t i = 0; i < dims; ++i) {
      double f = 0.0;
      for (std::size_t j = 0; j < dims; ++j)
        f -= a(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) * grad_h[j];
      flux[i][idx] = f * p[idx];
    }
  }

  std::vector<double> rhs(total, 0.0);
  std::vector<double> work(total);
  std::vector<double> work2(total);
  for (std::size_t i = 0; i < dims; ++i) {
    diff1(flux[i], work, n, dims, i, h);
    for (std::size_t k = 0; k < total; ++k) rhs[k] -= work[k];
    const double dii = diff_mat(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(i));
    if (dii != 0.0) {
      diff2(p, work, n, dims, i, h);
      for (std::size_t k = 0; k < total; ++k) rhs[k] += dii * work[k];
    }
  }
  if (dims == 2) {
    const double mixed = diff_mat(0, 1) + diff_mat(1, 0);
    if (mixed != 0.0) {
      diff1(p, work, n, dims, 0, h);
      diff1(work, work2, n, dims, 1, h);
      for (std::size_t k = 0; k < total; ++k) rhs[k] += mixed * work2[k];
    }
  }

  double worst = 0.0;
  for (std::size_t idx = 0; idx < total; ++idx) {
    const std::size_t r = dims == 2 ? idx / n : idx;
    // skip the band where the nested stencils are incomplete
    if (r < 4 || r + 4 >= n) continue;
    if (dims == 2 && (idx % n < 4 || idx % n + 4 >= n)) continue;
    worst = std::max(worst, std::abs(rhs[idx]));
  }
  return worst;  // max p_s = exp(0) = 1
}

RecipeSpec instantiate_psld(const PsldParams& params, std::size_t d) {
  params.validate();
  Eigen::Matrix2d db;
  db << 0.5 * params.gamma, 0.0, 0.0, 0.5 * params.mass() * params.nu;
  Eigen::Matrix2d qb;
  qb << 0.0, -0.5, 0.5, 0.0;
  return RecipeSpec::from_blocks(d, db, qb, params.mass_inv, params.beta);
}

RecipeSpec instantiate_cld(double nu_bar, double mass_inv, BetaSchedule beta_bar,
                           std::size_t d) {
  if (!(nu_bar >= 0.0)) throw std::domain_error("nu_bar must be non-negative");
  // beta = 2 beta_bar carries the factor beta_bar = beta / 2 in front of D, Q
  BetaSchedule beta = beta_bar;
  beta.beta_const *= 2.0;
  beta.beta_min *= 2.0;
  beta.beta_max *= 2.0;
  Eigen::Matrix2d db;
  db << 0.0, 0.0, 0.0, 0.5 * nu_bar;
  Eigen::Matrix2d qb;
  qb << 0.0, -0.5, 0.5, 0.0;
  return RecipeSpec::from_blocks(d, db, qb, mass_inv, beta);
}

RecipeSpec instantiate_vp(BetaSchedule beta, std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  return RecipeSpec::dense(d, 0, 0.5 * Eigen::MatrixXd::Identity(n, n),
                           Eigen::MatrixXd::Zero(n, n), 1.0, beta);
}

RecipeSpec recipe_from_linear_sde(std::size_t dim_x, std::size_t dim_m,
                                  double mass_inv, const Eigen::MatrixXd& drift,
                                  const Eigen::MatrixXd& diffusion_cov) {
  const std::size_t n = dim_x + dim_m;
  check_square(drift, n, "drift matrix");
  check_square(diffusion_cov, n, "diffusion covariance");
  const auto ni = static_cast<Eigen::Index>(n);
  Eigen::VectorXd inv_curv(ni);
  for (Eigen::Index i = 0; i < ni; ++i)
    inv_curv[i] = static_cast<std::size_t>(i) < dim_x ? 1.0 : 1.0 / mass_inv;
  const Eigen::MatrixXd d = 0.5 * diffusion_cov;
  const Eigen::MatrixXd q = -drift * inv_curv.asDiagonal() - d;
  RecipeSpec spec = RecipeSpec::dense(dim_x, dim_m, d, q, mass_inv,
                                      BetaSchedule::constant(1.0));
  const ValidationReport r = validate_recipe(spec);
  if (!r.psd_ok)
    throw RecipeError("diffusion matrix is not positive semidefinite (min eigenvalue " +
                      std::to_string(r.min_eigenvalue) + ")");
  if (!r.skew_ok)
    throw RecipeError("implied Q is not skew-symmetric (max |Q+Q'| = " +
                      std::to_string(r.max_skew_error) +
                      "); exp(-H) is not a stationary distribution");
  return spec;
}

RecipeSpec instantiate_ve(double sigma_min, double sigma_max, double t,
                          std::size_t d) {
  const auto n = static_cast<Eigen::Index>(d);
  const double sigma = sigma_min * std::pow(sigma_max / sigma_min, t);
  const double g2 = 2.0 * sigma * sigma * std::log(sigma_max / sigma_min);
  return recipe_from_linear_sde(d, 0, 1.0, Eigen::MatrixXd::Zero(n, n),
                                g2 * Eigen::MatrixXd::Identity(n, n));
}

}  // namespace psld::recipe
