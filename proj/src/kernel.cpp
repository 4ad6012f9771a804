#include "psld/kernel.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>
#include <string>

#include "psld/errors.hpp"

namespace psld::kernel {

// Under critical damping the drift block K = [[-G, M^-1], [-1, -nu]] has the
// double eigenvalue -(G + nu)/2, so with B = int beta,
//   Phi(B) = exp(-lambda B) (I + B N),  lambda = (G + nu)/4,
//   N = [[a, M^-1/2], [-1/2, -a]],  a = (nu - G)/4,  N^2 = 0.
// The covariance is Sigma_eq + Phi (Sigma_0 - Sigma_eq) Phi' with
// Sigma_eq = diag(1, M). Expanding gives a polynomial in B times
// exp(-2 lambda B) plus Sigma_eq (1 - exp(-2 lambda B)); the second part is
// the "(exp(2 lambda B) - 1)" term of the usual coefficient tables once the
// common factor exp(-(G + nu) B / 2) is pulled out.

namespace {

void require_critical(const PsldParams& p) {
  p.validate();
  if (!p.is_critical())
    throw std::domain_error(
        "closed-form kernel needs critical damping (gamma - nu)^2 = 4 M^-1");
}

void require_time(double t) {
  if (!(t >= 0.0 && t <= 1.0))
    throw std::domain_error("time must lie in [0, 1], got " + std::to_string(t));
}

double decay_rate(const PsldParams& p) { return 0.25 * (p.gamma + p.nu); }

std::vector<double> apply_block(const Eigen::Matrix2d& phi,
                                std::span<const double> x,
                                std::span<const double> m, bool want_x) {
  std::vector<double> out(x.size());
  const int r = want_x ? 0 : 1;
  for (std::size_t i = 0; i < x.size(); ++i)
    out[i] = phi(r, 0) * x[i] + phi(r, 1) * m[i];
  return out;
}

template <class State, class Deriv>
void rk4(State& y, double t_end, double step, Deriv&& f) {
  if (!(step > 0.0)) throw std::domain_error("oracle step must be positive");
  if (t_end <= 0.0) return;
  const auto n = static_cast<long>(std::ceil(t_end / step - 1e-9));
  const double h = t_end / static_cast<double>(n);
  for (long i = 0; i < n; ++i) {
    const double t = h * static_cast<double>(i);
    const State k1 = f(t, y);
    const State k2 = f(t + 0.5 * h, State(y + 0.5 * h * k1));
    const State k3 = f(t + 0.5 * h, State(y + 0.5 * h * k2));
    const State k4 = f(t + h, State(y + h * k3));
    y += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  }
}

}  // namespace

Eigen::Matrix2d KernelMoments::cov() const {
  Eigen::Matrix2d c;
  c << sxx, sxm, sxm, smm;
  return c;
}

double beta_integral(const BetaSchedule& schedule, double t0, double t1) {
  if (!(t0 >= 0.0 && t0 <= t1 && t1 <= 1.0))
    throw std::domain_error("beta_integral needs 0 <= t0 <= t1 <= 1");
  return schedule.integral(t0, t1);
}

MeanCoefficients mean_coefficients(const PsldParams& p) {
  const double diff = p.gamma - p.nu;
  return {(p.nu - p.gamma) / 4.0, diff * diff / 8.0, -0.5, diff / 4.0};
}

CovarianceCoefficients covariance_coefficients(const PsldParams& p) {
  const double a = 0.25 * (p.nu - p.gamma);
  const double mi = p.mass_inv;
  const double mass = p.mass();
  CovarianceCoefficients c{};
  // xx: B^2 sxx0, B^2 smm0, B sxx0, B^2, B
  c.a[0] = a * a;
  c.a[1] = 0.25 * mi * mi;
  c.a[2] = 2.0 * a;
  c.a[3] = -0.5 * mi;
  c.a[4] = -2.0 * a;
  // xm: B^2 sxx0, B^2 smm0, B sxx0, B smm0, B^2
  c.c[0] = -0.5 * a;
  c.c[1] = -0.5 * a * mi;
  c.c[2] = -0.5;
  c.c[3] = 0.5 * mi;
  c.c[4] = a;
  // mm: B^2 sxx0, B^2 smm0, B smm0, B^2, B
  c.d[0] = 0.25;
  c.d[1] = a * a;
  c.d[2] = -2.0 * a;
  c.d[3] = -0.5;
  c.d[4] = 2.0 * a * mass;
  return c;
}

Eigen::Matrix2d mean_transition(const PsldParams& p, double t) {
  require_critical(p);
  require_time(t);
  const double b = p.beta.integral(0.0, t);
  const MeanCoefficients k = mean_coefficients(p);
  const double e = std::exp(-decay_rate(p) * b);
  Eigen::Matrix2d phi;
  phi << 1.0 + k.a1 * b, k.a2 * b, k.c1 * b, 1.0 + k.c2 * b;
  return e * phi;
}

Eigen::Matrix2d covariance_block(const PsldParams& p, double sxx0, double smm0,
                                 double t) {
  require_critical(p);
  require_time(t);
  const double b = p.beta.integral(0.0, t);
  const double b2 = b * b;
  const CovarianceCoefficients c = covariance_coefficients(p);
  const double e = std::exp(-2.0 * decay_rate(p) * b);
  const double relax = -std::expm1(-2.0 * decay_rate(p) * b);

  const double pxx = c.a[0] * b2 * sxx0 + c.a[1] * b2 * smm0 + c.a[2] * b * sxx0 +
                     c.a[3] * b2 + c.a[4] * b + sxx0;
  const double pxm = c.c[0] * b2 * sxx0 + c.c[1] * b2 * smm0 + c.c[2] * b * sxx0 +
                     c.c[3] * b * smm0 + c.c[4] * b2;
  const double pmm = c.d[0] * b2 * sxx0 + c.d[1] * b2 * smm0 + c.d[2] * b * smm0 +
                     c.d[3] * b2 + c.d[4] * b + smm0;

  Eigen::Matrix2d s;
  s(0, 0) = relax + e * pxx;
  s(0, 1) = s(1, 0) = e * pxm;
  s(1, 1) = p.mass() * relax + e * pmm;
  return s;
}

KernelMoments kernel_moments_dsm(const PsldParams& p, std::span<const double> x0,
                                 std::span<const double> m0, double sxx0,
                                 double smm0, double t) {
  if (x0.size() != m0.size())
    throw std::invalid_argument("x0 and m0 must have the same length");
  if (sxx0 < 0.0 || smm0 < 0.0)
    throw std::domain_error("initial variances must be non-negative");
  const Eigen::Matrix2d phi = mean_transition(p, t);
  const Eigen::Matrix2d s = covariance_block(p, sxx0, smm0, t);
  KernelMoments k;
  k.mu_x = apply_block(phi, x0, m0, true);
  k.mu_m = apply_block(phi, x0, m0, false);
  k.sxx = s(0, 0);
  k.sxm = s(0, 1);
  k.smm = s(1, 1);
  return k;
}

KernelMoments kernel_moments_hsm(const PsldParams& p, std::span<const double> x0,
                                 double t) {
  const std::vector<double> m0(x0.size(), 0.0);
  return kernel_moments_dsm(p, x0, m0, 0.0, p.mass() * p.gamma0, t);
}

KernelMoments kernel_moments_ode_oracle(const PsldParams& p,
                                        std::span<const double> x0,
                                        std::span<const double> m0,
                                        const Eigen::Matrix2d& cov0, double t,
                                        double step) {
  p.validate();
  if (x0.size() != m0.size())
    throw std::invalid_argument("x0 and m0 must have the same length");
  if (!(step > 0.0)) throw std::domain_error("oracle step must be positive");
  Eigen::Matrix2d k;
  k << -p.gamma, p.mass_inv, -1.0, -p.nu;
  Eigen::Matrix2d gg = Eigen::Matrix2d::Zero();
  gg(0, 0) = p.gamma;
  gg(1, 1) = p.mass() * p.nu;

  // State: Phi (4 entries) followed by the 3 covariance entries. The mean of
  // every coordinate pair is Phi applied to its initial value.
  using V = Eigen::Matrix<double, 7, 1>;
  V y;
  y << 1, 0, 0, 1, cov0(0, 0), cov0(0, 1), cov0(1, 1);
  rk4(y, t, step, [&](double s, const V& v) {
    const double bt = p.beta(s);
    Eigen::Matrix2d phi;
    phi << v(0), v(1), v(2), v(3);
    Eigen::Matrix2d c;
    c << v(4), v(5), v(5), v(6);
    const Eigen::Matrix2d f = 0.5 * bt * k;
    const Eigen::Matrix2d dphi = f * phi;
    const Eigen::Matrix2d dc = f * c + c * f.transpose() + bt * gg;
    V out;
    out << dphi(0, 0), dphi(0, 1), dphi(1, 0), dphi(1, 1), dc(0, 0), dc(0, 1),
        dc(1, 1);
    return out;
  });

  Eigen::Matrix2d phi;
  phi << y(0), y(1), y(2), y(3);
  KernelMoments out;
  out.mu_x = apply_block(phi, x0, m0, true);
  out.mu_m = apply_block(phi, x0, m0, false);
  out.sxx = y(4);
  out.sxm = y(5);
  out.smm = y(6);
  return out;
}

DenseMoments kernel_moments_ode_oracle(const recipe::RecipeSpec& spec,
                                       const Eigen::VectorXd& z0,
                                       const Eigen::MatrixXd& cov0, double t,
                                       double step) {
  const auto n = static_cast<Eigen::Index>(spec.dim());
  if (z0.size() != n || cov0.rows() != n || cov0.cols() != n)
    throw std::invalid_argument("oracle inputs do not match the spec dimension");
  if (!(step > 0.0)) throw std::domain_error("oracle step must be positive");
  const Eigen::MatrixXd base =
      -(spec.d_mat() + spec.q_mat()) * spec.hamiltonian_curvature().asDiagonal();
  const Eigen::MatrixXd noise = 2.0 * spec.d_mat();

  // Packed as [mean | cov] columns so the RK4 helper sees one matrix.
  Eigen::MatrixXd y(n, n + 1);
  y.col(0) = z0;
  y.rightCols(n) = cov0;
  rk4(y, t, step, [&](double s, const Eigen::MatrixXd& v) {
    const double bt = spec.beta()(s);
    const Eigen::MatrixXd f = bt * base;
    Eigen::MatrixXd out(n, n + 1);
    out.col(0) = f * v.col(0);
    const Eigen::MatrixXd c = v.rightCols(n);
    out.rightCols(n) = f * c + c * f.transpose() + bt * noise;
    return out;
  });
  return {y.col(0), y.rightCols(n)};
}

CholBlock chol_block(const Eigen::Matrix2d& cov, double eps_diag, double t) {
  const auto where = [t] {
    if (t < 0.0) return std::string();
    std::ostringstream os;
    os << " at t=" << t;
    return os.str();
  };
  const double sxx = cov(0, 0) + eps_diag;
  const double smm = cov(1, 1) + eps_diag;
  const double sxm = cov(0, 1);
  if (!(sxx > 0.0))
    throw NumericError("covariance block has non-positive xx entry" + where());
  double disc = sxx * smm - sxm * sxm;
  if (disc < -1e-12 || !std::isfinite(disc))
    throw NumericError("covariance block is not positive semidefinite" + where());
  if (disc <= 0.0)
    throw NumericError("covariance block is singular" + where());
  CholBlock c;
  c.l_xx = std::sqrt(sxx);
  c.l_xm = sxm / c.l_xx;
  c.l_mm = std::sqrt(disc) / c.l_xx;
  c.it_xx = 1.0 / c.l_xx;
  c.it_xm = -c.l_xm / (c.l_xx * c.l_mm);
  c.it_mm = 1.0 / c.l_mm;
  return c;
}

namespace {

PerturbedSample draw(const KernelMoments& k, std::span<const double> eps,
                     double t) {
  const std::size_t d = k.mu_x.size();
  if (eps.size() != 2 * d)
    throw std::invalid_argument("noise must have length 2d");
  const CholBlock l = chol_block(k, kCholeskyEpsilon, t);
  PerturbedSample s;
  s.z.resize(2 * d);
  s.eps.assign(eps.begin(), eps.end());
  for (std::size_t i = 0; i < d; ++i) {
    s.z[i] = k.mu_x[i] + l.l_xx * eps[i];
    s.z[d + i] = k.mu_m[i] + l.l_xm * eps[i] + l.l_mm * eps[d + i];
  }
  return s;
}

void require_cutoff(double t) {
  if (!(t >= kTrainTimeCutoff))
    throw std::domain_error("perturbation time below the 1e-5 cutoff");
}

}  // namespace

PerturbedSample perturb_sample(const PsldParams& p, std::span<const double> x0,
                               double t, std::span<const double> eps) {
  require_cutoff(t);
  return draw(kernel_moments_hsm(p, x0, t), eps, t);
}

PerturbedSample perturb_sample_dsm(const PsldParams& p,
                                   std::span<const double> x0,
                                   std::span<const double> m0, double t,
                                   std::span<const double> eps) {
  require_cutoff(t);
  return draw(kernel_moments_dsm(p, x0, m0, 0.0, 0.0, t), eps, t);
}

}  // namespace psld::kernel
