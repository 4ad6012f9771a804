#include "psld/params.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace psld {

BetaSchedule BetaSchedule::constant(double beta) {
  BetaSchedule s;
  s.kind = Kind::constant;
  s.beta_const = beta;
  return s;
}

BetaSchedule BetaSchedule::linear(double beta_min, double beta_max) {
  BetaSchedule s;
  s.kind = Kind::linear;
  s.beta_min = beta_min;
  s.beta_max = beta_max;
  return s;
}

double BetaSchedule::operator()(double t) const {
  if (kind == Kind::constant) return beta_const;
  return beta_min + (beta_max - beta_min) * t;
}

double BetaSchedule::integral(double t0, double t1) const {
  if (kind == Kind::constant) return beta_const * (t1 - t0);
  return beta_min * (t1 - t0) + 0.5 * (beta_max - beta_min) * (t1 * t1 - t0 * t0);
}

void BetaSchedule::validate() const {
  if (kind == Kind::constant) {
    if (!(beta_const > 0.0) || !std::isfinite(beta_const))
      throw std::domain_error("beta.const must be positive");
  } else {
    if (!(beta_min > 0.0) || !(beta_max > 0.0) || !std::isfinite(beta_max))
      throw std::domain_error("beta.min and beta.max must be positive");
  }
}

bool PsldParams::is_critical(double tol) const {
  const double diff = gamma - nu;
  return std::abs(diff * diff - 4.0 * mass_inv) <= tol;
}

void PsldParams::validate() const {
  if (!(gamma >= 0.0)) throw std::domain_error("gamma must be non-negative");
  if (!(nu >= 0.0)) throw std::domain_error("nu must be non-negative");
  if (!(mass_inv > 0.0)) throw std::domain_error("mass_inv must be positive");
  if (!(gamma0 > 0.0)) throw std::domain_error("gamma0 must be positive");
  beta.validate();
}

PsldParams PsldParams::critical(double gamma, double mass_inv,
                                BetaSchedule beta, double gamma0) {
  PsldParams p;
  p.gamma = gamma;
  p.nu = critical_nu(gamma, mass_inv);
  p.mass_inv = mass_inv;
  p.beta = beta;
  p.gamma0 = gamma0;
  p.validate();
  return p;
}

double critical_nu(double gamma, double mass_inv) {
  if (!(mass_inv > 0.0))
    throw std::domain_error("critical_nu: mass_inv must be positive, got " +
                            std::to_string(mass_inv));
  if (!(gamma >= 0.0))
    throw std::domain_error("critical_nu: gamma must be non-negative");
  return gamma + 2.0 * std::sqrt(mass_inv);
}

}  // namespace psld
