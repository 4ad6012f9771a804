#pragma once

namespace psld {

// Time-dependent noise multiplier beta(t) on [0, 1].
struct BetaSchedule {
  enum class Kind { constant, linear };

  Kind kind = Kind::constant;
  double beta_const = 8.0;
  double beta_min = 0.1;
  double beta_max = 20.0;

  static BetaSchedule constant(double beta);
  static BetaSchedule linear(double beta_min, double beta_max);

  double operator()(double t) const;
  // Closed-form integral of beta over [t0, t1].
  double integral(double t0, double t1) const;
  void validate() const;
};

// Gamma, nu, M^-1, beta schedule and the initial momentum variance factor.
struct PsldParams {
  double gamma = 0.01;
  double nu = 4.01;
  double mass_inv = 4.0;
  BetaSchedule beta = BetaSchedule::constant(8.0);
  double gamma0 = 0.04;

  double mass() const { return 1.0 / mass_inv; }
  // (gamma - nu)^2 == 4 M^-1 within tol
  bool is_critical(double tol = 1e-9) const;
  void validate() const;

  // Parameters on the critical-damping line for the given Gamma and M^-1.
  static PsldParams critical(double gamma, double mass_inv = 4.0,
                             BetaSchedule beta = BetaSchedule::constant(8.0),
                             double gamma0 = 0.04);
};

// nu = Gamma + 2 sqrt(M^-1).
double critical_nu(double gamma, double mass_inv);

}  // namespace psld
