#include "psld/objective.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "psld/errors.hpp"
#include "psld/kernel.hpp"

namespace psld::objective {

EpsFn eps_fn(const score::Mlp& model) {
  return [&model](const double* z, const double* t, std::size_t n, double* out) {
    model.forward(z, t, n, out);
  };
}

Draws draw(std::size_t n, std::size_t width, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> ut(kernel::kTrainTimeCutoff, 1.0);
  std::normal_distribution<double> g;
  Draws d;
  d.t.resize(n);
  d.eps.resize(n * width);
  for (std::size_t i = 0; i < n; ++i) {
    d.t[i] = ut(rng);
    for (std::size_t j = 0; j < width; ++j) d.eps[i * width + j] = g(rng);
  }
  return d;
}

namespace {

void check_batch(const std::vector<double>& x0, std::size_t d, const Draws& draws,
                 std::size_t width) {
  if (d == 0 || x0.size() % d != 0)
    throw std::invalid_argument("x0 must hold n rows of length d");
  const std::size_t n = x0.size() / d;
  if (draws.t.size() != n || draws.eps.size() != n * width)
    throw std::invalid_argument("draws do not match the batch size");
}

PerturbedBatch perturb(const PsldParams& params, const std::vector<double>& x0,
                       const std::vector<double>* m0, std::size_t d,
                       const Draws& draws) {
  check_batch(x0, d, draws, 2 * d);
  PerturbedBatch b;
  b.n = x0.size() / d;
  b.d = d;
  b.width = 2 * d;
  b.t = draws.t;
  b.x0 = x0;
  b.eps = draws.eps;
  b.z.resize(b.n * b.width);
  for (std::size_t i = 0; i < b.n; ++i) {
    const std::span<const double> x(&x0[i * d], d);
    const std::span<const double> e(&draws.eps[i * 2 * d], 2 * d);
    const kernel::PerturbedSample s =
        m0 ? kernel::perturb_sample_dsm(params, x, std::span<const double>(&(*m0)[i * d], d),
                                        draws.t[i], e)
           : kernel::perturb_sample(params, x, draws.t[i], e);
    std::copy(s.z.begin(), s.z.end(), &b.z[i * 2 * d]);
  }
  return b;
}

}  // namespace

PerturbedBatch perturb_hsm(const PsldParams& params, const std::vector<double>& x0,
                           std::size_t d, const Draws& draws) {
  return perturb(params, x0, nullptr, d, draws);
}

PerturbedBatch perturb_dsm(const PsldParams& params, const std::vector<double>& x0,
                           const std::vector<double>& m0, std::size_t d,
                           const Draws& draws) {
  if (m0.size() != x0.size()) throw std::invalid_argument("m0 must match x0");
  return perturb(params, x0, &m0, d, draws);
}

PerturbedBatch perturb_vp(const BetaSchedule& beta, const std::vector<double>& x0,
                          std::size_t d, const Draws& draws) {
  check_batch(x0, d, draws, d);
  PerturbedBatch b;
  b.n = x0.size() / d;
  b.d = d;
  b.width = d;
  b.t = draws.t;
  b.x0 = x0;
  b.eps = draws.eps;
  b.z.resize(b.n * d);
  for (std::size_t i = 0; i < b.n; ++i) {
    const double big_b = kernel::beta_integral(beta, 0.0, draws.t[i]);
    const double a = std::exp(-0.5 * big_b);
    const double s = std::sqrt(-std::expm1(-big_b));
    for (std::size_t j = 0; j < d; ++j)
      b.z[i * d + j] = a * x0[i * d + j] + s * draws.eps[i * d + j];
  }
  return b;
}

LossResult eps_loss(const EpsFn& f, const PerturbedBatch& b) {
  std::vector<double> pred(b.n * b.width);
  f(b.z.data(), b.t.data(), b.n, pred.data());
  LossResult r;
  r.samples.resize(b.n);
  double total = 0.0;
  for (std::size_t i = 0; i < b.n; ++i) {
    double l = 0.0;
    for (std::size_t j = 0; j < b.width; ++j) {
      const double e = pred[i * b.width + j] - b.eps[i * b.width + j];
      l += e * e;
    }
    if (!std::isfinite(l))
      throw NumericError("non-finite loss at batch row " + std::to_string(i));
    LossSample& s = r.samples[i];
    s.t = b.t[i];
    s.x0.assign(&b.x0[i * b.d], &b.x0[i * b.d] + b.d);
    s.eps.assign(&b.eps[i * b.width], &b.eps[i * b.width] + b.width);
    s.z_t.assign(&b.z[i * b.width], &b.z[i * b.width] + b.width);
    s.loss = l;
    total += l;
  }
  r.loss = b.n ? total / static_cast<double>(b.n) : 0.0;
  return r;
}

LossResult hsm_eps_loss(const EpsFn& f, const std::vector<double>& x0, std::size_t d,
                        const PsldParams& params, const Draws& draws) {
  return eps_loss(f, perturb_hsm(params, x0, d, draws));
}

LossResult dsm_eps_loss(const EpsFn& f, const std::vector<double>& x0,
                        const std::vector<double>& m0, std::size_t d,
                        const PsldParams& params, const Draws& draws) {
  return eps_loss(f, perturb_dsm(params, x0, m0, d, draws));
}

double eps_loss_grad(const score::Mlp& model, const PerturbedBatch& b,
                     std::vector<double>& grad) {
  if (model.shape().n_in != b.width || model.shape().n_out != b.width)
    throw std::invalid_argument("network width does not match the batch");
  grad.assign(model.num_params(), 0.0);
  if (b.n == 0) return 0.0;
  score::Mlp::Cache cache;
  std::vector<double> pred(b.n * b.width);
  model.forward(b.z.data(), b.t.data(), b.n, pred.data(), &cache);
  const double scale = 1.0 / static_cast<double>(b.n);
  double total = 0.0;
  std::vector<double> dout(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double e = pred[i] - b.eps[i];
    total += e * e;
    dout[i] = 2.0 * e * scale;
  }
  if (!std::isfinite(total)) throw NumericError("non-finite loss");
  model.backward(cache, dout.data(), grad.data());
  return total * scale;
}

double spectral_norm(const kernel::CholBlock& c) {
  const double a = c.it_xx, b = c.it_xm, d = c.it_mm;
  const double tr = a * a + b * b + d * d;
  const double det = a * d;
  return std::sqrt(0.5 * (tr + std::sqrt(std::max(0.0, tr * tr - 4.0 * det * det))));
}

LossResult weighted_score_loss(const EpsFn& f, const std::vector<double>& x0,
                               std::size_t d, const PsldParams& params,
                               const Draws& draws, Weighting w) {
  const PerturbedBatch b = perturb_hsm(params, x0, d, draws);
  std::vector<double> pred(b.n * b.width);
  f(b.z.data(), b.t.data(), b.n, pred.data());
  LossResult r;
  r.samples.resize(b.n);
  double total = 0.0;
  std::vector<double> s_model(b.width), s_true(b.width);
  for (std::size_t i = 0; i < b.n; ++i) {
    const double t = b.t[i];
    const kernel::CholBlock c = kernel::chol_block(
        kernel::covariance_block(params, 0.0, params.mass() * params.gamma0, t),
        kernel::kCholeskyEpsilon, t);
    score::score_from_eps(std::span<const double>(&pred[i * b.width], b.width), c, s_model);
    // grad log p(z_t | x_0) = -Sigma^-1 (z - mu) = -L^-T eps
    score::score_from_eps(std::span<const double>(&b.eps[i * b.width], b.width), c, s_true);
    const double beta = params.beta(t);
    double rx = 0.0, rm = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      rx += (s_model[j] - s_true[j]) * (s_model[j] - s_true[j]);
      rm += (s_model[d + j] - s_true[d + j]) * (s_model[d + j] - s_true[d + j]);
    }
    double l = 0.0;
    switch (w) {
      case Weighting::ml:
        l = params.gamma * beta * rx + params.mass() * params.nu * beta * rm;
        break;
      case Weighting::unit:
        l = rx + rm;
        break;
      case Weighting::inv_spectral: {
        const double nrm = spectral_norm(c);
        l = (rx + rm) / (nrm * nrm);
        break;
      }
    }
    LossSample& s = r.samples[i];
    s.t = t;
    s.x0.assign(&b.x0[i * d], &b.x0[i * d] + d);
    s.eps.assign(&b.eps[i * b.width], &b.eps[i * b.width] + b.width);
    s.z_t.assign(&b.z[i * b.width], &b.z[i * b.width] + b.width);
    s.loss = l;
    total += l;
  }
  r.loss = b.n ? total / static_cast<double>(b.n) : 0.0;
  return r;
}

}  // namespace psld::objective
