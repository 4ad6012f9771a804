#include "psld/harness/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ostream>
#include <random>
#include <string>

#include "psld/errors.hpp"
#include "psld/objective.hpp"

namespace psld::harness {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size must be >= 1");
  if (!(learning_rate > 0)) throw ConfigError("train.lr must be > 0");
  if (!(ema_rate >= 0 && ema_rate < 1)) throw ConfigError("train.ema must be in [0, 1)");
  if (!(adam_beta1 >= 0 && adam_beta1 < 1) || !(adam_beta2 >= 0 && adam_beta2 < 1) ||
      !(adam_eps > 0))
    throw ConfigError("bad Adam constants");
  if (log_every == 0) throw ConfigError("train.log_every must be >= 1");
}

TrainResult train_loop(const score::Mlp& init, const std::vector<double>& data,
                       std::size_t d, const PsldParams& params, const TrainConfig& c,
                       std::ostream* csv) {
  c.validate();
  params.validate();
  if (d == 0 || data.empty() || data.size() % d != 0)
    throw ConfigError("training data must be a non-empty n x d array");
  if (init.shape().n_in != 2 * d || init.shape().n_out != 2 * d)
    throw ConfigError("score network width must be 2d");
  const std::size_t n_data = data.size() / d;

  TrainResult r{init, init, {}, {}};
  std::vector<double>& theta = r.model.params();
  std::vector<double>& ema = r.ema.params();
  const std::size_t np = theta.size();
  std::vector<double> grad(np), m1(np, 0.0), m2(np, 0.0);

  std::mt19937_64 rng(c.seed);
  std::uniform_int_distribution<std::size_t> pick(0, n_data - 1);
  std::normal_distribution<double> g;
  std::vector<double> x0(c.batch_size * d), m0;
  const double mom_sd = std::sqrt(params.mass() * params.gamma0);
  const auto start = std::chrono::steady_clock::now();
  if (csv) *csv << "iteration,loss,grad_norm,wallclock\n";

  for (std::size_t it = 0; it < c.iterations; ++it) {
    for (std::size_t i = 0; i < c.batch_size; ++i)
      std::copy_n(data.begin() + pick(rng) * d, d, x0.begin() + i * d);
    const objective::Draws dr = objective::draw(c.batch_size, 2 * d, rng);
    objective::PerturbedBatch batch;
    if (c.objective == Objective::hsm) {
      batch = objective::perturb_hsm(params, x0, d, dr);
    } else {
      m0.resize(x0.size());
      for (auto& v : m0) v = mom_sd * g(rng);
      batch = objective::perturb_dsm(params, x0, m0, d, dr);
    }
    double loss;
    try {
      loss = objective::eps_loss_grad(r.model, batch, grad);
    } catch (const NumericError&) {
      throw NumericError("non-finite loss at iteration " + std::to_string(it));
    }
    double norm2 = 0.0;
    for (double v : grad) norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm))
      throw NumericError("non-finite gradient at iteration " + std::to_string(it));
    const double clip = (c.grad_clip > 0 && norm > c.grad_clip) ? c.grad_clip / norm : 1.0;

    const double step = static_cast<double>(it + 1);
    double lr = c.learning_rate * (c.warmup_steps ? std::min(1.0, step / c.warmup_steps) : 1.0);
    if (c.linear_decay && it >= c.warmup_steps && c.iterations > c.warmup_steps)
      lr = c.learning_rate * static_cast<double>(c.iterations - it) /
           static_cast<double>(c.iterations - c.warmup_steps);
    const double bc1 = 1.0 - std::pow(c.adam_beta1, step);
    const double bc2 = 1.0 - std::pow(c.adam_beta2, step);
    for (std::size_t k = 0; k < np; ++k) {
      const double gk = grad[k] * clip;
      m1[k] = c.adam_beta1 * m1[k] + (1.0 - c.adam_beta1) * gk;
      m2[k] = c.adam_beta2 * m2[k] + (1.0 - c.adam_beta2) * gk * gk;
      theta[k] -= lr * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + c.adam_eps);
      ema[k] = c.ema_rate * ema[k] + (1.0 - c.ema_rate) * theta[k];
    }

    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.log.push_back({it, loss, norm, wall});
    r.losses.push_back(loss);
    if (csv && ((it + 1) % c.log_every == 0 || it + 1 == c.iterations))
      *csv << it << ',' << loss << ',' << norm << ',' << wall << '\n';
  }
  return r;
}

double mean_loss(const TrainResult& r, std::size_t begin, std::size_t end) {
  end = std::min(end, r.losses.size());
  if (begin >= end) return 0.0;
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += r.losses[i];
  return s / static_cast<double>(end - begin);
}

}  // namespace psld::harness
