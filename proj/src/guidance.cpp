#include "psld/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>
#include <set>
#include <stdexcept>
#include <string>

#include "psld/errors.hpp"
#include "psld/kernel.hpp"

namespace psld::guidance {

void GuidanceConfig::validate(std::size_t d) const {
  if (!(weight >= 0) || !std::isfinite(weight)) throw ConfigError("guidance weight must be >= 0");
  if (mode == Mode::imputation) {
    if (mask.size() != d) throw ConfigError("mask needs one entry per data coordinate");
    const auto obs = std::count(mask.begin(), mask.end(), true);
    if (obs == 0 || obs == static_cast<long>(d))
      throw ConfigError("imputation needs at least one observed and one free coordinate");
  }
}

score::ScoreFn guided_score(score::ScoreFn score, ClassGradFn class_grad, double weight,
                            int label, std::size_t d) {
  return [score = std::move(score), class_grad = std::move(class_grad), weight, label, d](
             double t, const double* z, std::size_t n, double* out) {
    score(t, z, n, out);
    if (weight == 0.0) return;
    std::vector<double> g(n * 2 * d);
    class_grad(t, z, n, label, g.data());
    for (std::size_t i = 0; i < g.size(); ++i) out[i] += weight * g[i];
  };
}

void gmm_class_grad(const score::GmmSpec& gmm, const PsldParams& params, double t,
                    const double* z, int label, double* out) {
  score::MarginalMixture(gmm, params, t).class_grad(z, label, out);
}

ClassGradFn gmm_class_grad_fn(score::GmmSpec gmm, PsldParams params) {
  gmm.validate();
  if (gmm.labels.size() != gmm.size())
    throw ConfigError("class guidance needs one label per mixture component");
  struct State {
    score::GmmSpec gmm;
    PsldParams params;
    std::unique_ptr<score::MarginalMixture> cached;
  };
  auto st = std::make_shared<State>(State{std::move(gmm), params, nullptr});
  return [st](double t, const double* z, std::size_t n, int label, double* out) {
    if (!st->cached || st->cached->time() != t)
      st->cached = std::make_unique<score::MarginalMixture>(st->gmm, st->params, t);
    const std::size_t w = st->cached->dim();
    for (std::size_t i = 0; i < n; ++i) st->cached->class_grad(z + i * w, label, out + i * w);
  };
}

namespace {

void softmax_rows(std::vector<double>& v, std::size_t k) {
  for (std::size_t i = 0; i < v.size() / k; ++i) {
    double* r = &v[i * k];
    const double mx = *std::max_element(r, r + k);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += (r[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < k; ++j) r[j] /= s;
  }
}

}  // namespace

void ToyClassifier::probs(const double* z, const double* t, std::size_t n, double* out) const {
  std::vector<double> logits(n * n_classes);
  net.forward(z, t, n, logits.data());
  softmax_rows(logits, n_classes);
  std::copy(logits.begin(), logits.end(), out);
}

void ToyClassifier::log_prob_grad(const double* z, double t, std::size_t n, int label,
                                  double* out) const {
  const std::size_t k = static_cast<std::size_t>(n_classes);
  std::vector<double> ts(n, t), p(n * k);
  score::Mlp::Cache cache;
  net.forward(z, ts.data(), n, p.data(), &cache);
  softmax_rows(p, k);
  // d log p_y / d logits = onehot(y) - p
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j)
      p[i * k + j] = (static_cast<int>(j) == label ? 1.0 : 0.0) - p[i * k + j];
  std::vector<double> dummy(net.num_params(), 0.0);
  net.backward(cache, p.data(), dummy.data(), out);
}

double ToyClassifier::loss_grad(const double* z, const double* t, const int* y,
                                std::size_t n, std::vector<double>& grad) const {
  const std::size_t k = static_cast<std::size_t>(n_classes);
  grad.assign(net.num_params(), 0.0);
  std::vector<double> p(n * k);
  score::Mlp::Cache cache;
  net.forward(z, t, n, p.data(), &cache);
  softmax_rows(p, k);
  double loss = 0.0;
  const double inv = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i) {
    loss -= std::log(std::max(p[i * k + y[i]], 1e-300));
    for (std::size_t j = 0; j < k; ++j)
      p[i * k + j] = (p[i * k + j] - (static_cast<int>(j) == y[i] ? 1.0 : 0.0)) * inv;
  }
  if (!std::isfinite(loss)) throw NumericError("non-finite classifier loss");
  net.backward(cache, p.data(), grad.data());
  return loss * inv;
}

double ToyClassifier::accuracy(const std::vector<double>& z, double t,
                               const std::vector<int>& y) const {
  const std::size_t n = y.size(), k = static_cast<std::size_t>(n_classes);
  if (n == 0) return 0.0;
  std::vector<double> ts(n, t), p(n * k);
  probs(z.data(), ts.data(), n, p.data());
  std::size_t hit = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = p.begin() + i * k;
    if (std::max_element(row, row + k) - row == y[i]) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(n);
}

ClassGradFn classifier_grad_fn(const ToyClassifier& clf) {
  auto c = std::make_shared<ToyClassifier>(clf);
  return [c](double t, const double* z, std::size_t n, int label, double* out) {
    c->log_prob_grad(z, t, n, label, out);
  };
}

namespace {

// one HSM draw per row of x (n x d) at forward time t
void perturb_rows(const PsldParams& p, const double* x, std::size_t n, std::size_t d, double t,
                  std::mt19937_64& rng, double* z) {
  const Eigen::Matrix2d phi = kernel::mean_transition(p, t);
  const kernel::CholBlock c = kernel::chol_block(
      kernel::covariance_block(p, 0.0, p.mass() * p.gamma0, t), kernel::kCholeskyEpsilon, t);
  std::normal_distribution<double> g;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double x0 = x[i * d + j], ex = g(rng), em = g(rng);
      z[i * 2 * d + j] = phi(0, 0) * x0 + c.l_xx * ex;
      z[i * 2 * d + d + j] = phi(1, 0) * x0 + c.l_xm * ex + c.l_mm * em;
    }
}

}  // namespace

std::vector<double> perturb_at(const PsldParams& params, const std::vector<double>& x,
                               std::size_t d, double t, std::mt19937_64& rng) {
  if (d == 0 || x.size() % d != 0) throw std::invalid_argument("x must be n x d");
  std::vector<double> z(2 * x.size());
  perturb_rows(params, x.data(), x.size() / d, d, t, rng, z.data());
  return z;
}

ToyClassifier train_toy_classifier(const std::vector<double>& x, const std::vector<int>& y,
                                   std::size_t d, const PsldParams& params,
                                   const ClassifierConfig& c) {
  if (d == 0 || x.size() != y.size() * d || y.empty())
    throw ConfigError("classifier data must be n x d with n labels");
  const std::set<int> classes(y.begin(), y.end());
  if (classes.size() < 2) throw ConfigError("classifier needs at least two classes");
  if (*classes.begin() < 0) throw ConfigError("labels must be non-negative");
  ToyClassifier clf;
  clf.n_classes = *classes.rbegin() + 1;
  score::Mlp::Shape shape;
  shape.n_in = 2 * d;
  shape.n_out = static_cast<std::size_t>(clf.n_classes);
  shape.hidden = c.hidden;
  shape.hidden_layers = c.hidden_layers;
  shape.n_freq = c.n_freq;
  clf.net = score::Mlp(shape);
  clf.net.init(c.seed, false);

  std::mt19937_64 rng(c.seed ^ 0x636c66ULL);
  std::uniform_int_distribution<std::size_t> pick(0, y.size() - 1);
  std::uniform_real_distribution<double> ut(kernel::kTrainTimeCutoff, 1.0);
  const std::size_t np = clf.net.num_params(), b = c.batch_size;
  std::vector<double> grad, m1(np, 0.0), m2(np, 0.0), z(b * 2 * d), t(b);
  std::vector<int> yb(b);
  for (std::size_t it = 0; it < c.iterations; ++it) {
    for (std::size_t i = 0; i < b; ++i) {
      const std::size_t k = pick(rng);
      t[i] = ut(rng);
      yb[i] = y[k];
      perturb_rows(params, &x[k * d], 1, d, t[i], rng, &z[i * 2 * d]);
    }
    clf.loss_grad(z.data(), t.data(), yb.data(), b, grad);
    const double step = static_cast<double>(it + 1);
    const double bc1 = 1.0 - std::pow(0.9, step), bc2 = 1.0 - std::pow(0.999, step);
    auto& th = clf.net.params();
    for (std::size_t k = 0; k < np; ++k) {
      m1[k] = 0.9 * m1[k] + 0.1 * grad[k];
      m2[k] = 0.999 * m2[k] + 0.001 * grad[k] * grad[k];
      th[k] -= c.learning_rate * (m1[k] / bc1) / (std::sqrt(m2[k] / bc2) + 1e-8);
    }
  }
  return clf;
}

sampler::SampleRun impute_sample(const PsldParams& p, const score::ScoreFn& score,
                                 const std::vector<double>& observed,
                                 const std::vector<bool>& mask,
                                 const sampler::SamplerConfig& c, std::size_t n,
                                 std::uint64_t seed) {
  const std::size_t d = mask.size();
  if (d == 0 || observed.size() != d)
    throw ConfigError("observed values and mask must both have length d");
  const std::vector<double> tau = sampler::timestep_grid(c);
  std::vector<std::size_t> obs, fr;
  for (std::size_t j = 0; j < d; ++j) (mask[j] ? obs : fr).push_back(j);
  const std::size_t w = 2 * d;
  const double mnu = p.mass() * p.nu;

  sampler::SampleRun run;
  run.n = n;
  run.d = d;
  run.z.assign(n * w, 0.0);
  std::vector<double> obs_x(obs.size());
  for (std::size_t k = 0; k < obs.size(); ++k) obs_x[k] = observed[obs[k]];

  double nfe_sum = 0.0;
  std::size_t blocks = 0;
  for (std::size_t begin = 0, bi = 0; begin < n; begin += c.block, ++bi) {
    const std::size_t cnt = std::min(c.block, n - begin);
    std::mt19937_64 rng = sampler::block_rng(seed, bi);
    std::normal_distribution<double> g;
    std::vector<double> z(cnt * w), s(cnt * w), f(w), zo(2 * obs.size());
    for (std::size_t i = 0; i < cnt; ++i) sampler::sample_prior(p, d, rng, &z[i * w]);
    // overwrite the observed block with a kernel draw given x_hat_0
    const auto clamp = [&](double t) {
      for (std::size_t i = 0; i < cnt; ++i) {
        perturb_rows(p, obs_x.data(), 1, obs.size(), t, rng, zo.data());
        for (std::size_t k = 0; k < obs.size(); ++k) {
          z[i * w + obs[k]] = zo[k];
          z[i * w + d + obs[k]] = zo[obs.size() + k];
        }
      }
    };
    std::size_t calls = 0;
    if (!fr.empty()) {
      for (int k = 0; k < c.nfe; ++k) {
        const double dt = tau[k + 1] - tau[k];
        const double t = sampler::kHorizon - tau[k];
        if (!obs.empty()) clamp(t);
        score(t, z.data(), cnt, s.data());
        ++calls;
        const double bt = p.beta(t);
        const double nx = std::sqrt(p.gamma * bt * dt), nm = std::sqrt(mnu * bt * dt);
        for (std::size_t i = 0; i < cnt; ++i) {
          double* zi = &z[i * w];
          sampler::reverse_drift(p, zi, &s[i * w], d, t, f.data());
          for (std::size_t j : fr) {
            zi[j] += dt * f[j] + nx * g(rng);
            zi[d + j] += dt * f[d + j] + nm * g(rng);
          }
        }
        for (double v : z)
          if (!std::isfinite(v))
            throw NumericError("impute: non-finite state at step " + std::to_string(k));
      }
      if (c.denoise_last) {
        if (!obs.empty()) clamp(c.eps_end);
        score(c.eps_end, z.data(), cnt, s.data());
        ++calls;
        for (std::size_t i = 0; i < cnt; ++i) {
          double* zi = &z[i * w];
          sampler::reverse_drift(p, zi, &s[i * w], d, c.eps_end, f.data());
          for (std::size_t j : fr) {
            zi[j] += c.eps_end * f[j];
            zi[d + j] += c.eps_end * f[d + j];
          }
        }
      }
    } else {
      clamp(c.eps_end);
    }
    for (std::size_t i = 0; i < cnt; ++i)
      for (std::size_t k = 0; k < obs.size(); ++k) z[i * w + obs[k]] = obs_x[k];
    std::copy(z.begin(), z.end(), run.z.begin() + begin * w);
    run.score_calls += calls;
    nfe_sum += static_cast<double>(calls);
    ++blocks;
  }
  run.nfe_used = blocks ? nfe_sum / static_cast<double>(blocks) : 0.0;
  return run;
}

}  // namespace psld::guidance
