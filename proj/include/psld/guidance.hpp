#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "psld/params.hpp"
#include "psld/sampler.hpp"
#include "psld/score.hpp"

namespace psld::guidance {

enum class Mode { class_conditional, imputation };

struct GuidanceConfig {
  double weight = 5.0;  // lambda
  int target_label = 0;
  Mode mode = Mode::class_conditional;
  std::vector<bool> mask;  // imputation: true = observed data coordinate

  // weight >= 0; imputation needs a mask with an observed and a free entry.
  void validate(std::size_t d) const;
};

// grad_z log p(y | z_t) for n states (row-major n x 2d) at forward time t.
using ClassGradFn = std::function<void(double t, const double* z, std::size_t n,
                                       int label, double* out)>;

// s(z, t) + weight * grad log p(label | z_t) for states of length 2d; still
// one NFE per call of the unconditional score.
score::ScoreFn guided_score(score::ScoreFn score, ClassGradFn class_grad, double weight,
                            int label, std::size_t d);

// Exact class gradient under the labeled mixture pushed through the kernel.
void gmm_class_grad(const score::GmmSpec& gmm, const PsldParams& params, double t,
                    const double* z, int label, double* out);
// Batch version with the factorization cached for the last t.
ClassGradFn gmm_class_grad_fn(score::GmmSpec gmm, PsldParams params);

// Time-dependent softmax classifier on perturbed states.
struct ToyClassifier {
  score::Mlp net;  // 2d -> n_classes logits
  int n_classes = 0;

  // class probabilities, n x n_classes
  void probs(const double* z, const double* t, std::size_t n, double* out) const;
  // grad_z log C_label(z, t), n x 2d
  void log_prob_grad(const double* z, double t, std::size_t n, int label,
                     double* out) const;
  // mean cross-entropy over the batch and its gradient w.r.t. the weights
  double loss_grad(const double* z, const double* t, const int* y, std::size_t n,
                   std::vector<double>& grad) const;
  double accuracy(const std::vector<double>& z, double t, const std::vector<int>& y) const;
};

ClassGradFn classifier_grad_fn(const ToyClassifier& clf);

struct ClassifierConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 256;
  double learning_rate = 1e-3;
  std::size_t hidden = 64;
  std::size_t hidden_layers = 2;
  std::size_t n_freq = 16;
  std::uint64_t seed = 0;
};

// Minimizes E_t E_{z_t ~ p(z_t | x_0)} [-log C_y(z_t, t)] with Adam. Labels
// are 0..K-1; fewer than two distinct labels is refused with ConfigError.
ToyClassifier train_toy_classifier(const std::vector<double>& x, const std::vector<int>& y,
                                   std::size_t d, const PsldParams& params,
                                   const ClassifierConfig& config);

// Perturbed copies of labeled data at a fixed forward time (HSM kernel).
std::vector<double> perturb_at(const PsldParams& params, const std::vector<double>& x,
                               std::size_t d, double t, std::mt19937_64& rng);

// EM sampling of the free coordinates given observed data values. Before
// every score evaluation the observed positions and their momenta are
// replaced by a fresh draw from the HSM kernel p(z_t | x_hat_0); only free
// coordinates evolve. The output carries x_hat_0 in the observed positions.
sampler::SampleRun impute_sample(const PsldParams& params, const score::ScoreFn& score,
                                 const std::vector<double>& observed,
                                 const std::vector<bool>& mask,
                                 const sampler::SamplerConfig& config, std::size_t n,
                                 std::uint64_t seed);

}  // namespace psld::guidance
