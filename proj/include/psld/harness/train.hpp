#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "psld/params.hpp"
#include "psld/score.hpp"

namespace psld::harness {

enum class Objective { hsm, dsm };

struct TrainConfig {
  std::size_t iterations = 5000;
  std::size_t batch_size = 128;
  double learning_rate = 2e-4;
  std::size_t warmup_steps = 5000;  // linear ramp of the learning rate
  bool linear_decay = false;        // after warmup, ramp linearly down to 0
  double ema_rate = 0.9999;
  double grad_clip = 1.0;           // global norm; <= 0 disables
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::size_t log_every = 100;
  Objective objective = Objective::hsm;

  void validate() const;
};

struct LogRow {
  std::size_t iteration = 0;
  double loss = 0.0;
  double grad_norm = 0.0;  // before clipping
  double wallclock = 0.0;  // seconds since the start of training
};

struct TrainResult {
  score::Mlp model;
  score::Mlp ema;
  std::vector<LogRow> log;       // every iteration
  std::vector<double> losses;    // per iteration, same as log[i].loss
};

// Adam on the epsilon-prediction loss with x_0 drawn (with replacement) from
// data (n x d). Every iteration is logged in memory; when csv is non-null a
// row is written every log_every iterations and at the last one. Runs are
// bitwise reproducible for a given seed. A non-finite loss or gradient
// throws NumericError naming the iteration.
TrainResult train_loop(const score::Mlp& init, const std::vector<double>& data,
                       std::size_t d, const PsldParams& params, const TrainConfig& config,
                       std::ostream* csv = nullptr);

// Mean of losses over iterations [begin, end).
double mean_loss(const TrainResult& r, std::size_t begin, std::size_t end);

}  // namespace psld::harness
