#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "psld/params.hpp"
#include "psld/score.hpp"

namespace psld::harness {

// Toy data distribution: a Gaussian mixture in R^d with one label per
// component, plus samples drawn from it.
struct Dataset {
  std::string name;
  std::size_t d = 0;
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::MatrixXd> covs;
  std::vector<int> labels;        // per component
  std::vector<double> x;          // n x d
  std::vector<int> y;             // per sample (component label)

  std::size_t n() const { return d ? x.size() / d : 0; }
  // The mixture lifted to phase space with momentum prior N(0, M gamma0 I).
  score::GmmSpec gmm(const PsldParams& params) const;
  // Fresh samples from the same distribution.
  void draw(std::size_t n, std::mt19937_64& rng, std::vector<double>& x,
            std::vector<int>* y = nullptr) const;
};

// gmm2: +-(3, 0) with unit covariance. gmm8-ring: eight components on the
// radius-4 circle. gauss-corr: one Gaussian with unit variances and
// correlation 0.8. Unknown names throw ConfigError.
Dataset make_dataset(const std::string& name, std::size_t n, std::mt19937_64& rng);

// Component standard deviation of gmm8-ring.
inline constexpr double kRingSigma = 0.5;

}  // namespace psld::harness
