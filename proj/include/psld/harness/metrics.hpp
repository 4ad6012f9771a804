#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <random>
#include <vector>

// Two-sample distances on point clouds stored row-major (n x dim).

namespace psld::harness {

// V-statistic energy distance 2E|A-B| - E|A-A'| - E|B-B'| (i = j pairs
// included, so a set against itself gives exactly 0).
double energy_distance(const std::vector<double>& a, const std::vector<double>& b,
                       std::size_t dim);

// sqrt of the mean squared 1-D W2 over n_proj uniform directions. Unequal
// sizes are matched through empirical quantiles.
double sliced_w2(const std::vector<double>& a, const std::vector<double>& b,
                 std::size_t dim, std::size_t n_proj, std::mt19937_64& rng);

// Mean distance E|a - Y| for Y ~ N(mu, sigma^2 I_2) (mean of a Rice variable).
double rice_mean(double dist, double sigma);

// Energy distance between the samples (n x 2) and a mixture of isotropic
// 2-D Gaussians, with the population terms in closed form. Components that
// are not isotropic throw std::invalid_argument.
double energy_distance_to_mixture(const std::vector<double>& a,
                                  const std::vector<double>& weights,
                                  const std::vector<Eigen::VectorXd>& means,
                                  const std::vector<Eigen::MatrixXd>& covs);

struct PermutationResult {
  double statistic = 0.0;
  double p_value = 1.0;
  double null_q95 = 0.0;  // 95th percentile of the permutation null
  std::vector<double> null;
};

// Energy-distance permutation test: p = (1 + #{null >= stat}) / (1 + n_perm).
PermutationResult permutation_test(const std::vector<double>& a,
                                   const std::vector<double>& b, std::size_t dim,
                                   std::size_t n_perm, std::mt19937_64& rng);

struct MetricReport {
  double mean_err = 0.0;  // |mean_a - mean_b|
  double cov_err = 0.0;   // Frobenius norm of cov_a - cov_b
  double energy_dist = 0.0;
  double sliced_w2 = 0.0;
  double nfe = 0.0;
};

MetricReport compare(const std::vector<double>& a, const std::vector<double>& b,
                     std::size_t dim, std::mt19937_64& rng, std::size_t n_proj = 64);

}  // namespace psld::harness
