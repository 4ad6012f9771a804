#include "psld/harness/data.hpp"

#include <cmath>
#include <numbers>

#include "psld/errors.hpp"

namespace psld::harness {

score::GmmSpec Dataset::gmm(const PsldParams& params) const {
  return score::GmmSpec::from_data(d, weights, means, covs, params.mass() * params.gamma0,
                                   labels);
}

void Dataset::draw(std::size_t n, std::mt19937_64& rng, std::vector<double>& out,
                   std::vector<int>* y_out) const {
  std::discrete_distribution<std::size_t> pick(weights.begin(), weights.end());
  std::normal_distribution<double> g;
  std::vector<Eigen::MatrixXd> chol;
  for (const auto& c : covs) chol.push_back(c.llt().matrixL());
  out.assign(n * d, 0.0);
  if (y_out) y_out->assign(n, 0);
  Eigen::VectorXd e(d);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t k = pick(rng);
    for (std::size_t j = 0; j < d; ++j) e[j] = g(rng);
    const Eigen::VectorXd v = means[k] + chol[k] * e;
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = v[j];
    if (y_out) (*y_out)[i] = labels[k];
  }
}

Dataset make_dataset(const std::string& name, std::size_t n, std::mt19937_64& rng) {
  Dataset ds;
  ds.name = name;
  ds.d = 2;
  if (name == "gmm2") {
    ds.weights = {0.5, 0.5};
    ds.means = {Eigen::Vector2d(-3, 0), Eigen::Vector2d(3, 0)};
    ds.covs = {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()};
    ds.labels = {0, 1};
  } else if (name == "gmm8-ring") {
    for (int k = 0; k < 8; ++k) {
      const double a = 2.0 * std::numbers::pi * k / 8;
      ds.weights.push_back(1.0 / 8);
      ds.means.push_back(Eigen::Vector2d(4.0 * std::cos(a), 4.0 * std::sin(a)));
      ds.covs.push_back(kRingSigma * kRingSigma * Eigen::Matrix2d::Identity());
      ds.labels.push_back(k);
    }
  } else if (name == "gauss-corr") {
    Eigen::Matrix2d c;
    c << 1.0, 0.8, 0.8, 1.0;
    ds.weights = {1.0};
    ds.means = {Eigen::Vector2d::Zero()};
    ds.covs = {c};
    ds.labels = {0};
  } else {
    throw ConfigError("unknown dataset '" + name + "' (gmm2, gmm8-ring, gauss-corr)");
  }
  if (n == 0) throw ConfigError("dataset size must be >= 1");
  ds.draw(n, rng, ds.x, &ds.y);
  return ds;
}

}  // namespace psld::harness
