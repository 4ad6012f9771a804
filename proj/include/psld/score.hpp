#pragma once

#include <Eigen/Dense>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "psld/kernel.hpp"
#include "psld/params.hpp"

namespace psld::score {

// Scores for n augmented states stored row-major (n x 2d) at a common time t.
// One call is one function evaluation regardless of n.
using ScoreFn =
    std::function<void(double t, const double* z, std::size_t n, double* out)>;

// Gaussian mixture over the augmented state z_0 = (x_0, m_0).
struct GmmSpec {
  std::size_t d = 0;  // data dimension; states have length 2d
  std::vector<double> weights;
  std::vector<Eigen::VectorXd> means;  // length 2d each
  std::vector<Eigen::MatrixXd> covs;   // 2d x 2d each
  std::vector<int> labels;             // optional, one per component

  // Components whose covariance is (2x2 block) ⊗ I_d.
  static GmmSpec from_blocks(std::size_t d, std::vector<double> weights,
                             std::vector<Eigen::VectorXd> means,
                             const std::vector<Eigen::Matrix2d>& blocks,
                             std::vector<int> labels = {});

  // Data-space components N(mean, cov) in R^d, each paired with the momentum
  // prior N(0, momentum_var I_d).
  static GmmSpec from_data(std::size_t d, std::vector<double> weights,
                           const std::vector<Eigen::VectorXd>& data_means,
                           const std::vector<Eigen::MatrixXd>& data_covs,
                           double momentum_var, std::vector<int> labels = {});

  std::size_t size() const { return weights.size(); }
  void validate() const;
};

// The forward marginal p_t = sum_k w_k N(A mu_k, A C_k A' + Sigma_t ⊗ I)
// with A = Phi(t) ⊗ I, factored once per t.
class MarginalMixture {
 public:
  MarginalMixture(const GmmSpec& gmm, const PsldParams& params, double t);

  std::size_t dim() const { return n_; }
  double time() const { return t_; }

  double log_density(const double* z) const;
  void score(const double* z, double* out) const;
  // grad_z log p(y | z_t): label-y responsibility mass under the mixture.
  void class_grad(const double* z, int label, double* out) const;
  double class_prob(const double* z, int label) const;
  // Normalized responsibilities r_k(z).
  void responsibilities(const double* z, double* r) const;

 private:
  void log_components(const double* z, double* lc) const;

  std::size_t n_ = 0;
  std::size_t k_ = 0;
  double t_ = 0.0;
  std::vector<int> labels_;
  std::vector<double> log_norm_;   // log w_k - logdet/2 - n/2 log 2pi
  std::vector<double> mean_;       // k x n
  std::vector<double> precision_;  // k x n x n
};

// grad_z log p_t(z) for the mixture pushed through the PSLD kernel.
std::vector<double> gmm_marginal_score(const GmmSpec& gmm,
                                       const PsldParams& params, double t,
                                       std::span<const double> z);

// Batch score function backed by the exact marginal; the factorization is
// cached for the most recent t (not safe to share across threads).
ScoreFn analytic_score(GmmSpec gmm, PsldParams params);

// s = -(L^-T ⊗ I_d) eps for one state.
void score_from_eps(std::span<const double> eps, const kernel::CholBlock& chol,
                    std::span<double> out);

// Fully connected network on [input, sin/cos time features] with SiLU
// hidden activations and a linear head. Parameters live in one flat vector:
// layer by layer, weights (n_out x n_in, row-major) then biases.
class Mlp {
 public:
  struct Shape {
    std::size_t n_in = 2;
    std::size_t n_out = 2;
    std::size_t hidden = 128;
    std::size_t hidden_layers = 2;
    std::size_t n_freq = 32;
    double time_scale = 1000.0;
  };

  struct Cache {
    std::size_t batch = 0;
    std::vector<std::vector<double>> inputs;  // input of every layer
    std::vector<std::vector<double>> pre;     // pre-activation of hidden layers
  };

  Mlp() = default;
  explicit Mlp(const Shape& shape);

  const Shape& shape() const { return shape_; }
  std::size_t num_params() const { return theta_.size(); }
  std::size_t num_layers() const { return offsets_.size(); }
  std::vector<double>& params() { return theta_; }
  const std::vector<double>& params() const { return theta_; }

  // Glorot-uniform weights, zero biases; the head is zeroed when requested.
  void init(std::uint64_t seed, bool zero_head = true);

  // out: batch x n_out. t: one time per row. cache may be null.
  void forward(const double* z, const double* t, std::size_t batch, double* out,
               Cache* cache = nullptr) const;
  // Accumulates d loss / d theta into grad (size num_params()). When dz is
  // non-null it receives d loss / d input (batch x n_in).
  void backward(const Cache& cache, const double* dout, double* grad,
                double* dz = nullptr) const;

  void time_features(double t, double* out) const;

  void save(std::ostream& os) const;
  static Mlp load(std::istream& is);
  void save_file(const std::string& path) const;
  static Mlp load_file(const std::string& path);

 private:
  struct Layer {
    std::size_t n_in, n_out, w_off, b_off;
  };
  void build();

  Shape shape_;
  std::vector<Layer> offsets_;
  std::vector<double> theta_;
};

// Epsilon network for 2d-dimensional states.
Mlp make_score_model(std::size_t d, std::size_t hidden = 128,
                     std::size_t hidden_layers = 2, std::size_t n_freq = 32);

// s_theta(z, t) = -L_t^-T eps_theta(z, t) with L_t from the HSM kernel.
ScoreFn learned_score(const Mlp& model, PsldParams params);

}  // namespace psld::score
