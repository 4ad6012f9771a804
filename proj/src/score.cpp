#include "psld/score.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <memory>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>

#include "psld/errors.hpp"
#include "psld/simd/kernels.hpp"

namespace psld::score {

GmmSpec GmmSpec::from_blocks(std::size_t d, std::vector<double> weights,
                             std::vector<Eigen::VectorXd> means,
                             const std::vector<Eigen::Matrix2d>& blocks,
                             std::vector<int> labels) {
  GmmSpec g;
  g.d = d;
  g.weights = std::move(weights);
  g.means = std::move(means);
  g.labels = std::move(labels);
  const auto n = static_cast<Eigen::Index>(d);
  for (const auto& b : blocks) {
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    for (Eigen::Index i = 0; i < n; ++i) {
      c(i, i) = b(0, 0);
      c(i, n + i) = b(0, 1);
      c(n + i, i) = b(1, 0);
      c(n + i, n + i) = b(1, 1);
    }
    g.covs.push_back(std::move(c));
  }
  g.validate();
  return g;
}

GmmSpec GmmSpec::from_data(std::size_t d, std::vector<double> weights,
                           const std::vector<Eigen::VectorXd>& data_means,
                           const std::vector<Eigen::MatrixXd>& data_covs,
                           double momentum_var, std::vector<int> labels) {
  if (data_means.size() != data_covs.size())
    throw std::invalid_argument("one covariance per mean required");
  GmmSpec g;
  g.d = d;
  g.weights = std::move(weights);
  g.labels = std::move(labels);
  const auto n = static_cast<Eigen::Index>(d);
  for (std::size_t k = 0; k < data_means.size(); ++k) {
    if (data_means[k].size() != n || data_covs[k].rows() != n || data_covs[k].cols() != n)
      throw std::invalid_argument("component dimension does not match d");
    Eigen::VectorXd mu = Eigen::VectorXd::Zero(2 * n);
    mu.head(n) = data_means[k];
    Eigen::MatrixXd c = Eigen::MatrixXd::Zero(2 * n, 2 * n);
    c.topLeftCorner(n, n) = data_covs[k];
    c.bottomRightCorner(n, n) = momentum_var * Eigen::MatrixXd::Identity(n, n);
    g.means.push_back(std::move(mu));
    g.covs.push_back(std::move(c));
  }
  g.validate();
  return g;
}

void GmmSpec::validate() const {
  if (d == 0) throw std::invalid_argument("mixture dimension must be positive");
  const std::size_t k = weights.size();
  if (k == 0) throw std::invalid_argument("mixture needs at least one component");
  if (means.size() != k || covs.size() != k)
    throw std::invalid_argument("mixture weights, means and covs differ in length");
  if (!labels.empty() && labels.size() != k)
    throw std::invalid_argument("labels must be empty or one per component");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0)) throw std::domain_error("mixture weights must be non-negative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12)
    throw std::domain_error("mixture weights must sum to 1");
  const auto n = static_cast<Eigen::Index>(2 * d);
  for (std::size_t i = 0; i < k; ++i) {
    if (means[i].size() != n || covs[i].rows() != n || covs[i].cols() != n)
      throw std::invalid_argument("component " + std::to_string(i) +
                                  " has the wrong dimension");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(
        0.5 * (covs[i] + covs[i].transpose()), Eigen::EigenvaluesOnly);
    if (eig.eigenvalues().minCoeff() < -1e-10)
      throw std::domain_error("component " + std::to_string(i) +
                              " covariance is not PSD");
  }
}

MarginalMixture::MarginalMixture(const GmmSpec& gmm, const PsldParams& params,
                                 double t)
    : n_(2 * gmm.d), k_(gmm.size()), t_(t), labels_(gmm.labels) {
  if (!(t >= kernel::kTrainTimeCutoff && t <= 1.0))
    throw std::domain_error("mixture score needs t in [1e-5, 1]");
  const Eigen::Matrix2d phi = kernel::mean_transition(params, t);
  const Eigen::Matrix2d sig = kernel::covariance_block(params, 0.0, 0.0, t);
  const auto d = static_cast<Eigen::Index>(gmm.d);
  const auto n = static_cast<Eigen::Index>(n_);
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n, n);
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(n, n);
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c)
      for (Eigen::Index i = 0; i < d; ++i) {
        a(r * d + i, c * d + i) = phi(r, c);
        s(r * d + i, c * d + i) = sig(r, c);
      }

  log_norm_.resize(k_);
  mean_.resize(k_ * n_);
  precision_.resize(k_ * n_ * n_);
  const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
  for (std::size_t k = 0; k < k_; ++k) {
    const Eigen::VectorXd mu = a * gmm.means[k];
    const Eigen::MatrixXd cov = a * gmm.covs[k] * a.transpose() + s;
    Eigen::LLT<Eigen::MatrixXd> llt(cov);
    if (llt.info() != Eigen::Success)
      throw NumericError("marginal covariance of component " + std::to_string(k) +
                         " is singular at t=" + std::to_string(t));
    const Eigen::MatrixXd p = llt.solve(Eigen::MatrixXd::Identity(n, n));
    double logdet = 0.0;
    for (Eigen::Index i = 0; i < n; ++i)
      logdet += 2.0 * std::log(llt.matrixL()(i, i));
    const double w = gmm.weights[k];
    log_norm_[k] = (w > 0.0 ? std::log(w) : -std::numeric_limits<double>::infinity()) -
                   0.5 * logdet - static_cast<double>(n_) * half_log_2pi;
    for (std::size_t i = 0; i < n_; ++i) {
      mean_[k * n_ + i] = mu[static_cast<Eigen::Index>(i)];
      for (std::size_t j = 0; j < n_; ++j)
        precision_[(k * n_ + i) * n_ + j] =
            0.5 * (p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) +
                   p(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)));
    }
  }
}

void MarginalMixture::log_components(const double* z, double* lc) const {
  double diff[64];
  std::vector<double> big;
  double* dv = diff;
  if (n_ > 64) {
    big.resize(n_);
    dv = big.data();
  }
  for (std::size_t k = 0; k < k_; ++k) {
    const double* mu = &mean_[k * n_];
    const double* p = &precision_[k * n_ * n_];
    for (std::size_t i = 0; i < n_; ++i) dv[i] = z[i] - mu[i];
    double q = 0.0;
    for (std::size_t i = 0; i < n_; ++i) {
      double row = 0.0;
      for (std::size_t j = 0; j < n_; ++j) row += p[i * n_ + j] * dv[j];
      q += dv[i] * row;
    }
    lc[k] = log_norm_[k] - 0.5 * q;
  }
}

void MarginalMixture::responsibilities(const double* z, double* r) const {
  log_components(z, r);
  const double mx = *std::max_element(r, r + k_);
  double sum = 0.0;
  for (std::size_t k = 0; k < k_; ++k) {
    r[k] = std::exp(r[k] - mx);
    sum += r[k];
  }
  for (std::size_t k = 0; k < k_; ++k) r[k] /= sum;
}

double MarginalMixture::log_density(const double* z) const {
  std::vector<double> lc(k_);
  log_components(z, lc.data());
  const double mx = *std::max_element(lc.begin(), lc.end());
  double sum = 0.0;
  for (double v : lc) sum += std::exp(v - mx);
  return mx + std::log(sum);
}

namespace {

// out += weight * (-P (z - mu))
void add_component_score(const double* p, const double* mu, const double* z,
                         std::size_t n, double weight, double* out) {
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += p[i * n + j] * (z[j] - mu[j]);
    out[i] -= weight * row;
  }
}

}  // namespace

void MarginalMixture::score(const double* z, double* out) const {
  std::vector<double> r(k_);
  responsibilities(z, r.data());
  std::fill(out, out + n_, 0.0);
  for (std::size_t k = 0; k < k_; ++k)
    if (r[k] > 0.0)
      add_component_score(&precision_[k * n_ * n_], &mean_[k * n_], z, n_, r[k], out);
}

double MarginalMixture::class_prob(const double* z, int label) const {
  if (labels_.empty()) throw std::invalid_argument("mixture has no labels");
  std::vector<double> r(k_);
  responsibilities(z, r.data());
  double p = 0.0;
  for (std::size_t k = 0; k < k_; ++k)
    if (labels_[k] == label) p += r[k];
  return p;
}

void MarginalMixture::class_grad(const double* z, int label, double* out) const {
  if (labels_.empty()) throw std::invalid_argument("mixture has no labels");
  std::vector<double> lc(k_);
  log_components(z, lc.data());
  const double mx = *std::max_element(lc.begin(), lc.end());
  double mx_y = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < k_; ++k)
    if (labels_[k] == label) mx_y = std::max(mx_y, lc[k]);
  if (!std::isfinite(mx_y))
    throw std::invalid_argument("label " + std::to_string(label) +
                                " has no components with positive weight");
  // Weights (r_k^y - r_k): the label-conditional responsibilities minus the
  // full ones, each normalized in log space.
  std::vector<double> w(k_, 0.0);
  double sum = 0.0, sum_y = 0.0;
  for (std::size_t k = 0; k < k_; ++k) {
    sum += std::exp(lc[k] - mx);
    if (labels_[k] == label) sum_y += std::exp(lc[k] - mx_y);
  }
  for (std::size_t k = 0; k < k_; ++k) {
    w[k] = -std::exp(lc[k] - mx) / sum;
    if (labels_[k] == label) w[k] += std::exp(lc[k] - mx_y) / sum_y;
  }
  std::fill(out, out + n_, 0.0);
  for (std::size_t k = 0; k < k_; ++k)
    if (w[k] != 0.0)
      add_component_score(&precision_[k * n_ * n_], &mean_[k * n_], z, n_, w[k], out);
}

std::vector<double> gmm_marginal_score(const GmmSpec& gmm, const PsldParams& params,
                                       double t, std::span<const double> z) {
  if (z.size() != 2 * gmm.d) throw std::invalid_argument("state must have length 2d");
  const MarginalMixture m(gmm, params, t);
  std::vector<double> out(z.size());
  m.score(z.data(), out.data());
  return out;
}

ScoreFn analytic_score(GmmSpec gmm, PsldParams params) {
  gmm.validate();
  struct State {
    GmmSpec gmm;
    PsldParams params;
    std::unique_ptr<MarginalMixture> cached;
  };
  auto st = std::make_shared<State>(State{std::move(gmm), params, nullptr});
  return [st](double t, const double* z, std::size_t n, double* out) {
    if (!st->cached || st->cached->time() != t)
      st->cached = std::make_unique<MarginalMixture>(st->gmm, st->params, t);
    const std::size_t dim = st->cached->dim();
    for (std::size_t i = 0; i < n; ++i) st->cached->score(z + i * dim, out + i * dim);
  };
}

void score_from_eps(std::span<const double> eps, const kernel::CholBlock& c,
                    std::span<double> out) {
  if (eps.size() % 2 != 0 || out.size() != eps.size())
    throw std::invalid_argument("eps and score must both have length 2d");
  const std::size_t d = eps.size() / 2;
  for (std::size_t i = 0; i < d; ++i) {
    const double ex = eps[i], em = eps[d + i];
    out[i] = -(c.it_xx * ex + c.it_xm * em);
    out[d + i] = -c.it_mm * em;
  }
}

// --- network ---------------------------------------------------------------

namespace {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Mlp::Mlp(const Shape& shape) : shape_(shape) { build(); }

void Mlp::build() {
  if (shape_.n_in == 0 || shape_.n_out == 0 || shape_.hidden == 0)
    throw std::invalid_argument("network sizes must be positive");
  offsets_.clear();
  std::size_t off = 0;
  std::size_t in = shape_.n_in + 2 * shape_.n_freq;
  for (std::size_t l = 0; l <= shape_.hidden_layers; ++l) {
    const std::size_t out = l == shape_.hidden_layers ? shape_.n_out : shape_.hidden;
    offsets_.push_back({in, out, off, off + in * out});
    off += in * out + out;
    in = out;
  }
  theta_.assign(off, 0.0);
}

void Mlp::init(std::uint64_t seed, bool zero_head) {
  std::mt19937_64 rng(seed);
  std::fill(theta_.begin(), theta_.end(), 0.0);
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const Layer& L = offsets_[l];
    if (zero_head && l + 1 == offsets_.size()) continue;
    const double a = std::sqrt(6.0 / static_cast<double>(L.n_in + L.n_out));
    std::uniform_real_distribution<double> u(-a, a);
    for (std::size_t i = 0; i < L.n_in * L.n_out; ++i) theta_[L.w_off + i] = u(rng);
  }
}

void Mlp::time_features(double t, double* out) const {
  const std::size_t f = shape_.n_freq;
  const double s = shape_.time_scale * t;
  for (std::size_t k = 0; k < f; ++k) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(k) / static_cast<double>(f));
    out[k] = std::sin(s * freq);
    out[f + k] = std::cos(s * freq);
  }
}

void Mlp::forward(const double* z, const double* t, std::size_t batch, double* out,
                  Cache* cache) const {
  const auto& K = simd::active();
  const std::size_t n0 = offsets_.front().n_in;
  std::vector<double> x(batch * n0);
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(z + b * shape_.n_in, z + (b + 1) * shape_.n_in, &x[b * n0]);
    time_features(t[b], &x[b * n0 + shape_.n_in]);
  }
  if (cache) {
    cache->batch = batch;
    cache->inputs.resize(offsets_.size());
    cache->pre.resize(offsets_.size() - 1);
  }
  std::vector<double> y;
  for (std::size_t l = 0; l < offsets_.size(); ++l) {
    const Layer& L = offsets_[l];
    const bool last = l + 1 == offsets_.size();
    double* dst = out;
    if (!last) {
      y.resize(batch * L.n_out);
      dst = y.data();
    }
    K.dense_forward(x.data(), &theta_[L.w_off], &theta_[L.b_off], dst, batch, L.n_in,
                    L.n_out);
    if (cache) cache->inputs[l] = x;
    if (last) break;
    if (cache) cache->pre[l] = y;
    for (double& v : y) v = v * sigmoid(v);
    x.swap(y);
  }
}

void Mlp::backward(const Cache& cache, const double* dout, double* grad,
                   double* dz) const {
  const auto& K = simd::active();
  const std::size_t batch = cache.batch;
  std::vector<double> dy(dout, dout + batch * offsets_.back().n_out);
  std::vector<double> dx;
  for (std::size_t l = offsets_.size(); l-- > 0;) {
    const Layer& L = offsets_[l];
    K.dense_backward_params(dy.data(), cache.inputs[l].data(), grad + L.w_off,
                            grad + L.b_off, batch, L.n_in, L.n_out);
    if (l == 0 && dz == nullptr) break;
    dx.resize(batch * L.n_in);
    K.dense_backward_input(dy.data(), &theta_[L.w_off], dx.data(), batch, L.n_in,
                           L.n_out);
    if (l == 0) {
      for (std::size_t b = 0; b < batch; ++b)
        std::copy(&dx[b * L.n_in], &dx[b * L.n_in] + shape_.n_in, dz + b * shape_.n_in);
      break;
    }
    const std::vector<double>& pre = cache.pre[l - 1];
    for (std::size_t i = 0; i < dx.size(); ++i) {
      const double s = sigmoid(pre[i]);
      dx[i] *= s * (1.0 + pre[i] * (1.0 - s));
    }
    dy.swap(dx);
  }
}

// Text checkpoint:
//   psld-mlp 1
//   n_in n_out hidden hidden_layers n_freq time_scale activation
//   count
//   one parameter per line, 17 significant digits
void Mlp::save(std::ostream& os) const {
  os << "psld-mlp 1\n";
  os.precision(17);
  os << shape_.n_in << ' ' << shape_.n_out << ' ' << shape_.hidden << ' '
     << shape_.hidden_layers << ' ' << shape_.n_freq << ' ' << shape_.time_scale
     << " silu\n";
  os << theta_.size() << '\n';
  for (double v : theta_) os << v << '\n';
}

Mlp Mlp::load(std::istream& is) {
  std::string magic;
  int version = 0;
  if (!(is >> magic >> version) || magic != "psld-mlp" || version != 1)
    throw ConfigError("not a psld-mlp version 1 checkpoint");
  Shape s;
  std::string act;
  if (!(is >> s.n_in >> s.n_out >> s.hidden >> s.hidden_layers >> s.n_freq >>
        s.time_scale >> act))
    throw ConfigError("truncated checkpoint header");
  if (act != "silu") throw ConfigError("unsupported activation '" + act + "'");
  Mlp m(s);
  std::size_t count = 0;
  if (!(is >> count) || count != m.num_params())
    throw ConfigError("checkpoint parameter count does not match its shape");
  for (double& v : m.theta_)
    if (!(is >> v)) throw ConfigError("truncated checkpoint parameters");
  return m;
}

void Mlp::save_file(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw ConfigError("cannot write checkpoint " + path);
  save(f);
}

Mlp Mlp::load_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open checkpoint " + path);
  return load(f);
}

Mlp make_score_model(std::size_t d, std::size_t hidden, std::size_t hidden_layers,
                     std::size_t n_freq) {
  Mlp::Shape s;
  s.n_in = 2 * d;
  s.n_out = 2 * d;
  s.hidden = hidden;
  s.hidden_layers = hidden_layers;
  s.n_freq = n_freq;
  return Mlp(s);
}

ScoreFn learned_score(const Mlp& model, PsldParams params) {
  if (model.shape().n_in != model.shape().n_out || model.shape().n_in % 2 != 0)
    throw std::invalid_argument("score network must map 2d inputs to 2d outputs");
  auto m = std::make_shared<const Mlp>(model);
  return [m, params](double t, const double* z, std::size_t n, double* out) {
    const std::size_t dim = m->shape().n_in;
    const std::vector<double> ts(n, t);
    std::vector<double> eps(n * dim);
    m->forward(z, ts.data(), n, eps.data());
    const kernel::CholBlock c =
        kernel::chol_block(kernel::covariance_block(params, 0.0, params.mass() * params.gamma0, t),
                           kernel::kCholeskyEpsilon, t);
    for (std::size_t i = 0; i < n; ++i)
      score_from_eps(std::span<const double>(&eps[i * dim], dim), c,
                     std::span<double>(out + i * dim, dim));
  };
}

}  // namespace psld::score
