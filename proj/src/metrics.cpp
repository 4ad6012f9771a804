#include "psld/harness/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <stdexcept>

#include <Eigen/Dense>

#include "psld/simd/kernels.hpp"

namespace psld::harness {

namespace {

// coordinate-major float copy, the layout the distance kernels want
std::vector<float> columns(const std::vector<double>& p, std::size_t n, std::size_t dim) {
  std::vector<float> c(n * dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < dim; ++k) c[k * n + i] = static_cast<float>(p[i * dim + k]);
  return c;
}

std::size_t count(const std::vector<double>& p, std::size_t dim) {
  if (dim == 0 || p.empty() || p.size() % dim != 0)
    throw std::invalid_argument("point set must be a non-empty n x dim array");
  return p.size() / dim;
}

double energy_from_sums(double cross, double self_a, double self_b, std::size_t na,
                        std::size_t nb) {
  const double a = static_cast<double>(na), b = static_cast<double>(nb);
  return 2.0 * cross / (a * b) - 2.0 * self_a / (a * a) - 2.0 * self_b / (b * b);
}

// rows [0, na) of the pooled coordinates are A, the rest B
double energy_split(const std::vector<float>& cols, std::size_t n, std::size_t dim,
                    std::size_t na) {
  const auto& k = simd::active();
  const float* a = cols.data();
  const float* b = cols.data() + na;
  const std::size_t nb = n - na;
  const double cross = k.cross_distance_sum(a, na, n, b, nb, n, dim);
  const double sa = k.self_distance_sum(a, na, n, dim);
  const double sb = k.self_distance_sum(b, nb, n, dim);
  return energy_from_sums(cross, sa, sb, na, nb);
}

double quantile_sorted(const std::vector<double>& s, double u) {
  const std::size_t i = std::min(s.size() - 1, static_cast<std::size_t>(u * s.size()));
  return s[i];
}

}  // namespace

double energy_distance(const std::vector<double>& a, const std::vector<double>& b,
                       std::size_t dim) {
  const std::size_t na = count(a, dim), nb = count(b, dim);
  // fixed argument order so float sums give ed(a, b) == ed(b, a) exactly
  if (nb < na || (nb == na && std::lexicographical_compare(b.begin(), b.end(), a.begin(), a.end())))
    return energy_distance(b, a, dim);
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  const double e = energy_split(columns(pooled, na + nb, dim), na + nb, dim, na);
  return std::max(e, 0.0);  // float round-off can dip a hair below zero
}

double rice_mean(double dist, double sigma) {
  if (!(sigma > 0)) throw std::invalid_argument("rice_mean needs sigma > 0");
  const double q = dist * dist / (4.0 * sigma * sigma);
  if (q > 600.0) {
    // far tail, where e^-q I_k(q) would overflow; next term is O(sigma^4 / dist^3)
    return dist + sigma * sigma / (2.0 * dist);
  }
  const double e = std::exp(-q);
  return sigma * std::sqrt(std::numbers::pi / 2.0) *
         ((1.0 + 2.0 * q) * e * std::cyl_bessel_i(0.0, q) + 2.0 * q * e * std::cyl_bessel_i(1.0, q));
}

double energy_distance_to_mixture(const std::vector<double>& a,
                                  const std::vector<double>& weights,
                                  const std::vector<Eigen::VectorXd>& means,
                                  const std::vector<Eigen::MatrixXd>& covs) {
  const std::size_t n = count(a, 2), k = weights.size();
  if (means.size() != k || covs.size() != k) throw std::invalid_argument("mixture arity mismatch");
  std::vector<double> sig(k);
  for (std::size_t j = 0; j < k; ++j) {
    const Eigen::MatrixXd& c = covs[j];
    if (means[j].size() != 2 || c.rows() != 2 || c.cols() != 2 || std::abs(c(0, 1)) > 1e-12 ||
        std::abs(c(1, 0)) > 1e-12 || std::abs(c(0, 0) - c(1, 1)) > 1e-12 || !(c(0, 0) > 0))
      throw std::invalid_argument("closed-form reference needs isotropic 2-D components");
    sig[j] = std::sqrt(c(0, 0));
  }
  double cross = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double e = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double dx = a[2 * i] - means[j][0], dy = a[2 * i + 1] - means[j][1];
      e += weights[j] * rice_mean(std::hypot(dx, dy), sig[j]);
    }
    cross += e;
  }
  double pop = 0.0;
  for (std::size_t j = 0; j < k; ++j)
    for (std::size_t l = 0; l < k; ++l)
      pop += weights[j] * weights[l] *
             rice_mean((means[j] - means[l]).norm(), std::hypot(sig[j], sig[l]));
  const std::vector<float> cols = columns(a, n, 2);
  const double self = simd::active().self_distance_sum(cols.data(), n, n, 2);
  const double dn = static_cast<double>(n);
  return 2.0 * cross / dn - 2.0 * self / (dn * dn) - pop;
}

double sliced_w2(const std::vector<double>& a, const std::vector<double>& b,
                 std::size_t dim, std::size_t n_proj, std::mt19937_64& rng) {
  const std::size_t na = count(a, dim), nb = count(b, dim);
  if (n_proj == 0) throw std::invalid_argument("sliced_w2 needs n_proj >= 1");
  std::normal_distribution<double> g;
  const std::size_t m = std::max(na, nb);
  std::vector<double> pa(na), pb(nb), dir(dim);
  double total = 0.0;
  for (std::size_t p = 0; p < n_proj; ++p) {
    double norm = 0.0;
    for (auto& v : dir) {
      v = g(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : dir) v /= norm;
    for (std::size_t i = 0; i < na; ++i)
      pa[i] = std::inner_product(dir.begin(), dir.end(), a.begin() + i * dim, 0.0);
    for (std::size_t i = 0; i < nb; ++i)
      pb[i] = std::inner_product(dir.begin(), dir.end(), b.begin() + i * dim, 0.0);
    std::sort(pa.begin(), pa.end());
    std::sort(pb.begin(), pb.end());
    double w = 0.0;
    if (na == nb) {
      for (std::size_t i = 0; i < na; ++i) w += (pa[i] - pb[i]) * (pa[i] - pb[i]);
    } else {
      for (std::size_t i = 0; i < m; ++i) {
        const double u = (i + 0.5) / m;
        const double d = quantile_sorted(pa, u) - quantile_sorted(pb, u);
        w += d * d;
      }
    }
    total += w / m;
  }
  return std::sqrt(total / n_proj);
}

PermutationResult permutation_test(const std::vector<double>& a,
                                   const std::vector<double>& b, std::size_t dim,
                                   std::size_t n_perm, std::mt19937_64& rng) {
  const std::size_t na = count(a, dim), nb = count(b, dim), n = na + nb;
  const auto& k = simd::active();
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::vector<float> cols = columns(pooled, n, dim);
  // the all-pairs total is permutation invariant, so each relabelling only
  // needs the two within-group sums; cross = total - within
  const double total = k.self_distance_sum(cols.data(), n, n, dim);
  auto split = [&](const std::vector<float>& c) {
    const double sa = k.self_distance_sum(c.data(), na, n, dim);
    const double sb = k.self_distance_sum(c.data() + na, nb, n, dim);
    return energy_from_sums(total - sa - sb, sa, sb, na, nb);
  };
  PermutationResult r;
  r.statistic = split(cols);
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::vector<float> shuffled(cols.size());
  std::size_t hits = 0;
  for (std::size_t p = 0; p < n_perm; ++p) {
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t c = 0; c < dim; ++c)
      for (std::size_t i = 0; i < n; ++i) shuffled[c * n + i] = cols[c * n + idx[i]];
    const double e = split(shuffled);
    r.null.push_back(e);
    if (e >= r.statistic) ++hits;
  }
  r.p_value = (1.0 + hits) / (1.0 + n_perm);
  if (!r.null.empty()) {
    std::vector<double> s(r.null);
    std::sort(s.begin(), s.end());
    r.null_q95 = s[std::min(s.size() - 1, static_cast<std::size_t>(0.95 * s.size()))];
  }
  r.statistic = std::max(r.statistic, 0.0);
  return r;
}

MetricReport compare(const std::vector<double>& a, const std::vector<double>& b,
                     std::size_t dim, std::mt19937_64& rng, std::size_t n_proj) {
  const std::size_t na = count(a, dim), nb = count(b, dim);
  using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const Mat> A(a.data(), na, dim), B(b.data(), nb, dim);
  const Eigen::RowVectorXd ma = A.colwise().mean(), mb = B.colwise().mean();
  const Mat ca = A.rowwise() - ma, cb = B.rowwise() - mb;
  const Eigen::MatrixXd va = ca.transpose() * ca / std::max<double>(1, na - 1.0);
  const Eigen::MatrixXd vb = cb.transpose() * cb / std::max<double>(1, nb - 1.0);
  MetricReport r;
  r.mean_err = (ma - mb).norm();
  r.cov_err = (va - vb).norm();
  r.energy_dist = energy_distance(a, b, dim);
  r.sliced_w2 = sliced_w2(a, b, dim, n_proj, rng);
  return r;
}

}  // namespace psld::harness
