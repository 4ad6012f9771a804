// Compiled with -mavx2 -mfma; only reached through the dispatch table after
// the CPU has been checked.
#include <immintrin.h>

#include <cmath>

#include "psld/simd/kernels.hpp"

namespace psld::simd {
namespace {

inline double hsum(__m256d v) {
  const __m128d lo = _mm256_castpd256_pd128(v);
  const __m128d hi = _mm256_extractf128_pd(v, 1);
  const __m128d s = _mm_add_pd(lo, hi);
  return _mm_cvtsd_f64(_mm_add_sd(s, _mm_unpackhi_pd(s, s)));
}

inline double hsum(__m256 v) {
  // widen before reducing so the lane sums are combined in double
  const __m256d lo = _mm256_cvtps_pd(_mm256_castps256_ps128(v));
  const __m256d hi = _mm256_cvtps_pd(_mm256_extractf128_ps(v, 1));
  return hsum(_mm256_add_pd(lo, hi));
}

inline double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc0 = _mm256_setzero_pd();
  __m256d acc1 = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
    acc1 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i + 4),
                           _mm256_loadu_pd(b + i + 4), acc1);
  }
  for (; i + 4 <= n; i += 4)
    acc0 = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc0);
  double s = hsum(_mm256_add_pd(acc0, acc1));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  const __m256d va = _mm256_set1_pd(alpha);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    _mm256_storeu_pd(y + i, _mm256_fmadd_pd(va, _mm256_loadu_pd(x + i),
                                            _mm256_loadu_pd(y + i)));
  }
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t n_in,
                   std::size_t n_out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x + b * n_in;
    double* yr = y + b * n_out;
    for (std::size_t o = 0; o < n_out; ++o)
      yr[o] = dot(xr, w + o * n_in, n_in) + bias[o];
  }
}

void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t n_in,
                          std::size_t n_out) {
  for (std::size_t b = 0; b < batch; ++b) {
    double* dxr = dx + b * n_in;
    for (std::size_t i = 0; i < n_in; ++i) dxr[i] = 0.0;
    const double* dyr = dy + b * n_out;
    for (std::size_t o = 0; o < n_out; ++o) axpy(dyr[o], w + o * n_in, dxr, n_in);
  }
}

void dense_backward_params(const double* dy, const double* x, double* dw,
                           double* db, std::size_t batch, std::size_t n_in,
                           std::size_t n_out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x + b * n_in;
    const double* dyr = dy + b * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      axpy(dyr[o], xr, dw + o * n_in, n_in);
      db[o] += dyr[o];
    }
  }
}

// Distances to one fixed point p over the contiguous range [j0, j1) of b.
// Lane partials are flushed to double every kFlush vectors.
inline double row_distance_sum(const float* p, const float* b,
                               std::size_t b_stride, std::size_t j0,
                               std::size_t j1, std::size_t dim) {
  constexpr std::size_t kFlush = 64;
  double total = 0.0;
  std::size_t j = j0;
  __m256 acc = _mm256_setzero_ps();
  std::size_t pending = 0;
  if (dim == 2) {
    const __m256 p0 = _mm256_set1_ps(p[0]);
    const __m256 p1 = _mm256_set1_ps(p[1]);
    const float* b0 = b;
    const float* b1 = b + b_stride;
    for (; j + 8 <= j1; j += 8) {
      const __m256 d0 = _mm256_sub_ps(_mm256_loadu_ps(b0 + j), p0);
      const __m256 d1 = _mm256_sub_ps(_mm256_loadu_ps(b1 + j), p1);
      const __m256 d2 = _mm256_fmadd_ps(d1, d1, _mm256_mul_ps(d0, d0));
      acc = _mm256_add_ps(acc, _mm256_sqrt_ps(d2));
      if (++pending == kFlush) {
        total += hsum(acc);
        acc = _mm256_setzero_ps();
        pending = 0;
      }
    }
  } else {
    for (; j + 8 <= j1; j += 8) {
      __m256 d2 = _mm256_setzero_ps();
      for (std::size_t c = 0; c < dim; ++c) {
        const __m256 d = _mm256_sub_ps(_mm256_loadu_ps(b + c * b_stride + j),
                                       _mm256_set1_ps(p[c]));
        d2 = _mm256_fmadd_ps(d, d, d2);
      }
      acc = _mm256_add_ps(acc, _mm256_sqrt_ps(d2));
      if (++pending == kFlush) {
        total += hsum(acc);
        acc = _mm256_setzero_ps();
        pending = 0;
      }
    }
  }
  total += hsum(acc);
  for (; j < j1; ++j) {
    float d2 = 0.0f;
    for (std::size_t c = 0; c < dim; ++c) {
      const float diff = p[c] - b[c * b_stride + j];
      d2 += diff * diff;
    }
    total += std::sqrt(d2);
  }
  return total;
}

constexpr std::size_t kMaxDim = 64;

double cross_distance_sum(const float* a, std::size_t na, std::size_t a_stride,
                          const float* b, std::size_t nb, std::size_t b_stride,
                          std::size_t dim) {
  if (dim > kMaxDim) return detail::kScalarTable.cross_distance_sum(
      a, na, a_stride, b, nb, b_stride, dim);
  float p[kMaxDim];
  double total = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    for (std::size_t c = 0; c < dim; ++c) p[c] = a[c * a_stride + i];
    total += row_distance_sum(p, b, b_stride, 0, nb, dim);
  }
  return total;
}

double self_distance_sum(const float* a, std::size_t n, std::size_t stride,
                         std::size_t dim) {
  if (dim > kMaxDim)
    return detail::kScalarTable.self_distance_sum(a, n, stride, dim);
  float p[kMaxDim];
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    for (std::size_t c = 0; c < dim; ++c) p[c] = a[c * stride + i];
    total += row_distance_sum(p, a, stride, i + 1, n, dim);
  }
  return total;
}

}  // namespace

namespace detail {
const KernelTable kAvx2Table{Isa::avx2,           dense_forward,
                             dense_backward_input, dense_backward_params,
                             cross_distance_sum,   self_distance_sum};
}  // namespace detail

}  // namespace psld::simd
