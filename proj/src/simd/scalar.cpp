#include "psld/simd/kernels.hpp"

#include <cmath>

namespace psld::simd {
namespace {

void dense_forward(const double* x, const double* w, const double* bias,
                   double* y, std::size_t batch, std::size_t n_in,
                   std::size_t n_out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x + b * n_in;
    double* yr = y + b * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double* wr = w + o * n_in;
      double acc = 0.0;
      for (std::size_t i = 0; i < n_in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc + bias[o];
    }
  }
}

void dense_backward_input(const double* dy, const double* w, double* dx,
                          std::size_t batch, std::size_t n_in,
                          std::size_t n_out) {
  for (std::size_t b = 0; b < batch; ++b) {
    double* dxr = dx + b * n_in;
    for (std::size_t i = 0; i < n_in; ++i) dxr[i] = 0.0;
    const double* dyr = dy + b * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double g = dyr[o];
      const double* wr = w + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) dxr[i] += g * wr[i];
    }
  }
}

void dense_backward_params(const double* dy, const double* x, double* dw,
                           double* db, std::size_t batch, std::size_t n_in,
                           std::size_t n_out) {
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x + b * n_in;
    const double* dyr = dy + b * n_out;
    for (std::size_t o = 0; o < n_out; ++o) {
      const double g = dyr[o];
      double* dwr = dw + o * n_in;
      for (std::size_t i = 0; i < n_in; ++i) dwr[i] += g * xr[i];
      db[o] += g;
    }
  }
}

double cross_distance_sum(const float* a, std::size_t na, std::size_t a_stride,
                          const float* b, std::size_t nb, std::size_t b_stride,
                          std::size_t dim) {
  double total = 0.0;
  for (std::size_t i = 0; i < na; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < nb; ++j) {
      float d2 = 0.0f;
      for (std::size_t c = 0; c < dim; ++c) {
        const float diff = a[c * a_stride + i] - b[c * b_stride + j];
        d2 += diff * diff;
      }
      row += std::sqrt(d2);
    }
    total += row;
  }
  return total;
}

double self_distance_sum(const float* a, std::size_t n, std::size_t stride,
                         std::size_t dim) {
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) {
    double row = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      float d2 = 0.0f;
      for (std::size_t c = 0; c < dim; ++c) {
        const float diff = a[c * stride + i] - a[c * stride + j];
        d2 += diff * diff;
      }
      row += std::sqrt(d2);
    }
    total += row;
  }
  return total;
}

}  // namespace

namespace detail {
const KernelTable kScalarTable{Isa::scalar,         dense_forward,
                               dense_backward_input, dense_backward_params,
                               cross_distance_sum,   self_distance_sum};
}  // namespace detail

}  // namespace psld::simd
