#pragma once

#include <cstddef>
#include <string_view>

// Data-parallel inner loops used by the network and the sample metrics.
//
// Every kernel has a portable scalar reference and, on x86-64, an AVX2+FMA
// variant. The active table is chosen once at startup from CPUID; setting
// PSLD_SIMD=scalar in the environment forces the reference path.

namespace psld::simd {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);

struct KernelTable {
  Isa isa;

  // y[b][o] = bias[o] + sum_i x[b][i] * w[o][i]
  // x: batch x n_in, w: n_out x n_in, y: batch x n_out (row-major)
  void (*dense_forward)(const double* x, const double* w, const double* bias,
                        double* y, std::size_t batch, std::size_t n_in,
                        std::size_t n_out);

  // dx[b][i] = sum_o dy[b][o] * w[o][i]   (overwrites dx)
  void (*dense_backward_input)(const double* dy, const double* w, double* dx,
                               std::size_t batch, std::size_t n_in,
                               std::size_t n_out);

  // dw[o][i] += sum_b dy[b][o] * x[b][i];  db[o] += sum_b dy[b][o]
  void (*dense_backward_params)(const double* dy, const double* x, double* dw,
                                double* db, std::size_t batch,
                                std::size_t n_in, std::size_t n_out);

  // Sum over all (i, j) of ||a_i - b_j||_2. Points are stored
  // coordinate-major: a[c * a_stride + i] is coordinate c of point i.
  double (*cross_distance_sum)(const float* a, std::size_t na,
                               std::size_t a_stride, const float* b,
                               std::size_t nb, std::size_t b_stride,
                               std::size_t dim);

  // Sum over i < j of ||a_i - a_j||_2, same layout as above.
  double (*self_distance_sum)(const float* a, std::size_t n,
                              std::size_t stride, std::size_t dim);
};

// Table selected for this process (CPU detection + PSLD_SIMD override).
const KernelTable& active();

// Table for a specific ISA; nullptr if it was not compiled in or the CPU
// lacks support.
const KernelTable* table_for(Isa isa);

namespace detail {
extern const KernelTable kScalarTable;
#if defined(PSLD_HAVE_AVX2)
extern const KernelTable kAvx2Table;
#endif
}  // namespace detail

}  // namespace psld::simd
