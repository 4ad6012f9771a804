#include <cstdlib>
#include <string>

#include "psld/simd/kernels.hpp"

namespace psld::simd {

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return "scalar";
    case Isa::avx2:
      return "avx2";
  }
  return "unknown";
}

namespace {

bool cpu_has_avx2() {
#if defined(PSLD_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable& select() {
  if (const char* env = std::getenv("PSLD_SIMD")) {
    if (std::string(env) == "scalar") return detail::kScalarTable;
  }
#if defined(PSLD_HAVE_AVX2)
  if (cpu_has_avx2()) return detail::kAvx2Table;
#endif
  return detail::kScalarTable;
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& table = select();
  return table;
}

const KernelTable* table_for(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return &detail::kScalarTable;
    case Isa::avx2:
#if defined(PSLD_HAVE_AVX2)
      if (cpu_has_avx2()) return &detail::kAvx2Table;
#endif
      return nullptr;
  }
  return nullptr;
}

}  // namespace psld::simd
