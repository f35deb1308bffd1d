#include <cstdlib>
#include <stdexcept>
#include <string>

#include "srcattr/kernels/kernels.hpp"

namespace srcattr::kernels {

#ifndef SRCATTR_HAVE_AVX2
const KernelTable* avx2_table() { return nullptr; }
#endif
#ifndef SRCATTR_HAVE_NEON
const KernelTable* neon_table() { return nullptr; }
#endif

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return true;
    case Isa::kAvx2:
#if defined(SRCATTR_HAVE_AVX2) && (defined(__GNUC__) || defined(__clang__))
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") &&
             __builtin_cpu_supports("fma");
#else
      return false;
#endif
    case Isa::kNeon:
      return neon_table() != nullptr;
  }
  return false;
}

const KernelTable& table_for(Isa isa) {
  if (!isa_available(isa)) {
    throw std::runtime_error("SIMD variant not available: " + std::string(isa_name(isa)));
  }
  switch (isa) {
    case Isa::kAvx2:
      return *avx2_table();
    case Isa::kNeon:
      return *neon_table();
    default:
      return scalar_table();
  }
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::kScalar:
      return "scalar";
    case Isa::kAvx2:
      return "avx2";
    case Isa::kNeon:
      return "neon";
  }
  return "unknown";
}

namespace {

const KernelTable& select() {
  if (const char* env = std::getenv("SRCATTR_SIMD")) {
    const std::string want(env);
    for (Isa isa : {Isa::kScalar, Isa::kAvx2, Isa::kNeon}) {
      if (want == isa_name(isa)) return table_for(isa);
    }
    throw std::runtime_error("unknown SRCATTR_SIMD value: " + want);
  }
  if (isa_available(Isa::kAvx2)) return *avx2_table();
  if (isa_available(Isa::kNeon)) return *neon_table();
  return scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& t = select();
  return t;
}

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("dot: length mismatch");
  return active().dot(x.data(), y.data(), x.size());
}

double squared_norm(std::span<const double> x) { return active().squared_norm(x.data(), x.size()); }

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("axpy: length mismatch");
  active().axpy(a, x.data(), y.data(), x.size());
}

}  // namespace srcattr::kernels
