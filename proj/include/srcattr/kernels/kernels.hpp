#pragma once

#include <cstddef>
#include <span>
#include <string_view>

// Dense double-precision vector kernels used by the encoders, cosine scoring
// and the retriever gradient. Each kernel has a scalar reference and, where the
// target supports it, an AVX2+FMA (x86-64) or NEON (AArch64) variant. The
// variant is chosen once at startup from CPUID; SRCATTR_SIMD=scalar|avx2|neon
// overrides the choice.

namespace srcattr::kernels {

enum class Isa { kScalar, kAvx2, kNeon };

struct KernelTable {
  Isa isa;
  double (*dot)(const double* x, const double* y, std::size_t n);
  double (*squared_norm)(const double* x, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
};

const KernelTable& scalar_table();
// nullptr when the variant was not compiled in.
const KernelTable* avx2_table();
const KernelTable* neon_table();

bool isa_available(Isa isa);
const KernelTable& table_for(Isa isa);
const KernelTable& active();
std::string_view isa_name(Isa isa);

double dot(std::span<const double> x, std::span<const double> y);
double squared_norm(std::span<const double> x);
void axpy(double a, std::span<const double> x, std::span<double> y);

}  // namespace srcattr::kernels
