#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace lcs::kern {

// Double-precision inner-loop kernels with scalar, AVX2 and NEON variants,
// selected once at startup.
//
// Every variant of a reduction (dot, sqdist, sum) must produce bit-identical
// results. The shared contract: elements are accumulated into four
// stride-interleaved lanes (lane k takes elements k, k+4, k+8, ...), the lanes
// are combined as (l0 + l1) + (l2 + l3), and any tail elements (n % 4) are
// added sequentially afterwards. No FMA contraction. Elementwise kernels have
// no reduction order and are bit-identical trivially.
struct Kernels {
    const char* name;

    double (*dot)(const double* a, const double* b, std::size_t n);
    double (*sqdist)(const double* a, const double* b, std::size_t n);
    double (*sum)(const double* a, std::size_t n);

    void (*axpy)(double alpha, const double* x, double* y, std::size_t n);  // y += alpha*x
    void (*scale)(double alpha, const double* x, double* out, std::size_t n);
    void (*add)(const double* a, const double* b, double* out, std::size_t n);
    void (*sub)(const double* a, const double* b, double* out, std::size_t n);
    void (*mul)(const double* a, const double* b, double* out, std::size_t n);
};

const Kernels& scalar_kernels();

// Active variant: AVX2 or NEON when the CPU supports it, otherwise scalar.
// LCS_KERNELS=scalar|avx2|neon overrides the choice (unknown/unsupported
// names fall back to scalar).
const Kernels& active();

// All variants runnable on this machine, scalar first. For equivalence tests.
std::vector<const Kernels*> available();

}  // namespace lcs::kern
