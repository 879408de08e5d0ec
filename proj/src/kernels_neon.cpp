#if defined(__aarch64__)

#include <arm_neon.h>

#include "lcs/kernels.hpp"

// NEON variants. float64x2 gives two lanes per register, so two registers
// model the contract's four accumulation lanes: acc01 holds lanes 0/1 and
// acc23 lanes 2/3. vmulq/vaddq only, no fused multiply-add.

namespace lcs::kern {
namespace {

inline double combine_contract(float64x2_t acc01, float64x2_t acc23) {
    const double l0 = vgetq_lane_f64(acc01, 0);
    const double l1 = vgetq_lane_f64(acc01, 1);
    const double l2 = vgetq_lane_f64(acc23, 0);
    const double l3 = vgetq_lane_f64(acc23, 1);
    return (l0 + l1) + (l2 + l3);
}

double dot_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc01 = vdupq_n_f64(0.0);
    float64x2_t acc23 = vdupq_n_f64(0.0);
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t i = 0; i < n4; i += 4) {
        acc01 = vaddq_f64(acc01, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
        acc23 = vaddq_f64(acc23, vmulq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2)));
    }
    double r = combine_contract(acc01, acc23);
    for (std::size_t i = n4; i < n; ++i) r += a[i] * b[i];
    return r;
}

double sqdist_neon(const double* a, const double* b, std::size_t n) {
    float64x2_t acc01 = vdupq_n_f64(0.0);
    float64x2_t acc23 = vdupq_n_f64(0.0);
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t i = 0; i < n4; i += 4) {
        const float64x2_t d01 = vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i));
        const float64x2_t d23 = vsubq_f64(vld1q_f64(a + i + 2), vld1q_f64(b + i + 2));
        acc01 = vaddq_f64(acc01, vmulq_f64(d01, d01));
        acc23 = vaddq_f64(acc23, vmulq_f64(d23, d23));
    }
    double r = combine_contract(acc01, acc23);
    for (std::size_t i = n4; i < n; ++i) {
        const double d = a[i] - b[i];
        r += d * d;
    }
    return r;
}

double sum_neon(const double* a, std::size_t n) {
    float64x2_t acc01 = vdupq_n_f64(0.0);
    float64x2_t acc23 = vdupq_n_f64(0.0);
    const std::size_t n4 = n & ~std::size_t(3);
    for (std::size_t i = 0; i < n4; i += 4) {
        acc01 = vaddq_f64(acc01, vld1q_f64(a + i));
        acc23 = vaddq_f64(acc23, vld1q_f64(a + i + 2));
    }
    double r = combine_contract(acc01, acc23);
    for (std::size_t i = n4; i < n; ++i) r += a[i];
    return r;
}

void axpy_neon(double alpha, const double* x, double* y, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < n2; i += 2) {
        vst1q_f64(y + i, vaddq_f64(vld1q_f64(y + i), vmulq_f64(va, vld1q_f64(x + i))));
    }
    for (std::size_t i = n2; i < n; ++i) y[i] += alpha * x[i];
}

void scale_neon(double alpha, const double* x, double* out, std::size_t n) {
    const float64x2_t va = vdupq_n_f64(alpha);
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < n2; i += 2) {
        vst1q_f64(out + i, vmulq_f64(va, vld1q_f64(x + i)));
    }
    for (std::size_t i = n2; i < n; ++i) out[i] = alpha * x[i];
}

void add_neon(const double* a, const double* b, double* out, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < n2; i += 2) {
        vst1q_f64(out + i, vaddq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (std::size_t i = n2; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_neon(const double* a, const double* b, double* out, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < n2; i += 2) {
        vst1q_f64(out + i, vsubq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (std::size_t i = n2; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_neon(const double* a, const double* b, double* out, std::size_t n) {
    const std::size_t n2 = n & ~std::size_t(1);
    for (std::size_t i = 0; i < n2; i += 2) {
        vst1q_f64(out + i, vmulq_f64(vld1q_f64(a + i), vld1q_f64(b + i)));
    }
    for (std::size_t i = n2; i < n; ++i) out[i] = a[i] * b[i];
}

}  // namespace

const Kernels& neon_kernels() {
    static const Kernels k{"neon", dot_neon, sqdist_neon, sum_neon,
                           axpy_neon, scale_neon, add_neon, sub_neon, mul_neon};
    return k;
}

}  // namespace lcs::kern

#endif
