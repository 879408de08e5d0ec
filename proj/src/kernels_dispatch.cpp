#include <cstdlib>
#include <cstring>

#include "lcs/kernels.hpp"

namespace lcs::kern {

#if defined(__x86_64__) || defined(_M_X64)
const Kernels& avx2_kernels();
static bool avx2_supported() {
#if defined(__GNUC__) || defined(__clang__)
    return __builtin_cpu_supports("avx2");
#else
    return false;
#endif
}
#endif
#if defined(__aarch64__)
const Kernels& neon_kernels();
#endif

namespace {

const Kernels* select() {
    const char* forced = std::getenv("LCS_KERNELS");
    if (forced != nullptr) {
        if (std::strcmp(forced, "scalar") == 0) return &scalar_kernels();
#if defined(__x86_64__) || defined(_M_X64)
        if (std::strcmp(forced, "avx2") == 0 && avx2_supported()) return &avx2_kernels();
#endif
#if defined(__aarch64__)
        if (std::strcmp(forced, "neon") == 0) return &neon_kernels();
#endif
        return &scalar_kernels();
    }
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_supported()) return &avx2_kernels();
#endif
#if defined(__aarch64__)
    return &neon_kernels();
#endif
    return &scalar_kernels();
}

}  // namespace

const Kernels& active() {
    static const Kernels* chosen = select();
    return *chosen;
}

std::vector<const Kernels*> available() {
    std::vector<const Kernels*> out{&scalar_kernels()};
#if defined(__x86_64__) || defined(_M_X64)
    if (avx2_supported()) out.push_back(&avx2_kernels());
#endif
#if defined(__aarch64__)
    out.push_back(&neon_kernels());
#endif
    return out;
}

}  // namespace lcs::kern
