#if defined(__x86_64__) || defined(_M_X64)

#include "ltq/kernels.hpp"

#include <immintrin.h>

// AVX2 variants. Floats are widened to double lanes before accumulating so
// results stay within reassociation distance of the scalar kernels.
namespace ltq::kernels {

namespace {

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d shuf = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, shuf));
}

double dot_avx2(const float* a, const float* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_cvtps_pd(_mm_loadu_ps(a + i));
        __m256d vb = _mm256_cvtps_pd(_mm_loadu_ps(b + i));
        acc = _mm256_fmadd_pd(va, vb, acc);
    }
    double sum = hsum(acc);
    for (; i < n; ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

double bilinear_avx2(const float* w, const float* m, const float* c, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        total += static_cast<double>(w[i]) * dot_avx2(m + i * n, c, n);
    }
    return total;
}

void add_into_avx2(double* acc, const float* x, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d va = _mm256_loadu_pd(acc + i);
        __m256d vx = _mm256_cvtps_pd(_mm_loadu_ps(x + i));
        _mm256_storeu_pd(acc + i, _mm256_add_pd(va, vx));
    }
    for (; i < n; ++i) {
        acc[i] += static_cast<double>(x[i]);
    }
}

void matvec_avx2(const float* m, const float* x, float* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = static_cast<float>(dot_avx2(m + r * cols, x, cols));
    }
}

}  // namespace

const Ops avx2_ops = {dot_avx2, bilinear_avx2, add_into_avx2, matvec_avx2, Backend::avx2};

bool avx2_supported() {
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
}

}  // namespace ltq::kernels

#endif
