#pragma once

#include <cstddef>
#include <string>

// Numeric inner loops shared by the encoder pooling math and the decoder
// heads. Every kernel has a scalar reference implementation and, on x86-64,
// an AVX2 variant; the active set is picked at runtime from CPU features.
// All reductions accumulate in double so the scalar and SIMD paths agree to
// within reassociation error (~1e-14 relative), never in magnitude.
namespace ltq::kernels {

enum class Backend { scalar, avx2 };

struct Ops {
    // sum_i a[i] * b[i]
    double (*dot)(const float* a, const float* b, std::size_t n);
    // w^T * M * c for a row-major n x n matrix M
    double (*bilinear)(const float* w, const float* m, const float* c, std::size_t n);
    // acc[i] += x[i], double accumulator
    void (*add_into)(double* acc, const float* x, std::size_t n);
    // y[r] = sum_c M[r][c] * x[c] for a row-major rows x cols matrix
    void (*matvec)(const float* m, const float* x, float* y, std::size_t rows, std::size_t cols);
    Backend backend;
};

// Scalar reference kernels, always available; SIMD variants are
// equivalence-tested against these.
extern const Ops scalar_ops;

#if defined(__x86_64__) || defined(_M_X64)
extern const Ops avx2_ops;
bool avx2_supported();
#endif

// Active kernel set. Chosen once from CPU features; the LTQ_KERNELS
// environment variable ("scalar" or "avx2") overrides the choice.
const Ops& active();

std::string backend_name(const Ops& ops);

inline double dot(const float* a, const float* b, std::size_t n) {
    return active().dot(a, b, n);
}
inline double bilinear(const float* w, const float* m, const float* c, std::size_t n) {
    return active().bilinear(w, m, c, n);
}
inline void add_into(double* acc, const float* x, std::size_t n) {
    active().add_into(acc, x, n);
}
inline void matvec(const float* m, const float* x, float* y, std::size_t rows, std::size_t cols) {
    active().matvec(m, x, y, rows, cols);
}

}  // namespace ltq::kernels
