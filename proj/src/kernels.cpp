#include "ltq/kernels.hpp"

#include <cstdlib>
#include <cstring>

namespace ltq::kernels {

namespace {

double dot_scalar(const float* a, const float* b, std::size_t n) {
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sum += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return sum;
}

double bilinear_scalar(const float* w, const float* m, const float* c, std::size_t n) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const float* row = m + i * n;
        double rowdot = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            rowdot += static_cast<double>(row[j]) * static_cast<double>(c[j]);
        }
        total += static_cast<double>(w[i]) * rowdot;
    }
    return total;
}

void add_into_scalar(double* acc, const float* x, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
        acc[i] += static_cast<double>(x[i]);
    }
}

void matvec_scalar(const float* m, const float* x, float* y, std::size_t rows, std::size_t cols) {
    for (std::size_t r = 0; r < rows; ++r) {
        y[r] = static_cast<float>(dot_scalar(m + r * cols, x, cols));
    }
}

}  // namespace

const Ops scalar_ops = {dot_scalar, bilinear_scalar, add_into_scalar, matvec_scalar,
                        Backend::scalar};

namespace {

const Ops& pick_backend() {
    const char* forced = std::getenv("LTQ_KERNELS");
#if defined(__x86_64__) || defined(_M_X64)
    if (forced != nullptr) {
        if (std::strcmp(forced, "scalar") == 0) return scalar_ops;
        if (std::strcmp(forced, "avx2") == 0 && avx2_supported()) return avx2_ops;
        return scalar_ops;
    }
    if (avx2_supported()) return avx2_ops;
#else
    (void)forced;
#endif
    return scalar_ops;
}

}  // namespace

const Ops& active() {
    static const Ops& chosen = pick_backend();
    return chosen;
}

std::string backend_name(const Ops& ops) {
    switch (ops.backend) {
        case Backend::avx2: return "avx2";
        case Backend::scalar: return "scalar";
    }
    return "scalar";
}

}  // namespace ltq::kernels
