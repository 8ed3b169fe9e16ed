#pragma once

#include <cstddef>
#include <cstring>

namespace mft::detail {

// y[m×n] += a[m×k] · b[k×n], all row-major. Register-blocked 4×8 kernel on
// GCC/Clang vector extensions. Each output element accumulates its k products
// in ascending order, so results are reproducible run to run.
inline void gemm_nn(const double* a, const double* b, double* y, std::size_t m, std::size_t k, std::size_t n) {
    typedef double v4 __attribute__((vector_size(32)));
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
        const double* a0 = a + i * k;
        const double* a1 = a0 + k;
        const double* a2 = a1 + k;
        const double* a3 = a2 + k;
        std::size_t j = 0;
        for (; j + 8 <= n; j += 8) {
            v4 c00{}, c01{}, c10{}, c11{}, c20{}, c21{}, c30{}, c31{};
            for (std::size_t p = 0; p < k; ++p) {
                v4 b0, b1;
                std::memcpy(&b0, b + p * n + j, sizeof(v4));
                std::memcpy(&b1, b + p * n + j + 4, sizeof(v4));
                const double s0 = a0[p], s1 = a1[p], s2 = a2[p], s3 = a3[p];
                c00 += s0 * b0;
                c01 += s0 * b1;
                c10 += s1 * b0;
                c11 += s1 * b1;
                c20 += s2 * b0;
                c21 += s2 * b1;
                c30 += s3 * b0;
                c31 += s3 * b1;
            }
            const v4* acc[8] = {&c00, &c01, &c10, &c11, &c20, &c21, &c30, &c31};
            for (std::size_t r = 0; r < 4; ++r)
                for (std::size_t h = 0; h < 2; ++h)
                    for (std::size_t c = 0; c < 4; ++c) y[(i + r) * n + j + h * 4 + c] += (*acc[r * 2 + h])[c];
        }
        for (; j < n; ++j) {
            for (std::size_t r = 0; r < 4; ++r) {
                double acc = 0.0;
                for (std::size_t p = 0; p < k; ++p) acc += a[(i + r) * k + p] * b[p * n + j];
                y[(i + r) * n + j] += acc;
            }
        }
    }
    for (; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            y[i * n + j] += acc;
        }
    }
}

// out[c×r] = in[r×c]ᵀ
inline void transpose(const double* in, double* out, std::size_t r, std::size_t c) {
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = in[i * c + j];
}

} // namespace mft::detail
