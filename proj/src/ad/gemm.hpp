#pragma once

#include <cblas.h>

#include <algorithm>
#include <vector>

namespace blend::ad::detail {

// C[m,n] = alpha * op(A) * op(B) + beta * C, row-major.
inline void gemm(bool ta, bool tb, int m, int n, int k, float alpha, const float* a, int lda, const float* b,
                 int ldb, float beta, float* c, int ldc) {
    cblas_sgemm(CblasRowMajor, ta ? CblasTrans : CblasNoTrans, tb ? CblasTrans : CblasNoTrans, m, n, k, alpha, a,
                lda, b, ldb, beta, c, ldc);
}

// The double path is only used for gradient checks, so it trades speed for
// independence from the OpenBLAS dgemm kernels, which return wrong products
// for some small shapes on AVX-512 builds of 0.3.20.
inline void gemm(bool ta, bool tb, int m, int n, int k, double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc) {
    std::vector<double> row(static_cast<std::size_t>(n));
    for (int i = 0; i < m; ++i) {
        std::fill(row.begin(), row.end(), 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = ta ? a[static_cast<std::size_t>(p) * lda + i] : a[static_cast<std::size_t>(i) * lda + p];
            if (av == 0.0) continue;
            if (tb) {
                for (int j = 0; j < n; ++j) row[j] += av * b[static_cast<std::size_t>(j) * ldb + p];
            } else {
                const double* br = b + static_cast<std::size_t>(p) * ldb;
                for (int j = 0; j < n; ++j) row[j] += av * br[j];
            }
        }
        double* cr = c + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) cr[j] = alpha * row[j] + (beta == 0.0 ? 0.0 : beta * cr[j]);
    }
}

}  // namespace blend::ad::detail
