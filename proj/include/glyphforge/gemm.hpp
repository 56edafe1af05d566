#pragma once

#include <cstddef>

namespace glyphforge::detail {

// C[M x N] += A[M x K] * B[K x N], all row-major with leading dimensions.
// Every output element accumulates its K products in ascending index order
// regardless of tiling, so results are bit-reproducible for a given shape.
template <class T>
void gemm_accumulate(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
                     std::size_t ldb, T* C, std::size_t ldc);

// out[cols x rows] = in[rows x cols]^T
template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out);

}  // namespace glyphforge::detail
