#include "glyphforge/gemm.hpp"

#include <type_traits>

#if defined(__AVX2__)
#include <immintrin.h>
#endif

namespace glyphforge::detail {
namespace {

// One 64-byte vector; on narrower targets the compiler splits it.
template <class T>
using Vec [[gnu::vector_size(64)]] = T;
template <class T>
using VecU [[gnu::vector_size(64), gnu::aligned(alignof(T)), gnu::may_alias]] = T;

template <class T>
inline Vec<T> load(const T* p) {
  return *reinterpret_cast<const VecU<T>*>(p);
}

template <class T>
inline void store(T* p, Vec<T> v) {
  *reinterpret_cast<VecU<T>*>(p) = v;
}

template <class T, int MR, int NR>
inline void micro_kernel(std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C,
                         std::size_t ldc) {
  T acc[MR][NR];
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) acc[i][j] = C[i * ldc + j];
  for (std::size_t p = 0; p < K; ++p) {
    const T* b = B + p * ldb;
    for (int i = 0; i < MR; ++i) {
      const T a = A[i * lda + p];
      for (int j = 0; j < NR; ++j) acc[i][j] += a * b[j];
    }
  }
  for (int i = 0; i < MR; ++i)
    for (int j = 0; j < NR; ++j) C[i * ldc + j] = acc[i][j];
}

// Single-vector-wide tile; the generic kernel above does not vectorize at
// this width.
template <class T, int MR>
inline void narrow_kernel(std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C,
                          std::size_t ldc) {
  Vec<T> acc[MR];
#pragma GCC unroll 8
  for (int i = 0; i < MR; ++i) acc[i] = load<T>(C + i * ldc);
  for (std::size_t p = 0; p < K; ++p) {
    const Vec<T> b = load<T>(B + p * ldb);
#pragma GCC unroll 8
    for (int i = 0; i < MR; ++i) acc[i] += A[i * lda + p] * b;
  }
#pragma GCC unroll 8
  for (int i = 0; i < MR; ++i) store<T>(C + i * ldc, acc[i]);
}

template <class T>
inline void scalar_block(std::size_t i0, std::size_t i1, std::size_t j0, std::size_t j1, std::size_t K, const T* A,
                         std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc) {
  for (std::size_t i = i0; i < i1; ++i) {
    for (std::size_t j = j0; j < j1; ++j) {
      T s = C[i * ldc + j];
      for (std::size_t p = 0; p < K; ++p) s += A[i * lda + p] * B[p * ldb + j];
      C[i * ldc + j] = s;
    }
  }
}

// Register tile sizes: a row of NR values spans whole vector registers.
template <class T>
struct Tile;
template <>
struct Tile<float> {
  static constexpr int mr = 8, nr = 48, nr_tail = 16;
};
template <>
struct Tile<double> {
  static constexpr int mr = 4, nr = 24, nr_tail = 8;
};

}  // namespace

template <class T>
void gemm_accumulate(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B,
                     std::size_t ldb, T* C, std::size_t ldc) {
  constexpr std::size_t MR = Tile<T>::mr, NR = Tile<T>::nr, NT = Tile<T>::nr_tail;
  std::size_t i = 0;
  for (; i + MR <= M; i += MR) {
    std::size_t j = 0;
    for (; j + NR <= N; j += NR)
      micro_kernel<T, MR, NR>(K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc);
    for (; j + NT <= N; j += NT)
      narrow_kernel<T, MR>(K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc);
    scalar_block(i, i + MR, j, N, K, A, lda, B, ldb, C, ldc);
  }
  for (; i < M; ++i) {
    std::size_t j = 0;
    for (; j + NR <= N; j += NR) micro_kernel<T, 1, NR>(K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc);
    for (; j + NT <= N; j += NT) narrow_kernel<T, 1>(K, A + i * lda, lda, B + j, ldb, C + i * ldc + j, ldc);
    scalar_block(i, i + 1, j, N, K, A, lda, B, ldb, C, ldc);
  }
}

namespace {

template <class T>
void transpose_generic(std::size_t rows, std::size_t cols, const T* in, T* out) {
  constexpr std::size_t blk = 16;
  for (std::size_t r0 = 0; r0 < rows; r0 += blk)
    for (std::size_t c0 = 0; c0 < cols; c0 += blk)
      for (std::size_t r = r0; r < rows && r < r0 + blk; ++r)
        for (std::size_t c = c0; c < cols && c < c0 + blk; ++c) out[c * rows + r] = in[r * cols + c];
}

#if defined(__AVX2__)
inline void transpose8x8(const float* in, std::size_t ld_in, float* out, std::size_t ld_out) {
  __m256 r[8], t[8];
  for (int i = 0; i < 8; ++i) r[i] = _mm256_loadu_ps(in + i * ld_in);
  for (int i = 0; i < 8; i += 2) {
    t[i] = _mm256_unpacklo_ps(r[i], r[i + 1]);
    t[i + 1] = _mm256_unpackhi_ps(r[i], r[i + 1]);
  }
  for (int i = 0; i < 8; i += 4) {
    r[i] = _mm256_shuffle_ps(t[i], t[i + 2], 0x44);
    r[i + 1] = _mm256_shuffle_ps(t[i], t[i + 2], 0xEE);
    r[i + 2] = _mm256_shuffle_ps(t[i + 1], t[i + 3], 0x44);
    r[i + 3] = _mm256_shuffle_ps(t[i + 1], t[i + 3], 0xEE);
  }
  for (int i = 0; i < 4; ++i) {
    t[i] = _mm256_permute2f128_ps(r[i], r[i + 4], 0x20);
    t[i + 4] = _mm256_permute2f128_ps(r[i], r[i + 4], 0x31);
  }
  for (int i = 0; i < 8; ++i) _mm256_storeu_ps(out + i * ld_out, t[i]);
}
#endif

}  // namespace

template <class T>
void transpose(std::size_t rows, std::size_t cols, const T* in, T* out) {
#if defined(__AVX2__)
  if constexpr (std::is_same_v<T, float>) {
    const std::size_t r8 = rows / 8 * 8, c8 = cols / 8 * 8;
    // Pairs of row blocks so each output row receives a full cache line.
    for (std::size_t r0 = 0; r0 < r8; r0 += 16)
      for (std::size_t c = 0; c < c8; c += 8)
        for (std::size_t r = r0; r < r0 + 16 && r < r8; r += 8)
          transpose8x8(in + r * cols + c, cols, out + c * rows + r, rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = r < r8 ? c8 : 0; c < cols; ++c) out[c * rows + r] = in[r * cols + c];
    return;
  }
#endif
  transpose_generic(rows, cols, in, out);
}

template void gemm_accumulate<float>(std::size_t, std::size_t, std::size_t, const float*, std::size_t, const float*,
                                     std::size_t, float*, std::size_t);
template void gemm_accumulate<double>(std::size_t, std::size_t, std::size_t, const double*, std::size_t,
                                      const double*, std::size_t, double*, std::size_t);
template void transpose<float>(std::size_t, std::size_t, const float*, float*);
template void transpose<double>(std::size_t, std::size_t, const double*, double*);

}  // namespace glyphforge::detail
