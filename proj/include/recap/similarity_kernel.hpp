#pragma once

// Dense dot-product kernels for unit vectors and patch matrices.
//
// Every similarity value is produced by the same per-element arithmetic:
// eight float lanes accumulated over d in chunks of 8, a fixed-order
// horizontal sum, then a sequential scalar tail. Because of that,
// sim(a, b) == sim(b, a) bit for bit, and a value never depends on which
// tile shape or thread computed it. Build with -ffp-contract=off so the
// compiler cannot fuse some multiply-adds and not others.

#include <algorithm>
#include <cstddef>
#include <cstring>
#include <limits>
#include <span>
#include <vector>

#if defined(__FMA__) && defined(__AVX__)
#include <immintrin.h>
#endif

namespace recap::kernel {

using v8f = float __attribute__((vector_size(32)));

inline v8f load8(const float* p) {
  v8f v;
  std::memcpy(&v, p, sizeof v);
  return v;
}

inline v8f madd(v8f a, v8f b, v8f acc) {
#if defined(__FMA__) && defined(__AVX__)
  return reinterpret_cast<v8f>(_mm256_fmadd_ps(reinterpret_cast<__m256>(a), reinterpret_cast<__m256>(b),
                                               reinterpret_cast<__m256>(acc)));
#else
  return acc + a * b;
#endif
}

inline float finish(v8f acc, const float* a, const float* b, std::size_t from, std::size_t dim) {
  float s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (std::size_t d = from; d < dim; ++d) s += a[d] * b[d];
  return s;
}

inline float dot(const float* a, const float* b, std::size_t dim) {
  const std::size_t d8 = dim & ~std::size_t{7};
  v8f acc = {};
  for (std::size_t d = 0; d < d8; d += 8) acc = madd(load8(a + d), load8(b + d), acc);
  return finish(acc, a, b, d8, dim);
}

inline float dot(std::span<const float> a, std::span<const float> b) { return dot(a.data(), b.data(), a.size()); }

// R rows of A against C rows of B; out[r][c] = dot(A_r, B_c).
template <int R, int C>
inline void dot_tile(const float* a, const float* b, std::size_t dim, float (&out)[R][C]) {
  const std::size_t d8 = dim & ~std::size_t{7};
  v8f acc[R][C] = {};
  for (std::size_t d = 0; d < d8; d += 8) {
    v8f bv[C];
    for (int c = 0; c < C; ++c) bv[c] = load8(b + c * dim + d);
    for (int r = 0; r < R; ++r) {
      const v8f av = load8(a + r * dim + d);
      for (int c = 0; c < C; ++c) acc[r][c] = madd(av, bv[c], acc[r][c]);
    }
  }
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out[r][c] = finish(acc[r][c], a + r * dim, b + c * dim, d8, dim);
}

// For row-major A (rows_a x dim) and B (rows_b x dim), computes the maximum
// of every row and every column of A * B^T without materializing it.
inline void row_col_max(const float* a, std::size_t rows_a, const float* b, std::size_t rows_b, std::size_t dim,
                        std::span<float> row_max, std::span<float> col_max) {
  constexpr int kR = 4;
  constexpr int kC = 3;
  std::fill(row_max.begin(), row_max.end(), -std::numeric_limits<float>::infinity());
  std::fill(col_max.begin(), col_max.end(), -std::numeric_limits<float>::infinity());

  auto update = [&](std::size_t i, std::size_t j, float s) {
    row_max[i] = std::max(row_max[i], s);
    col_max[j] = std::max(col_max[j], s);
  };

  const std::size_t ra = rows_a - rows_a % kR;
  const std::size_t rb = rows_b - rows_b % kC;
  for (std::size_t i = 0; i < ra; i += kR) {
    const float* ai = a + i * dim;
    for (std::size_t j = 0; j < rb; j += kC) {
      float tile[kR][kC];
      dot_tile<kR, kC>(ai, b + j * dim, dim, tile);
      for (int r = 0; r < kR; ++r)
        for (int c = 0; c < kC; ++c) update(i + r, j + c, tile[r][c]);
    }
    for (std::size_t j = rb; j < rows_b; ++j)
      for (int r = 0; r < kR; ++r) update(i + r, j, dot(ai + r * dim, b + j * dim, dim));
  }
  for (std::size_t i = ra; i < rows_a; ++i)
    for (std::size_t j = 0; j < rows_b; ++j) update(i, j, dot(a + i * dim, b + j * dim, dim));
}

}  // namespace recap::kernel
