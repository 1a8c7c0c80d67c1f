// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <string_view>

namespace kdda::simd {

// Row-major double-precision kernels. Every entry has a scalar reference
// implementation; vector variants must agree with it to rounding.
//
// gemm_nn: c[m x n] (+)= a[m x k] * b[k x n]
// gemm_nt: c[m x n] (+)= a[m x k] * b[n x k]^T
// gemm_tn: c[m x n] (+)= a[k x m]^T * b[k x n]
// When `accumulate` is false the output is overwritten.
struct KernelTable {
  std::string_view name;

  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);

  // y += alpha * x
  void (*axpy)(std::size_t n, double alpha, const double* x, double* y);
  // y = x * alpha
  void (*scale)(std::size_t n, double alpha, const double* x, double* y);
  // z = x (*) y elementwise
  void (*hadamard)(std::size_t n, const double* x, const double* y, double* z);
  double (*dot)(std::size_t n, const double* x, const double* y);
  double (*sum)(std::size_t n, const double* x);

  // out[i * n + j] = ||a_i - b_j||^2 for a[m x d], b[n x d].
  void (*pairwise_sq_dist)(const double* a, const double* b, double* out,
                           std::size_t m, std::size_t n, std::size_t d);

  // Momentum SGD with coupled weight decay:
  //   v <- momentum * v + (g + weight_decay * w);  w <- w - lr * v
  void (*momentum_step)(std::size_t n, double* w, const double* g, double* v,
                        double lr, double weight_decay, double momentum);
};

const KernelTable& scalar_kernels();

// nullptr when the binary was built without the variant or the CPU lacks it.
const KernelTable* avx2_kernels();

// The table selected for this process. Chosen once: AVX2+FMA when the CPU
// supports it, scalar otherwise. KDDA_SIMD=scalar in the environment forces
// the reference path.
const KernelTable& active_kernels();

}  // namespace kdda::simd
