// Copyright 2026 The kdda Authors
// SPDX-License-Identifier: Apache-2.0

#include <cstdlib>
#include <string_view>

#include "kdda/simd/kernels.hpp"

namespace kdda::simd {

const KernelTable& active_kernels() {
  static const KernelTable& table = []() -> const KernelTable& {
    const char* forced = std::getenv("KDDA_SIMD");
    if (forced != nullptr && std::string_view(forced) == "scalar")
      return scalar_kernels();
    if (const KernelTable* avx2 = avx2_kernels()) return *avx2;
    return scalar_kernels();
  }();
  return table;
}

}  // namespace kdda::simd
