/*
 * Copyright 2026 The tilefabric Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

// Brute-force single-threaded references. Deliberately written with the
// most obvious loops (no tiling, no streaming softmax) so they stay an
// independent check on the fabric patterns; the benchmark's --verify mode
// and the test suites both compare against these.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "tilefabric/common.hpp"

namespace tilefabric::reference {

// C[m x n] = A[m x k] * B[k x n], row-major, f32 accumulation in ascending
// k order.
inline std::vector<float> gemm(const float* a, const float* b, std::size_t m,
                               std::size_t n, std::size_t k) {
  std::vector<float> c(m * n, 0.0f);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      float acc = 0.0f;
      for (std::size_t p = 0; p < k; ++p) {
        acc += a[i * k + p] * b[p * n + j];
      }
      c[i * n + j] = acc;
    }
  }
  return c;
}

inline std::vector<float> gemm(const std::vector<float>& a,
                               const std::vector<float>& b, std::size_t m,
                               std::size_t n, std::size_t k) {
  return gemm(a.data(), b.data(), m, n, k);
}

// Single-query attention with a monolithic two-pass softmax over the whole
// key/value sequence:
//
//   out[h] = sum_j softmax(scale * q[h] . k[h][j])_j * v[h][j]
//
// q is heads x head_dim; k and v are heads x kv_len x head_dim.
inline std::vector<float> attention(const float* q, const float* k,
                                    const float* v, std::size_t heads,
                                    std::size_t head_dim, std::size_t kv_len,
                                    float scale) {
  std::vector<float> out(heads * head_dim, 0.0f);
  std::vector<float> scores(kv_len);
  for (std::size_t h = 0; h < heads; ++h) {
    const float* qh = q + h * head_dim;
    const float* kh = k + h * kv_len * head_dim;
    const float* vh = v + h * kv_len * head_dim;

    float max_score = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < kv_len; ++j) {
      float s = 0.0f;
      for (std::size_t e = 0; e < head_dim; ++e) {
        s += qh[e] * kh[j * head_dim + e];
      }
      scores[j] = scale * s;
      max_score = std::max(max_score, scores[j]);
    }

    float denom = 0.0f;
    for (std::size_t j = 0; j < kv_len; ++j) {
      scores[j] = std::exp(scores[j] - max_score);
      denom += scores[j];
    }

    float* oh = out.data() + h * head_dim;
    for (std::size_t j = 0; j < kv_len; ++j) {
      const float w = scores[j] / denom;
      for (std::size_t e = 0; e < head_dim; ++e) {
        oh[e] += w * vh[j * head_dim + e];
      }
    }
  }
  return out;
}

inline std::vector<float> attention(const std::vector<float>& q,
                                    const std::vector<float>& k,
                                    const std::vector<float>& v,
                                    std::size_t heads, std::size_t head_dim,
                                    std::size_t kv_len, float scale) {
  return attention(q.data(), k.data(), v.data(), heads, head_dim, kv_len,
                   scale);
}

// Verification comparator for attention outputs: the max over heads of the
// largest elementwise difference within the head, relative to the head's
// own output scale. Cancellation can drive single elements to ~0, where a
// plain elementwise relative error only measures rounding noise; the head
// norm is the denominator that reflects actual disagreement.
inline double max_head_relative_error(const std::vector<float>& a,
                                      const std::vector<float>& b, int heads,
                                      int head_dim) {
  double worst = 0.0;
  for (int h = 0; h < heads; ++h) {
    double scale = 0.0;
    double diff = 0.0;
    for (int e = 0; e < head_dim; ++e) {
      const std::size_t i =
          static_cast<std::size_t>(h) * head_dim + static_cast<std::size_t>(e);
      scale = std::max(scale, static_cast<double>(std::max(
                                  std::fabs(a[i]), std::fabs(b[i]))));
      diff = std::max(diff, std::fabs(static_cast<double>(a[i]) - b[i]));
    }
    worst = std::max(worst, diff / std::max(scale, 1e-30));
  }
  return worst;
}

}  // namespace tilefabric::reference
