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

#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "tilefabric/common.hpp"

namespace tilefabric {

// Row-major 2-D views with an element stride, so tiles can point straight
// into larger buffers (a symmetric region, a full B matrix) without copies.

struct ConstMatrixView {
  const float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;  // elements between row starts

  const float& at(std::size_t i, std::size_t j) const {
    return data[i * stride + j];
  }
};

struct MatrixView {
  float* data = nullptr;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t stride = 0;

  float& at(std::size_t i, std::size_t j) const {
    return data[i * stride + j];
  }
  operator ConstMatrixView() const { return {data, rows, cols, stride}; }
};

inline ConstMatrixView view(const std::vector<float>& v, std::size_t rows,
                            std::size_t cols) {
  return {v.data(), rows, cols, cols};
}

inline MatrixView view(std::vector<float>& v, std::size_t rows,
                       std::size_t cols) {
  return {v.data(), rows, cols, cols};
}

inline ConstMatrixView subview(ConstMatrixView m, std::size_t row0,
                               std::size_t col0, std::size_t rows,
                               std::size_t cols) {
  return {m.data + row0 * m.stride + col0, rows, cols, m.stride};
}

inline MatrixView subview(MatrixView m, std::size_t row0, std::size_t col0,
                          std::size_t rows, std::size_t cols) {
  return {m.data + row0 * m.stride + col0, rows, cols, m.stride};
}

// Tile extents for the GEMM patterns. Edge tiles clamp to the matrix, so
// these need not divide the problem shape.
struct TileSpec {
  std::size_t bm = 16;
  std::size_t bn = 16;
  std::size_t bk = 16;

  void validate() const {
    if (bm < 1 || bn < 1 || bk < 1) {
      throw ConfigError("tile extents must be >= 1");
    }
  }
};

// acc += a * b for one tile: a is (tm x tk), b is (tk x tn), acc is
// (tm x tn). The inner-product dimension runs strictly ascending, and each
// acc element's additions form one sequential chain. Repeated calls over
// consecutive k blocks therefore reproduce the single-call result bit for
// bit: how the k range is partitioned cannot change the result. (Keep FP
// contraction off when building; a fused multiply-add would round
// differently than the separate multiply and add used elsewhere.)
inline void gemm_acc(ConstMatrixView a, ConstMatrixView b, MatrixView acc) {
  if (a.rows != acc.rows || b.cols != acc.cols || a.cols != b.rows) {
    throw ShapeError("gemm_acc: (" + std::to_string(a.rows) + "x" +
                     std::to_string(a.cols) + ") * (" +
                     std::to_string(b.rows) + "x" + std::to_string(b.cols) +
                     ") -> (" + std::to_string(acc.rows) + "x" +
                     std::to_string(acc.cols) + ") shape mismatch");
  }
  for (std::size_t i = 0; i < acc.rows; ++i) {
    for (std::size_t j = 0; j < acc.cols; ++j) {
      float sum = acc.at(i, j);
      for (std::size_t p = 0; p < a.cols; ++p) {
        sum += a.at(i, p) * b.at(p, j);
      }
      acc.at(i, j) = sum;
    }
  }
}

// Streaming-softmax state for one query over a slice of the key/value
// sequence: per head the running max `m`, the normalizer `l`, and the
// unnormalized weighted value sum `o`. Partials form a commutative monoid
// under combine_partials; neutral() is the identity (m = -inf, l = 0).
struct AttnPartial {
  int heads = 0;
  int head_dim = 0;
  std::vector<float> m;  // [heads]
  std::vector<float> l;  // [heads]
  std::vector<float> o;  // [heads * head_dim], unnormalized

  static AttnPartial neutral(int heads, int head_dim) {
    if (heads < 1 || head_dim < 1) {
      throw ShapeError("AttnPartial: heads and head_dim must be >= 1");
    }
    AttnPartial p;
    p.heads = heads;
    p.head_dim = head_dim;
    p.m.assign(static_cast<std::size_t>(heads),
               -std::numeric_limits<float>::infinity());
    p.l.assign(static_cast<std::size_t>(heads), 0.0f);
    p.o.assign(static_cast<std::size_t>(heads) * head_dim, 0.0f);
    return p;
  }
};

// Computes the attention partial of one query against a contiguous slice
// of keys/values. q is heads x head_dim; k and v are heads x len x head_dim.
// A zero-length slice yields the neutral partial.
inline AttnPartial attention_partial(const float* q, const float* k,
                                     const float* v, int heads, int head_dim,
                                     std::size_t len, float scale) {
  AttnPartial p = AttnPartial::neutral(heads, head_dim);
  const std::size_t d = static_cast<std::size_t>(head_dim);
  for (int h = 0; h < heads; ++h) {
    const float* qh = q + static_cast<std::size_t>(h) * d;
    const float* kh = k + static_cast<std::size_t>(h) * len * d;
    const float* vh = v + static_cast<std::size_t>(h) * len * d;
    float m = p.m[static_cast<std::size_t>(h)];
    float l = 0.0f;
    float* oh = p.o.data() + static_cast<std::size_t>(h) * d;
    for (std::size_t j = 0; j < len; ++j) {
      float s = 0.0f;
      for (std::size_t e = 0; e < d; ++e) {
        s += qh[e] * kh[j * d + e];
      }
      s *= scale;
      if (!std::isfinite(s)) {
        throw NumericError("attention_partial: non-finite score at head " +
                           std::to_string(h) + ", position " +
                           std::to_string(j));
      }
      const float m_new = std::max(m, s);
      const float alpha = std::exp(m - m_new);  // exp(-inf) == 0 on entry
      const float w = std::exp(s - m_new);
      l = l * alpha + w;
      for (std::size_t e = 0; e < d; ++e) {
        oh[e] = oh[e] * alpha + w * vh[j * d + e];
      }
      m = m_new;
    }
    p.m[static_cast<std::size_t>(h)] = m;
    p.l[static_cast<std::size_t>(h)] = l;
  }
  return p;
}

// Merges two partials per head by rescaling both onto the shared max.
// Either side may be neutral; the guard below keeps -inf out of the
// arithmetic (exp(-inf - -inf) would be NaN).
inline AttnPartial combine_partials(const AttnPartial& x,
                                    const AttnPartial& y) {
  if (x.heads != y.heads || x.head_dim != y.head_dim) {
    throw ShapeError("combine_partials: partial shapes differ");
  }
  AttnPartial out = AttnPartial::neutral(x.heads, x.head_dim);
  const std::size_t d = static_cast<std::size_t>(x.head_dim);
  for (int h = 0; h < x.heads; ++h) {
    const std::size_t hh = static_cast<std::size_t>(h);
    const float* xo = x.o.data() + hh * d;
    const float* yo = y.o.data() + hh * d;
    float* oo = out.o.data() + hh * d;
    if (x.l[hh] == 0.0f) {
      out.m[hh] = y.m[hh];
      out.l[hh] = y.l[hh];
      std::copy(yo, yo + d, oo);
      continue;
    }
    if (y.l[hh] == 0.0f) {
      out.m[hh] = x.m[hh];
      out.l[hh] = x.l[hh];
      std::copy(xo, xo + d, oo);
      continue;
    }
    const float m = std::max(x.m[hh], y.m[hh]);
    const float ax = std::exp(x.m[hh] - m);
    const float ay = std::exp(y.m[hh] - m);
    out.m[hh] = m;
    out.l[hh] = x.l[hh] * ax + y.l[hh] * ay;
    for (std::size_t e = 0; e < d; ++e) {
      oo[e] = xo[e] * ax + yo[e] * ay;
    }
  }
  return out;
}

// Normalizes a fully-reduced partial into the attention output
// (heads x head_dim). A head with l == 0 saw no keys at all; that is a
// caller bug, not a representable output.
inline std::vector<float> finalize(const AttnPartial& p) {
  std::vector<float> out(static_cast<std::size_t>(p.heads) * p.head_dim);
  const std::size_t d = static_cast<std::size_t>(p.head_dim);
  for (int h = 0; h < p.heads; ++h) {
    const std::size_t hh = static_cast<std::size_t>(h);
    if (p.l[hh] == 0.0f) {
      throw EmptyAttentionError("finalize: head " + std::to_string(h) +
                                " has an empty normalizer (no keys folded)");
    }
    for (std::size_t e = 0; e < d; ++e) {
      out[hh * d + e] = p.o[hh * d + e] / p.l[hh];
    }
  }
  return out;
}

// On-wire layout of a partial: per head a row [m | l | o[0..head_dim)],
// heads rows of (head_dim + 2) floats. Round-trips exactly (plain copies,
// no arithmetic).
inline constexpr std::size_t partial_wire_size(int heads, int head_dim) {
  return static_cast<std::size_t>(heads) *
         (static_cast<std::size_t>(head_dim) + 2);
}

inline void serialize_partial(const AttnPartial& p, float* out) {
  const std::size_t d = static_cast<std::size_t>(p.head_dim);
  for (int h = 0; h < p.heads; ++h) {
    const std::size_t hh = static_cast<std::size_t>(h);
    float* row = out + hh * (d + 2);
    row[0] = p.m[hh];
    row[1] = p.l[hh];
    std::copy(p.o.data() + hh * d, p.o.data() + (hh + 1) * d, row + 2);
  }
}

inline AttnPartial deserialize_partial(const float* in, int heads,
                                       int head_dim) {
  AttnPartial p = AttnPartial::neutral(heads, head_dim);
  const std::size_t d = static_cast<std::size_t>(head_dim);
  for (int h = 0; h < heads; ++h) {
    const std::size_t hh = static_cast<std::size_t>(h);
    const float* row = in + hh * (d + 2);
    p.m[hh] = row[0];
    p.l[hh] = row[1];
    std::copy(row + 2, row + 2 + d, p.o.data() + hh * d);
  }
  return p;
}

}  // namespace tilefabric
