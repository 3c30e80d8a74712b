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

#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "harness.hpp"
#include "tilefabric/tilefabric.hpp"

namespace tilefabric {
namespace {

using testutil::finalized_equal;
using testutil::head_rel_err;
using testutil::random_partial;

// ---- views and tiles -------------------------------------------------------

TEST(Views, SubviewAddressesIntoParent) {
  std::vector<float> buf(4 * 6);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    buf[i] = static_cast<float>(i);
  }
  auto m = view(buf, 4, 6);
  auto sub = subview(m, 1, 2, 2, 3);
  EXPECT_EQ(sub.rows, 2u);
  EXPECT_EQ(sub.cols, 3u);
  EXPECT_EQ(sub.stride, 6u);
  EXPECT_EQ(sub.at(0, 0), buf[1 * 6 + 2]);
  EXPECT_EQ(sub.at(1, 2), buf[2 * 6 + 4]);
  sub.at(0, 1) = -1.0f;
  EXPECT_EQ(buf[1 * 6 + 3], -1.0f);
}

TEST(Views, TileSpecRejectsZeroExtents) {
  TileSpec ts;
  EXPECT_NO_THROW(ts.validate());
  ts.bk = 0;
  EXPECT_THROW(ts.validate(), ConfigError);
}

// ---- gemm -------------------------------------------------------------------

TEST(Gemm, IdentityAndZero) {
  const std::size_t n = 5;
  const auto a = uniform_reals(11, n * n);
  std::vector<float> eye(n * n, 0.0f);
  for (std::size_t i = 0; i < n; ++i) {
    eye[i * n + i] = 1.0f;
  }
  std::vector<float> c(n * n, 0.0f);
  gemm_acc(view(a, n, n), view(eye, n, n), view(c, n, n));
  EXPECT_EQ(c, a);  // bitwise: x * 1 + 0 is exact

  std::vector<float> zero(n * n, 0.0f);
  std::vector<float> cz(n * n, 0.0f);
  gemm_acc(view(a, n, n), view(zero, n, n), view(cz, n, n));
  for (float x : cz) {
    EXPECT_EQ(x, 0.0f);
  }
}

TEST(Gemm, MatchesNaiveReferenceBitwise) {
  const std::size_t shapes[][3] = {{4, 4, 4}, {3, 7, 5}, {1, 1, 9}};
  for (const auto& shape : shapes) {
    const std::size_t m = shape[0], n = shape[1], k = shape[2];
    const auto a = uniform_reals(21, m * k);
    const auto b = uniform_reals(22, k * n);
    std::vector<float> c(m * n, 0.0f);
    gemm_acc(view(a, m, k), view(b, k, n), view(c, m, n));
    EXPECT_EQ(c, reference::gemm(a, b, m, n, k)) << m << "x" << n << "x" << k;
  }
}

TEST(Gemm, RejectsMismatchedShapes) {
  std::vector<float> a(6), b(6), c(4);
  EXPECT_THROW(gemm_acc(view(a, 2, 3), view(b, 2, 3), view(c, 2, 2)),
               ShapeError);
}

// The property the distributed patterns rely on: accumulating over k in
// consecutive chunks, in ascending order, is bit-identical to one pass,
// no matter where the chunk boundaries fall.
TEST(Gemm, KPartitionInvariance) {
  const std::size_t m = 6, n = 5, k = 24;
  const auto a = uniform_reals(31, m * k);
  const auto b = uniform_reals(32, k * n);

  std::vector<float> whole(m * n, 0.0f);
  gemm_acc(view(a, m, k), view(b, k, n), view(whole, m, n));

  const std::vector<std::vector<std::size_t>> cut_sets = {
      {12}, {8, 16}, {1, 2, 3, 23}, {6, 12, 18}};
  for (const auto& cuts : cut_sets) {
    std::vector<float> pieced(m * n, 0.0f);
    std::size_t p0 = 0;
    auto fold = [&](std::size_t p1) {
      gemm_acc(subview(view(a, m, k), 0, p0, m, p1 - p0),
               subview(view(b, k, n), p0, 0, p1 - p0, n),
               view(pieced, m, n));
      p0 = p1;
    };
    for (std::size_t cut : cuts) {
      fold(cut);
    }
    fold(k);
    EXPECT_EQ(pieced, whole);
  }
}

// ---- attention partials -------------------------------------------------------

TEST(Attention, OrthogonalKeyGivesUnitWeight) {
  // q . k == 0, so the single score is 0: m = 0, l = 1, o = v exactly.
  const std::vector<float> q = {1.0f, 0.0f};
  const std::vector<float> k = {0.0f, 1.0f};
  const std::vector<float> v = {3.0f, -2.0f};
  const auto p = attention_partial(q.data(), k.data(), v.data(), 1, 2, 1,
                                   1.0f);
  EXPECT_EQ(p.m[0], 0.0f);
  EXPECT_EQ(p.l[0], 1.0f);
  EXPECT_EQ(p.o[0], 3.0f);
  EXPECT_EQ(p.o[1], -2.0f);
  EXPECT_EQ(finalize(p), v);
}

TEST(Attention, DuplicatedKeyDoublesTheNormalizer) {
  const std::vector<float> q = {0.5f, -1.0f};
  const std::vector<float> k1 = {0.2f, 0.4f};
  const std::vector<float> v1 = {1.0f, 2.0f};
  std::vector<float> k2 = {0.2f, 0.4f, 0.2f, 0.4f};
  std::vector<float> v2 = {1.0f, 2.0f, 1.0f, 2.0f};
  const auto once = attention_partial(q.data(), k1.data(), v1.data(), 1, 2, 1,
                                      1.0f);
  const auto twice = attention_partial(q.data(), k2.data(), v2.data(), 1, 2,
                                       2, 1.0f);
  EXPECT_EQ(twice.m[0], once.m[0]);
  EXPECT_EQ(twice.l[0], 2.0f * once.l[0]);
  // Same weight on the same value; the normalized output is unchanged.
  EXPECT_EQ(finalize(twice), finalize(once));
}

TEST(Attention, ZeroLengthSliceIsNeutral) {
  const auto p = attention_partial(nullptr, nullptr, nullptr, 2, 3, 0, 1.0f);
  for (float m : p.m) {
    EXPECT_EQ(m, -std::numeric_limits<float>::infinity());
  }
  for (float l : p.l) {
    EXPECT_EQ(l, 0.0f);
  }
  EXPECT_THROW(finalize(p), EmptyAttentionError);
}

TEST(Attention, FinalizeNamesTheEmptyHead) {
  auto p = AttnPartial::neutral(3, 2);
  p.m[0] = p.m[2] = 0.0f;
  p.l[0] = p.l[2] = 1.0f;
  try {
    finalize(p);
    FAIL() << "expected EmptyAttentionError";
  } catch (const EmptyAttentionError& e) {
    EXPECT_NE(std::string(e.what()).find("head 1"), std::string::npos);
  }
}

TEST(Attention, NonFiniteScoreRaisesNumericError) {
  const std::vector<float> q = {std::numeric_limits<float>::max(), 0.0f};
  const std::vector<float> k = {std::numeric_limits<float>::max(), 0.0f};
  const std::vector<float> v = {1.0f, 1.0f};
  EXPECT_THROW(
      attention_partial(q.data(), k.data(), v.data(), 1, 2, 1, 1.0f),
      NumericError);
}

TEST(Attention, SinglePassMatchesMonolithicSoftmax) {
  const int heads = 3, d = 8;
  const std::size_t len = 64;
  const auto q = uniform_reals(41, static_cast<std::size_t>(heads) * d);
  const auto k = uniform_reals(42, static_cast<std::size_t>(heads) * len * d);
  const auto v = uniform_reals(43, static_cast<std::size_t>(heads) * len * d);
  const float scale = 1.0f / std::sqrt(static_cast<float>(d));

  const auto fast = finalize(
      attention_partial(q.data(), k.data(), v.data(), heads, d, len, scale));
  const auto oracle = reference::attention(q, k, v, heads, d, len, scale);
  EXPECT_LE(head_rel_err(fast, oracle, heads, d), 1e-6);
}

TEST(Attention, ShardedFoldMatchesMonolithicSoftmax) {
  const int heads = 2, d = 4;
  const std::size_t len = 48;
  const auto q = uniform_reals(51, static_cast<std::size_t>(heads) * d);
  const auto k = uniform_reals(52, static_cast<std::size_t>(heads) * len * d);
  const auto v = uniform_reals(53, static_cast<std::size_t>(heads) * len * d);
  const float scale = 0.5f;
  const auto oracle = reference::attention(q, k, v, heads, d, len, scale);

  for (const std::size_t shards : {2u, 3u, 6u}) {
    const std::size_t chunk = len / shards;
    auto acc = AttnPartial::neutral(heads, d);
    for (std::size_t s = 0; s < shards; ++s) {
      // Per-head contiguous slices of the key/value sequence.
      std::vector<float> ks(static_cast<std::size_t>(heads) * chunk * d);
      std::vector<float> vs(ks.size());
      for (int h = 0; h < heads; ++h) {
        const std::size_t src =
            (static_cast<std::size_t>(h) * len + s * chunk) * d;
        const std::size_t dst = static_cast<std::size_t>(h) * chunk * d;
        std::copy_n(k.data() + src, chunk * d, ks.data() + dst);
        std::copy_n(v.data() + src, chunk * d, vs.data() + dst);
      }
      acc = combine_partials(
          acc, attention_partial(q.data(), ks.data(), vs.data(), heads, d,
                                 chunk, scale));
    }
    EXPECT_LE(head_rel_err(finalize(acc), oracle, heads, d), 1e-5)
        << shards << " shards";
  }
}

// Softmax is invariant under a uniform score shift; the running max must
// absorb shifts large enough to overflow a naive exp().
TEST(Attention, ScoreShiftInvariance) {
  const std::size_t len = 16;
  // d = 2 with k[j] = (x_j, 1) and q = (1, c): score_j = x_j + c.
  const auto xs = uniform_reals(61, len);
  const auto vals = uniform_reals(62, len * 2);
  std::vector<float> k(len * 2);
  for (std::size_t j = 0; j < len; ++j) {
    k[j * 2] = xs[j];
    k[j * 2 + 1] = 1.0f;
  }
  std::vector<float> base;
  for (const float c : {0.0f, 30.0f, 80.0f, -80.0f}) {
    const std::vector<float> q = {1.0f, c};
    const auto out = finalize(
        attention_partial(q.data(), k.data(), vals.data(), 1, 2, len, 1.0f));
    if (base.empty()) {
      base = out;
    } else {
      EXPECT_LE(head_rel_err(out, base, 1, 2), 1e-5) << "shift " << c;
    }
  }
}

// ---- the combine monoid ---------------------------------------------------------

TEST(Combine, NeutralIsATwoSidedIdentityBitwise) {
  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = random_partial(rng, 3, 5, /*neutral_prob=*/0.3);
    const auto n = AttnPartial::neutral(3, 5);
    for (const auto& merged : {combine_partials(n, p), combine_partials(p, n)}) {
      EXPECT_EQ(merged.m, p.m);
      EXPECT_EQ(merged.l, p.l);
      EXPECT_EQ(merged.o, p.o);
    }
  }
}

TEST(Combine, Commutes) {
  std::mt19937_64 rng(72);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_partial(rng, 2, 4);
    const auto b = random_partial(rng, 2, 4);
    EXPECT_TRUE(finalized_equal(combine_partials(a, b),
                                combine_partials(b, a), 1e-6))
        << "trial " << trial;
  }
}

TEST(Combine, AssociatesWithinTolerance) {
  std::mt19937_64 rng(73);
  for (int trial = 0; trial < 200; ++trial) {
    const auto a = random_partial(rng, 2, 4);
    const auto b = random_partial(rng, 2, 4);
    const auto c = random_partial(rng, 2, 4);
    const auto left = combine_partials(combine_partials(a, b), c);
    const auto right = combine_partials(a, combine_partials(b, c));
    EXPECT_TRUE(finalized_equal(left, right, 1e-5)) << "trial " << trial;
  }
}

TEST(Combine, ShapeMismatchRejected) {
  const auto a = AttnPartial::neutral(2, 4);
  const auto b = AttnPartial::neutral(2, 5);
  EXPECT_THROW(combine_partials(a, b), ShapeError);
}

// The merged normalizer equals the sum of both sides' normalizers once
// both are expressed at the shared max — conservation of softmax mass.
TEST(Combine, ConservesNormalizerMass) {
  std::mt19937_64 rng(74);
  for (int trial = 0; trial < 100; ++trial) {
    const auto a = random_partial(rng, 1, 3, /*neutral_prob=*/0.0);
    const auto b = random_partial(rng, 1, 3, /*neutral_prob=*/0.0);
    const auto merged = combine_partials(a, b);
    const double m = merged.m[0];
    const double expect = static_cast<double>(a.l[0]) * std::exp(a.m[0] - m) +
                          static_cast<double>(b.l[0]) * std::exp(b.m[0] - m);
    EXPECT_NEAR(merged.l[0], expect, 1e-6 * expect);
    EXPECT_EQ(merged.m[0], std::max(a.m[0], b.m[0]));
  }
}

// ---- wire format ------------------------------------------------------------------

TEST(Wire, SizeAndLayout) {
  EXPECT_EQ(partial_wire_size(1, 1), 3u);
  EXPECT_EQ(partial_wire_size(3, 4), 18u);

  auto p = AttnPartial::neutral(2, 3);
  p.m = {1.5f, -2.5f};
  p.l = {4.0f, 8.0f};
  p.o = {10, 11, 12, 20, 21, 22};
  std::vector<float> wire(partial_wire_size(2, 3));
  serialize_partial(p, wire.data());
  // Row h = [m | l | o...], rows of head_dim + 2.
  EXPECT_EQ(wire[0], 1.5f);
  EXPECT_EQ(wire[1], 4.0f);
  EXPECT_EQ(wire[2], 10.0f);
  EXPECT_EQ(wire[4], 12.0f);
  EXPECT_EQ(wire[5], -2.5f);
  EXPECT_EQ(wire[6], 8.0f);
  EXPECT_EQ(wire[9], 22.0f);
}

TEST(Wire, RoundTripIsExact) {
  std::mt19937_64 rng(81);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = random_partial(rng, 4, 7, /*neutral_prob=*/0.2);
    std::vector<float> wire(partial_wire_size(4, 7));
    serialize_partial(p, wire.data());
    const auto back = deserialize_partial(wire.data(), 4, 7);
    EXPECT_EQ(back.m, p.m);
    EXPECT_EQ(back.l, p.l);
    EXPECT_EQ(back.o, p.o);
  }
}

}  // namespace
}  // namespace tilefabric
