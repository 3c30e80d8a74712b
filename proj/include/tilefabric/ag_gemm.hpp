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

// All-gather + GEMM in three synchronization styles over the same math:
//
//   baseline  barrier, bulk all-gather into a staging tensor, barrier,
//             then a plain GEMM over the gathered copy. Three launches,
//             two world barriers, M*K floats staged per rank.
//   pull      one fused kernel per rank: each consumer pulls the A tiles
//             it is about to multiply straight out of the owners' regions.
//             One launch, no barriers, nothing staged.
//   push      two concurrently-resident kernels per rank: a producer that
//             pushes its shard blocks into every consumer's inbox and
//             signals each block, and a consumer GEMM that waits per block
//             and starts multiplying as soon as the first one lands.
//
// Every rank computes the full C = A * B. All three variants accumulate
// each C element over k in strictly ascending order, so their outputs are
// bitwise identical.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tilefabric/fabric.hpp"
#include "tilefabric/taxmeter.hpp"
#include "tilefabric/tilemath.hpp"

namespace tilefabric::ag {

struct AgGemmProblem {
  std::size_t m = 0;  // rows of A and C
  std::size_t n = 0;  // cols of B and C
  std::size_t k = 0;  // inner dimension, sharded over ranks
  TileSpec tiles;
  std::vector<float> a;  // m x k
  std::vector<float> b;  // k x n

  void validate(int world_size) const {
    if (m < 1 || n < 1 || k < 1) {
      throw ConfigError("ag_gemm: m, n, k must be >= 1");
    }
    if (k % static_cast<std::size_t>(world_size) != 0) {
      throw ConfigError("ag_gemm: k = " + std::to_string(k) +
                        " must be divisible by world_size = " +
                        std::to_string(world_size));
    }
    tiles.validate();
  }
};

// Full logical inputs from one seed (A first, then B, one generator
// stream). Every rank regenerates these identically and keeps only its
// own shard of A in the symmetric heap.
inline AgGemmProblem make_problem(std::uint64_t seed, std::size_t m,
                                  std::size_t n, std::size_t k,
                                  TileSpec tiles = {}) {
  AgGemmProblem p;
  p.m = m;
  p.n = n;
  p.k = k;
  p.tiles = tiles;
  std::vector<float> all = uniform_reals(seed, m * k + k * n);
  p.a.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(m * k));
  p.b.assign(all.begin() + static_cast<std::ptrdiff_t>(m * k), all.end());
  return p;
}

struct AgGemmRun {
  std::vector<std::vector<float>> c;  // per rank, m x n
  std::vector<TaskEvent> events;
  tax::TaxReport taxes;
  // Per rank: flattened (src row x k-block slot) counter snapshot taken
  // after the consumer finished; push variant only.
  std::vector<std::vector<std::uint64_t>> flag_counts;
};

namespace detail {

struct RankOut {
  std::vector<float> c;
  std::vector<std::uint64_t> flags;
};

// Copies this rank's shard (columns [rank*kw, (rank+1)*kw) of A) into its
// symmetric region. Input placement, not measured traffic.
inline void fill_shard(RankCtx& ctx, SymmetricTensor& a_t,
                       const AgGemmProblem& p, std::size_t kw) {
  auto region = ctx.local(a_t);
  const std::size_t col0 = static_cast<std::size_t>(ctx.rank()) * kw;
  for (std::size_t i = 0; i < p.m; ++i) {
    std::copy(p.a.begin() + static_cast<std::ptrdiff_t>(i * p.k + col0),
              p.a.begin() + static_cast<std::ptrdiff_t>(i * p.k + col0 + kw),
              region.begin() + static_cast<std::ptrdiff_t>(i * kw));
  }
}

template <typename Body>
AgGemmRun run_world(const AgGemmProblem& p, const WorldConfig& cfg,
                    Body body) {
  p.validate(cfg.world_size);
  auto run = launch_world(cfg, body);
  AgGemmRun out;
  out.c.reserve(run.results.size());
  out.flag_counts.reserve(run.results.size());
  for (auto& r : run.results) {
    out.c.push_back(std::move(r.c));
    out.flag_counts.push_back(std::move(r.flags));
  }
  out.taxes = tax::report(run.events, cfg);
  out.events = std::move(run.events);
  return out;
}

}  // namespace detail

// Bulk-synchronous reference schedule: gather everything, then compute.
inline AgGemmRun run_baseline(const AgGemmProblem& p, const WorldConfig& cfg) {
  return detail::run_world(p, cfg, [&p](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t kw = p.k / w;
    auto& a_t = ctx.alloc_symmetric("ag.a", {p.m, kw});
    auto& stage = ctx.alloc_symmetric("ag.stage", {p.m, p.k},
                                      /*staging=*/true);
    detail::fill_shard(ctx, a_t, p, kw);
    ctx.setup_fence();

    ctx.charge_launch("ag.sync");
    ctx.barrier();

    ctx.charge_launch("ag.allgather");
    std::vector<float> buf(p.m * kw);
    for (int s = 0; s < ctx.world_size(); ++s) {
      ctx.remote_load_block(a_t, s, 0, 0, p.m, kw, buf.data(), kw);
      ctx.remote_store_block(stage, ctx.rank(), 0,
                             static_cast<std::size_t>(s) * kw, p.m, kw,
                             buf.data(), kw);
    }
    ctx.barrier();

    ctx.charge_launch("ag.gemm");
    std::vector<float> c(p.m * p.n, 0.0f);
    {
      ComputeScope cs(ctx, "ag.gemm");
      const auto gathered =
          ConstMatrixView{ctx.local(stage).data(), p.m, p.k, p.k};
      const auto b_full = view(p.b, p.k, p.n);
      auto c_full = view(c, p.m, p.n);
      for (std::size_t i0 = 0; i0 < p.m; i0 += p.tiles.bm) {
        const std::size_t tm = std::min(p.tiles.bm, p.m - i0);
        for (std::size_t j0 = 0; j0 < p.n; j0 += p.tiles.bn) {
          const std::size_t tn = std::min(p.tiles.bn, p.n - j0);
          auto acc = subview(c_full, i0, j0, tm, tn);
          for (std::size_t p0 = 0; p0 < p.k; p0 += p.tiles.bk) {
            const std::size_t tk = std::min(p.tiles.bk, p.k - p0);
            gemm_acc(subview(gathered, i0, p0, tm, tk),
                     subview(b_full, p0, j0, tk, tn), acc);
          }
        }
      }
    }
    return detail::RankOut{std::move(c), {}};
  });
}

// Fused consumer-driven schedule: the GEMM pulls each A tile from its
// owner right before multiplying it. Shards are resident before launch
// (each rank wrote its own), so no ordering protocol is needed.
inline AgGemmRun run_pull(const AgGemmProblem& p, const WorldConfig& cfg) {
  return detail::run_world(p, cfg, [&p](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t kw = p.k / w;
    auto& a_t = ctx.alloc_symmetric("ag.a", {p.m, kw});
    detail::fill_shard(ctx, a_t, p, kw);
    ctx.setup_fence();

    ctx.charge_launch("ag.pull_gemm");
    std::vector<float> c(p.m * p.n, 0.0f);
    {
      ComputeScope cs(ctx, "ag.pull_gemm");
      const auto b_full = view(p.b, p.k, p.n);
      auto c_full = view(c, p.m, p.n);
      std::vector<float> a_tile(p.tiles.bm * p.tiles.bk);
      for (std::size_t i0 = 0; i0 < p.m; i0 += p.tiles.bm) {
        const std::size_t tm = std::min(p.tiles.bm, p.m - i0);
        for (std::size_t j0 = 0; j0 < p.n; j0 += p.tiles.bn) {
          const std::size_t tn = std::min(p.tiles.bn, p.n - j0);
          auto acc = subview(c_full, i0, j0, tm, tn);
          for (int s = 0; s < ctx.world_size(); ++s) {
            for (std::size_t p0 = 0; p0 < kw; p0 += p.tiles.bk) {
              const std::size_t tk = std::min(p.tiles.bk, kw - p0);
              // A local copy when s == rank(); remote otherwise.
              ctx.remote_load_block(a_t, s, i0, p0, tm, tk, a_tile.data(),
                                    tk);
              gemm_acc(ConstMatrixView{a_tile.data(), tm, tk, tk},
                       subview(b_full, static_cast<std::size_t>(s) * kw + p0,
                               j0, tk, tn),
                       acc);
            }
          }
        }
      }
    }
    return detail::RankOut{std::move(c), {}};
  });
}

// Fused producer-driven schedule: a push task streams this rank's shard
// into every consumer's inbox one k-block at a time, signalling each
// block; the consumer GEMM waits per block and multiplies blocks as they
// arrive, overlapping transfer with compute.
inline AgGemmRun run_push(const AgGemmProblem& p, const WorldConfig& cfg) {
  return detail::run_world(p, cfg, [&p](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t kw = p.k / w;
    const int n_kb = static_cast<int>((kw + p.tiles.bk - 1) / p.tiles.bk);
    auto& a_t = ctx.alloc_symmetric("ag.a", {p.m, kw});
    auto& inbox = ctx.alloc_symmetric("ag.inbox", {p.m, p.k},
                                      /*staging=*/true);
    auto& flags = ctx.alloc_board("ag.flags", ctx.world_size(), n_kb);
    detail::fill_shard(ctx, a_t, p, kw);
    ctx.setup_fence();

    const int self = ctx.rank();
    auto push_task = ctx.spawn_task("ag.push", [&] {
      std::vector<float> block(p.m * p.tiles.bk);
      auto shard = ctx.local(a_t);
      for (int dst = 0; dst < ctx.world_size(); ++dst) {
        for (int kb = 0; kb < n_kb; ++kb) {
          const std::size_t p0 = static_cast<std::size_t>(kb) * p.tiles.bk;
          const std::size_t tk = std::min(p.tiles.bk, kw - p0);
          for (std::size_t i = 0; i < p.m; ++i) {
            std::copy(shard.begin() + static_cast<std::ptrdiff_t>(i * kw + p0),
                      shard.begin() +
                          static_cast<std::ptrdiff_t>(i * kw + p0 + tk),
                      block.begin() + static_cast<std::ptrdiff_t>(i * tk));
          }
          ctx.remote_store_block(inbox, dst, 0,
                                 static_cast<std::size_t>(self) * kw + p0,
                                 p.m, tk, block.data(), tk);
          ctx.atomic_signal(flags, dst, self, kb);
        }
      }
    });

    ctx.charge_launch("ag.gemm");
    std::vector<float> c(p.m * p.n, 0.0f);
    {
      ComputeScope cs(ctx, "ag.gemm");
      const auto b_full = view(p.b, p.k, p.n);
      auto c_full = view(c, p.m, p.n);
      std::vector<float> a_tile(p.tiles.bm * p.tiles.bk);
      for (std::size_t i0 = 0; i0 < p.m; i0 += p.tiles.bm) {
        const std::size_t tm = std::min(p.tiles.bm, p.m - i0);
        for (std::size_t j0 = 0; j0 < p.n; j0 += p.tiles.bn) {
          const std::size_t tn = std::min(p.tiles.bn, p.n - j0);
          auto acc = subview(c_full, i0, j0, tm, tn);
          for (int s = 0; s < ctx.world_size(); ++s) {
            for (int kb = 0; kb < n_kb; ++kb) {
              const std::size_t p0 = static_cast<std::size_t>(kb) * p.tiles.bk;
              const std::size_t tk = std::min(p.tiles.bk, kw - p0);
              // Monotonic counter: re-checking an already-passed block is
              // an immediate return, so only the first tile that needs a
              // block ever stalls on it.
              ctx.wait_signal(flags, s, kb, 1);
              ctx.remote_load_block(inbox, self, i0,
                                    static_cast<std::size_t>(s) * kw + p0, tm,
                                    tk, a_tile.data(), tk);
              gemm_acc(ConstMatrixView{a_tile.data(), tm, tk, tk},
                       subview(b_full, static_cast<std::size_t>(s) * kw + p0,
                               j0, tk, tn),
                       acc);
            }
          }
        }
      }
    }
    push_task.join();

    std::vector<std::uint64_t> counts;
    counts.reserve(w * static_cast<std::size_t>(n_kb));
    for (int s = 0; s < ctx.world_size(); ++s) {
      for (int kb = 0; kb < n_kb; ++kb) {
        counts.push_back(ctx.read_signal(flags, s, kb));
      }
    }
    return detail::RankOut{std::move(c), std::move(counts)};
  });
}

}  // namespace tilefabric::ag
