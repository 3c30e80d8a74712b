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

// Distributed single-query decode over a key/value cache sharded across
// ranks. Every rank computes the attention partial of its own shard, the
// partials travel as [m | l | o] wire rows, and every rank folds all of
// them (ascending source rank) into the same final output. Four schedules
// trade synchronization for the same math:
//
//                  launches   world barriers   partial transport
//   bsp                3            2          publish, barrier, bulk gather
//   independent_ag     3            2          push + signal, wait-all inside
//                                              the collective, then barrier
//   fine_waits         3            1          push + signal; the combine
//                                              waits per source as it folds
//   fused              2            0          attention and push fused into
//                                              one task; combine waits per
//                                              source; no barrier anywhere
//
// All four fold in the same order over identical partials, so their
// outputs are bitwise identical; only the waiting differs.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tilefabric/fabric.hpp"
#include "tilefabric/taxmeter.hpp"
#include "tilefabric/tilemath.hpp"

namespace tilefabric::fd {

enum class Variant { kBsp, kIndependentAg, kFineWaits, kFused };

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::kBsp:
      return "bsp";
    case Variant::kIndependentAg:
      return "independent_ag";
    case Variant::kFineWaits:
      return "fine_waits";
    case Variant::kFused:
      return "fused";
  }
  return "unknown";
}

struct DecodeProblem {
  int heads = 0;
  int head_dim = 0;
  std::size_t kv_len = 0;
  float scale = 0.0f;      // usually 1/sqrt(head_dim)
  std::vector<float> q;    // heads x head_dim
  std::vector<float> k;    // heads x kv_len x head_dim
  std::vector<float> v;    // heads x kv_len x head_dim

  void validate(int world_size) const {
    if (heads < 1 || head_dim < 1 || kv_len < 1) {
      throw ConfigError("flash_decode: heads, head_dim, kv_len must be >= 1");
    }
    if (kv_len % static_cast<std::size_t>(world_size) != 0) {
      throw ConfigError("flash_decode: kv_len = " + std::to_string(kv_len) +
                        " must be divisible by world_size = " +
                        std::to_string(world_size));
    }
    if (!std::isfinite(scale)) {
      throw ConfigError("flash_decode: scale must be finite");
    }
  }
};

inline DecodeProblem make_problem(std::uint64_t seed, int heads, int head_dim,
                                  std::size_t kv_len) {
  DecodeProblem p;
  p.heads = heads;
  p.head_dim = head_dim;
  p.kv_len = kv_len;
  p.scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  const std::size_t hd = static_cast<std::size_t>(heads) * head_dim;
  std::vector<float> all = uniform_reals(seed, hd + 2 * hd * kv_len);
  auto it = all.begin();
  p.q.assign(it, it + static_cast<std::ptrdiff_t>(hd));
  it += static_cast<std::ptrdiff_t>(hd);
  p.k.assign(it, it + static_cast<std::ptrdiff_t>(hd * kv_len));
  it += static_cast<std::ptrdiff_t>(hd * kv_len);
  p.v.assign(it, all.end());
  return p;
}

struct FdOptions {
  // Fused-only experiment: fold partials in arrival order instead of
  // ascending source rank. Saves residual waiting when sources straggle,
  // but gives up the bitwise-reproducible fold order; keep it off for
  // verification runs.
  bool fold_by_arrival = false;
};

struct FdRun {
  std::vector<std::vector<float>> out;  // per rank, heads x head_dim
  std::vector<TaskEvent> events;
  tax::TaxReport taxes;
  // Per rank: its own flag row counters (one per source) after the run;
  // push-style variants only.
  std::vector<std::vector<std::uint64_t>> flag_counts;
};

namespace detail {

struct RankOut {
  std::vector<float> out;
  std::vector<std::uint64_t> flags;
};

// Contiguous copy of this rank's shard: per head, key/value rows
// [rank*len, (rank+1)*len) of the cache.
struct Shard {
  std::size_t len = 0;
  std::vector<float> k;  // heads x len x head_dim
  std::vector<float> v;
};

inline Shard slice_shard(const DecodeProblem& p, int rank, int world_size) {
  Shard s;
  s.len = p.kv_len / static_cast<std::size_t>(world_size);
  const std::size_t d = static_cast<std::size_t>(p.head_dim);
  const std::size_t chunk = s.len * d;
  s.k.resize(static_cast<std::size_t>(p.heads) * chunk);
  s.v.resize(static_cast<std::size_t>(p.heads) * chunk);
  for (int h = 0; h < p.heads; ++h) {
    const std::size_t src =
        (static_cast<std::size_t>(h) * p.kv_len +
         static_cast<std::size_t>(rank) * s.len) * d;
    const std::size_t dst = static_cast<std::size_t>(h) * chunk;
    std::copy(p.k.begin() + static_cast<std::ptrdiff_t>(src),
              p.k.begin() + static_cast<std::ptrdiff_t>(src + chunk),
              s.k.begin() + static_cast<std::ptrdiff_t>(dst));
    std::copy(p.v.begin() + static_cast<std::ptrdiff_t>(src),
              p.v.begin() + static_cast<std::ptrdiff_t>(src + chunk),
              s.v.begin() + static_cast<std::ptrdiff_t>(dst));
  }
  return s;
}

inline AttnPartial local_partial(RankCtx& ctx, const DecodeProblem& p,
                                 const Shard& shard) {
  ComputeScope cs(ctx, "fd.attention");
  return attention_partial(p.q.data(), shard.k.data(), shard.v.data(),
                           p.heads, p.head_dim, shard.len, p.scale);
}

// Ascending-source fold of one wire row per rank out of `rows` (a W x wire
// local span), identical across variants by construction.
inline std::vector<float> fold_rows(RankCtx& ctx, const DecodeProblem& p,
                                    const float* rows, std::size_t wire) {
  AttnPartial acc = AttnPartial::neutral(p.heads, p.head_dim);
  for (int s = 0; s < ctx.world_size(); ++s) {
    const AttnPartial part = deserialize_partial(
        rows + static_cast<std::size_t>(s) * wire, p.heads, p.head_dim);
    acc = combine_partials(acc, part);
  }
  return finalize(acc);
}

template <typename Body>
FdRun run_world(const DecodeProblem& p, const WorldConfig& cfg, Body body) {
  p.validate(cfg.world_size);
  auto run = launch_world(cfg, body);
  FdRun out;
  out.out.reserve(run.results.size());
  out.flag_counts.reserve(run.results.size());
  for (auto& r : run.results) {
    out.out.push_back(std::move(r.out));
    out.flag_counts.push_back(std::move(r.flags));
  }
  out.taxes = tax::report(run.events, cfg);
  out.events = std::move(run.events);
  return out;
}

inline std::vector<std::uint64_t> snapshot_flags(RankCtx& ctx,
                                                 const SignalBoard& flags) {
  std::vector<std::uint64_t> counts;
  counts.reserve(static_cast<std::size_t>(ctx.world_size()));
  for (int s = 0; s < ctx.world_size(); ++s) {
    counts.push_back(ctx.read_signal(flags, s, 0));
  }
  return counts;
}

}  // namespace detail

// Bulk-synchronous schedule: attention, publish the partial, barrier,
// bulk-gather every partial into a staging block, barrier, combine.
inline FdRun run_bsp(const DecodeProblem& p, const WorldConfig& cfg) {
  return detail::run_world(p, cfg, [&p](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t wire = partial_wire_size(p.heads, p.head_dim);
    auto& pubs = ctx.alloc_symmetric(
        "fd.partials", {static_cast<std::size_t>(p.heads),
                        static_cast<std::size_t>(p.head_dim) + 2});
    auto& stage = ctx.alloc_symmetric(
        "fd.stage", {w, static_cast<std::size_t>(p.heads),
                     static_cast<std::size_t>(p.head_dim) + 2},
        /*staging=*/true);
    const detail::Shard shard =
        detail::slice_shard(p, ctx.rank(), ctx.world_size());
    ctx.setup_fence();

    ctx.charge_launch("fd.attention");
    const AttnPartial part = detail::local_partial(ctx, p, shard);
    std::vector<float> row(wire);
    serialize_partial(part, row.data());
    ctx.remote_store(pubs, ctx.rank(), 0, wire, row.data());
    ctx.barrier();

    ctx.charge_launch("fd.allgather");
    std::vector<float> buf(wire);
    for (int s = 0; s < ctx.world_size(); ++s) {
      ctx.remote_load(pubs, s, 0, wire, buf.data());
      ctx.remote_store(stage, ctx.rank(), static_cast<std::size_t>(s) * wire,
                       wire, buf.data());
    }
    ctx.barrier();

    ctx.charge_launch("fd.combine");
    std::vector<float> out;
    {
      ComputeScope cs(ctx, "fd.combine");
      out = detail::fold_rows(ctx, p, ctx.local(stage).data(), wire);
    }
    return detail::RankOut{std::move(out), {}};
  });
}

// Push-based all-gather kept as a self-contained collective: stores and
// signals replace the bulk copy, but the collective still waits for every
// source before returning, and barriers still fence it on both sides.
inline FdRun run_independent_ag(const DecodeProblem& p,
                                const WorldConfig& cfg) {
  return detail::run_world(p, cfg, [&p](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t wire = partial_wire_size(p.heads, p.head_dim);
    auto& inbox = ctx.alloc_symmetric(
        "fd.inbox", {w, static_cast<std::size_t>(p.heads),
                     static_cast<std::size_t>(p.head_dim) + 2},
        /*staging=*/true);
    auto& flags = ctx.alloc_board("fd.flags", ctx.world_size(), 1);
    const detail::Shard shard =
        detail::slice_shard(p, ctx.rank(), ctx.world_size());
    ctx.setup_fence();

    ctx.charge_launch("fd.attention");
    const AttnPartial part = detail::local_partial(ctx, p, shard);
    std::vector<float> row(wire);
    serialize_partial(part, row.data());
    ctx.barrier();

    ctx.charge_launch("fd.allgather");
    for (int dst = 0; dst < ctx.world_size(); ++dst) {
      ctx.remote_store(inbox, dst, static_cast<std::size_t>(ctx.rank()) * wire,
                       wire, row.data());
      ctx.atomic_signal(flags, dst, ctx.rank(), 0);
    }
    for (int s = 0; s < ctx.world_size(); ++s) {
      ctx.wait_signal(flags, s, 0, 1);
    }
    ctx.barrier();

    ctx.charge_launch("fd.combine");
    std::vector<float> out;
    {
      ComputeScope cs(ctx, "fd.combine");
      out = detail::fold_rows(ctx, p, ctx.local(inbox).data(), wire);
    }
    return detail::RankOut{std::move(out), detail::snapshot_flags(ctx, flags)};
  });
}

// Barrier-free collective: only the launch-order barrier before the
// all-gather remains. The combine waits per source right before folding
// it, so the first-arriving partial can be consumed while stragglers are
// still pushing.
inline FdRun run_fine_waits(const DecodeProblem& p, const WorldConfig& cfg) {
  return detail::run_world(p, cfg, [&p](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t wire = partial_wire_size(p.heads, p.head_dim);
    auto& inbox = ctx.alloc_symmetric(
        "fd.inbox", {w, static_cast<std::size_t>(p.heads),
                     static_cast<std::size_t>(p.head_dim) + 2},
        /*staging=*/true);
    auto& flags = ctx.alloc_board("fd.flags", ctx.world_size(), 1);
    const detail::Shard shard =
        detail::slice_shard(p, ctx.rank(), ctx.world_size());
    ctx.setup_fence();

    ctx.charge_launch("fd.attention");
    const AttnPartial part = detail::local_partial(ctx, p, shard);
    std::vector<float> row(wire);
    serialize_partial(part, row.data());
    ctx.barrier();

    ctx.charge_launch("fd.allgather");
    for (int dst = 0; dst < ctx.world_size(); ++dst) {
      ctx.remote_store(inbox, dst, static_cast<std::size_t>(ctx.rank()) * wire,
                       wire, row.data());
      ctx.atomic_signal(flags, dst, ctx.rank(), 0);
    }

    ctx.charge_launch("fd.combine");
    std::vector<float> out;
    {
      ComputeScope cs(ctx, "fd.combine");
      AttnPartial acc = AttnPartial::neutral(p.heads, p.head_dim);
      const float* rows = ctx.local(inbox).data();
      for (int s = 0; s < ctx.world_size(); ++s) {
        ctx.wait_signal(flags, s, 0, 1);
        acc = combine_partials(
            acc, deserialize_partial(rows + static_cast<std::size_t>(s) * wire,
                                     p.heads, p.head_dim));
      }
      out = finalize(acc);
    }
    return detail::RankOut{std::move(out), detail::snapshot_flags(ctx, flags)};
  });
}

// Fully fused schedule: one task computes the shard partial and pushes it
// everywhere, one task folds partials as their signals land. Two launches,
// zero barriers; the signal carries the data.
inline FdRun run_fused(const DecodeProblem& p, const WorldConfig& cfg,
                       const FdOptions& opts = {}) {
  return detail::run_world(p, cfg, [&p, &opts](RankCtx& ctx) {
    const std::size_t w = static_cast<std::size_t>(ctx.world_size());
    const std::size_t wire = partial_wire_size(p.heads, p.head_dim);
    auto& inbox = ctx.alloc_symmetric(
        "fd.inbox", {w, static_cast<std::size_t>(p.heads),
                     static_cast<std::size_t>(p.head_dim) + 2},
        /*staging=*/true);
    auto& flags = ctx.alloc_board("fd.flags", ctx.world_size(), 1);
    const detail::Shard shard =
        detail::slice_shard(p, ctx.rank(), ctx.world_size());
    ctx.setup_fence();

    ctx.charge_launch("fd.attention_push");
    const AttnPartial part = detail::local_partial(ctx, p, shard);
    std::vector<float> row(wire);
    serialize_partial(part, row.data());
    for (int dst = 0; dst < ctx.world_size(); ++dst) {
      ctx.remote_store(inbox, dst, static_cast<std::size_t>(ctx.rank()) * wire,
                       wire, row.data());
      ctx.atomic_signal(flags, dst, ctx.rank(), 0);
    }

    ctx.charge_launch("fd.reduce");
    std::vector<float> out;
    {
      ComputeScope cs(ctx, "fd.combine");
      const float* rows = ctx.local(inbox).data();
      if (opts.fold_by_arrival) {
        // Experiment: fold whichever source has landed. Schedule-dependent
        // fold order; not bitwise reproducible.
        AttnPartial acc = AttnPartial::neutral(p.heads, p.head_dim);
        std::vector<bool> folded(w, false);
        std::size_t remaining = w;
        const auto deadline = Clock::now() + ctx.config().watchdog;
        while (remaining > 0) {
          bool progressed = false;
          for (int s = 0; s < ctx.world_size(); ++s) {
            if (folded[static_cast<std::size_t>(s)] ||
                ctx.read_signal(flags, s, 0) < 1) {
              continue;
            }
            acc = combine_partials(
                acc,
                deserialize_partial(rows + static_cast<std::size_t>(s) * wire,
                                    p.heads, p.head_dim));
            folded[static_cast<std::size_t>(s)] = true;
            --remaining;
            progressed = true;
          }
          if (!progressed) {
            if (Clock::now() >= deadline) {
              throw DeadlockError(
                  "fd.reduce: " + std::to_string(remaining) +
                  " partials never arrived within the watchdog");
            }
            std::this_thread::yield();
          }
        }
        out = finalize(acc);
      } else {
        AttnPartial acc = AttnPartial::neutral(p.heads, p.head_dim);
        for (int s = 0; s < ctx.world_size(); ++s) {
          ctx.wait_signal(flags, s, 0, 1);
          acc = combine_partials(
              acc,
              deserialize_partial(rows + static_cast<std::size_t>(s) * wire,
                                  p.heads, p.head_dim));
        }
        out = finalize(acc);
      }
    }
    return detail::RankOut{std::move(out), detail::snapshot_flags(ctx, flags)};
  });
}

inline FdRun run_fd(const DecodeProblem& p, Variant variant,
                    const WorldConfig& cfg, const FdOptions& opts = {}) {
  switch (variant) {
    case Variant::kBsp:
      return run_bsp(p, cfg);
    case Variant::kIndependentAg:
      return run_independent_ag(p, cfg);
    case Variant::kFineWaits:
      return run_fine_waits(p, cfg);
    case Variant::kFused:
      return run_fused(p, cfg, opts);
  }
  throw ConfigError("run_fd: unknown variant");
}

}  // namespace tilefabric::fd
