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

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tilefabric/common.hpp"
#include "tilefabric/events.hpp"
#include "tilefabric/fabric.hpp"

namespace tilefabric::tax {

// The three overheads a fused pattern tries to buy back, extracted from
// one run's event timeline:
//
//   launch_tax     every kernel launch costs a fixed overhead; charged
//                  exactly as launch_count x cfg.launch_cost, so two runs
//                  with equal counts report equal tax.
//   bulk_sync_tax  time ranks sat in world barriers (entry to return).
//   wait_idle      time ranks sat spinning on signal slots. Finer than a
//                  barrier: only the dependent consumer pays it.
//   staged_bytes   bytes written into staging/inbox tensors; a proxy for
//                  producer results that took a round trip through memory
//                  instead of staying local to the consumer.
struct TaxReport {
  int world_size = 0;
  Duration launch_cost{};

  std::vector<std::uint64_t> launch_count;  // per rank
  std::uint64_t total_launches = 0;
  Duration launch_tax{};  // total_launches * launch_cost, exact

  std::vector<Duration> barrier_wait;  // per rank
  Duration bulk_sync_tax{};            // sum over ranks

  std::vector<Duration> signal_wait;  // per rank
  Duration wait_idle{};               // sum over ranks

  std::vector<std::uint64_t> staged_bytes_by_rank;  // per writing rank
  std::uint64_t staged_bytes = 0;

  Duration makespan{};  // latest event end; the epoch is 0 by construction
};

// Folds a timeline into a TaxReport. Pure: equal logs yield equal reports.
// Rejects logs that violate the recording contract (unknown ranks,
// negative spans, overlapping compute events on one rank).
inline TaxReport report(std::span<const TaskEvent> events,
                        const WorldConfig& cfg) {
  const int n = cfg.world_size;
  TaxReport r;
  r.world_size = n;
  r.launch_cost = cfg.launch_cost;
  r.launch_count.assign(static_cast<std::size_t>(n), 0);
  r.barrier_wait.assign(static_cast<std::size_t>(n), Duration::zero());
  r.signal_wait.assign(static_cast<std::size_t>(n), Duration::zero());
  r.staged_bytes_by_rank.assign(static_cast<std::size_t>(n), 0);

  std::vector<std::vector<std::pair<Duration, Duration>>> compute_spans(
      static_cast<std::size_t>(n));

  for (const TaskEvent& ev : events) {
    if (ev.rank < 0 || ev.rank >= n) {
      throw MalformedLogError("report: event \"" + ev.label + "\" has rank " +
                              std::to_string(ev.rank) +
                              " outside world_size " + std::to_string(n));
    }
    if (ev.t_end < ev.t_start) {
      throw MalformedLogError("report: event \"" + ev.label +
                              "\" ends before it starts");
    }
    const auto rank = static_cast<std::size_t>(ev.rank);
    switch (ev.kind) {
      case EventKind::kLaunch:
        ++r.launch_count[rank];
        break;
      case EventKind::kCompute:
        compute_spans[rank].emplace_back(ev.t_start, ev.t_end);
        break;
      case EventKind::kBarrierWait:
        r.barrier_wait[rank] += ev.duration();
        break;
      case EventKind::kSignalWait:
        r.signal_wait[rank] += ev.duration();
        break;
      case EventKind::kRemoteCopy:
        if (ev.staged) {
          r.staged_bytes_by_rank[rank] += ev.bytes;
        }
        break;
    }
    r.makespan = std::max(r.makespan, ev.t_end);
  }

  // One compute stage at a time per rank; anything else means a pattern
  // mislabeled concurrent work as compute.
  for (int rank = 0; rank < n; ++rank) {
    auto& spans = compute_spans[static_cast<std::size_t>(rank)];
    std::sort(spans.begin(), spans.end());
    for (std::size_t i = 1; i < spans.size(); ++i) {
      if (spans[i].first < spans[i - 1].second) {
        throw MalformedLogError(
            "report: overlapping compute events on rank " +
            std::to_string(rank));
      }
    }
  }

  for (int rank = 0; rank < n; ++rank) {
    const auto i = static_cast<std::size_t>(rank);
    r.total_launches += r.launch_count[i];
    r.bulk_sync_tax += r.barrier_wait[i];
    r.wait_idle += r.signal_wait[i];
    r.staged_bytes += r.staged_bytes_by_rank[i];
  }
  r.launch_tax = r.launch_cost * static_cast<std::int64_t>(r.total_launches);
  return r;
}

inline double to_ms(Duration d) {
  return std::chrono::duration<double, std::milli>(d).count();
}

inline nlohmann::json to_json(const TaxReport& r) {
  nlohmann::json j;
  j["world_size"] = r.world_size;
  j["launch_cost_us"] =
      std::chrono::duration<double, std::micro>(r.launch_cost).count();
  j["launch_count"] = r.launch_count;
  j["total_launches"] = r.total_launches;
  j["launch_tax_ms"] = to_ms(r.launch_tax);
  j["bulk_sync_tax_ms"] = to_ms(r.bulk_sync_tax);
  j["wait_idle_ms"] = to_ms(r.wait_idle);
  j["staged_bytes"] = r.staged_bytes;
  j["makespan_ms"] = to_ms(r.makespan);
  return j;
}

}  // namespace tilefabric::tax
