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

#include <cstdint>
#include <mutex>
#include <string>
#include <vector>

#include "tilefabric/common.hpp"

namespace tilefabric {

enum class EventKind : std::uint8_t {
  kLaunch,       // synthetic per-task launch charge
  kCompute,      // a compute stage; never overlaps another on the same rank
  kBarrierWait,  // entry to return from a world barrier
  kSignalWait,   // spin on a signal-board slot
  kRemoteCopy,   // one-sided load or store, one event per tile/block
};

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::kLaunch:
      return "launch";
    case EventKind::kCompute:
      return "compute";
    case EventKind::kBarrierWait:
      return "barrier_wait";
    case EventKind::kSignalWait:
      return "signal_wait";
    case EventKind::kRemoteCopy:
      return "remote_copy";
  }
  return "unknown";
}

// One timeline record. Timestamps are nanoseconds since the world epoch
// (the instant all workers were released), so logs from different ranks
// are directly comparable.
struct TaskEvent {
  EventKind kind;
  int rank = -1;
  std::string label;  // task or resource name, e.g. "ag.gemm", "store:ag.inbox"
  Duration t_start{};
  Duration t_end{};
  // Extra dimensions, meaningful per kind:
  //   kRemoteCopy: peer = other rank, offset = linear element offset of the
  //                transfer start, bytes = payload, staged = wrote into a
  //                staging/inbox tensor (counts toward the locality proxy)
  //   kSignalWait: peer = board row, slot = board slot
  int peer = -1;
  int slot = -1;
  std::uint64_t offset = 0;
  std::uint64_t bytes = 0;
  bool staged = false;

  Duration duration() const { return t_end - t_start; }
};

// Per-rank append log. A rank's helper task shares its owner's log, so
// appends take a light mutex.
class EventLog {
 public:
  void append(TaskEvent ev) {
    std::lock_guard<std::mutex> lock(mu_);
    events_.push_back(std::move(ev));
  }

  std::vector<TaskEvent> take() {
    std::lock_guard<std::mutex> lock(mu_);
    return std::move(events_);
  }

 private:
  std::mutex mu_;
  std::vector<TaskEvent> events_;
};

}  // namespace tilefabric
