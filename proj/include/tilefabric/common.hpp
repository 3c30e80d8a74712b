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
#include <atomic>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace tilefabric {

using Clock = std::chrono::steady_clock;
using Duration = std::chrono::nanoseconds;

inline constexpr Duration kDefaultWatchdog = std::chrono::seconds(10);
inline constexpr Duration kDefaultLaunchCost = std::chrono::microseconds(20);

// Base for everything this library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid configuration: bad world size, mismatched collective arguments,
// duplicate heap names, divisibility violations.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Out-of-range access to a symmetric region or signal board.
class BoundsError : public Error {
 public:
  using Error::Error;
};

// Incompatible matrix/tile dimensions.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A wait exceeded the watchdog. The message names what was being waited on
// (slot + expected/observed counters, or the barrier generation).
class DeadlockError : public Error {
 public:
  using Error::Error;
};

// Whole-world failure: some rank's program threw. Message names the rank.
class WorldError : public Error {
 public:
  using Error::Error;
};

// Finalizing a neutral attention partial (no keys were ever folded in).
class EmptyAttentionError : public Error {
 public:
  using Error::Error;
};

// A kernel produced or consumed a non-finite value it cannot represent
// (e.g. an attention score of inf/NaN).
class NumericError : public Error {
 public:
  using Error::Error;
};

// Event log violates the recording contract (e.g. overlapping compute
// events on one rank).
class MalformedLogError : public Error {
 public:
  using Error::Error;
};

// Watchdog default, overridable through TILEFABRIC_WATCHDOG_SECS.
inline Duration default_watchdog() {
  if (const char* env = std::getenv("TILEFABRIC_WATCHDOG_SECS")) {
    char* end = nullptr;
    const double secs = std::strtod(env, &end);
    if (end != env && secs > 0.0) {
      return std::chrono::duration_cast<Duration>(
          std::chrono::duration<double>(secs));
    }
  }
  return kDefaultWatchdog;
}

// Sleeps for `d` with sub-scheduler-quantum accuracy: blocking sleep for the
// bulk, then a clock spin for the tail. Short durations spin outright so a
// 20 us charge does not balloon into a 100 us timer-slack sleep.
inline void precise_sleep(Duration d) {
  if (d <= Duration::zero()) {
    return;
  }
  const auto deadline = Clock::now() + d;
  constexpr auto kSpinTail = std::chrono::microseconds(150);
  if (d > std::chrono::milliseconds(1)) {
    std::this_thread::sleep_until(deadline - kSpinTail);
  }
  while (Clock::now() < deadline) {
  }
}

// Smallest reliably measurable cross-thread interval on this host. Single
// clock reads resolve to tens of nanoseconds, but timestamps taken on two
// different threads are only comparable up to a scheduler hop, so the bound
// is the larger of the two. Measured once, at first use.
Duration timing_granularity();

// Seeded uniform reals in [-1, 1].
inline std::vector<float> uniform_reals(std::uint64_t seed, std::size_t n) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
  std::vector<float> out(n);
  for (auto& x : out) {
    x = dist(rng);
  }
  return out;
}

namespace detail {

inline Duration measure_clock_tick() {
  Duration best = std::chrono::microseconds(1);
  for (int trial = 0; trial < 64; ++trial) {
    const auto t0 = Clock::now();
    auto t1 = Clock::now();
    while (t1 == t0) {
      t1 = Clock::now();
    }
    best = std::min(best, std::chrono::duration_cast<Duration>(t1 - t0));
  }
  return best;
}

inline Duration measure_sched_hop() {
  // Ping-pong between two threads through an atomic token; the slowest
  // observed hop bounds how late a wakeup can land under current load.
  std::atomic<int> token{0};
  std::atomic<bool> stop{false};
  constexpr int kHops = 128;
  std::vector<Duration> hops;
  hops.reserve(kHops);
  std::thread peer([&] {
    int seen = 0;
    while (!stop.load(std::memory_order_acquire)) {
      if (token.load(std::memory_order_acquire) == seen + 1) {
        token.fetch_add(1, std::memory_order_release);
        seen += 2;  // one hop out, one back
      } else {
        std::this_thread::yield();
      }
    }
  });
  int at = 0;
  for (int i = 0; i < kHops; ++i) {
    const auto t0 = Clock::now();
    token.store(at + 1, std::memory_order_release);
    while (token.load(std::memory_order_acquire) != at + 2) {
      std::this_thread::yield();
    }
    at += 2;
    hops.push_back(std::chrono::duration_cast<Duration>(Clock::now() - t0));
  }
  stop.store(true, std::memory_order_release);
  peer.join();
  return *std::max_element(hops.begin(), hops.end());
}

}  // namespace detail

inline Duration timing_granularity() {
  static const Duration g = [] {
    return std::max(detail::measure_clock_tick(), detail::measure_sched_hop());
  }();
  return g;
}

}  // namespace tilefabric
