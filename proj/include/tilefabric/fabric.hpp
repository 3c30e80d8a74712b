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

#include <atomic>
#include <condition_variable>
#include <cstring>
#include <exception>
#include <functional>
#include <latch>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <type_traits>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tilefabric/common.hpp"
#include "tilefabric/events.hpp"

namespace tilefabric {

class World;
class RankCtx;

// World-wide knobs. One instance describes one run.
struct WorldConfig {
  // Number of workers; each gets one OS thread and one symmetric region
  // per allocation. Workers are expected to be oversubscribed, so every
  // wait in the fabric yields.
  int world_size = 1;

  // Synthetic cost charged at the start of every task launch. Models the
  // fixed overhead of getting a kernel onto the device.
  Duration launch_cost = kDefaultLaunchCost;

  // Upper bound on any single wait (barrier or signal) before the fabric
  // declares the schedule wedged and raises a diagnostic.
  Duration watchdog = default_watchdog();

  // Extra delay injected into the named rank's first compute stage.
  // Models a straggler.
  std::map<int, Duration> skew;

  // Seeds input generation for whatever pattern runs on this world.
  std::uint64_t seed = 0;

  // A spinning wait re-checks its condition this many times before
  // yielding the core. Keep small when workers outnumber cores.
  int spin_yield_every = 64;

  void validate() const {
    if (world_size < 1 || world_size > 64) {
      throw ConfigError("world_size must be in [1, 64], got " +
                        std::to_string(world_size));
    }
    if (launch_cost < Duration::zero()) {
      throw ConfigError("launch_cost must be >= 0");
    }
    if (watchdog <= Duration::zero()) {
      throw ConfigError("watchdog must be > 0");
    }
    if (spin_yield_every < 1) {
      throw ConfigError("spin_yield_every must be >= 1");
    }
    for (const auto& [rank, delay] : skew) {
      if (rank < 0 || rank >= world_size) {
        throw ConfigError("skew rank " + std::to_string(rank) +
                          " out of range for world_size " +
                          std::to_string(world_size));
      }
      if (delay < Duration::zero()) {
        throw ConfigError("skew delay must be >= 0");
      }
    }
  }
};

// Adds `delay` to `rank`'s first compute stage. Validates eagerly so a bad
// benchmark flag fails before any worker starts.
inline void inject_skew(WorldConfig& cfg, int rank, Duration delay) {
  if (rank < 0 || rank >= cfg.world_size) {
    throw ConfigError("inject_skew: rank " + std::to_string(rank) +
                      " out of range for world_size " +
                      std::to_string(cfg.world_size));
  }
  if (delay < Duration::zero()) {
    throw ConfigError("inject_skew: delay must be >= 0");
  }
  cfg.skew[rank] += delay;
}

// A named allocation with one equally-shaped f32 region per rank.
// Any rank may read or write any region through RankCtx one-sided ops;
// plain local access to the caller's own region goes through
// RankCtx::local(). Regions are zero-filled at allocation.
//
// NOTE: data-race freedom is the caller's contract. The fabric orders
// remote stores against readers only through signals and barriers.
class SymmetricTensor {
 public:
  const std::string& name() const { return name_; }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return size_; }  // elements per region
  bool staging() const { return staging_; }

  // Rows/cols of a 2-D tensor; block transfers require this layout.
  std::size_t rows() const { return shape_[0]; }
  std::size_t cols() const { return shape_.size() > 1 ? shape_[1] : 1; }

 private:
  friend class World;
  friend class RankCtx;

  SymmetricTensor(std::string name, std::vector<std::size_t> shape,
                  std::size_t size, bool staging, int world_size)
      : name_(std::move(name)),
        shape_(std::move(shape)),
        size_(size),
        staging_(staging),
        regions_(static_cast<std::size_t>(world_size)),
        arrived_(static_cast<std::size_t>(world_size), false) {
    for (auto& region : regions_) {
      region.assign(size_, 0.0f);
    }
  }

  std::string name_;
  std::vector<std::size_t> shape_;
  std::size_t size_;
  bool staging_;
  std::vector<std::vector<float>> regions_;  // [rank][elem]
  std::vector<bool> arrived_;                // guarded by World registry mutex
};

// A named grid of monotonic counters, one grid per rank. Producers bump
// a slot on the destination rank with release ordering; consumers poll
// their own grid with acquire loads, so observing the expected count also
// makes the payload written before the bump visible.
class SignalBoard {
 public:
  const std::string& name() const { return name_; }
  int rows() const { return rows_; }
  int slots() const { return slots_; }

 private:
  friend class World;
  friend class RankCtx;

  SignalBoard(std::string name, int rows, int slots, int world_size)
      : name_(std::move(name)), rows_(rows), slots_(slots) {
    grids_.reserve(static_cast<std::size_t>(world_size));
    const std::size_t cells =
        static_cast<std::size_t>(rows) * static_cast<std::size_t>(slots);
    for (int r = 0; r < world_size; ++r) {
      auto grid = std::make_unique<std::atomic<std::uint64_t>[]>(cells);
      for (std::size_t i = 0; i < cells; ++i) {
        grid[i].store(0, std::memory_order_relaxed);
      }
      grids_.push_back(std::move(grid));
    }
    arrived_.assign(static_cast<std::size_t>(world_size), false);
  }

  std::atomic<std::uint64_t>& at(int rank, int row, int slot) const {
    return grids_[static_cast<std::size_t>(rank)]
                 [static_cast<std::size_t>(row) * slots_ + slot];
  }

  std::string name_;
  int rows_;
  int slots_;
  std::vector<std::unique_ptr<std::atomic<std::uint64_t>[]>> grids_;
  std::vector<bool> arrived_;  // guarded by World registry mutex
};

namespace detail {

// Thrown into ranks that are waiting when some other rank has already
// failed; swallowed by the worker wrapper so only the root cause surfaces.
struct WorldAbort {};

// N-party reusable barrier with a generation counter. Waiters block on a
// condition variable (not a spin) because worlds run oversubscribed.
class CentralBarrier {
 public:
  explicit CentralBarrier(int n) : n_(n) {}

  void wait(Duration watchdog, const std::atomic<bool>& abort_flag) {
    std::unique_lock<std::mutex> lock(mu_);
    const std::uint64_t gen = gen_;
    if (++arrived_ == n_) {
      arrived_ = 0;
      ++gen_;
      cv_.notify_all();
      return;
    }
    const auto deadline = Clock::now() + watchdog;
    while (gen_ == gen) {
      if (abort_flag.load(std::memory_order_acquire)) {
        --arrived_;
        throw WorldAbort{};
      }
      if (cv_.wait_until(lock, deadline) == std::cv_status::timeout &&
          gen_ == gen) {
        const int seen = arrived_;
        --arrived_;
        throw DeadlockError(
            "barrier generation " + std::to_string(gen) + ": only " +
            std::to_string(seen) + " of " + std::to_string(n_) +
            " ranks arrived within the watchdog");
      }
    }
  }

  void notify_abort() {
    std::lock_guard<std::mutex> lock(mu_);
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  const int n_;
  int arrived_ = 0;
  std::uint64_t gen_ = 0;
};

}  // namespace detail

// The shared state behind one launch_world() call: config, epoch, the
// symmetric-heap registry, the barrier, and failure bookkeeping. Owned by
// launch_world for the duration of the run; ranks see it through RankCtx.
class World {
 public:
  explicit World(const WorldConfig& cfg)
      : cfg_(cfg),
        barrier_(cfg.world_size),
        setup_barrier_(cfg.world_size) {}

  World(const World&) = delete;
  World& operator=(const World&) = delete;

  const WorldConfig& config() const { return cfg_; }

 private:
  friend class RankCtx;
  friend class ComputeScope;
  template <typename Program>
  friend auto launch_world(const WorldConfig& cfg, Program program);

  void set_epoch(Clock::time_point t) { epoch_ = t; }
  Duration since_epoch() const {
    return std::chrono::duration_cast<Duration>(Clock::now() - epoch_);
  }

  SymmetricTensor& alloc_tensor(int rank, const std::string& name,
                                const std::vector<std::size_t>& shape,
                                bool staging) {
    if (name.empty()) {
      throw ConfigError("alloc_symmetric: empty tensor name");
    }
    if (shape.empty()) {
      throw ConfigError("alloc_symmetric(\"" + name + "\"): empty shape");
    }
    std::size_t size = 1;
    for (std::size_t dim : shape) {
      if (dim == 0) {
        throw ConfigError("alloc_symmetric(\"" + name +
                          "\"): zero-size dimension");
      }
      size *= dim;
    }
    std::lock_guard<std::mutex> lock(registry_mu_);
    auto it = tensors_.find(name);
    if (it == tensors_.end()) {
      it = tensors_
               .emplace(name, std::unique_ptr<SymmetricTensor>(
                                  new SymmetricTensor(name, shape, size,
                                                      staging,
                                                      cfg_.world_size)))
               .first;
    } else {
      SymmetricTensor& t = *it->second;
      if (t.shape_ != shape || t.staging_ != staging) {
        throw ConfigError("alloc_symmetric(\"" + name +
                          "\"): shape/staging mismatch across ranks");
      }
    }
    SymmetricTensor& t = *it->second;
    if (t.arrived_[static_cast<std::size_t>(rank)]) {
      throw ConfigError("alloc_symmetric(\"" + name +
                        "\"): duplicate allocation on rank " +
                        std::to_string(rank));
    }
    t.arrived_[static_cast<std::size_t>(rank)] = true;
    return t;
  }

  SignalBoard& alloc_board(int rank, const std::string& name, int rows,
                           int slots) {
    if (name.empty()) {
      throw ConfigError("alloc_board: empty board name");
    }
    if (rows < 1 || slots < 1) {
      throw ConfigError("alloc_board(\"" + name +
                        "\"): rows and slots must be >= 1");
    }
    std::lock_guard<std::mutex> lock(registry_mu_);
    auto it = boards_.find(name);
    if (it == boards_.end()) {
      it = boards_
               .emplace(name, std::unique_ptr<SignalBoard>(new SignalBoard(
                                  name, rows, slots, cfg_.world_size)))
               .first;
    } else {
      SignalBoard& b = *it->second;
      if (b.rows_ != rows || b.slots_ != slots) {
        throw ConfigError("alloc_board(\"" + name +
                          "\"): grid mismatch across ranks");
      }
    }
    SignalBoard& b = *it->second;
    if (b.arrived_[static_cast<std::size_t>(rank)]) {
      throw ConfigError("alloc_board(\"" + name +
                        "\"): duplicate allocation on rank " +
                        std::to_string(rank));
    }
    b.arrived_[static_cast<std::size_t>(rank)] = true;
    return b;
  }

  void abort(std::exception_ptr err, int rank) {
    {
      std::lock_guard<std::mutex> lock(err_mu_);
      if (!first_error_) {
        first_error_ = std::move(err);
        failed_rank_ = rank;
      }
    }
    abort_flag_.store(true, std::memory_order_release);
    barrier_.notify_abort();
    setup_barrier_.notify_abort();
  }

  bool aborted() const { return abort_flag_.load(std::memory_order_acquire); }

  WorldConfig cfg_;
  Clock::time_point epoch_{};
  std::mutex registry_mu_;
  std::unordered_map<std::string, std::unique_ptr<SymmetricTensor>> tensors_;
  std::unordered_map<std::string, std::unique_ptr<SignalBoard>> boards_;
  detail::CentralBarrier barrier_;
  detail::CentralBarrier setup_barrier_;
  std::atomic<bool> abort_flag_{false};
  std::mutex err_mu_;
  std::exception_ptr first_error_;
  int failed_rank_ = -1;
};

class ComputeScope;
class TaskHandle;

// Per-rank handle passed to the rank program. Thread-safe: a rank's helper
// task (spawn_task) shares its owner's context.
class RankCtx {
 public:
  RankCtx(World& world, int rank, EventLog& log)
      : world_(world), rank_(rank), log_(log) {
    skew_pending_.store(world.cfg_.skew.count(rank) != 0,
                        std::memory_order_relaxed);
  }

  RankCtx(const RankCtx&) = delete;
  RankCtx& operator=(const RankCtx&) = delete;

  int rank() const { return rank_; }
  int world_size() const { return world_.cfg_.world_size; }
  const WorldConfig& config() const { return world_.cfg_; }

  // ---- symmetric heap ------------------------------------------------

  // Collective: every rank must allocate the same name with the same shape
  // and staging flag, exactly once. Returns the shared tensor. Tensors
  // marked `staging` count their inbound stores toward the staged-bytes
  // locality proxy.
  SymmetricTensor& alloc_symmetric(const std::string& name,
                                   std::vector<std::size_t> shape,
                                   bool staging = false) {
    return world_.alloc_tensor(rank_, name, shape, staging);
  }

  // Collective: a rows x slots grid of monotonic counters per rank.
  SignalBoard& alloc_board(const std::string& name, int rows, int slots) {
    return world_.alloc_board(rank_, name, rows, slots);
  }

  // Plain access to the caller's own region. Not recorded as traffic.
  std::span<float> local(SymmetricTensor& t) {
    return std::span<float>(t.regions_[static_cast<std::size_t>(rank_)]);
  }
  std::span<const float> local(const SymmetricTensor& t) const {
    return std::span<const float>(
        t.regions_[static_cast<std::size_t>(rank_)]);
  }

  // ---- one-sided transfers -------------------------------------------

  // Copies `count` elements starting at `offset` out of `src_rank`'s
  // region into `dst`. A local copy when src_rank == rank(). Records one
  // remote-copy event.
  void remote_load(const SymmetricTensor& t, int src_rank, std::size_t offset,
                   std::size_t count, float* dst) {
    check_rank(src_rank, "remote_load");
    check_range(t, offset, count, "remote_load");
    const auto t0 = world_.since_epoch();
    std::memcpy(dst,
                t.regions_[static_cast<std::size_t>(src_rank)].data() + offset,
                count * sizeof(float));
    log_copy("load:" + t.name_, src_rank, offset, count * sizeof(float),
             false, t0);
  }

  std::vector<float> remote_load(const SymmetricTensor& t, int src_rank,
                                 std::size_t offset, std::size_t count) {
    std::vector<float> out(count);
    remote_load(t, src_rank, offset, count, out.data());
    return out;
  }

  // Copies `count` elements from `src` into `dst_rank`'s region at
  // `offset`. Records one remote-copy event; stores into staging tensors
  // are flagged for the locality proxy.
  void remote_store(SymmetricTensor& t, int dst_rank, std::size_t offset,
                    std::size_t count, const float* src) {
    check_rank(dst_rank, "remote_store");
    check_range(t, offset, count, "remote_store");
    const auto t0 = world_.since_epoch();
    std::memcpy(t.regions_[static_cast<std::size_t>(dst_rank)].data() + offset,
                src, count * sizeof(float));
    log_copy("store:" + t.name_, dst_rank, offset, count * sizeof(float),
             t.staging_, t0);
  }

  // Rectangular transfers for 2-D tensors: one event per call, sized as
  // the whole rows x cols block. `dst_stride`/`src_stride` are in elements.
  void remote_load_block(const SymmetricTensor& t, int src_rank,
                         std::size_t row0, std::size_t col0, std::size_t rows,
                         std::size_t cols, float* dst,
                         std::size_t dst_stride) {
    check_rank(src_rank, "remote_load_block");
    check_block(t, row0, col0, rows, cols, "remote_load_block");
    const auto t0 = world_.since_epoch();
    const float* base = t.regions_[static_cast<std::size_t>(src_rank)].data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::memcpy(dst + i * dst_stride,
                  base + (row0 + i) * t.cols() + col0, cols * sizeof(float));
    }
    log_copy("load:" + t.name_, src_rank, row0 * t.cols() + col0,
             rows * cols * sizeof(float), false, t0);
  }

  void remote_store_block(SymmetricTensor& t, int dst_rank, std::size_t row0,
                          std::size_t col0, std::size_t rows,
                          std::size_t cols, const float* src,
                          std::size_t src_stride) {
    check_rank(dst_rank, "remote_store_block");
    check_block(t, row0, col0, rows, cols, "remote_store_block");
    const auto t0 = world_.since_epoch();
    float* base = t.regions_[static_cast<std::size_t>(dst_rank)].data();
    for (std::size_t i = 0; i < rows; ++i) {
      std::memcpy(base + (row0 + i) * t.cols() + col0, src + i * src_stride,
                  cols * sizeof(float));
    }
    log_copy("store:" + t.name_, dst_rank, row0 * t.cols() + col0,
             rows * cols * sizeof(float), t.staging_, t0);
  }

  // ---- signals ---------------------------------------------------------

  // Bumps (row, slot) on `dst_rank`'s grid by one, with release ordering:
  // a consumer that observes the bump also observes every store this rank
  // made before it ("the signal carries the data").
  void atomic_signal(SignalBoard& b, int dst_rank, int row, int slot) {
    check_rank(dst_rank, "atomic_signal");
    check_cell(b, row, slot, "atomic_signal");
    b.at(dst_rank, row, slot).fetch_add(1, std::memory_order_release);
  }

  // Acquire peek at the caller's own grid; for polling-style consumers.
  std::uint64_t read_signal(const SignalBoard& b, int row, int slot) const {
    check_cell(b, row, slot, "read_signal");
    return b.at(rank_, row, slot).load(std::memory_order_acquire);
  }

  // Spins until the caller's own (row, slot) counter reaches `expected`.
  // Counters are monotonic, so >= is the right test and missed wakeups are
  // impossible. Yields every spin_yield_every checks, backs off to short
  // sleeps on long waits, and raises DeadlockError past the watchdog.
  void wait_signal(const SignalBoard& b, int row, int slot,
                   std::uint64_t expected) {
    check_cell(b, row, slot, "wait_signal");
    const auto t0 = world_.since_epoch();
    const auto& cell = b.at(rank_, row, slot);
    std::uint64_t seen = cell.load(std::memory_order_acquire);
    if (seen < expected) {
      const auto deadline = Clock::now() + world_.cfg_.watchdog;
      const int spin_budget = world_.cfg_.spin_yield_every;
      int spins = 0;
      int yields = 0;
      for (;;) {
        seen = cell.load(std::memory_order_acquire);
        if (seen >= expected) {
          break;
        }
        if (++spins < spin_budget) {
          continue;
        }
        spins = 0;
        if (world_.aborted()) {
          throw detail::WorldAbort{};
        }
        if (Clock::now() >= deadline) {
          throw DeadlockError(
              "wait_signal(board \"" + b.name_ + "\", row " +
              std::to_string(row) + ", slot " + std::to_string(slot) +
              ") on rank " + std::to_string(rank_) + ": expected >= " +
              std::to_string(expected) + ", observed " + std::to_string(seen) +
              " within the watchdog");
        }
        // Oversubscribed worlds make pure spinning counterproductive:
        // yield first, then back off to short sleeps so a delayed
        // producer can get the core.
        if (++yields <= 256) {
          std::this_thread::yield();
        } else {
          std::this_thread::sleep_for(std::chrono::microseconds(50));
        }
      }
    }
    TaskEvent ev;
    ev.kind = EventKind::kSignalWait;
    ev.rank = rank_;
    ev.label = b.name_;
    ev.t_start = t0;
    ev.t_end = world_.since_epoch();
    ev.peer = row;
    ev.slot = slot;
    log_.append(std::move(ev));
  }

  // ---- synchronization -------------------------------------------------

  // World-wide barrier. The recorded wait spans entry to return.
  void barrier() {
    const auto t0 = world_.since_epoch();
    world_.barrier_.wait(world_.cfg_.watchdog, world_.abort_flag_);
    TaskEvent ev;
    ev.kind = EventKind::kBarrierWait;
    ev.rank = rank_;
    ev.label = "barrier";
    ev.t_start = t0;
    ev.t_end = world_.since_epoch();
    log_.append(std::move(ev));
  }

  // Rendezvous between input placement and the measured schedule. Models
  // operands that are already resident when kernels launch; deliberately
  // absent from the event timeline, so it never counts as a pattern
  // barrier.
  void setup_fence() {
    world_.setup_barrier_.wait(world_.cfg_.watchdog, world_.abort_flag_);
  }

  // ---- timeline --------------------------------------------------------

  // Charges the configured launch cost and records it. Call once at the
  // top of each task a real runtime would launch as a kernel.
  void charge_launch(const std::string& label) {
    const auto t0 = world_.since_epoch();
    precise_sleep(world_.cfg_.launch_cost);
    TaskEvent ev;
    ev.kind = EventKind::kLaunch;
    ev.rank = rank_;
    ev.label = label;
    ev.t_start = t0;
    ev.t_end = world_.since_epoch();
    log_.append(std::move(ev));
  }

  // Runs `fn` on a helper thread that shares this rank's log and launch
  // accounting; join() rethrows its failure. Models a concurrently
  // resident kernel (e.g. a producer copy engine next to a consumer).
  TaskHandle spawn_task(std::string label, std::function<void()> fn);

 private:
  friend class ComputeScope;
  friend class TaskHandle;

  void check_rank(int r, const char* op) const {
    if (r < 0 || r >= world_.cfg_.world_size) {
      throw BoundsError(std::string(op) + ": rank " + std::to_string(r) +
                        " out of range for world_size " +
                        std::to_string(world_.cfg_.world_size));
    }
  }

  void check_range(const SymmetricTensor& t, std::size_t offset,
                   std::size_t count, const char* op) const {
    if (offset > t.size_ || count > t.size_ - offset) {
      throw BoundsError(std::string(op) + "(\"" + t.name_ + "\"): range [" +
                        std::to_string(offset) + ", " +
                        std::to_string(offset + count) +
                        ") exceeds region size " + std::to_string(t.size_));
    }
  }

  void check_block(const SymmetricTensor& t, std::size_t row0,
                   std::size_t col0, std::size_t rows, std::size_t cols,
                   const char* op) const {
    if (t.shape_.size() != 2) {
      throw ShapeError(std::string(op) + "(\"" + t.name_ +
                       "\"): block transfer requires a 2-D tensor");
    }
    if (row0 > t.rows() || rows > t.rows() - row0 || col0 > t.cols() ||
        cols > t.cols() - col0) {
      throw BoundsError(std::string(op) + "(\"" + t.name_ + "\"): block [" +
                        std::to_string(row0) + "+" + std::to_string(rows) +
                        ", " + std::to_string(col0) + "+" +
                        std::to_string(cols) + ") exceeds shape " +
                        std::to_string(t.rows()) + "x" +
                        std::to_string(t.cols()));
    }
  }

  void check_cell(const SignalBoard& b, int row, int slot,
                  const char* op) const {
    if (row < 0 || row >= b.rows_ || slot < 0 || slot >= b.slots_) {
      throw BoundsError(std::string(op) + "(\"" + b.name_ + "\"): cell (" +
                        std::to_string(row) + ", " + std::to_string(slot) +
                        ") outside grid " + std::to_string(b.rows_) + "x" +
                        std::to_string(b.slots_));
    }
  }

  void log_copy(std::string label, int peer, std::uint64_t offset,
                std::uint64_t bytes, bool staged, Duration t0) {
    TaskEvent ev;
    ev.kind = EventKind::kRemoteCopy;
    ev.rank = rank_;
    ev.label = std::move(label);
    ev.t_start = t0;
    ev.t_end = world_.since_epoch();
    ev.peer = peer;
    ev.offset = offset;
    ev.bytes = bytes;
    ev.staged = staged;
    log_.append(std::move(ev));
  }

  // The straggler delay is consumed by the first compute scope only.
  Duration take_pending_skew() {
    if (skew_pending_.exchange(false, std::memory_order_acq_rel)) {
      return world_.cfg_.skew.at(rank_);
    }
    return Duration::zero();
  }

  World& world_;
  int rank_;
  EventLog& log_;
  std::atomic<bool> skew_pending_{false};
};

// RAII compute stage. Opening the scope applies any pending straggler
// skew (so the stage simply takes longer); closing it records one compute
// event. Compute events on one rank must never overlap, which the tax
// accounting verifies.
class ComputeScope {
 public:
  ComputeScope(RankCtx& ctx, std::string label)
      : ctx_(ctx), label_(std::move(label)), t0_(ctx.world_.since_epoch()) {
    const Duration skew = ctx_.take_pending_skew();
    if (skew > Duration::zero()) {
      precise_sleep(skew);
    }
  }

  ComputeScope(const ComputeScope&) = delete;
  ComputeScope& operator=(const ComputeScope&) = delete;

  ~ComputeScope() {
    TaskEvent ev;
    ev.kind = EventKind::kCompute;
    ev.rank = ctx_.rank_;
    ev.label = std::move(label_);
    ev.t_start = t0_;
    ev.t_end = ctx_.world_.since_epoch();
    ctx_.log_.append(std::move(ev));
  }

 private:
  RankCtx& ctx_;
  std::string label_;
  Duration t0_;
};

// Joinable helper task; join() rethrows whatever the task threw.
class TaskHandle {
 public:
  TaskHandle() = default;
  TaskHandle(TaskHandle&&) = default;
  TaskHandle& operator=(TaskHandle&&) = default;

  ~TaskHandle() {
    if (state_ && state_->thread.joinable()) {
      state_->thread.join();
    }
  }

  void join() {
    if (!state_) {
      return;
    }
    if (state_->thread.joinable()) {
      state_->thread.join();
    }
    if (state_->error) {
      std::rethrow_exception(std::exchange(state_->error, nullptr));
    }
  }

 private:
  friend class RankCtx;

  struct State {
    std::thread thread;
    std::exception_ptr error;
  };

  std::unique_ptr<State> state_;
};

inline TaskHandle RankCtx::spawn_task(std::string label,
                                      std::function<void()> fn) {
  TaskHandle handle;
  handle.state_ = std::make_unique<TaskHandle::State>();
  TaskHandle::State* state = handle.state_.get();
  state->thread = std::thread([this, state, label = std::move(label),
                               fn = std::move(fn)] {
    try {
      charge_launch(label);
      fn();
    } catch (const detail::WorldAbort&) {
      // Another rank failed first; unwind quietly.
    } catch (...) {
      state->error = std::current_exception();
      world_.abort(std::current_exception(), rank_);
    }
  });
  return handle;
}

// Result of one world run: per-rank program results plus the merged
// timeline (rank-major, append order within a rank).
template <typename R>
struct WorldRun {
  std::vector<R> results;
  std::vector<TaskEvent> events;
};

template <>
struct WorldRun<void> {
  std::vector<TaskEvent> events;
};

namespace detail {

[[noreturn]] inline void rethrow_rank_failure(std::exception_ptr ep,
                                              int rank) {
  const std::string prefix = "rank " + std::to_string(rank) + ": ";
  try {
    std::rethrow_exception(std::move(ep));
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const BoundsError& e) {
    throw BoundsError(prefix + e.what());
  } catch (const ShapeError& e) {
    throw ShapeError(prefix + e.what());
  } catch (const DeadlockError& e) {
    throw DeadlockError(prefix + e.what());
  } catch (const EmptyAttentionError& e) {
    throw EmptyAttentionError(prefix + e.what());
  } catch (const MalformedLogError& e) {
    throw MalformedLogError(prefix + e.what());
  } catch (const std::exception& e) {
    throw WorldError(prefix + e.what());
  } catch (...) {
    throw WorldError(prefix + "unknown error");
  }
}

}  // namespace detail

// Runs `program(RankCtx&)` once per rank on world_size concurrent workers
// and returns every rank's result plus the merged event timeline.
//
// All workers are released together (the epoch is taken at release, so
// event timestamps are comparable across ranks). If any rank throws, the
// first failure wins: waiting ranks are unblocked and unwound, and the
// failure is rethrown here with its rank prefixed.
template <typename Program>
auto launch_world(const WorldConfig& cfg, Program program) {
  using R = std::invoke_result_t<Program&, RankCtx&>;
  cfg.validate();
  World world(cfg);
  const int n = cfg.world_size;

  std::vector<EventLog> logs(static_cast<std::size_t>(n));
  using Held = std::conditional_t<std::is_void_v<R>, char, R>;
  std::vector<std::optional<Held>> slots(static_cast<std::size_t>(n));

  std::latch ready(n);
  std::latch go(1);
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    workers.emplace_back([&, r] {
      RankCtx ctx(world, r, logs[static_cast<std::size_t>(r)]);
      ready.count_down();
      go.wait();
      try {
        if constexpr (std::is_void_v<R>) {
          program(ctx);
        } else {
          slots[static_cast<std::size_t>(r)].emplace(program(ctx));
        }
      } catch (const detail::WorldAbort&) {
        // Root cause recorded by the rank that failed first.
      } catch (...) {
        world.abort(std::current_exception(), r);
      }
    });
  }
  ready.wait();
  world.set_epoch(Clock::now());
  go.count_down();
  for (auto& w : workers) {
    w.join();
  }

  if (world.first_error_) {
    detail::rethrow_rank_failure(world.first_error_, world.failed_rank_);
  }

  WorldRun<R> run;
  for (auto& log : logs) {
    auto events = log.take();
    run.events.insert(run.events.end(),
                      std::make_move_iterator(events.begin()),
                      std::make_move_iterator(events.end()));
  }
  if constexpr (!std::is_void_v<R>) {
    run.results.reserve(static_cast<std::size_t>(n));
    for (auto& slot : slots) {
      run.results.push_back(std::move(*slot));
    }
  }
  return run;
}

}  // namespace tilefabric
