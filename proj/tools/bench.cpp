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

// Benchmark driver for the fabric patterns.
//
//   tilefabric-bench --pattern ag-pull --world-size 2 --m 8 --n 8 --k 8
//       --verify --iters 1
//   tilefabric-bench --preset desk-fd --verify --out results/fd
//   tilefabric-bench --pattern fd-fused --sweep-kv 64,128,256 --world-size 4
//
// Single-pattern runs print a summary JSON (median/p10/p90 makespan plus
// the tax aggregates) to stdout and, with --out PREFIX, write one CSV row
// per timed iteration to PREFIX.csv and the summary to PREFIX.json.
// Sweeps (a value list and/or several patterns) print one summary CSV row
// per cell and, with --out PREFIX, also write PREFIX.csv plus a
// gnuplot-ready PREFIX.dat of median-speedup-vs-baseline curves.
//
// Exit codes: 0 success; 1 verification mismatch (with a max-error
// diagnostic) or a runtime failure such as a watchdog timeout; 2 invalid
// flags or constraint violations (unknown pattern, K % W != 0, ...).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tilefabric/presets.hpp"
#include "tilefabric/tilefabric.hpp"

namespace tf = tilefabric;

namespace {

constexpr const char* kAgPatterns[] = {"ag-baseline", "ag-pull", "ag-push"};
constexpr const char* kFdPatterns[] = {"fd-bsp", "fd-ag", "fd-wait",
                                       "fd-fused"};
constexpr const char* kAgBaseline = "ag-baseline";
constexpr const char* kFdBaseline = "fd-bsp";

// Bitwise agreement is the contract for the GEMM patterns; the decode
// patterns reduce across ranks in float, so they get a head-scale bound.
constexpr double kFdVerifyTol = 1e-5;

bool is_ag_pattern(const std::string& p) {
  return std::find(std::begin(kAgPatterns), std::end(kAgPatterns), p) !=
         std::end(kAgPatterns);
}

bool is_fd_pattern(const std::string& p) {
  return std::find(std::begin(kFdPatterns), std::end(kFdPatterns), p) !=
         std::end(kFdPatterns);
}

tf::fd::Variant fd_variant(const std::string& p) {
  if (p == "fd-bsp") return tf::fd::Variant::kBsp;
  if (p == "fd-ag") return tf::fd::Variant::kIndependentAg;
  if (p == "fd-wait") return tf::fd::Variant::kFineWaits;
  return tf::fd::Variant::kFused;
}

double percentile(std::vector<double> v, double q) {
  if (v.empty()) {
    return 0.0;
  }
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const auto hi = std::min(lo + 1, v.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return v[lo] + frac * (v[hi] - v[lo]);
}

std::string csv_escape(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) {
    return s;
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') {
      out += '"';
    }
    out += c;
  }
  out += '"';
  return out;
}

std::pair<int, tf::Duration> parse_skew(const std::string& spec) {
  const auto colon = spec.find(':');
  if (colon == std::string::npos || colon == 0 ||
      colon + 1 == spec.size()) {
    throw tf::ConfigError("--skew expects RANK:MILLIS, got \"" + spec + "\"");
  }
  try {
    const int rank = std::stoi(spec.substr(0, colon));
    const double millis = std::stod(spec.substr(colon + 1));
    return {rank, std::chrono::duration_cast<tf::Duration>(
                      std::chrono::duration<double, std::milli>(millis))};
  } catch (const std::exception&) {
    throw tf::ConfigError("--skew expects RANK:MILLIS, got \"" + spec + "\"");
  }
}

struct Options {
  std::vector<std::string> patterns;
  int world_size = 4;

  std::size_t m = 64, n = 64, k = 64;
  tf::TileSpec tiles;

  int heads = 8;
  int head_dim = 32;
  std::size_t kv_len = 2048;

  std::vector<std::size_t> sweep_m;
  std::vector<std::size_t> sweep_kv;

  std::vector<std::string> skew_specs;
  double launch_cost_us = 20.0;
  int iters = 500;
  int warmup = 100;
  std::uint64_t seed = 1;
  bool verify = false;
  bool dry_run = false;
  bool fd_arrival_order = false;
  std::string out;
  std::string preset;

  bool fd_family = false;           // resolved from the pattern list
  std::vector<std::size_t> values;  // sweep values (one entry if no sweep)
};

// One measured repetition of one cell.
struct IterStats {
  double makespan_ms = 0.0;
  double launch_tax_ms = 0.0;
  double bulk_sync_ms = 0.0;
  double wait_idle_ms = 0.0;
  std::uint64_t staged_bytes = 0;
};

struct CellResult {
  std::string pattern;
  std::size_t value = 0;  // m (ag) or kv_len (fd)
  std::vector<IterStats> iters;
  tf::tax::TaxReport last;  // launch counts etc. of the final repetition
  std::optional<bool> verified;
  double max_err = 0.0;
  std::string error;  // nonempty: the cell failed and the row records why

  double median_ms() const {
    std::vector<double> ms;
    ms.reserve(iters.size());
    for (const auto& it : iters) {
      ms.push_back(it.makespan_ms);
    }
    return percentile(std::move(ms), 0.5);
  }
};

struct Bench {
  Options opt;
  tf::WorldConfig cfg;

  tf::tax::TaxReport run_once(const std::string& pattern,
                              const tf::ag::AgGemmProblem& agp,
                              const tf::fd::DecodeProblem& fdp,
                              std::vector<std::vector<float>>* outputs) const {
    if (opt.fd_family) {
      tf::fd::FdOptions fo;
      fo.fold_by_arrival = opt.fd_arrival_order && pattern == "fd-fused";
      auto run = tf::fd::run_fd(fdp, fd_variant(pattern), cfg, fo);
      if (outputs) {
        *outputs = std::move(run.out);
      }
      return std::move(run.taxes);
    }
    tf::ag::AgGemmRun run;
    if (pattern == "ag-baseline") {
      run = tf::ag::run_baseline(agp, cfg);
    } else if (pattern == "ag-pull") {
      run = tf::ag::run_pull(agp, cfg);
    } else {
      run = tf::ag::run_push(agp, cfg);
    }
    if (outputs) {
      *outputs = std::move(run.c);
    }
    return std::move(run.taxes);
  }

  CellResult run_cell(const std::string& pattern, std::size_t value,
                      const std::vector<float>& oracle) const {
    CellResult cell;
    cell.pattern = pattern;
    cell.value = value;

    tf::ag::AgGemmProblem agp;
    tf::fd::DecodeProblem fdp;
    if (opt.fd_family) {
      fdp = tf::fd::make_problem(opt.seed, opt.heads, opt.head_dim, value);
    } else {
      agp = tf::ag::make_problem(opt.seed, value, opt.n, opt.k, opt.tiles);
    }

    if (opt.verify) {
      std::vector<std::vector<float>> outputs;
      run_once(pattern, agp, fdp, &outputs);
      for (const auto& out : outputs) {
        if (opt.fd_family) {
          cell.max_err = std::max(
              cell.max_err, tf::reference::max_head_relative_error(
                                out, oracle, opt.heads, opt.head_dim));
        } else {
          for (std::size_t i = 0; i < out.size(); ++i) {
            cell.max_err =
                std::max(cell.max_err,
                         static_cast<double>(std::fabs(out[i] - oracle[i])));
          }
        }
      }
      const double tol = opt.fd_family ? kFdVerifyTol : 0.0;
      cell.verified = cell.max_err <= tol;
      if (!*cell.verified) {
        std::ostringstream msg;
        msg << "verify mismatch: max error " << cell.max_err << " exceeds "
            << tol;
        cell.error = msg.str();
        return cell;
      }
    }

    for (int i = 0; i < opt.warmup; ++i) {
      run_once(pattern, agp, fdp, nullptr);
    }
    cell.iters.reserve(static_cast<std::size_t>(opt.iters));
    for (int i = 0; i < opt.iters; ++i) {
      cell.last = run_once(pattern, agp, fdp, nullptr);
      IterStats st;
      st.makespan_ms = tf::tax::to_ms(cell.last.makespan);
      st.launch_tax_ms = tf::tax::to_ms(cell.last.launch_tax);
      st.bulk_sync_ms = tf::tax::to_ms(cell.last.bulk_sync_tax);
      st.wait_idle_ms = tf::tax::to_ms(cell.last.wait_idle);
      st.staged_bytes = cell.last.staged_bytes;
      cell.iters.push_back(st);
    }
    return cell;
  }

  std::vector<float> make_oracle(std::size_t value) const {
    if (opt.fd_family) {
      const auto p =
          tf::fd::make_problem(opt.seed, opt.heads, opt.head_dim, value);
      return tf::reference::attention(
          p.q, p.k, p.v, static_cast<std::size_t>(p.heads),
          static_cast<std::size_t>(p.head_dim), p.kv_len, p.scale);
    }
    const auto p = tf::ag::make_problem(opt.seed, value, opt.n, opt.k);
    return tf::reference::gemm(p.a, p.b, p.m, p.n, p.k);
  }
};

// ---- output writers ---------------------------------------------------------

const char* kIterHeader =
    "pattern,world_size,m,n,k,heads,head_dim,kv_len,seed,iter,makespan_ms,"
    "launch_tax_ms,bulk_sync_tax_ms,wait_idle_ms,staged_bytes,verified";

const char* kSweepHeader =
    "pattern,world_size,m,n,k,heads,head_dim,kv_len,seed,iters,median_ms,"
    "p10_ms,p90_ms,launch_tax_ms,bulk_sync_tax_ms,wait_idle_ms,staged_bytes,"
    "verified,speedup_vs_baseline,error";

std::string shape_columns(const Options& opt, std::size_t value) {
  std::ostringstream row;
  if (opt.fd_family) {
    row << ",,," << opt.heads << "," << opt.head_dim << "," << value;
  } else {
    row << value << "," << opt.n << "," << opt.k << ",,,";
  }
  return row.str();
}

std::string verified_column(const std::optional<bool>& v) {
  if (!v.has_value()) {
    return "";
  }
  return *v ? "true" : "false";
}

void write_iteration_csv(std::ostream& os, const Options& opt,
                         const CellResult& cell) {
  os << kIterHeader << "\n";
  for (std::size_t i = 0; i < cell.iters.size(); ++i) {
    const auto& it = cell.iters[i];
    os << cell.pattern << "," << opt.world_size << ","
       << shape_columns(opt, cell.value) << "," << opt.seed << "," << i << ","
       << it.makespan_ms << "," << it.launch_tax_ms << "," << it.bulk_sync_ms
       << "," << it.wait_idle_ms << "," << it.staged_bytes << ","
       << verified_column(cell.verified) << "\n";
  }
}

nlohmann::json summary_json(const Options& opt, const CellResult& cell) {
  std::vector<double> makespans, bulk, idle;
  for (const auto& it : cell.iters) {
    makespans.push_back(it.makespan_ms);
    bulk.push_back(it.bulk_sync_ms);
    idle.push_back(it.wait_idle_ms);
  }
  nlohmann::json j;
  j["pattern"] = cell.pattern;
  j["world_size"] = opt.world_size;
  if (opt.fd_family) {
    j["heads"] = opt.heads;
    j["head_dim"] = opt.head_dim;
    j["kv_len"] = cell.value;
  } else {
    j["m"] = cell.value;
    j["n"] = opt.n;
    j["k"] = opt.k;
    j["tiles"] = {opt.tiles.bm, opt.tiles.bn, opt.tiles.bk};
  }
  j["seed"] = opt.seed;
  j["iters"] = opt.iters;
  j["warmup"] = opt.warmup;
  j["launch_cost_us"] = opt.launch_cost_us;
  j["latency_ms"] = {{"median", percentile(makespans, 0.5)},
                     {"p10", percentile(makespans, 0.1)},
                     {"p90", percentile(makespans, 0.9)}};
  j["taxes"] = tf::tax::to_json(cell.last);
  j["taxes"]["bulk_sync_tax_ms_median"] = percentile(bulk, 0.5);
  j["taxes"]["wait_idle_ms_median"] = percentile(idle, 0.5);
  if (cell.verified.has_value()) {
    j["verified"] = *cell.verified;
    j["max_error"] = cell.max_err;
  }
  return j;
}

void write_sweep_row(std::ostream& os, const Options& opt,
                     const CellResult& cell, const std::string& speedup) {
  std::vector<double> makespans, bulk, idle, launch;
  double staged = 0.0;
  for (const auto& it : cell.iters) {
    makespans.push_back(it.makespan_ms);
    bulk.push_back(it.bulk_sync_ms);
    idle.push_back(it.wait_idle_ms);
    launch.push_back(it.launch_tax_ms);
    staged = static_cast<double>(it.staged_bytes);
  }
  os << cell.pattern << "," << opt.world_size << ","
     << shape_columns(opt, cell.value) << "," << opt.seed << ","
     << cell.iters.size() << "," << percentile(makespans, 0.5) << ","
     << percentile(makespans, 0.1) << "," << percentile(makespans, 0.9) << ","
     << percentile(launch, 0.5) << "," << percentile(bulk, 0.5) << ","
     << percentile(idle, 0.5) << "," << staged << ","
     << verified_column(cell.verified) << "," << speedup << ","
     << csv_escape(cell.error) << "\n";
}

void write_gnuplot_dat(std::ostream& os, const Options& opt,
                       const std::vector<CellResult>& cells) {
  const std::string baseline = opt.fd_family ? kFdBaseline : kAgBaseline;
  os << "# median-makespan speedup vs " << baseline
     << " (ratio > 1: pattern is faster)\n";
  os << "# " << (opt.fd_family ? "kv_len" : "m");
  for (const auto& p : opt.patterns) {
    os << " " << p;
  }
  os << "\n";
  for (const std::size_t value : opt.values) {
    double base_ms = 0.0;
    for (const auto& cell : cells) {
      if (cell.value == value && cell.pattern == baseline &&
          cell.error.empty()) {
        base_ms = cell.median_ms();
      }
    }
    os << value;
    for (const auto& p : opt.patterns) {
      double ms = 0.0;
      for (const auto& cell : cells) {
        if (cell.value == value && cell.pattern == p && cell.error.empty()) {
          ms = cell.median_ms();
        }
      }
      if (base_ms > 0.0 && ms > 0.0) {
        os << " " << base_ms / ms;
      } else {
        os << " nan";
      }
    }
    os << "\n";
  }
}

void print_dry_run(const Options& opt) {
  std::ostringstream patterns;
  for (const auto& p : opt.patterns) {
    patterns << (patterns.tellp() > 0 ? " " : "") << p;
  }
  std::cout << "preset: " << (opt.preset.empty() ? "(none)" : opt.preset)
            << "\n"
            << "patterns: " << patterns.str() << "\n"
            << "world_size: " << opt.world_size << "\n";
  if (opt.fd_family) {
    std::cout << "heads: " << opt.heads << "\n"
              << "head_dim: " << opt.head_dim << "\n"
              << "kv_len:";
    for (const auto v : opt.values) {
      std::cout << " " << v;
    }
    std::cout << "\n"
              << "fold_by_arrival: "
              << (opt.fd_arrival_order ? "true" : "false") << "\n";
  } else {
    std::cout << "m:";
    for (const auto v : opt.values) {
      std::cout << " " << v;
    }
    std::cout << "\n"
              << "n: " << opt.n << "\n"
              << "k: " << opt.k << "\n"
              << "tiles: " << opt.tiles.bm << "x" << opt.tiles.bn << "x"
              << opt.tiles.bk << "\n";
  }
  std::cout << "launch_cost_us: " << opt.launch_cost_us << "\n"
            << "iters: " << opt.iters << "\n"
            << "warmup: " << opt.warmup << "\n"
            << "seed: " << opt.seed << "\n"
            << "verify: " << (opt.verify ? "true" : "false") << "\n";
  std::cout << "skew:";
  if (opt.skew_specs.empty()) {
    std::cout << " (none)";
  }
  for (const auto& s : opt.skew_specs) {
    std::cout << " " << s;
  }
  std::cout << "\n"
            << "out: " << (opt.out.empty() ? "(stdout only)" : opt.out)
            << std::endl;
}

std::ofstream open_or_throw(const std::string& path) {
  std::ofstream os(path);
  if (!os) {
    throw tf::ConfigError("cannot open output file \"" + path + "\"");
  }
  return os;
}

int run(Options opt, const CLI::App& app) {
  // ---- resolve the preset, explicit flags winning -----------------------
  if (!opt.preset.empty()) {
    const tf::presets::Preset* pre = tf::presets::find(opt.preset);
    if (pre == nullptr) {
      std::string names;
      for (const auto& p : tf::presets::all()) {
        names += (names.empty() ? "" : ", ") + p.name;
      }
      throw tf::ConfigError("unknown preset \"" + opt.preset +
                            "\" (available: " + names + ")");
    }
    if (app.count("--pattern") == 0u && app.count("--patterns") == 0u) {
      opt.patterns = pre->patterns;
    }
    if (app.count("--world-size") == 0u) {
      opt.world_size = pre->world_size;
    }
    if (pre->family == "fd") {
      if (app.count("--heads") == 0u) {
        opt.heads = pre->heads;
      }
      if (app.count("--head-dim") == 0u) {
        opt.head_dim = pre->head_dim;
      }
      if (app.count("--kv-len") == 0u && app.count("--sweep-kv") == 0u) {
        opt.sweep_kv = pre->kv_sweep;
      }
    } else {
      if (app.count("--n") == 0u) {
        opt.n = pre->n;
      }
      if (app.count("--k") == 0u) {
        opt.k = pre->k;
      }
      if (app.count("--m") == 0u && app.count("--sweep-m") == 0u) {
        opt.sweep_m = pre->m_sweep;
      }
    }
  }

  // ---- pattern list and family ------------------------------------------
  if (opt.patterns.empty()) {
    throw tf::ConfigError(
        "no pattern selected; pass --pattern, --patterns, or --preset");
  }
  bool any_ag = false, any_fd = false;
  for (const auto& p : opt.patterns) {
    if (is_ag_pattern(p)) {
      any_ag = true;
    } else if (is_fd_pattern(p)) {
      any_fd = true;
    } else {
      std::string names;
      for (const auto* n : kAgPatterns) {
        names += std::string(names.empty() ? "" : ", ") + n;
      }
      for (const auto* n : kFdPatterns) {
        names += std::string(", ") + n;
      }
      throw tf::ConfigError("unknown pattern \"" + p +
                            "\" (available: " + names + ")");
    }
  }
  if (any_ag && any_fd) {
    throw tf::ConfigError("cannot mix ag-* and fd-* patterns in one run");
  }
  opt.fd_family = any_fd;

  if (opt.iters < 1) {
    throw tf::ConfigError("--iters must be >= 1");
  }
  if (opt.warmup < 0) {
    throw tf::ConfigError("--warmup must be >= 0");
  }
  if (!opt.sweep_m.empty() && opt.fd_family) {
    throw tf::ConfigError("--sweep-m applies to ag-* patterns only");
  }
  if (!opt.sweep_kv.empty() && !opt.fd_family) {
    throw tf::ConfigError("--sweep-kv applies to fd-* patterns only");
  }

  // ---- sweep values -------------------------------------------------------
  if (opt.fd_family) {
    opt.values = opt.sweep_kv.empty() ? std::vector<std::size_t>{opt.kv_len}
                                      : opt.sweep_kv;
  } else {
    opt.values =
        opt.sweep_m.empty() ? std::vector<std::size_t>{opt.m} : opt.sweep_m;
  }
  const bool sweep_mode = opt.values.size() > 1 || opt.patterns.size() > 1;

  if (opt.dry_run) {
    print_dry_run(opt);
    return 0;
  }

  // ---- the shared world configuration -------------------------------------
  Bench bench;
  bench.cfg.world_size = opt.world_size;
  bench.cfg.launch_cost = std::chrono::duration_cast<tf::Duration>(
      std::chrono::duration<double, std::micro>(opt.launch_cost_us));
  bench.cfg.seed = opt.seed;
  for (const auto& spec : opt.skew_specs) {
    const auto [rank, delay] = parse_skew(spec);
    tf::inject_skew(bench.cfg, rank, delay);
  }
  bench.cfg.validate();
  opt.tiles.validate();

  // Divisibility is a flag error, not a cell error: reject the grid up
  // front so a typo cannot burn a long sweep.
  for (const std::size_t value : opt.values) {
    if (opt.fd_family) {
      tf::fd::DecodeProblem p;
      p.heads = opt.heads;
      p.head_dim = opt.head_dim;
      p.kv_len = value;
      p.scale = 1.0f;
      p.validate(opt.world_size);
    } else {
      tf::ag::AgGemmProblem p;
      p.m = value;
      p.n = opt.n;
      p.k = opt.k;
      p.validate(opt.world_size);
    }
  }
  bench.opt = opt;

  // ---- single run ----------------------------------------------------------
  if (!sweep_mode) {
    const std::size_t value = opt.values.front();
    std::vector<float> oracle;
    if (opt.verify) {
      oracle = bench.make_oracle(value);
    }
    const CellResult cell = bench.run_cell(opt.patterns.front(), value,
                                           oracle);
    if (cell.verified.has_value() && !*cell.verified) {
      std::cerr << "verification FAILED for " << cell.pattern << ": "
                << cell.error << std::endl;
      return 1;
    }
    const auto j = summary_json(opt, cell);
    std::cout << j.dump(2) << std::endl;
    if (!opt.out.empty()) {
      auto csv = open_or_throw(opt.out + ".csv");
      write_iteration_csv(csv, opt, cell);
      auto js = open_or_throw(opt.out + ".json");
      js << j.dump(2) << "\n";
    }
    return 0;
  }

  // ---- sweep ------------------------------------------------------------------
  std::vector<CellResult> cells;
  for (const std::size_t value : opt.values) {
    std::vector<float> oracle;
    if (opt.verify) {
      oracle = bench.make_oracle(value);
    }
    for (const auto& pattern : opt.patterns) {
      try {
        cells.push_back(bench.run_cell(pattern, value, oracle));
      } catch (const std::exception& e) {
        // A failed cell becomes a row, and the sweep goes on.
        CellResult cell;
        cell.pattern = pattern;
        cell.value = value;
        cell.error = e.what();
        cells.push_back(std::move(cell));
      }
    }
  }

  std::ostringstream body;
  body << kSweepHeader << "\n";
  const std::string baseline = opt.fd_family ? kFdBaseline : kAgBaseline;
  for (const auto& cell : cells) {
    std::string speedup;
    if (cell.error.empty()) {
      for (const auto& base : cells) {
        if (base.value == cell.value && base.pattern == baseline &&
            base.error.empty() && !base.iters.empty()) {
          std::ostringstream s;
          s << base.median_ms() / cell.median_ms();
          speedup = s.str();
        }
      }
    }
    write_sweep_row(body, opt, cell, speedup);
  }
  std::cout << body.str();
  if (!opt.out.empty()) {
    auto csv = open_or_throw(opt.out + ".csv");
    csv << body.str();
    auto dat = open_or_throw(opt.out + ".dat");
    write_gnuplot_dat(dat, opt, cells);
  }

  for (const auto& cell : cells) {
    if (!cell.error.empty() ||
        (cell.verified.has_value() && !*cell.verified)) {
      std::cerr << "cell failed: " << cell.pattern << " @ " << cell.value
                << ": " << cell.error << std::endl;
      return 1;
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "Fused communication/computation patterns over a symmetric heap: "
      "all-gather GEMM and distributed decode, with per-pattern tax "
      "accounting."};

  Options opt;
  std::string pattern;
  app.add_option("--pattern", pattern,
                 "One pattern: ag-baseline|ag-pull|ag-push|fd-bsp|fd-ag|"
                 "fd-wait|fd-fused");
  auto* patterns_opt =
      app.add_option("--patterns", opt.patterns,
                     "Comma-separated pattern list (sweep mode)")
          ->delimiter(',');
  patterns_opt->excludes("--pattern");
  app.add_option("--preset", opt.preset,
                 "Named configuration: paper-ag-gemm|desk-ag-gemm|paper-fd|"
                 "desk-fd");
  app.add_option("--world-size", opt.world_size, "Ranks in the world");
  app.add_option("--m", opt.m, "GEMM rows (ag family)");
  app.add_option("--n", opt.n, "GEMM cols (ag family)");
  app.add_option("--k", opt.k, "GEMM inner dim, sharded over ranks");
  app.add_option("--bm", opt.tiles.bm, "Tile rows");
  app.add_option("--bn", opt.tiles.bn, "Tile cols");
  app.add_option("--bk", opt.tiles.bk, "Tile inner extent");
  app.add_option("--heads", opt.heads, "Attention heads (fd family)");
  app.add_option("--head-dim", opt.head_dim, "Head dimension (fd family)");
  app.add_option("--kv-len", opt.kv_len,
                 "Key/value sequence length, sharded over ranks");
  app.add_option("--sweep-m", opt.sweep_m, "Sweep over m values (ag)")
      ->delimiter(',');
  app.add_option("--sweep-kv", opt.sweep_kv, "Sweep over kv-len values (fd)")
      ->delimiter(',');
  app.add_option("--skew", opt.skew_specs,
                 "Straggler injection RANK:MILLIS (repeatable)");
  app.add_option("--launch-cost-us", opt.launch_cost_us,
                 "Synthetic per-launch cost in microseconds");
  app.add_option("--iters", opt.iters, "Timed iterations per cell");
  app.add_option("--warmup", opt.warmup, "Untimed warmup iterations");
  app.add_option("--seed", opt.seed, "Input generator seed");
  app.add_flag("--verify", opt.verify,
               "Check outputs against the brute-force references first");
  app.add_flag("--dry-run", opt.dry_run,
               "Print the resolved configuration and exit");
  app.add_flag("--fd-arrival-order", opt.fd_arrival_order,
               "fd-fused only: fold partials in arrival order (gives up "
               "bitwise-reproducible folds)");
  app.add_option("--out", opt.out,
                 "Output path prefix; writes PREFIX.csv, PREFIX.json "
                 "(single run) or PREFIX.csv, PREFIX.dat (sweep)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\nRun with --help for usage." << std::endl;
    return 2;
  }
  if (app.count("--pattern") != 0u) {
    opt.patterns = {pattern};
  }

  try {
    return run(std::move(opt), app);
  } catch (const tf::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\nRun with --help for usage."
              << std::endl;
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
}
