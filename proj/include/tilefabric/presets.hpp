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

#include <cstddef>
#include <string>
#include <vector>

namespace tilefabric::presets {

// Named benchmark configurations. The paper-* presets are the full-size
// shapes; the desk-* presets shrink them (keeping the AG aspect ratio
// N:K = 3.5:1) to sizes a workstation sweeps in minutes.
struct Preset {
  std::string name;
  std::string family;  // "ag" or "fd"
  int world_size = 8;
  std::vector<std::string> patterns;

  // ag family
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::size_t> m_sweep;

  // fd family
  int heads = 0;
  int head_dim = 0;
  std::vector<std::size_t> kv_sweep;
};

inline std::vector<std::size_t> powers_of_two(std::size_t lo,
                                              std::size_t hi) {
  std::vector<std::size_t> out;
  for (std::size_t v = lo; v <= hi; v *= 2) {
    out.push_back(v);
  }
  return out;
}

inline const std::vector<Preset>& all() {
  static const std::vector<Preset> presets = [] {
    std::vector<Preset> v;

    Preset paper_ag;
    paper_ag.name = "paper-ag-gemm";
    paper_ag.family = "ag";
    paper_ag.world_size = 8;
    paper_ag.patterns = {"ag-baseline", "ag-pull", "ag-push"};
    paper_ag.n = 28672;
    paper_ag.k = 8192;
    paper_ag.m_sweep = powers_of_two(1, 8192);
    v.push_back(paper_ag);

    Preset desk_ag = paper_ag;
    desk_ag.name = "desk-ag-gemm";
    desk_ag.n = 448;
    desk_ag.k = 128;
    desk_ag.m_sweep = powers_of_two(1, 128);
    v.push_back(desk_ag);

    Preset paper_fd;
    paper_fd.name = "paper-fd";
    paper_fd.family = "fd";
    paper_fd.world_size = 8;
    paper_fd.patterns = {"fd-bsp", "fd-ag", "fd-wait", "fd-fused"};
    paper_fd.heads = 96;
    paper_fd.head_dim = 128;
    paper_fd.kv_sweep = powers_of_two(8192, 131072);
    v.push_back(paper_fd);

    Preset desk_fd = paper_fd;
    desk_fd.name = "desk-fd";
    desk_fd.heads = 8;
    desk_fd.head_dim = 32;
    desk_fd.kv_sweep = powers_of_two(2048, 32768);
    v.push_back(desk_fd);

    return v;
  }();
  return presets;
}

inline const Preset* find(const std::string& name) {
  for (const Preset& p : all()) {
    if (p.name == name) {
      return &p;
    }
  }
  return nullptr;
}

}  // namespace tilefabric::presets
