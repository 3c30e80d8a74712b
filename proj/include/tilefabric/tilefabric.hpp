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

#include "tilefabric/ag_gemm.hpp"
#include "tilefabric/common.hpp"
#include "tilefabric/events.hpp"
#include "tilefabric/fabric.hpp"
#include "tilefabric/flash_decode.hpp"
#include "tilefabric/presets.hpp"
#include "tilefabric/reference.hpp"
#include "tilefabric/taxmeter.hpp"
#include "tilefabric/tilemath.hpp"
