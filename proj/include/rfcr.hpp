// Copyright 2026 The RFCR Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header for the rfcr library.

#pragma once

#include "rfcr/binary_io.hpp"
#include "rfcr/checkpoint.hpp"
#include "rfcr/cli.hpp"
#include "rfcr/container.hpp"
#include "rfcr/datasets_io.hpp"
#include "rfcr/error.hpp"
#include "rfcr/evaluation.hpp"
#include "rfcr/geometry.hpp"
#include "rfcr/hierarchy.hpp"
#include "rfcr/kvconfig.hpp"
#include "rfcr/losses.hpp"
#include "rfcr/matrix.hpp"
#include "rfcr/network.hpp"
#include "rfcr/rfcc.hpp"
#include "rfcr/rng.hpp"
#include "rfcr/run_config.hpp"
#include "rfcr/training.hpp"
