// Copyright 2026 The drgrade Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Umbrella header for the drgrade library.
#pragma once

#include "drgrade/attribution.hpp"
#include "drgrade/checkpoint.hpp"
#include "drgrade/degrade.hpp"
#include "drgrade/gemm.hpp"
#include "drgrade/graph.hpp"
#include "drgrade/image.hpp"
#include "drgrade/manifest.hpp"
#include "drgrade/metrics.hpp"
#include "drgrade/model.hpp"
#include "drgrade/preprocess.hpp"
#include "drgrade/rng.hpp"
#include "drgrade/service.hpp"
#include "drgrade/synthetic.hpp"
#include "drgrade/tensor.hpp"
#include "drgrade/train.hpp"
#include "drgrade/util.hpp"
