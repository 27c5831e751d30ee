// Copyright 2026 The vlmeval Authors
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

#pragma once

#include "vlmeval/error.hpp"
#include "vlmeval/experiments.hpp"
#include "vlmeval/freq.hpp"
#include "vlmeval/hierarchy.hpp"
#include "vlmeval/metrics.hpp"
#include "vlmeval/parallel.hpp"
#include "vlmeval/report.hpp"
#include "vlmeval/retrieval.hpp"
#include "vlmeval/rng.hpp"
#include "vlmeval/scoring.hpp"
#include "vlmeval/synth.hpp"
#include "vlmeval/tensor_store.hpp"
#include "vlmeval/text_match.hpp"
