// Copyright 2026 The dphr Authors
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

/// @file dphr.hpp
/// Includes every public header.

#pragma once

#include "dphr/archive.hpp"
#include "dphr/dataset.hpp"
#include "dphr/error.hpp"
#include "dphr/fusion.hpp"
#include "dphr/image.hpp"
#include "dphr/io.hpp"
#include "dphr/masking.hpp"
#include "dphr/metrics.hpp"
#include "dphr/network.hpp"
#include "dphr/pipeline.hpp"
#include "dphr/polarimetry.hpp"
#include "dphr/tensor.hpp"
#include "dphr/training.hpp"
