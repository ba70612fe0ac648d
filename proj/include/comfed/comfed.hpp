/*
 * Copyright 2026 The comfed Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 * http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include "comfed/config.hpp"
#include "comfed/core.hpp"
#include "comfed/datasets.hpp"
#include "comfed/losses.hpp"
#include "comfed/oracles.hpp"
#include "comfed/rng.hpp"
#include "comfed/robust.hpp"
#include "comfed/runtime.hpp"
#include "comfed/smoothness.hpp"
#include "comfed/tasks.hpp"
#include "comfed/telemetry.hpp"
