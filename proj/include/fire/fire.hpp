/*
 * firereg : joint synthesis and registration networks
 *
 * Copyright 2026 The firereg Authors
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

#include "fire/adam.hpp"
#include "fire/autodiff.hpp"
#include "fire/config.hpp"
#include "fire/data.hpp"
#include "fire/dataset.hpp"
#include "fire/eval.hpp"
#include "fire/loss.hpp"
#include "fire/model.hpp"
#include "fire/ops.hpp"
#include "fire/rng.hpp"
#include "fire/tensor.hpp"
#include "fire/trainer.hpp"
#include "fire/volume.hpp"
#include "fire/warp.hpp"
