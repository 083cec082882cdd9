// Copyright Contributors to the Forma Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "forma/gradcore/nn.hpp"

#include <string>

namespace forma::gradcore {

// Flat binary container of named float32 arrays, little-endian, with a text
// header listing (name, shape, byte offset into the blob). EMA shadows are
// stored under "__ema__.<name>" and the step counter under "__step_count__".
void save_checkpoint(const std::string& path, const ParamStore& store);
void load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace forma::gradcore
