#pragma once

#include <string>
#include <utility>
#include <vector>

#include "pgr/tensor.hpp"

namespace pgr {

using NamedParams = std::vector<std::pair<std::string, Tensor>>;

// Binary checkpoint: magic "PGRN", version u32, count u32, then per parameter
// u32 name length, UTF-8 name, u32 rank, u64 extents, raw f32 payload.
// All integers and floats little-endian.
void save_checkpoint(const std::string& path, const NamedParams& params);

// Loads values into the matching named tensors (shape-checked). Names present
// in the file but not in params (or vice versa) are an error.
void load_checkpoint(const std::string& path, NamedParams& params);

// Raw read used by tooling/tests.
NamedParams read_checkpoint(const std::string& path);

}  // namespace pgr
