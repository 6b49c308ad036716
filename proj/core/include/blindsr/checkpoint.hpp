#pragma once

#include <string>
#include <utility>
#include <vector>

#include "blindsr/tensor.hpp"

namespace blindsr {

// BDTN container: magic "BDTN", version u16, tensor count u32, then per
// tensor: name length u32 + UTF-8 name, rank u8, extents u64 each, payload
// little-endian f64. Round-trips bit-exactly.

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

void save_tensors(const std::string& path, const NamedTensors& tensors);
NamedTensors load_tensors(const std::string& path);

}  // namespace blindsr
