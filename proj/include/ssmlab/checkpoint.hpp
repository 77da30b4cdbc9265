#pragma once
// Parameter checkpoint container.
//
// Layout (little-endian):
//   magic   8 bytes  "SSMCKPT1"
//   version u32      (currently 1)
//   entries until EOF:
//     name_len u16, name bytes (UTF-8)
//     rank     u8
//     dims     rank x u64
//     data     product(dims) x f64

#include <string>
#include <utility>
#include <vector>

#include "ssmlab/tensor.hpp"

namespace ssmlab::ckpt {

using NamedTensors = std::vector<std::pair<std::string, ad::Tensor>>;

void save(const std::string& path, const NamedTensors& tensors);

// Loads all entries. Throws std::runtime_error on bad magic/version or
// truncation (message includes the byte offset).
NamedTensors load(const std::string& path);

// Copies values from `src` into matching names of `dst` (shape-checked).
// Throws if a dst entry is missing from src.
void assign(const NamedTensors& src, NamedTensors& dst);

}  // namespace ssmlab::ckpt
