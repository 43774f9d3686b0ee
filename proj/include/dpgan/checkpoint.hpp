#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dpgan/tensor.hpp"

namespace dpgan {

/// Ordered named tensors as stored in a checkpoint file.
using TensorList = std::vector<std::pair<std::string, Tensor>>;

/// Binary tensor archive: magic "DPGK", version, tensor table, CRC32 trailer.
/// Doubles are written raw (little endian); files round-trip byte-identically.
void save_tensors(const std::string& path, const TensorList& tensors);
TensorList load_tensors(const std::string& path);

/// Byte-per-element encoding for strings riding in a tensor archive.
Tensor tensor_from_string(const std::string& s);
std::string string_from_tensor(const Tensor& t);

/// Two-element tensor carrying raw 64-bit payloads (RNG state) bit-exactly.
Tensor tensor_from_u64(std::uint64_t a, std::uint64_t b);
void u64_from_tensor(const Tensor& t, std::uint64_t& a, std::uint64_t& b);

}  // namespace dpgan
