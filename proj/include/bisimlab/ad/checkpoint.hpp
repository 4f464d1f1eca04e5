#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "bisimlab/ad/tensor.hpp"

namespace bisimlab::ad {

/// Flat binary checkpoint:
///   "BSLB" | u32 version | u64 count |
///   per tensor: u32 name_len | name | u32 rank | u64 dims[rank] | f64 payload
/// All integers and floats little-endian. Tensors are written in name order,
/// so equal contents give byte-identical files.
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, Tensor<double>>;

void save_checkpoint(const std::filesystem::path& path, const TensorMap& tensors);
TensorMap load_checkpoint(const std::filesystem::path& path);

}  // namespace bisimlab::ad
