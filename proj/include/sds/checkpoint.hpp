#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "sds/network.hpp"

namespace sds {

/// Network plus free-form string metadata (role, mean gt height, ...).
struct Checkpoint {
  Network net;
  std::map<std::string, std::string> meta;
};

/// Binary layout:
///   "SDSRCNN\0" | u32 version | u32 manifest bytes | manifest text |
///   u64 tensor count | per tensor: u32 rank, rank x u64 dims, f64 values
/// All integers and floats little-endian. The manifest lists stages,
/// layers (name + describe()) and metadata, one item per line.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// In-memory form of the same bytes.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint deserialize_checkpoint(const std::string& bytes);

/// Rebuilds a layer from its describe() line.
std::unique_ptr<Layer> layer_from_description(const std::string& name, const std::string& description);

}  // namespace sds
