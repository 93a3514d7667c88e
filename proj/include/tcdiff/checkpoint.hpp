#pragma once

#include "tcdiff/trainer.hpp"

namespace tcdiff {

// Checkpoint directory layout: manifest.json + weights.bin. Weights are
// little-endian 64-bit floats concatenated in manifest order; the manifest
// stores an FNV-1a hash of the blob which is verified on load.
void save_checkpoint(const Checkpoint& ckpt, const std::string& dir);
Checkpoint load_checkpoint(const std::string& dir);

std::uint64_t fnv1a(const void* data, std::size_t len);

}  // namespace tcdiff
