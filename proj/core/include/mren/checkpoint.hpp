#pragma once

#include <string>
#include <utility>
#include <vector>

#include "mren/tensor.hpp"

namespace mren::ckpt {

// On-disk layout, all little-endian:
//   magic "MREN" | version u32 | config-JSON length u64 | config JSON UTF-8 |
//   tensor count u32 | per tensor: name length u32, name UTF-8,
//   dtype u8 (0 = 32-bit float), rank u8, dims u32 x rank, payload LE floats.
// The config string is kept verbatim so save(load(f)) is byte-identical.
struct Checkpoint {
    std::uint32_t version = 1;
    std::string config_json;
    std::vector<std::pair<std::string, Tensor4f>> tensors;
};

// Writes to a temp file in the target directory, then renames.
void save_checkpoint(const std::string& path, const Checkpoint& c);

// Magic/version mismatches raise IntegrityError; so do truncation, bad
// lengths, non-float dtype codes, and trailing bytes.
Checkpoint load_checkpoint(const std::string& path);

} // namespace mren::ckpt
