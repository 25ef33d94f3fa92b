#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include "ccl/network.hpp"

namespace ccl {

// Parameter checkpoint container. Little-endian binary layout:
//
//   magic        8 bytes  "CCLCKPT\0"
//   version      u32      kCheckpointVersion
//   meta_len     u64      followed by meta_len bytes of UTF-8 metadata (JSON)
//   count        u32      number of tensors
//   per tensor:  u32 name_len, name bytes, u8 frozen, u32 rank,
//                rank x u64 extents, float32 values in row-major order
//   rng_len      u32      followed by rng_len bytes of engine state text
//
// Optimizer moments are not stored; every training phase starts with a
// fresh Adam state. Encoding a decoded checkpoint reproduces the input bytes.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;
  ParamSet<float> params;
  std::string rng_state;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace ccl
