#pragma once

#include "curio/network.hpp"

#include <filesystem>
#include <vector>

namespace curio {

// Binary layout, all integers little-endian:
//   "CURIOCKP"            8-byte magic
//   u32 version           currently 1
//   u32 layer_count
//   u32 param_count
//   per parameter:
//     u32 name_len, name bytes
//     u8  dtype            1 = f64
//     u32 rank, u64 extents[rank]
//     f64 payload[prod(extents)]

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
    std::uint32_t layer_count = 0;
    std::vector<NamedTensor> params;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

void save_network(const std::filesystem::path& path, const Network& net);
void load_network(const std::filesystem::path& path, Network& net);

}  // namespace curio
