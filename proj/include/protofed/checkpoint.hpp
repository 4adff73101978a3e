#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include "protofed/model.hpp"
#include "protofed/prototypes.hpp"

namespace protofed {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Little-endian container:
///   "PFLM" | u32 version | u32 layer count | per layer (u32 rows, u32 cols) |
///   per layer row-major weights then bias as f64 |
///   optional "PFLP" | u32 class count | u32 dim | per class (i32 label,
///   u64 support, dim x f64).
/// The last layer is the classifier.
struct Checkpoint {
  ModelParams params;
  std::optional<PrototypeSet> prototypes;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace protofed
