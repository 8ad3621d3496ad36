#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "dce/model.hpp"

namespace dce {

// Binary checkpoint, little-endian:
//   "DCE1" | u32 version | u32 entry count
//   per entry: u16 name length | name bytes | u8 dtype (0 f32, 1 f64) | u8 ndim | ndim x u32 dims | raw values
// Architecture flags are stored as scalar float64 entries under "meta.".
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Tensor value;
};

void write_checkpoint_entries(const std::filesystem::path& path, const std::vector<CheckpointEntry>& entries);
std::vector<CheckpointEntry> read_checkpoint_entries(const std::filesystem::path& path);

void save_checkpoint(const GLUNetModel& model, const std::filesystem::path& path);
GLUNetModel load_checkpoint(const std::filesystem::path& path);

}  // namespace dce
