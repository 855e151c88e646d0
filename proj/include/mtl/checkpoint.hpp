#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "mtl/encoder.hpp"
#include "mtl/heads.hpp"
#include "mtl/params.hpp"

namespace mtl {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Encoder configuration, task list, named parameters and the seeds that
/// produced them.
struct ModelCheckpoint {
  EncoderConfig encoder;
  std::vector<TaskSpec> tasks;
  ParamStore params;
  std::map<std::string, std::uint64_t> seeds;

  const TaskSpec* find_task(std::string_view name) const;
  friend bool operator==(const ModelCheckpoint&, const ModelCheckpoint&) = default;
};

/// File layout: "MTLCKPT\0", u32 version, u64 manifest length, JSON
/// manifest, then little-endian float32 payloads in manifest order.
void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path);
std::vector<char> serialize_checkpoint(const ModelCheckpoint& checkpoint);

/// Throws CheckpointError naming the defect: bad magic, unsupported
/// version, malformed manifest, offsets that do not tile the payload, or a
/// payload of the wrong size.
ModelCheckpoint load_checkpoint(const std::filesystem::path& path);
ModelCheckpoint deserialize_checkpoint(const std::vector<char>& bytes);

/// Every tensor rounded to float32, as it would come back from disk.
ModelCheckpoint rounded_to_storage(ModelCheckpoint checkpoint);

}  // namespace mtl
