#pragma once

#include "ssgan/models.hpp"
#include "ssgan/synthdata.hpp"
#include "ssgan/training.hpp"

#include "json.hpp"

#include <filesystem>
#include <string>

namespace ssgan {

using nlohmann::json;

json to_json(const ConvSpec& spec);
ConvSpec conv_spec_from_json(const json& j);
json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const json& j);
json to_json(const ClipShape& shape);
ClipShape clip_shape_from_json(const json& j);

json to_json(const TrainConfig& config);
/// Missing keys keep the defaults of `base`; unknown keys are rejected.
TrainConfig train_config_from_json(const json& j, TrainConfig base = {});

// ---------------------------------------------------------------------------
// Checkpoints: "SSGC", u32 version, u64 header length, JSON header, then
// float32 little-endian tensor data in column-major order. The header maps
// every tensor name to its shape and byte offset.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  int epoch = 0;
  TrainConfig config;
  ModelConfig model;
  std::string parameter_hash;
  json extra;  // caller metadata (manifest hash, variant name, ...)
};

/// Writes to a temporary file in the same directory, then renames.
void save_checkpoint(const std::filesystem::path& path, GanState& state, const json& extra = {});
GanState load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);
CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

/// Atomic text write (temporary file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace ssgan
