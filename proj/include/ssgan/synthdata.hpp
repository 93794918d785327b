#pragma once

#include "ssgan/core.hpp"
#include "ssgan/video_clip.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ssgan {

enum class Activity : std::uint8_t { pass = 0, still = 1, bounce = 2 };
inline constexpr int kActivities = 3;

std::string_view activity_name(Activity a);
Activity parse_activity(std::string_view name);
Activity activity_from_id(int id);

/// Bright disc over a dark vertical ramp. pass moves the disc along a
/// horizontal sinusoid, bounce along a vertical one, still keeps it fixed.
/// Needs T >= 8 and H = W >= 32.
VideoClip generate_clip(Activity activity, std::uint64_t seed, ClipShape shape);

/// Motion-only classifier: no frame change means still, otherwise the axis
/// whose marginal profile changes more.
Activity motion_oracle(const VideoClip& clip);

// ---------------------------------------------------------------------------
// Clip files: "SSGV", u16 version, T C H W as u32, then uint8 pixels
// (frame, channel, row, column order), all little-endian.

inline constexpr std::uint16_t kClipFormatVersion = 1;

std::uint8_t quantize_pixel(float v);
float dequantize_pixel(std::uint8_t q);

void write_clip(const std::filesystem::path& path, const VideoClip& clip);
VideoClip read_clip(const std::filesystem::path& path);

// ---------------------------------------------------------------------------

enum class Split : std::uint8_t { pretrain = 0, probe_train = 1, probe_test = 2 };
std::string_view split_name(Split s);
Split parse_split(std::string_view name);

struct DataConfig {
  ClipShape shape{16, 1, 32, 32};
  int clips = 3000;
  std::uint64_t seed = 0;
};

struct SplitCounts {
  int pretrain = 0;
  int probe_train = 0;
  int probe_test = 0;
};

/// 80% pretrain, the remaining 20% split 4:1. Needs a multiple of 25 and
/// at least 75 clips so every class reaches every split.
SplitCounts split_counts(int clips);

struct ClipRecord {
  std::string path;  // relative to the manifest directory
  Activity activity = Activity::pass;
  std::uint64_t seed = 0;
  Split split = Split::pretrain;
};

struct DatasetManifest {
  DataConfig config;
  std::filesystem::path root;  // directory holding manifest.json
  std::vector<ClipRecord> clips;

  /// Manifest indices belonging to `split`, in manifest order.
  std::vector<std::size_t> split_indices(Split split) const;
  std::string to_json() const;
  static DatasetManifest from_json(std::string_view text, std::filesystem::path root);
};

/// Writes every clip plus manifest.json under `out_dir`. On failure the
/// files written by this call are removed before rethrowing.
DatasetManifest build_dataset(const DataConfig& config, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& manifest_path);
std::string manifest_hash(const DatasetManifest& manifest);

struct LabeledBatch {
  std::vector<VideoClip> clips;
  std::vector<Activity> labels;
};

/// Loads clips by position within `split`; errors name the failing file.
LabeledBatch load_batch(const DatasetManifest& manifest, Split split,
                        std::span<const std::size_t> indices);

}  // namespace ssgan
