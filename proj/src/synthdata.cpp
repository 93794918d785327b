#include "ssgan/synthdata.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <sstream>

namespace ssgan {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kActivities> kActivityNames = {"pass", "still", "bounce"};
constexpr std::array<std::string_view, 3> kSplitNames = {"pretrain", "probe_train", "probe_test"};
constexpr char kClipMagic[4] = {'S', 'S', 'G', 'V'};

constexpr std::uint64_t kClipStream = 0x636c6970;   // "clip"
constexpr std::uint64_t kSplitStream = 0x73706c74;  // "splt"

void put_u16(std::ostream& out, std::uint16_t v) {
  const char b[2] = {char(v & 0xff), char(v >> 8)};
  out.write(b, 2);
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
                     char((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(const unsigned char* b) {
  return std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 | std::uint32_t(b[2]) << 16 |
         std::uint32_t(b[3]) << 24;
}

}  // namespace

std::string_view activity_name(Activity a) { return kActivityNames[static_cast<int>(a)]; }

Activity parse_activity(std::string_view name) {
  for (int i = 0; i < kActivities; ++i) {
    if (kActivityNames[i] == name) return static_cast<Activity>(i);
  }
  throw ConfigError("unknown activity '" + std::string(name) + "'");
}

Activity activity_from_id(int id) {
  if (id < 0 || id >= kActivities) {
    throw ParameterError("activity id out of range: " + std::to_string(id));
  }
  return static_cast<Activity>(id);
}

VideoClip generate_clip(Activity activity, std::uint64_t seed, ClipShape shape) {
  if (shape.frames < 8 || !shape.square() || shape.height < 32 || shape.channels < 1) {
    throw ParameterError("synthetic clips need T >= 8 and square frames of side >= 32, got " +
                         shape.str());
  }
  Rng rng = derive_rng(seed, {});
  auto uniform = [&rng](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };
  const double side = shape.height;
  const double radius = uniform(0.08, 0.14) * side;
  const double amplitude = uniform(0.15, 0.28) * side;
  const double cycles = uniform(0.5, 1.0);
  const double phase = uniform(0.0, 2.0 * std::numbers::pi);
  const double brightness = uniform(0.6, 1.0);
  // The ramp runs dark (top) to less dark (bottom), so orientation is visible.
  const double ramp_top = uniform(-0.95, -0.85);
  const double ramp_bottom = uniform(-0.5, -0.4);

  const double margin = radius + 1.0;
  const double moving_margin = margin + amplitude;
  const double cx = activity == Activity::pass ? uniform(moving_margin, side - 1 - moving_margin)
                                               : uniform(margin, side - 1 - margin);
  const double cy = activity == Activity::bounce ? uniform(moving_margin, side - 1 - moving_margin)
                                                 : uniform(margin, side - 1 - margin);

  VideoClip clip(shape);
  for (int t = 0; t < shape.frames; ++t) {
    const double offset =
        activity == Activity::still
            ? 0.0
            : amplitude * std::sin(2.0 * std::numbers::pi * cycles * t / shape.frames + phase);
    const double px = activity == Activity::pass ? cx + offset : cx;
    const double py = activity == Activity::bounce ? cy + offset : cy;
    for (int y = 0; y < shape.height; ++y) {
      const double bg = ramp_top + (ramp_bottom - ramp_top) * y / (side - 1);
      for (int x = 0; x < shape.width; ++x) {
        const double d = std::hypot(x - px, y - py);
        const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
        const float v = static_cast<float>(bg + coverage * (brightness - bg));
        for (int c = 0; c < shape.channels; ++c) clip(t, c, y, x) = v;
      }
    }
  }
  return clip;
}

Activity motion_oracle(const VideoClip& clip) {
  const ClipShape& s = clip.shape();
  double energy_x = 0.0, energy_y = 0.0;
  Eigen::VectorXd prev_cols, prev_rows;
  for (int t = 0; t < s.frames; ++t) {
    Eigen::VectorXd cols = Eigen::VectorXd::Zero(s.width), rows = Eigen::VectorXd::Zero(s.height);
    for (int c = 0; c < s.channels; ++c)
      for (int y = 0; y < s.height; ++y)
        for (int x = 0; x < s.width; ++x) {
          cols[x] += clip(t, c, y, x);
          rows[y] += clip(t, c, y, x);
        }
    if (t > 0) {
      energy_x += (cols - prev_cols).cwiseAbs().sum();
      energy_y += (rows - prev_rows).cwiseAbs().sum();
    }
    prev_cols = cols;
    prev_rows = rows;
  }
  if (energy_x + energy_y < 1e-9) return Activity::still;
  return energy_x > energy_y ? Activity::pass : Activity::bounce;
}

// ---------------------------------------------------------------------------

std::uint8_t quantize_pixel(float v) {
  const double q = std::round((std::clamp(double(v), -1.0, 1.0) + 1.0) * 0.5 * 255.0);
  return static_cast<std::uint8_t>(q);
}

float dequantize_pixel(std::uint8_t q) { return static_cast<float>(q / 255.0 * 2.0 - 1.0); }

void write_clip(const fs::path& path, const VideoClip& clip) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(kClipMagic, 4);
  put_u16(out, kClipFormatVersion);
  const ClipShape& s = clip.shape();
  for (int d : {s.frames, s.channels, s.height, s.width}) put_u32(out, std::uint32_t(d));
  std::vector<char> bytes(clip.data().size());
  for (Index i = 0; i < clip.data().size(); ++i) bytes[i] = char(quantize_pixel(clip.data()[i]));
  out.write(bytes.data(), std::streamsize(bytes.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

VideoClip read_clip(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open clip file " + path.string());
  unsigned char header[22];
  if (!in.read(reinterpret_cast<char*>(header), sizeof header)) {
    throw LoadError("truncated clip header in " + path.string());
  }
  if (!std::equal(kClipMagic, kClipMagic + 4, header)) {
    throw LoadError("bad magic in clip file " + path.string());
  }
  const std::uint16_t version = std::uint16_t(header[4] | header[5] << 8);
  if (version != kClipFormatVersion) {
    throw LoadError("unsupported clip version " + std::to_string(version) + " in " + path.string());
  }
  ClipShape shape{int(get_u32(header + 6)), int(get_u32(header + 10)), int(get_u32(header + 14)),
                  int(get_u32(header + 18))};
  if (shape.frames <= 0 || shape.channels <= 0 || shape.height <= 0 || shape.width <= 0 ||
      shape.size() > (Index(1) << 31)) {
    throw LoadError("implausible clip shape " + shape.str() + " in " + path.string());
  }
  std::vector<unsigned char> bytes(shape.size());
  if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()))) {
    throw LoadError("truncated pixel data in " + path.string());
  }
  if (in.peek() != std::char_traits<char>::eof()) {
    throw LoadError("trailing bytes in clip file " + path.string());
  }
  VideoClip clip(shape);
  for (Index i = 0; i < shape.size(); ++i) clip.data()[i] = dequantize_pixel(bytes[i]);
  return clip;
}

// ---------------------------------------------------------------------------

std::string_view split_name(Split s) { return kSplitNames[static_cast<int>(s)]; }

Split parse_split(std::string_view name) {
  for (int i = 0; i < 3; ++i) {
    if (kSplitNames[i] == name) return static_cast<Split>(i);
  }
  throw ConfigError("unknown split '" + std::string(name) + "'");
}

SplitCounts split_counts(int clips) {
  if (clips < 75 || clips % 25 != 0) {
    throw ConfigError("clip count must be a multiple of 25 and at least 75, got " +
                      std::to_string(clips));
  }
  const int probe = clips / 5;
  return {clips - probe, probe * 4 / 5, probe / 5};
}

std::vector<std::size_t> DatasetManifest::split_indices(Split split) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    if (clips[i].split == split) out.push_back(i);
  }
  return out;
}

std::string DatasetManifest::to_json() const {
  json j;
  j["format"] = "ssgan-dataset";
  j["version"] = 1;
  j["seed"] = config.seed;
  j["shape"] = {{"frames", config.shape.frames},
                {"channels", config.shape.channels},
                {"height", config.shape.height},
                {"width", config.shape.width}};
  const SplitCounts counts = split_counts(config.clips);
  j["counts"] = {{"total", config.clips},
                 {"pretrain", counts.pretrain},
                 {"probe_train", counts.probe_train},
                 {"probe_test", counts.probe_test}};
  j["activities"] = kActivityNames;
  json records = json::array();
  for (const ClipRecord& r : clips) {
    records.push_back({{"path", r.path},
                       {"activity_class", static_cast<int>(r.activity)},
                       {"seed", r.seed},
                       {"split", split_name(r.split)}});
  }
  j["clips"] = std::move(records);
  return j.dump(1) + "\n";
}

DatasetManifest DatasetManifest::from_json(std::string_view text, fs::path root) {
  DatasetManifest m;
  m.root = std::move(root);
  try {
    const json j = json::parse(text);
    if (j.at("format") != "ssgan-dataset") throw LoadError("not a dataset manifest");
    if (j.at("version") != 1) throw LoadError("unsupported manifest version");
    m.config.seed = j.at("seed").get<std::uint64_t>();
    const json& s = j.at("shape");
    m.config.shape = ClipShape{s.at("frames").get<int>(), s.at("channels").get<int>(),
                               s.at("height").get<int>(), s.at("width").get<int>()};
    m.config.clips = j.at("counts").at("total").get<int>();
    for (const json& r : j.at("clips")) {
      m.clips.push_back(ClipRecord{r.at("path").get<std::string>(),
                                   activity_from_id(r.at("activity_class").get<int>()),
                                   r.at("seed").get<std::uint64_t>(),
                                   parse_split(r.at("split").get<std::string>())});
    }
  } catch (const json::exception& e) {
    throw LoadError(std::string("malformed manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw LoadError(std::string("malformed manifest: ") + e.what());
  }
  if (static_cast<int>(m.clips.size()) != m.config.clips) {
    throw LoadError("manifest lists " + std::to_string(m.clips.size()) + " clips, expected " +
                    std::to_string(m.config.clips));
  }
  return m;
}

DatasetManifest build_dataset(const DataConfig& config, const fs::path& out_dir) {
  const SplitCounts counts = split_counts(config.clips);
  (void)generate_clip(Activity::still, 0, config.shape);  // shape precondition

  DatasetManifest manifest;
  manifest.config = config;
  manifest.root = out_dir;
  const int n = config.clips;
  const int digits = std::max<int>(5, int(std::to_string(n - 1).size()));

  // Activity i % 3; splits dealt from a class-interleaved shuffled order so
  // every contiguous block, and hence every split, is balanced within one.
  std::array<std::vector<int>, kActivities> by_class;
  for (int i = 0; i < n; ++i) by_class[i % kActivities].push_back(i);
  Rng split_rng = derive_rng(config.seed, {kSplitStream});
  for (auto& members : by_class) std::shuffle(members.begin(), members.end(), split_rng);
  std::vector<int> order;
  for (std::size_t k = 0; order.size() < std::size_t(n); ++k) {
    for (const auto& members : by_class) {
      if (k < members.size()) order.push_back(members[k]);
    }
  }
  std::vector<Split> split_of(n);
  for (int pos = 0; pos < n; ++pos) {
    split_of[order[pos]] = pos < counts.pretrain                         ? Split::pretrain
                           : pos < counts.pretrain + counts.probe_train ? Split::probe_train
                                                                         : Split::probe_test;
  }

  std::vector<fs::path> written;
  const bool created_root = !fs::exists(out_dir);
  const fs::path clip_dir = out_dir / "clips";
  const bool created_clip_dir = !fs::exists(clip_dir);
  try {
    std::error_code ec;
    fs::create_directories(clip_dir, ec);
    if (ec) throw IoError("cannot create " + clip_dir.string() + ": " + ec.message());
    for (int i = 0; i < n; ++i) {
      ClipRecord record;
      std::ostringstream name;
      name << "clips/" << std::setw(digits) << std::setfill('0') << i << ".ssgv";
      record.path = name.str();
      record.activity = static_cast<Activity>(i % kActivities);
      record.seed = derive_rng(config.seed, {kClipStream, std::uint64_t(i)})();
      record.split = split_of[i];
      const fs::path path = out_dir / record.path;
      if (!fs::exists(path)) written.push_back(path);
      write_clip(path, generate_clip(record.activity, record.seed, config.shape));
      manifest.clips.push_back(std::move(record));
    }
    const fs::path manifest_path = out_dir / "manifest.json";
    if (!fs::exists(manifest_path)) written.push_back(manifest_path);
    std::ofstream out(manifest_path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + manifest_path.string() + " for writing");
    out << manifest.to_json();
    out.flush();
    if (!out) throw IoError("failed writing " + manifest_path.string());
  } catch (...) {
    std::error_code ignored;
    for (const fs::path& p : written) fs::remove(p, ignored);
    if (created_clip_dir) fs::remove(clip_dir, ignored);
    if (created_root) fs::remove(out_dir, ignored);
    throw;
  }
  return manifest;
}

DatasetManifest load_manifest(const fs::path& manifest_path) {
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw LoadError("cannot open manifest " + manifest_path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return DatasetManifest::from_json(buffer.str(), manifest_path.parent_path());
}

std::string manifest_hash(const DatasetManifest& manifest) {
  const std::string text = manifest.to_json();
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(text.data(), text.size());
  return out.str();
}

LabeledBatch load_batch(const DatasetManifest& manifest, Split split,
                        std::span<const std::size_t> indices) {
  const std::vector<std::size_t> members = manifest.split_indices(split);
  LabeledBatch batch;
  batch.clips.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= members.size()) {
      throw ContractError("index " + std::to_string(i) + " out of range for split " +
                          std::string(split_name(split)) + " of size " +
                          std::to_string(members.size()));
    }
    const ClipRecord& record = manifest.clips[members[i]];
    const fs::path path = manifest.root / record.path;
    VideoClip clip = read_clip(path);
    if (clip.shape() != manifest.config.shape) {
      throw LoadError("clip " + path.string() + " has shape " + clip.shape().str() +
                      ", manifest declares " + manifest.config.shape.str());
    }
    batch.clips.push_back(std::move(clip));
    batch.labels.push_back(record.activity);
  }
  return batch;
}

}  // namespace ssgan
