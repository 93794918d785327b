#include "ssgan/serialization.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

namespace ssgan {

namespace fs = std::filesystem;

namespace {

constexpr char kCheckpointMagic[4] = {'S', 'S', 'G', 'C'};

json triple(const std::array<int, 3>& a) { return json::array({a[0], a[1], a[2]}); }

std::array<int, 3> triple_from(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-element array");
  return {j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

template <typename T>
void read_key(const json& j, const char* key, T& out, std::set<std::string>& seen) {
  if (auto it = j.find(key); it != j.end()) {
    try {
      out = it->get<T>();
    } catch (const json::exception&) {
      throw ConfigError(std::string("config key '") + key + "' has the wrong type");
    }
  }
  seen.insert(key);
}

void put_le(std::ostream& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.put(char((v >> (8 * i)) & 0xff));
}

std::uint64_t get_le(const unsigned char* b, int bytes) {
  std::uint64_t v = 0;
  for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

struct TensorRef {
  std::string name;
  MatrixX<float>* matrix;
};

/// Every tensor a checkpoint carries, in a fixed order.
std::vector<TensorRef> state_tensors(GanState& state, std::vector<MatrixX<float>>& scratch) {
  std::vector<TensorRef> out;
  auto add_network = [&](const std::string& tag, std::vector<Parameter<float>*> params,
                         std::vector<NormalizedWeight<float>*> weights, Adam<float>& opt) {
    for (auto* p : params) out.push_back({p->name, &p->value});
    for (auto* w : weights) {
      if (!w->spectral()) continue;
      out.push_back({w->param().name + "/sn_u", nullptr});
      out.push_back({w->param().name + "/sn_v", nullptr});
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      out.push_back({"adam/" + tag + "/m/" + params[i]->name, &opt.first_moments()[i]});
      out.push_back({"adam/" + tag + "/v/" + params[i]->name, &opt.second_moments()[i]});
    }
  };
  add_network("generator", state.gen.parameters(), state.gen.normalized_weights(), state.g_opt);
  add_network("discriminator", state.disc.parameters(), state.disc.normalized_weights(),
              state.d_opt);
  // Singular vectors are vectors, so they go through column-matrix scratch.
  scratch.clear();
  scratch.reserve(out.size());
  std::vector<NormalizedWeight<float>*> all = state.gen.normalized_weights();
  for (auto* w : state.disc.normalized_weights()) all.push_back(w);
  std::size_t next = 0;
  for (auto& ref : out) {
    if (ref.matrix) continue;
    while (!all[next]->spectral()) ++next;
    const bool is_u = ref.name.ends_with("/sn_u");
    const VectorX<float>& vec = is_u ? all[next]->state().u : all[next]->state().v;
    scratch.emplace_back(vec);
    ref.matrix = &scratch.back();
    if (!is_u) ++next;
  }
  return out;
}

void restore_vectors(GanState& state, const std::vector<MatrixX<float>>& scratch) {
  std::vector<NormalizedWeight<float>*> all = state.gen.normalized_weights();
  for (auto* w : state.disc.normalized_weights()) all.push_back(w);
  std::size_t k = 0;
  for (auto* w : all) {
    if (!w->spectral()) continue;
    w->state().u = scratch[k++].col(0);
    w->state().v = scratch[k++].col(0);
  }
}

/// FNV-1a over the little-endian float bytes as stored on disk.
std::uint64_t tensor_hash(const MatrixX<float>& m, std::uint64_t h) {
  for (Index i = 0; i < m.size(); ++i) {
    std::uint32_t bits;
    std::memcpy(&bits, m.data() + i, 4);
    const unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                                static_cast<unsigned char>(bits >> 16),
                                static_cast<unsigned char>(bits >> 24)};
    h = fnv1a(b, 4, h);
  }
  return h;
}

}  // namespace

json to_json(const ConvSpec& spec) {
  return {{"out_channels", spec.out_channels},
          {"kernel", triple(spec.kernel)},
          {"stride", triple(spec.stride)},
          {"padding", triple(spec.padding)},
          {"output_padding", triple(spec.output_padding)}};
}

ConvSpec conv_spec_from_json(const json& j) {
  ConvSpec s;
  s.out_channels = j.at("out_channels").get<int>();
  s.kernel = triple_from(j.at("kernel"));
  s.stride = triple_from(j.at("stride"));
  s.padding = triple_from(j.at("padding"));
  s.output_padding = triple_from(j.at("output_padding"));
  return s;
}

json to_json(const ClipShape& shape) {
  return {{"frames", shape.frames},
          {"channels", shape.channels},
          {"height", shape.height},
          {"width", shape.width}};
}

ClipShape clip_shape_from_json(const json& j) {
  return {j.at("frames").get<int>(), j.at("channels").get<int>(), j.at("height").get<int>(),
          j.at("width").get<int>()};
}

json to_json(const ModelConfig& config) {
  json d_layers = json::array(), g_layers = json::array();
  for (const auto& s : config.disc.layers) d_layers.push_back(to_json(s));
  for (const auto& s : config.gen.layers) g_layers.push_back(to_json(s));
  return {{"clip", to_json(config.clip)},
          {"base_width", config.base_width},
          {"discriminator",
           {{"layers", d_layers},
            {"temporal_layers", config.disc.temporal_layers},
            {"leaky_slope", config.disc.leaky_slope},
            {"spectral_norm", config.disc.spectral_norm}}},
          {"generator",
           {{"latent_dim", config.gen.latent_dim},
            {"seed_channels", config.gen.seed_channels},
            {"seed_size", config.gen.seed_size},
            {"seed_frames", config.gen.seed_frames},
            {"spatial_layers", config.gen.spatial_layers},
            {"layers", g_layers},
            {"spectral_norm", config.gen.spectral_norm}}}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  c.clip = clip_shape_from_json(j.at("clip"));
  c.base_width = j.at("base_width").get<int>();
  const json& d = j.at("discriminator");
  for (const json& s : d.at("layers")) c.disc.layers.push_back(conv_spec_from_json(s));
  c.disc.temporal_layers = d.at("temporal_layers").get<int>();
  c.disc.leaky_slope = d.at("leaky_slope").get<double>();
  c.disc.spectral_norm = d.at("spectral_norm").get<bool>();
  const json& g = j.at("generator");
  c.gen.latent_dim = g.at("latent_dim").get<int>();
  c.gen.seed_channels = g.at("seed_channels").get<int>();
  c.gen.seed_size = g.at("seed_size").get<int>();
  c.gen.seed_frames = g.at("seed_frames").get<int>();
  c.gen.spatial_layers = g.at("spatial_layers").get<int>();
  for (const json& s : g.at("layers")) c.gen.layers.push_back(conv_spec_from_json(s));
  c.gen.spectral_norm = g.at("spectral_norm").get<bool>();
  validate_model_config(c);
  return c;
}

json to_json(const TrainConfig& c) {
  return {{"alpha", c.alpha},
          {"beta", c.beta},
          {"g_lr", c.g_lr},
          {"d_lr", c.d_lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"families", c.families.str()},
          {"seed", c.seed},
          {"checkpoint_every", c.checkpoint_every},
          {"holdout_fraction", c.holdout_fraction},
          {"base_width", c.base_width},
          {"latent_dim", c.latent_dim}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (!j.is_object()) throw ConfigError("training config must be a JSON object");
  std::set<std::string> seen;
  read_key(j, "alpha", c.alpha, seen);
  read_key(j, "beta", c.beta, seen);
  read_key(j, "g_lr", c.g_lr, seen);
  read_key(j, "d_lr", c.d_lr, seen);
  read_key(j, "beta1", c.beta1, seen);
  read_key(j, "beta2", c.beta2, seen);
  read_key(j, "epochs", c.epochs, seen);
  read_key(j, "batch_size", c.batch_size, seen);
  read_key(j, "seed", c.seed, seen);
  read_key(j, "checkpoint_every", c.checkpoint_every, seen);
  read_key(j, "holdout_fraction", c.holdout_fraction, seen);
  read_key(j, "base_width", c.base_width, seen);
  read_key(j, "latent_dim", c.latent_dim, seen);
  std::string families = c.families.str();
  read_key(j, "families", families, seen);
  c.families = FamilySet::parse(families);
  for (const auto& [key, value] : j.items()) {
    if (!seen.count(key)) throw ConfigError("unknown training config key '" + key + "'");
  }
  return c;
}

// ---------------------------------------------------------------------------

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out << text;
    out.flush();
    if (!out) throw IoError("failed writing " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void save_checkpoint(const fs::path& path, GanState& state, const json& extra) {
  std::vector<MatrixX<float>> scratch;
  const std::vector<TensorRef> tensors = state_tensors(state, scratch);
  json index = json::array();
  std::uint64_t offset = 0;
  std::uint64_t data_hash = fnv1a(nullptr, 0);
  for (const auto& t : tensors) {
    data_hash = tensor_hash(*t.matrix, data_hash);
    index.push_back({{"name", t.name},
                     {"rows", t.matrix->rows()},
                     {"cols", t.matrix->cols()},
                     {"offset", offset}});
    offset += std::uint64_t(t.matrix->size()) * sizeof(float);
  }
  json header = {{"format", "ssgan-checkpoint"},
                 {"epoch", state.epoch},
                 {"train_config", to_json(state.config)},
                 {"model_config", to_json(state.model)},
                 {"optimizer_steps",
                  {{"generator", state.g_opt.steps()}, {"discriminator", state.d_opt.steps()}}},
                 {"rng",
                  {{"engine", "mt19937_64"},
                   {"seed", state.config.seed},
                   {"streams", "seed_seq(seed, purpose, epoch, step)"},
                   {"next_epoch", state.epoch + 1}}},
                 {"parameter_hash", hex64(parameter_hash(state))},
                 {"data_hash", hex64(data_hash)},
                 {"dtype", "float32"},
                 {"order", "column-major"},
                 {"extra", extra.is_null() ? json::object() : extra},
                 {"tensors", index}};
  const std::string text = header.dump();

  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + tmp.string() + " for writing");
    out.write(kCheckpointMagic, 4);
    put_le(out, kCheckpointVersion, 4);
    put_le(out, text.size(), 8);
    out.write(text.data(), std::streamsize(text.size()));
    for (const auto& t : tensors) {
      for (Index i = 0; i < t.matrix->size(); ++i) {
        std::uint32_t bits;
        std::memcpy(&bits, t.matrix->data() + i, 4);
        put_le(out, bits, 4);
      }
    }
    out.flush();
    if (!out) throw IoError("failed writing checkpoint " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + ": " + ec.message());
}

namespace {

json read_header(std::ifstream& in, const fs::path& path) {
  unsigned char fixed[16];
  if (!in.read(reinterpret_cast<char*>(fixed), 16)) {
    throw LoadError("truncated checkpoint header in " + path.string());
  }
  if (std::memcmp(fixed, kCheckpointMagic, 4) != 0) {
    throw LoadError("not a checkpoint file: " + path.string());
  }
  const std::uint64_t version = get_le(fixed + 4, 4);
  if (version != kCheckpointVersion) {
    throw LoadError("unsupported checkpoint version " + std::to_string(version) + " in " +
                    path.string());
  }
  const std::uint64_t length = get_le(fixed + 8, 8);
  if (length > (std::uint64_t(1) << 30)) throw LoadError("implausible header in " + path.string());
  std::string text(length, '\0');
  if (!in.read(text.data(), std::streamsize(length))) {
    throw LoadError("truncated checkpoint metadata in " + path.string());
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw LoadError("corrupt checkpoint metadata in " + path.string() + ": " + e.what());
  }
}

CheckpointInfo info_from_header(const json& h, const fs::path& path) {
  try {
    CheckpointInfo info;
    info.epoch = h.at("epoch").get<int>();
    info.config = train_config_from_json(h.at("train_config"));
    info.model = model_config_from_json(h.at("model_config"));
    info.parameter_hash = h.at("parameter_hash").get<std::string>();
    info.extra = h.value("extra", json::object());
    return info;
  } catch (const json::exception& e) {
    throw LoadError("incomplete checkpoint metadata in " + path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw LoadError("invalid configuration in checkpoint " + path.string() + ": " + e.what());
  }
}

}  // namespace

CheckpointInfo read_checkpoint_info(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return info_from_header(read_header(in, path), path);
}

GanState load_checkpoint(const fs::path& path, CheckpointInfo* info_out) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  const json header = read_header(in, path);
  CheckpointInfo info = info_from_header(header, path);

  GanState state;
  state.config = info.config;
  state.model = info.model;
  Rng unused(0);
  state.disc = Discriminator<float>(state.model, unused);
  state.gen = Generator<float>(state.model, unused);
  state.d_opt = Adam<float>({info.config.d_lr, info.config.beta1, info.config.beta2},
                            state.disc.parameters());
  state.g_opt = Adam<float>({info.config.g_lr, info.config.beta1, info.config.beta2},
                            state.gen.parameters());
  state.epoch = info.epoch;

  std::vector<MatrixX<float>> scratch;
  const std::vector<TensorRef> tensors = state_tensors(state, scratch);
  const json& index = header.at("tensors");
  if (index.size() != tensors.size()) {
    throw LoadError("checkpoint " + path.string() + " has " + std::to_string(index.size()) +
                    " tensors, architecture expects " + std::to_string(tensors.size()));
  }
  const std::streamoff data_start = in.tellg();
  std::uint64_t data_hash = fnv1a(nullptr, 0);
  for (std::size_t k = 0; k < tensors.size(); ++k) {
    const json& entry = index[k];
    const TensorRef& t = tensors[k];
    if (entry.at("name") != t.name || entry.at("rows").get<Index>() != t.matrix->rows() ||
        entry.at("cols").get<Index>() != t.matrix->cols()) {
      throw LoadError("tensor " + t.name + " missing or mis-shaped in " + path.string());
    }
    in.seekg(data_start + std::streamoff(entry.at("offset").get<std::uint64_t>()));
    std::vector<unsigned char> bytes(std::size_t(t.matrix->size()) * 4);
    if (!in.read(reinterpret_cast<char*>(bytes.data()), std::streamsize(bytes.size()))) {
      throw LoadError("truncated tensor data for " + t.name + " in " + path.string());
    }
    for (Index i = 0; i < t.matrix->size(); ++i) {
      const auto bits = static_cast<std::uint32_t>(get_le(bytes.data() + 4 * i, 4));
      std::memcpy(t.matrix->data() + i, &bits, 4);
    }
    data_hash = tensor_hash(*t.matrix, data_hash);
  }
  if (hex64(data_hash) != header.value("data_hash", std::string())) {
    throw LoadError("tensor checksum mismatch in " + path.string());
  }
  restore_vectors(state, scratch);
  const json& steps = header.at("optimizer_steps");
  state.g_opt.set_steps(steps.at("generator").get<long long>());
  state.d_opt.set_steps(steps.at("discriminator").get<long long>());
  if (hex64(parameter_hash(state)) != info.parameter_hash) {
    throw LoadError("parameter hash mismatch in " + path.string());
  }
  if (info_out) *info_out = std::move(info);
  return state;
}

}  // namespace ssgan
