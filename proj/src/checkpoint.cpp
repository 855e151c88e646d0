#include "mtl/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include <json.hpp>

#include "mtl/errors.hpp"

namespace mtl {
namespace {

using nlohmann::json;

constexpr char kMagic[8] = {'M', 'T', 'L', 'C', 'K', 'P', 'T', '\0'};

template <typename T>
void put_le(std::vector<char>& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::vector<char>& in, std::size_t at) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i)
    v |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

json encoder_json(const EncoderConfig& c) {
  return json{{"vocab_size", c.vocab_size}, {"max_positions", c.max_positions},
              {"hidden", c.hidden},         {"layers", c.layers},
              {"heads", c.heads},           {"ff", c.ff},
              {"dropout", c.dropout},       {"layer_norm_eps", c.layer_norm_eps},
              {"init_stddev", c.init_stddev}};
}

EncoderConfig encoder_from(const json& j) {
  EncoderConfig c;
  c.vocab_size = j.at("vocab_size");
  c.max_positions = j.at("max_positions");
  c.hidden = j.at("hidden");
  c.layers = j.at("layers");
  c.heads = j.at("heads");
  c.ff = j.at("ff");
  c.dropout = j.at("dropout");
  c.layer_norm_eps = j.at("layer_norm_eps");
  c.init_stddev = j.at("init_stddev");
  return c;
}

json task_json(const TaskSpec& t) {
  return json{{"name", t.name},
              {"kind", std::string(to_string(t.kind))},
              {"labels", t.labels},
              {"metric", std::string(to_string(t.metric))},
              {"negative_label", t.negative_label},
              {"max_len", t.max_len},
              {"train", t.train_path.string()},
              {"dev", t.dev_path.string()},
              {"test", t.test_path.string()}};
}

TaskSpec task_from(const json& j) {
  TaskSpec t;
  t.name = j.at("name");
  t.kind = parse_task_kind(j.at("kind").get<std::string>());
  t.labels = j.at("labels").get<std::vector<std::string>>();
  t.metric = parse_metric(j.at("metric").get<std::string>());
  t.negative_label = j.at("negative_label");
  t.max_len = j.at("max_len");
  t.train_path = j.at("train").get<std::string>();
  t.dev_path = j.at("dev").get<std::string>();
  t.test_path = j.at("test").get<std::string>();
  return t;
}

}  // namespace

const TaskSpec* ModelCheckpoint::find_task(std::string_view name) const {
  for (const TaskSpec& t : tasks)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<char> serialize_checkpoint(const ModelCheckpoint& ck) {
  json manifest;
  manifest["format_version"] = kCheckpointVersion;
  manifest["encoder"] = encoder_json(ck.encoder);
  manifest["tasks"] = json::array();
  for (const TaskSpec& t : ck.tasks) manifest["tasks"].push_back(task_json(t));
  manifest["seeds"] = ck.seeds;
  manifest["tensors"] = json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ck.params) {
    manifest["tensors"].push_back(json{{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += t.size() * sizeof(float);
  }
  manifest["payload_bytes"] = offset;
  const std::string text = manifest.dump();

  std::vector<char> out(std::begin(kMagic), std::end(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& [name, t] : ck.params) {
    for (double v : t.data()) {
      const float f = static_cast<float>(v);
      if (!std::isfinite(f)) throw CheckpointError("tensor " + name + " has a value that is not finite in float32");
      put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(f));
    }
  }
  return out;
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& path) {
  const std::vector<char> bytes = serialize_checkpoint(checkpoint);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

ModelCheckpoint deserialize_checkpoint(const std::vector<char>& bytes) {
  constexpr std::size_t header = sizeof(kMagic) + 4 + 8;
  if (bytes.size() < header) throw CheckpointError("checkpoint truncated: header needs " + std::to_string(header) + " bytes, file has " + std::to_string(bytes.size()));
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw CheckpointError("not a checkpoint: bad magic");
  const auto version = get_le<std::uint32_t>(bytes, 8);
  if (version != kCheckpointVersion)
    throw CheckpointError("unsupported checkpoint format version " + std::to_string(version) + " (this build reads " +
                          std::to_string(kCheckpointVersion) + ")");
  const auto manifest_len = get_le<std::uint64_t>(bytes, 12);
  if (manifest_len > bytes.size() - header)
    throw CheckpointError("checkpoint truncated: manifest length " + std::to_string(manifest_len) + " exceeds file");

  json manifest;
  try {
    manifest = json::parse(bytes.begin() + header, bytes.begin() + static_cast<std::ptrdiff_t>(header + manifest_len));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  }

  ModelCheckpoint ck;
  const std::size_t payload_start = header + manifest_len;
  const std::size_t payload_size = bytes.size() - payload_start;
  try {
    if (manifest.at("format_version").get<std::uint32_t>() != version)
      throw CheckpointError("manifest version disagrees with header version");
    ck.encoder = encoder_from(manifest.at("encoder"));
    for (const json& t : manifest.at("tasks")) ck.tasks.push_back(task_from(t));
    ck.seeds = manifest.at("seeds").get<std::map<std::string, std::uint64_t>>();
    const auto declared = manifest.at("payload_bytes").get<std::uint64_t>();
    if (declared != payload_size)
      throw CheckpointError("payload has " + std::to_string(payload_size) + " bytes, manifest expects " +
                            std::to_string(declared));
    std::uint64_t expected_offset = 0;
    for (const json& entry : manifest.at("tensors")) {
      const std::string name = entry.at("name");
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      if (offset != expected_offset)
        throw CheckpointError("tensor " + name + " starts at byte " + std::to_string(offset) + ", expected " +
                              std::to_string(expected_offset) + " (offsets must tile the payload)");
      const std::size_t count = shape_size(shape);
      if (offset + count * sizeof(float) > payload_size)
        throw CheckpointError("tensor " + name + " runs past the end of the payload");
      std::vector<double> values(count);
      for (std::size_t i = 0; i < count; ++i)
        values[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, payload_start + offset + i * sizeof(float)));
      if (!ck.params.emplace(name, Tensor(shape, std::move(values))).second)
        throw CheckpointError("duplicate tensor " + name);
      expected_offset = offset + count * sizeof(float);
    }
    if (expected_offset != payload_size)
      throw CheckpointError("tensors cover " + std::to_string(expected_offset) + " payload bytes of " +
                            std::to_string(payload_size));
  } catch (const json::exception& e) {
    throw CheckpointError(std::string("malformed checkpoint manifest: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint manifest: ") + e.what());
  }
  return ck;
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  try {
    return deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

ModelCheckpoint rounded_to_storage(ModelCheckpoint checkpoint) {
  for (auto& [name, t] : checkpoint.params)
    for (double& v : t.data()) v = static_cast<float>(v);
  return checkpoint;
}

}  // namespace mtl
