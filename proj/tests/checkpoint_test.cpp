#include <gtest/gtest.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "desk.hpp"
#include "mtl/checkpoint.hpp"

using namespace mtl;

namespace {

ModelCheckpoint sample() {
  ModelCheckpoint m;
  m.encoder = check::desk_encoder(20);
  m.encoder.hidden = 8;
  m.encoder.ff = 16;
  m.encoder.layers = 1;
  m.params = init_encoder_params(m.encoder, 7);
  TaskSpec tag;
  tag.name = "ner";
  tag.kind = TaskKind::tagging;
  tag.labels = {"O", "B-X", "I-X"};
  tag.metric = MetricId::entity_f1;
  tag.train_path = "data/ner.train.conll";
  TaskSpec sts;
  sts.name = "sts";
  sts.kind = TaskKind::similarity;
  sts.metric = MetricId::pearson;
  for (const TaskSpec& t : {tag, sts}) {
    m.tasks.push_back(t);
    for (auto& [name, tensor] : new_head(t, m.encoder.hidden, 3, 0.2)) m.params.emplace(name, tensor);
  }
  m.seeds = {{"encoder", 7}, {"refine", 0xFFFFFFFFFFFFFFFFull}};
  return rounded_to_storage(m);
}

constexpr std::size_t kHeader = 8 + 4 + 8;

// Splits serialized bytes into manifest JSON and payload.
std::pair<nlohmann::json, std::vector<char>> split(const std::vector<char>& bytes) {
  std::uint64_t len = 0;
  std::memcpy(&len, bytes.data() + 12, 8);
  auto manifest = nlohmann::json::parse(bytes.begin() + kHeader, bytes.begin() + static_cast<long>(kHeader + len));
  return {manifest, std::vector<char>(bytes.begin() + static_cast<long>(kHeader + len), bytes.end())};
}

std::vector<char> join(const nlohmann::json& manifest, const std::vector<char>& payload, std::uint32_t version = 1) {
  const std::string text = manifest.dump();
  std::vector<char> out(kHeader);
  std::memcpy(out.data(), "MTLCKPT\0", 8);
  std::memcpy(out.data() + 8, &version, 4);
  const std::uint64_t len = text.size();
  std::memcpy(out.data() + 12, &len, 8);
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

std::string load_error(const std::vector<char>& bytes) {
  try {
    deserialize_checkpoint(bytes);
  } catch (const CheckpointError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST(Checkpoint, RoundTripIsBitwise) {
  const ModelCheckpoint m = sample();
  const auto bytes = serialize_checkpoint(m);
  const ModelCheckpoint back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back, m);
  EXPECT_EQ(serialize_checkpoint(back), bytes);
  for (const auto& [name, t] : m.params) {
    const Tensor& u = back.params.at(name);
    ASSERT_EQ(u.shape(), t.shape());
    for (std::size_t i = 0; i < t.size(); ++i)
      EXPECT_EQ(std::bit_cast<std::uint64_t>(u.data()[i]), std::bit_cast<std::uint64_t>(t.data()[i])) << name;
  }
}

TEST(Checkpoint, FileRoundTrip) {
  const auto path = std::filesystem::temp_directory_path() / "mtl_checkpoint_test.ckpt";
  const ModelCheckpoint m = sample();
  save_checkpoint(m, path);
  EXPECT_EQ(load_checkpoint(path), m);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), CheckpointError);
}

TEST(Checkpoint, StorageRoundingIsFloat32) {
  ModelCheckpoint m = sample();
  m.params.begin()->second.data()[0] = 0.1;
  const ModelCheckpoint back = deserialize_checkpoint(serialize_checkpoint(m));
  EXPECT_EQ(back.params.begin()->second.data()[0], static_cast<double>(0.1f));
  m.params.begin()->second.data()[0] = 1e300;
  EXPECT_THROW(serialize_checkpoint(m), CheckpointError);
}

TEST(Checkpoint, PayloadIsLittleEndianFloat32InManifestOrder) {
  const ModelCheckpoint m = sample();
  auto [manifest, payload] = split(serialize_checkpoint(m));
  std::size_t expected = 0;
  for (const auto& t : manifest.at("tensors")) {
    EXPECT_EQ(t.at("offset").get<std::size_t>(), expected);
    const Tensor& src = m.params.at(t.at("name").get<std::string>());
    const auto* p = reinterpret_cast<const unsigned char*>(payload.data()) + expected;
    std::uint32_t bits = p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
    EXPECT_EQ(static_cast<double>(std::bit_cast<float>(bits)), src.data()[0]);
    expected += 4 * src.size();
  }
  EXPECT_EQ(expected, payload.size());
}

TEST(Checkpoint, TruncatedPayloadIsRejected) {
  auto bytes = serialize_checkpoint(sample());
  bytes.resize(bytes.size() - 4);
  EXPECT_NE(load_error(bytes).find("payload has"), std::string::npos) << load_error(bytes);
  bytes.resize(10);
  EXPECT_NE(load_error(bytes).find("truncated"), std::string::npos);
}

TEST(Checkpoint, FutureVersionIsRefused) {
  auto [manifest, payload] = split(serialize_checkpoint(sample()));
  const std::string msg = load_error(join(manifest, payload, 2));
  EXPECT_NE(msg.find("version 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("reads 1"), std::string::npos) << msg;
}

TEST(Checkpoint, BadMagicIsRejected) {
  auto bytes = serialize_checkpoint(sample());
  bytes[0] = 'X';
  EXPECT_NE(load_error(bytes).find("magic"), std::string::npos);
}

TEST(Checkpoint, OffsetsMustTileThePayload) {
  auto [manifest, payload] = split(serialize_checkpoint(sample()));
  {
    auto bad = manifest;
    bad["tensors"][1]["offset"] = bad["tensors"][1]["offset"].get<std::size_t>() + 4;
    EXPECT_NE(load_error(join(bad, payload)).find("starts at byte"), std::string::npos);
  }
  {
    auto bad = manifest;
    bad["tensors"].erase(bad["tensors"].size() - 1);
    const std::string msg = load_error(join(bad, payload));
    EXPECT_NE(msg.find("cover"), std::string::npos) << msg;
  }
  {
    auto bad = manifest;
    bad["tensors"][1]["name"] = bad["tensors"][0]["name"];
    EXPECT_NE(load_error(join(bad, payload)).find("duplicate"), std::string::npos);
  }
  {
    auto bad = manifest;
    bad.erase("tensors");
    EXPECT_NE(load_error(join(bad, payload)).find("manifest"), std::string::npos);
  }
  {
    std::vector<char> garbage = serialize_checkpoint(sample());
    garbage[kHeader] = '#';
    EXPECT_NE(load_error(garbage).find("malformed"), std::string::npos);
  }
}

TEST(Checkpoint, EncoderShapeMismatchNamesTensors) {
  const ModelCheckpoint m = sample();
  EncoderConfig wider = m.encoder;
  wider.hidden = 16;
  wider.ff = 32;
  try {
    load_encoder_params(wider, m.params);
    FAIL() << "expected a shape error";
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shared/"), std::string::npos);
  }
}
