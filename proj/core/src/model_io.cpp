#include "circuits/model_io.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "circuits/digest.hpp"
#include "circuits/error.hpp"

namespace circuits {

namespace {

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

std::uint64_t get_u64(const std::string& in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

void put_f32(std::string& out, double value) {
  const float f = static_cast<float>(value);
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xFF));
}

double get_f32(const std::string& in, std::size_t at) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  float f;
  std::memcpy(&f, &bits, sizeof f);
  return static_cast<double>(f);
}

}  // namespace

std::string serialize_model(const ModelGraph& model) {
  nlohmann::json header;
  header["format"] = "CFM1";
  header["version"] = kModelFormatVersion;
  header["layers"] = model.layers();
  header["metadata"] = {{"seed", model.metadata().seed},
                        {"train_config_digest", model.metadata().train_config_digest},
                        {"extra", model.metadata().extra}};
  nlohmann::json table = nlohmann::json::array();
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const LayerParams& p = model.params(i);
    if (p.weights.empty()) continue;
    table.push_back({{"layer", model.layer(i).name},
                     {"weight_shape", p.weights.shape().dims()},
                     {"weight_count", p.weights.size()},
                     {"bias_count", p.bias.size()}});
  }
  header["payloads"] = table;

  const std::string text = header.dump();
  std::string out(kModelMagic, 8);
  put_u64(out, text.size());
  out += text;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    const LayerParams& p = model.params(i);
    if (p.weights.empty()) continue;
    for (double w : p.weights.values()) put_f32(out, w);
    for (double b : p.bias) put_f32(out, b);
  }
  return out;
}

ModelGraph deserialize_model(const std::string& bytes) {
  if (bytes.size() < 8 || bytes.compare(0, 8, kModelMagic) != 0) {
    throw FormatError(std::string("bad magic: expected \"") + kModelMagic + "\"");
  }
  if (bytes.size() < 16) throw TruncatedError("model file ends inside the header length");
  const std::uint64_t header_len = get_u64(bytes, 8);
  if (header_len > bytes.size() - 16) throw TruncatedError("model file ends inside the JSON header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("model header is not valid JSON: ") + e.what());
  }
  if (!header.is_object() || header.value("format", std::string{}) != "CFM1") {
    throw FormatError("model header does not declare format CFM1");
  }
  if (!header.contains("version") || !header["version"].is_number_integer()) {
    throw FormatError("model header lacks an integer version");
  }
  if (header["version"].get<int>() != kModelFormatVersion) {
    throw VersionError("unsupported model format version " + header["version"].dump() + " (expected " +
                       std::to_string(kModelFormatVersion) + ")");
  }

  std::vector<LayerSpec> layers;
  ModelMetadata meta;
  nlohmann::json table;
  try {
    layers = header.at("layers").get<std::vector<LayerSpec>>();
    const auto& m = header.at("metadata");
    meta.seed = m.value("seed", std::uint64_t{0});
    meta.train_config_digest = m.value("train_config_digest", std::string{});
    meta.extra = m.value("extra", nlohmann::json::object());
    table = header.at("payloads");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed model header: ") + e.what());
  }
  ModelGraph model = ModelGraph::build(std::move(layers), std::move(meta));

  std::size_t expected_entries = 0;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    if (!model.params(i).weights.empty()) ++expected_entries;
  }
  if (!table.is_array() || table.size() != expected_entries) {
    throw ShapeError("payloads", "payload table lists " + std::to_string(table.is_array() ? table.size() : 0) +
                                     " entries, architecture needs " + std::to_string(expected_entries));
  }

  std::size_t at = 16 + header_len;
  std::size_t entry = 0;
  for (std::size_t i = 0; i < model.layer_count(); ++i) {
    LayerParams& p = model.params(i);
    if (p.weights.empty()) continue;
    const auto& e = table[entry++];
    const std::string& name = model.layer(i).name;
    std::size_t wcount = 0, bcount = 0;
    std::vector<std::size_t> wshape;
    try {
      if (e.at("layer").get<std::string>() != name) {
        throw ShapeError("layer", "payload entry names '" + e.at("layer").get<std::string>() + "', expected '" +
                                      name + "'");
      }
      wcount = e.at("weight_count").get<std::size_t>();
      bcount = e.at("bias_count").get<std::size_t>();
      wshape = e.at("weight_shape").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& ex) {
      throw FormatError(std::string("malformed payload entry: ") + ex.what());
    }
    if (wshape != p.weights.shape().dims()) {
      throw ShapeError("weight_shape", "payload for '" + name + "' declares shape " +
                                           Shape(wshape).to_string() + ", architecture implies " +
                                           p.weights.shape().to_string());
    }
    if (wcount != p.weights.size()) {
      throw ShapeError("weight_count", "payload for '" + name + "' holds " + std::to_string(wcount) +
                                           " weights, architecture implies " + std::to_string(p.weights.size()));
    }
    if (bcount != p.bias.size()) {
      throw ShapeError("bias_count", "payload for '" + name + "' holds " + std::to_string(bcount) +
                                         " biases, architecture implies " + std::to_string(p.bias.size()));
    }
    if (bytes.size() - at < 4 * (wcount + bcount)) {
      throw TruncatedError("payload for '" + name + "' is truncated");
    }
    for (double& w : p.weights.values()) {
      w = get_f32(bytes, at);
      at += 4;
    }
    for (double& b : p.bias) {
      b = get_f32(bytes, at);
      at += 4;
    }
  }
  if (at != bytes.size()) {
    throw FormatError(std::to_string(bytes.size() - at) + " trailing bytes after the last payload");
  }
  return model;
}

void save_model(const ModelGraph& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  const std::string bytes = serialize_model(model);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

ModelGraph load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file '" + path.string() + "'");
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_model(bytes);
}

std::string model_digest(const ModelGraph& model) { return sha256_hex(serialize_model(model)); }

}  // namespace circuits
