#include "lwfs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

namespace lwfs {

namespace {

using Kind = CheckpointError::Kind;
using nlohmann::json;

constexpr char kMagic[4] = {'L', 'W', 'F', 'S'};

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

template <typename U>
U get_le(std::span<const std::uint8_t> bytes, std::size_t offset) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(bytes[offset + i]) << (8 * i);
  return v;
}

template <typename T>
void put_scalar(std::vector<std::uint8_t>& out, T value, std::size_t width) {
  if (width == 4) {
    put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(value)));
  } else {
    put_le(out, std::bit_cast<std::uint64_t>(static_cast<double>(value)));
  }
}

template <typename T>
std::string dtype_name() {
  return sizeof(T) == 4 ? "f32" : "f64";
}

json spec_to_json(const ModelSpec& s) {
  return json{{"input_dim", s.input_dim},         {"num_layers", s.num_layers},
              {"block_hidden_dim", s.block_hidden_dim}, {"block_out_dim", s.block_out_dim},
              {"proj_hidden", s.proj_hidden},     {"proj_out", s.proj_out},
              {"pred_hidden", s.pred_hidden}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.num_layers = j.at("num_layers").get<std::size_t>();
  s.block_hidden_dim = j.at("block_hidden_dim").get<std::size_t>();
  s.block_out_dim = j.at("block_out_dim").get<std::size_t>();
  s.proj_hidden = j.at("proj_hidden").get<std::size_t>();
  s.proj_out = j.at("proj_out").get<std::size_t>();
  s.pred_hidden = j.at("pred_hidden").get<std::size_t>();
  return s;
}

}  // namespace

template <typename T>
std::vector<std::uint8_t> serialize_group_payload(const ParamGroup<T>& group, std::size_t bytes_per_scalar) {
  std::vector<std::uint8_t> out;
  out.reserve(group.scalar_count() * bytes_per_scalar);
  for (const auto& t : group.tensors) {
    for (T v : t.value.data()) put_scalar(out, v, bytes_per_scalar);
  }
  return out;
}

template <typename T>
std::size_t checkpoint_payload_bytes(const ModelState<T>& model) {
  return model.scalar_count() * sizeof(T);
}

template <typename T>
std::vector<std::uint8_t> serialize_model(const ModelState<T>& model) {
  json tensors = json::array();
  for (const auto* g : model.groups()) {
    for (const auto& t : g->tensors) {
      tensors.push_back({{"name", g->name + "/" + t.name}, {"shape", t.value.shape()}, {"trainable", t.trainable}});
    }
  }
  const json header{{"dtype", dtype_name<T>()},
                    {"active_depth", model.active_depth()},
                    {"frozen_prefix", model.frozen_prefix},
                    {"init_seed", model.init_seed},
                    {"spec", spec_to_json(model.spec)},
                    {"tensors", std::move(tensors)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_le(out, kCheckpointVersion);
  put_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (const auto* g : model.groups()) {
    auto payload = serialize_group_payload(*g, sizeof(T));
    out.insert(out.end(), payload.begin(), payload.end());
  }
  return out;
}

template <typename T>
ModelState<T> deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kCheckpointPreambleBytes) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated preamble");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw CheckpointError(Kind::kBadMagic, "checkpoint: bad magic bytes");
  const auto version = get_le<std::uint16_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch, "checkpoint: version " + std::to_string(version) + ", expected " +
                                                      std::to_string(kCheckpointVersion));
  }
  const auto header_len = get_le<std::uint32_t>(bytes, 6);
  if (bytes.size() < kCheckpointPreambleBytes + header_len) {
    throw CheckpointError(Kind::kTruncated, "checkpoint: truncated header");
  }
  json header;
  ModelState<T> model;
  std::size_t width = 0;
  try {
    header = json::parse(bytes.begin() + kCheckpointPreambleBytes, bytes.begin() + kCheckpointPreambleBytes + header_len);
    const std::string dtype = header.at("dtype").get<std::string>();
    if (dtype != "f32" && dtype != "f64") throw CheckpointError(Kind::kBadHeader, "checkpoint: unknown dtype " + dtype);
    width = dtype == "f32" ? 4 : 8;
    const ModelSpec spec = spec_from_json(header.at("spec"));
    spec.validate();
    const auto depth = header.at("active_depth").get<std::size_t>();
    if (depth > spec.num_layers) throw CheckpointError(Kind::kBadHeader, "checkpoint: active depth exceeds num_layers");
    model = build_model<T>(spec, header.at("init_seed").get<std::uint64_t>(), depth);
    model.frozen_prefix = header.at("frozen_prefix").get<std::size_t>();
  } catch (const json::exception& e) {
    throw CheckpointError(Kind::kBadHeader, std::string("checkpoint: malformed header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::kBadHeader, std::string("checkpoint: invalid spec: ") + e.what());
  }
  const json& entries = header.at("tensors");
  std::size_t expected = 0;
  for (const auto* g : model.groups()) expected += g->tensors.size();
  if (!entries.is_array() || entries.size() != expected) {
    throw CheckpointError(Kind::kShapeMismatch, "checkpoint: tensor list does not match the model layout");
  }
  std::size_t offset = kCheckpointPreambleBytes + header_len;
  std::size_t index = 0;
  for (auto* g : model.groups()) {
    for (auto& t : g->tensors) {
      const json& e = entries[index++];
      const std::string name = g->name + "/" + t.name;
      if (e.at("name").get<std::string>() != name || e.at("shape").get<Shape>() != t.value.shape()) {
        throw CheckpointError(Kind::kShapeMismatch, "checkpoint: tensor " + e.at("name").get<std::string>() + " " +
                                                        shape_str(e.at("shape").get<Shape>()) + " does not match " +
                                                        name + " " + shape_str(t.value.shape()));
      }
      const std::size_t need = t.value.size() * width;
      if (offset + need > bytes.size()) throw CheckpointError(Kind::kTruncated, "checkpoint: truncated payload at " + name);
      for (auto& v : t.value.data()) {
        if (width == 4) {
          v = static_cast<T>(std::bit_cast<float>(get_le<std::uint32_t>(bytes, offset)));
        } else {
          v = static_cast<T>(std::bit_cast<double>(get_le<std::uint64_t>(bytes, offset)));
        }
        offset += width;
      }
    }
  }
  if (offset != bytes.size()) throw CheckpointError(Kind::kBadHeader, "checkpoint: trailing bytes after payload");
  return model;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

template <typename T>
void save_checkpoint(const ModelState<T>& model, const std::filesystem::path& path) {
  write_file_bytes(path, serialize_model(model));
}

template <typename T>
ModelState<T> load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = read_file_bytes(path);
  return deserialize_model<T>(bytes);
}

#define LWFS_INSTANTIATE(T)                                                                     \
  template std::vector<std::uint8_t> serialize_model(const ModelState<T>&);                     \
  template ModelState<T> deserialize_model<T>(std::span<const std::uint8_t>);                   \
  template std::size_t checkpoint_payload_bytes(const ModelState<T>&);                          \
  template std::vector<std::uint8_t> serialize_group_payload(const ParamGroup<T>&, std::size_t); \
  template void save_checkpoint(const ModelState<T>&, const std::filesystem::path&);            \
  template ModelState<T> load_checkpoint<T>(const std::filesystem::path&);

LWFS_INSTANTIATE(float)
LWFS_INSTANTIATE(double)

}  // namespace lwfs
