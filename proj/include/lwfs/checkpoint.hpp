#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "lwfs/model.hpp"

namespace lwfs {

/// Checkpoint layout:
///   "LWFS" | u16 LE version | u32 LE header length | UTF-8 JSON header |
///   raw little-endian IEEE-754 payloads in header order.
/// The header lists every tensor (name, shape, trainable), the dtype, the
/// model spec, init seed, active depth and frozen prefix.
inline constexpr std::uint16_t kCheckpointVersion = 1;
inline constexpr std::size_t kCheckpointPreambleBytes = 4 + 2 + 4;

template <typename T>
std::vector<std::uint8_t> serialize_model(const ModelState<T>& model);

/// Accepts checkpoints written at either precision and converts to T.
template <typename T>
ModelState<T> deserialize_model(std::span<const std::uint8_t> bytes);

/// Bytes of the payload section only (excludes preamble and JSON header).
template <typename T>
std::size_t checkpoint_payload_bytes(const ModelState<T>& model);

/// Raw payload of one group at the given wire width (4 = f32, 8 = f64).
template <typename T>
std::vector<std::uint8_t> serialize_group_payload(const ParamGroup<T>& group, std::size_t bytes_per_scalar = 4);

template <typename T>
void save_checkpoint(const ModelState<T>& model, const std::filesystem::path& path);

template <typename T>
ModelState<T> load_checkpoint(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace lwfs
