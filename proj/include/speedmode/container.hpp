#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "speedmode/dataset.hpp"
#include "speedmode/model.hpp"

// Binary container shared by checkpoints and window archives:
//   magic "SPMT" | u32 version | u64 header length | JSON header | payload
// Integers and array elements are little-endian. The header lists every
// array with its dtype tag ("f32" or "i32"), shape and payload offset.
namespace speedmode::container {

inline constexpr std::string_view kMagic = "SPMT";
inline constexpr std::uint32_t kVersion = 1;

struct Array {
  std::string name;
  std::string dtype;  // "f32" or "i32"
  nn::Shape shape;
  std::vector<std::uint8_t> bytes;  // little-endian payload
};

Array make_f32(std::string name, nn::Shape shape, std::span<const float> values);
Array make_i32(std::string name, nn::Shape shape, std::span<const std::int32_t> values);
std::vector<float> read_f32(const Array& a);
std::vector<std::int32_t> read_i32(const Array& a);

struct Container {
  nlohmann::json header;  // caller fields; "arrays" is reserved
  std::vector<Array> arrays;
  const Array& at(std::string_view name) const;
};

std::string encode(const Container& c);
/// Throws FormatError on a bad magic, DataError on a version mismatch and
/// CorruptionError when sizes or offsets do not add up.
Container decode(std::string_view bytes);

struct Checkpoint {
  model::ModelConfig config;
  model::ParameterSet params;
  nlohmann::json metadata = nlohmann::json::object();
};

std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);
/// Atomic write (temp file + rename).
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string encode_windows(std::span<const data::SpeedWindow> windows);
std::vector<data::SpeedWindow> decode_windows(std::string_view bytes);
void write_windows_binary(const std::filesystem::path& path,
                          std::span<const data::SpeedWindow> windows);

}  // namespace speedmode::container
