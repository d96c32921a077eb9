#include "speedmode/container.hpp"

#include <bit>
#include <cstring>

#include "speedmode/error.hpp"
#include "speedmode/util.hpp"

namespace speedmode::container {
namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint64_t get_le(std::string_view bytes, std::size_t pos, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
  return v;
}

template <typename T>
std::vector<std::uint8_t> to_le(std::span<const T> values) {
  static_assert(sizeof(T) == 4);
  std::vector<std::uint8_t> out(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto u = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) out[i * 4 + b] = static_cast<std::uint8_t>((u >> (8 * b)) & 0xFF);
  }
  return out;
}

template <typename T>
std::vector<T> from_le(const Array& a, std::string_view dtype) {
  if (a.dtype != dtype) throw FormatError("array " + a.name + " has dtype " + a.dtype);
  std::vector<T> out(a.bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= static_cast<std::uint32_t>(a.bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<T>(u);
  }
  return out;
}

std::size_t dtype_size(const std::string& dtype) {
  if (dtype == "f32" || dtype == "i32") return 4;
  throw FormatError("unknown dtype tag '" + dtype + "'");
}

}  // namespace

Array make_f32(std::string name, nn::Shape shape, std::span<const float> values) {
  if (nn::shape_size(shape) != values.size()) throw ShapeError("make_f32: size mismatch for " + name);
  return Array{std::move(name), "f32", std::move(shape), to_le(values)};
}

Array make_i32(std::string name, nn::Shape shape, std::span<const std::int32_t> values) {
  if (nn::shape_size(shape) != values.size()) throw ShapeError("make_i32: size mismatch for " + name);
  return Array{std::move(name), "i32", std::move(shape), to_le(values)};
}

std::vector<float> read_f32(const Array& a) { return from_le<float>(a, "f32"); }
std::vector<std::int32_t> read_i32(const Array& a) { return from_le<std::int32_t>(a, "i32"); }

const Array& Container::at(std::string_view name) const {
  for (const auto& a : arrays)
    if (a.name == name) return a;
  throw FormatError("container has no array '" + std::string(name) + "'");
}

std::string encode(const Container& c) {
  nlohmann::json header = c.header.is_null() ? nlohmann::json::object() : c.header;
  nlohmann::json index = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& a : c.arrays) {
    index.push_back({{"name", a.name}, {"dtype", a.dtype}, {"shape", a.shape}, {"offset", offset}});
    offset += a.bytes.size();
  }
  header["arrays"] = std::move(index);
  const std::string text = header.dump();
  std::string out(kMagic);
  put_u32(out, kVersion);
  put_u64(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  for (const auto& a : c.arrays) out.append(reinterpret_cast<const char*>(a.bytes.data()), a.bytes.size());
  return out;
}

Container decode(std::string_view bytes) {
  constexpr std::size_t fixed = 4 + 4 + 8;
  if (bytes.size() < kMagic.size() || !bytes.starts_with(kMagic))
    throw FormatError("not a container file (bad magic)");
  if (bytes.size() < fixed) throw CorruptionError("container truncated in preamble");
  const auto version = static_cast<std::uint32_t>(get_le(bytes, 4, 4));
  if (version != kVersion)
    throw DataError("container version " + std::to_string(version) + " is not supported (expected " +
                    std::to_string(kVersion) + ")");
  const std::uint64_t header_len = get_le(bytes, 8, 8);
  if (header_len > bytes.size() - fixed) throw CorruptionError("container truncated in header");
  Container c;
  try {
    c.header = nlohmann::json::parse(bytes.substr(fixed, header_len));
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("container header is not valid JSON: ") + e.what());
  }
  const std::string_view payload = bytes.substr(fixed + header_len);
  std::uint64_t expected = 0;
  try {
    for (const auto& entry : c.header.at("arrays")) {
      Array a;
      a.name = entry.at("name").get<std::string>();
      a.dtype = entry.at("dtype").get<std::string>();
      a.shape = entry.at("shape").get<nn::Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const std::uint64_t size = nn::shape_size(a.shape) * dtype_size(a.dtype);
      if (offset != expected) throw CorruptionError("array " + a.name + " has a bad offset");
      if (offset + size > payload.size())
        throw CorruptionError("container truncated inside array " + a.name);
      a.bytes.assign(payload.begin() + offset, payload.begin() + offset + size);
      expected += size;
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CorruptionError(std::string("container index is malformed: ") + e.what());
  }
  if (expected != payload.size())
    throw CorruptionError("container payload has " + std::to_string(payload.size()) +
                          " bytes, index describes " + std::to_string(expected));
  c.header.erase("arrays");
  return c;
}

std::string encode_checkpoint(const Checkpoint& ckpt) {
  model::check_parameters(ckpt.params, ckpt.config);
  Container c;
  c.header = {{"kind", "checkpoint"},
              {"config", model::config_to_json(ckpt.config)},
              {"metadata", ckpt.metadata}};
  for (const auto& spec : model::parameter_specs(ckpt.config)) {
    const auto& t = ckpt.params.at(spec.name);
    c.arrays.push_back(make_f32(spec.name, t.shape(), t.values()));
  }
  return encode(c);
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Container c = decode(bytes);
  if (c.header.value("kind", std::string()) != "checkpoint")
    throw FormatError("container does not hold a checkpoint");
  Checkpoint ckpt;
  ckpt.config = model::config_from_json(c.header.at("config"));
  ckpt.metadata = c.header.value("metadata", nlohmann::json::object());
  for (const auto& a : c.arrays) {
    auto values = read_f32(a);
    ckpt.params.emplace(a.name, nn::Tensor<float>(a.shape, std::move(values)));
  }
  model::check_parameters(ckpt.params, ckpt.config);
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_atomic(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path));
}

std::string encode_windows(std::span<const data::SpeedWindow> windows) {
  const std::size_t n = windows.size();
  const std::size_t T = n ? windows.front().length() : 0;
  std::vector<float> speeds;
  speeds.reserve(n * T);
  std::vector<std::int32_t> labels, valid, index, start;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& w : windows) {
    if (w.length() != T) throw ShapeError("window archive needs equal window lengths");
    speeds.insert(speeds.end(), w.speeds.begin(), w.speeds.end());
    labels.push_back(ordinal(w.label));
    valid.push_back(static_cast<std::int32_t>(w.valid_count));
    index.push_back(static_cast<std::int32_t>(w.index));
    start.push_back(static_cast<std::int32_t>(w.start));
    ids.push_back(w.trip_id);
  }
  Container c;
  c.header = {{"kind", "windows"}, {"window", T}, {"trip_ids", std::move(ids)}};
  c.arrays.push_back(make_f32("speeds", {n, T}, speeds));
  c.arrays.push_back(make_i32("labels", {n}, labels));
  c.arrays.push_back(make_i32("valid_count", {n}, valid));
  c.arrays.push_back(make_i32("index", {n}, index));
  c.arrays.push_back(make_i32("start", {n}, start));
  return encode(c);
}

std::vector<data::SpeedWindow> decode_windows(std::string_view bytes) {
  Container c = decode(bytes);
  if (c.header.value("kind", std::string()) != "windows")
    throw FormatError("container does not hold windows");
  const auto ids = c.header.at("trip_ids").get<std::vector<std::string>>();
  const auto T = c.header.at("window").get<std::size_t>();
  const auto speeds = read_f32(c.at("speeds"));
  const auto labels = read_i32(c.at("labels"));
  const auto valid = read_i32(c.at("valid_count"));
  const auto index = read_i32(c.at("index"));
  const auto start = read_i32(c.at("start"));
  const std::size_t n = ids.size();
  if (speeds.size() != n * T || labels.size() != n || valid.size() != n || index.size() != n ||
      start.size() != n)
    throw CorruptionError("window archive arrays disagree in length");
  std::vector<data::SpeedWindow> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto mode = mode_from_ordinal(labels[i]);
    if (!mode) throw DataError("window archive holds invalid label " + std::to_string(labels[i]));
    if (valid[i] < 1 || static_cast<std::size_t>(valid[i]) > T)
      throw DataError("window archive holds invalid valid_count");
    auto& w = out[i];
    w.trip_id = ids[i];
    w.label = *mode;
    w.valid_count = static_cast<std::size_t>(valid[i]);
    w.index = static_cast<std::size_t>(index[i]);
    w.start = static_cast<std::size_t>(start[i]);
    w.speeds.assign(speeds.begin() + i * T, speeds.begin() + (i + 1) * T);
  }
  return out;
}

void write_windows_binary(const std::filesystem::path& path,
                          std::span<const data::SpeedWindow> windows) {
  write_file_atomic(path, encode_windows(windows));
}

}  // namespace speedmode::container
