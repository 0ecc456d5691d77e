#pragma once

// Binary tensor container:
//   "VECA" | u32 version | u64 json_len | json | u64 count |
//   count x ( u32 name_len | name | u32 rank | rank x u64 extent | u8 dtype | payload )
// All integers and scalars are little-endian. dtype: 0 = float32, 1 = float64.

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "veca/distill.hpp"
#include "veca/model.hpp"

namespace veca {

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct TensorRecord {
  std::string name;
  Shape shape;
  DType dtype = DType::Float64;
  std::vector<unsigned char> payload;  // little-endian scalars
};

struct Container {
  nlohmann::json config;
  std::vector<TensorRecord> tensors;

  const TensorRecord* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
};

namespace detail {

template <typename U>
void put_le(std::ostream& os, U v) {
  unsigned char b[sizeof(U)];
  std::memcpy(b, &v, sizeof(U));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  os.write(reinterpret_cast<const char*>(b), sizeof(U));
}

template <typename U>
U get_le(std::istream& is, const std::string& path) {
  unsigned char b[sizeof(U)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(U))) throw FormatError(path + ": truncated container");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
  U v;
  std::memcpy(&v, b, sizeof(U));
  return v;
}

inline std::size_t dtype_size(DType d) { return d == DType::Float32 ? 4 : 8; }

}  // namespace detail

template <typename T>
TensorRecord to_record(const std::string& name, const Tensor<T>& t) {
  TensorRecord r{name, t.shape(), Tensor<T>::dtype(), std::vector<unsigned char>(t.size() * sizeof(T))};
  std::memcpy(r.payload.data(), t.data().data(), r.payload.size());
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < r.payload.size(); i += sizeof(T))
      std::reverse(r.payload.begin() + i, r.payload.begin() + i + sizeof(T));
  return r;
}

template <typename T>
Tensor<T> from_record(const TensorRecord& r, bool requires_grad = false) {
  if (r.dtype != dtype_of<T>())
    throw FormatError("tensor '" + r.name + "' is " + dtype_name(r.dtype) + ", expected " + dtype_name(dtype_of<T>()));
  std::vector<T> v(numel(r.shape));
  auto bytes = r.payload;
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < bytes.size(); i += sizeof(T)) std::reverse(bytes.begin() + i, bytes.begin() + i + sizeof(T));
  std::memcpy(v.data(), bytes.data(), bytes.size());
  return Tensor<T>(r.shape, std::move(v), requires_grad);
}

inline void write_container(const std::string& path, const Container& c) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write("VECA", 4);
  detail::put_le<std::uint32_t>(os, kCheckpointVersion);
  const std::string js = c.config.dump();
  detail::put_le<std::uint64_t>(os, js.size());
  os.write(js.data(), static_cast<std::streamsize>(js.size()));
  detail::put_le<std::uint64_t>(os, c.tensors.size());
  for (const auto& t : c.tensors) {
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
    os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    detail::put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.shape.size()));
    for (auto e : t.shape) detail::put_le<std::uint64_t>(os, e);
    detail::put_le<std::uint8_t>(os, static_cast<std::uint8_t>(t.dtype));
    os.write(reinterpret_cast<const char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size()));
  }
  if (!os) throw IoError("failed writing " + path);
}

inline Container read_container(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "VECA", 4) != 0) throw FormatError(path + ": bad magic");
  const auto version = detail::get_le<std::uint32_t>(is, path);
  if (version != kCheckpointVersion)
    throw FormatError(path + ": unsupported version " + std::to_string(version) + " (this build reads " +
                      std::to_string(kCheckpointVersion) + ")");
  Container c;
  const auto jlen = detail::get_le<std::uint64_t>(is, path);
  std::string js(jlen, '\0');
  if (!is.read(js.data(), static_cast<std::streamsize>(jlen))) throw FormatError(path + ": truncated config");
  try {
    c.config = nlohmann::json::parse(js);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": config is not valid JSON: " + e.what());
  }
  const auto count = detail::get_le<std::uint64_t>(is, path);
  for (std::uint64_t i = 0; i < count; ++i) {
    TensorRecord t;
    const auto nlen = detail::get_le<std::uint32_t>(is, path);
    t.name.resize(nlen);
    if (!is.read(t.name.data(), nlen)) throw FormatError(path + ": truncated tensor name");
    const auto rank = detail::get_le<std::uint32_t>(is, path);
    for (std::uint32_t k = 0; k < rank; ++k) t.shape.push_back(detail::get_le<std::uint64_t>(is, path));
    const auto tag = detail::get_le<std::uint8_t>(is, path);
    if (tag > 1) throw FormatError(path + ": unknown dtype tag " + std::to_string(tag) + " for '" + t.name + "'");
    t.dtype = static_cast<DType>(tag);
    t.payload.resize(numel(t.shape) * detail::dtype_size(t.dtype));
    if (!is.read(reinterpret_cast<char*>(t.payload.data()), static_cast<std::streamsize>(t.payload.size())))
      throw FormatError(path + ": truncated payload for '" + t.name + "'");
    c.tensors.push_back(std::move(t));
  }
  return c;
}

template <typename T>
nlohmann::json model_header(const VecaEncoder<T>& m, const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j;
  j["kind"] = "veca-encoder";
  j["model"] = m.config;
  j["rope"] = {{"head_dim", m.rope.head_dim}, {"base", m.rope.base}, {"axial_split", "x-then-y"},
               {"pairing", "adjacent"}};
  j["dtype"] = dtype_name(dtype_of<T>());
  for (auto it = extra.begin(); it != extra.end(); ++it) j[it.key()] = it.value();
  return j;
}

template <typename T>
void save_checkpoint(const std::string& path, const VecaEncoder<T>& m,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  Container c{model_header(m, extra), {}};
  for (const auto& [name, t] : m.named_parameters()) c.tensors.push_back(to_record(name, t));
  write_container(path, c);
}

template <typename T>
struct LoadedModel {
  VecaEncoder<T> model;
  nlohmann::json header;
};

/// Rebuilds an encoder from a checkpoint; every parameter must be present
/// with the recorded shape and dtype.
template <typename T>
LoadedModel<T> load_checkpoint(const std::string& path) {
  Container c = read_container(path);
  if (c.config.value("kind", "") != "veca-encoder") throw FormatError(path + ": not an encoder checkpoint");
  ModelConfig cfg = c.config.at("model").get<ModelConfig>();
  VecaEncoder<T> m = VecaEncoder<T>::init(cfg, 0);
  for (auto& [name, t] : m.named_parameters()) {
    const TensorRecord* r = c.find(name);
    if (!r) throw FormatError(path + ": missing tensor '" + name + "'");
    if (r->shape != t.shape())
      throw FormatError(path + ": tensor '" + name + "' has shape " + shape_str(r->shape) + ", expected " +
                        shape_str(t.shape()));
    const Tensor<T> loaded = from_record<T>(*r);
    std::copy(loaded.data().begin(), loaded.data().end(), t.mutable_data().begin());
  }
  return {std::move(m), std::move(c.config)};
}

/// Precomputed teacher targets: tensors "images", "y_star", "z_star".
template <typename T>
void save_targets(const std::string& path, const Tensor<T>& images, const TeacherTargets<T>& tgt,
                  const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json j = extra;
  j["kind"] = "teacher-targets";
  write_container(path, {j, {to_record("images", images), to_record("y_star", tgt.y_star), to_record("z_star", tgt.z_star)}});
}

template <typename T>
std::pair<Tensor<T>, TeacherTargets<T>> load_targets(const std::string& path) {
  const Container c = read_container(path);
  if (c.config.value("kind", "") != "teacher-targets") throw FormatError(path + ": not a teacher-targets file");
  auto get = [&](const char* n) {
    const TensorRecord* r = c.find(n);
    if (!r) throw FormatError(path + ": missing tensor '" + std::string(n) + "'");
    return from_record<T>(*r);
  };
  Tensor<T> images = get("images");
  TeacherTargets<T> tgt{get("y_star"), get("z_star")};
  if (images.rank() != 4 || tgt.y_star.rank() != 2 || tgt.z_star.rank() != 3 ||
      tgt.y_star.dim(0) != images.dim(0) || tgt.z_star.dim(0) != images.dim(0))
    throw FormatError(path + ": inconsistent target shapes");
  return {std::move(images), std::move(tgt)};
}

}  // namespace veca
