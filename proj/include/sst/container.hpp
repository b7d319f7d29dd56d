#pragma once

// Container file shared by checkpoints and dataset shards:
//
//   bytes 0..7    magic "SSTCONT1"
//   bytes 8..15   u64 little-endian length H of the header
//   next H bytes  UTF-8 JSON header:
//                   { "kind": ..., "meta": {...},
//                     "entries": [ {"name", "dtype", "shape", "offset", "nbytes"}, ... ] }
//   remainder     payload; each entry's raw little-endian array at `offset`
//                 bytes from the start of the payload
//
// dtype is one of "f32", "f64", "u8", "u32".

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "sst/error.hpp"
#include "sst/tensor.hpp"

namespace sst {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

using json = nlohmann::json;

template <class V>
constexpr const char* dtype_name() {
  if constexpr (std::is_same_v<V, float>) return "f32";
  else if constexpr (std::is_same_v<V, double>) return "f64";
  else if constexpr (std::is_same_v<V, std::uint8_t>) return "u8";
  else if constexpr (std::is_same_v<V, std::uint32_t>) return "u32";
  else static_assert(sizeof(V) == 0, "unsupported dtype");
}

inline std::size_t dtype_size(const std::string& d) {
  if (d == "f32" || d == "u32") return 4;
  if (d == "f64") return 8;
  if (d == "u8") return 1;
  throw ParseError("container: unknown dtype '" + d + "'");
}

struct ContainerEntry {
  std::string dtype;
  Shape shape;
  std::vector<std::uint8_t> bytes;
};

/// In-memory view of a container file.
class Container {
 public:
  std::string kind;
  json meta = json::object();

  template <class V>
  void put(const std::string& name, const Shape& shape, const std::vector<V>& values) {
    if (shape_numel(shape) != values.size()) throw ShapeError("container: entry '" + name + "' size mismatch");
    ContainerEntry e{dtype_name<V>(), shape, {}};
    e.bytes.resize(values.size() * sizeof(V));
    if (!values.empty()) std::memcpy(e.bytes.data(), values.data(), e.bytes.size());
    if (!entries_.count(name)) order_.push_back(name);
    entries_[name] = std::move(e);
  }

  template <class T>
  void put_tensor(const std::string& name, const Tensor<T>& t) {
    put(name, t.shape(), t.values());
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  const ContainerEntry& entry(const std::string& name) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw ParseError("container: missing entry '" + name + "'");
    return it->second;
  }

  template <class V>
  std::vector<V> get(const std::string& name) const {
    const auto& e = entry(name);
    if (e.dtype != dtype_name<V>()) {
      throw ParseError("container: entry '" + name + "' has dtype " + e.dtype + ", expected " + dtype_name<V>());
    }
    std::vector<V> out(e.bytes.size() / sizeof(V));
    if (!out.empty()) std::memcpy(out.data(), e.bytes.data(), e.bytes.size());
    return out;
  }

  template <class T>
  Tensor<T> get_tensor(const std::string& name) const {
    return Tensor<T>(entry(name).shape, get<T>(name));
  }

  const std::vector<std::string>& names() const { return order_; }

  std::vector<std::uint8_t> serialize() const {
    json header;
    header["kind"] = kind;
    header["meta"] = meta;
    header["entries"] = json::array();
    std::uint64_t offset = 0;
    for (const auto& name : order_) {
      const auto& e = entries_.at(name);
      header["entries"].push_back(
          {{"name", name}, {"dtype", e.dtype}, {"shape", e.shape}, {"offset", offset}, {"nbytes", e.bytes.size()}});
      offset += e.bytes.size();
    }
    const std::string text = header.dump();
    std::vector<std::uint8_t> out(8 + 8 + text.size());
    std::memcpy(out.data(), kMagic, 8);
    const std::uint64_t len = text.size();
    std::memcpy(out.data() + 8, &len, 8);
    std::memcpy(out.data() + 16, text.data(), text.size());
    for (const auto& name : order_) {
      const auto& b = entries_.at(name).bytes;
      out.insert(out.end(), b.begin(), b.end());
    }
    return out;
  }

  static Container deserialize(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
    if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 8) != 0) {
      throw ParseError(origin + ": not a container file (bad magic)");
    }
    std::uint64_t len = 0;
    std::memcpy(&len, bytes.data() + 8, 8);
    if (16 + len > bytes.size()) throw ParseError(origin + ": truncated header");
    json header;
    try {
      header = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
    } catch (const json::exception& e) {
      throw ParseError(origin + ": header is not valid JSON: " + e.what());
    }
    Container c;
    const std::size_t payload = 16 + len;
    try {
      c.kind = header.at("kind").get<std::string>();
      c.meta = header.value("meta", json::object());
      for (const auto& ej : header.at("entries")) {
        ContainerEntry e;
        e.dtype = ej.at("dtype").get<std::string>();
        e.shape = ej.at("shape").get<Shape>();
        const auto off = ej.at("offset").get<std::uint64_t>();
        const auto n = ej.at("nbytes").get<std::uint64_t>();
        if (n != shape_numel(e.shape) * dtype_size(e.dtype)) {
          throw ParseError(origin + ": entry '" + ej.at("name").get<std::string>() + "' byte count mismatch");
        }
        if (payload + off + n > bytes.size()) throw ParseError(origin + ": entry exceeds file size");
        e.bytes.assign(bytes.begin() + static_cast<std::ptrdiff_t>(payload + off),
                       bytes.begin() + static_cast<std::ptrdiff_t>(payload + off + n));
        const auto name = ej.at("name").get<std::string>();
        c.order_.push_back(name);
        c.entries_[name] = std::move(e);
      }
    } catch (const json::exception& e) {
      throw ParseError(origin + ": malformed header: " + e.what());
    }
    return c;
  }

  void save(const std::string& path) const {
    auto bytes = serialize();
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open '" + path + "' for writing");
    os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw IoError("write failed for '" + path + "'");
  }

  static Container load(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    return deserialize(bytes, path);
  }

 private:
  static constexpr char kMagic[9] = "SSTCONT1";
  std::map<std::string, ContainerEntry> entries_;
  std::vector<std::string> order_;
};

}  // namespace sst
