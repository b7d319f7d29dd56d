#pragma once

// Triangle mesh files: Wavefront OBJ (ASCII, 1-based indices), binary
// little-endian PLY, and binary glTF (GLB) with positions and indices only.

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sst/geometry/mesh.hpp"
#include "sst/geometry/voxel.hpp"

namespace sst {

// ------------------------------------------------------------------------ OBJ

inline std::string to_obj(const Mesh& m) {
  std::string out;
  out.reserve(m.vertices.size() * 40 + m.triangles.size() * 24);
  char buf[128];
  for (const auto& v : m.vertices) {
    const int n = std::snprintf(buf, sizeof buf, "v %.9g %.9g %.9g\n", v[0], v[1], v[2]);
    out.append(buf, std::size_t(n));
  }
  for (const auto& f : m.triangles) {
    const int n = std::snprintf(buf, sizeof buf, "f %u %u %u\n", f[0] + 1, f[1] + 1, f[2] + 1);
    out.append(buf, std::size_t(n));
  }
  return out;
}

/// Parses `v` and `f` records; faces with more than three corners are fanned.
/// Other record types are ignored. Errors carry "origin:line:column".
inline Mesh parse_obj(const std::string& text, const std::string& origin = "<memory>") {
  Mesh m;
  std::size_t line_no = 0, pos = 0;
  std::vector<long> face;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    std::string_view line(text.data() + pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);

    auto fail = [&](std::size_t col, const std::string& what) -> void {
      throw ParseError(origin + ":" + std::to_string(line_no) + ":" + std::to_string(col + 1) + ": " + what);
    };
    std::size_t i = 0;
    auto skip_ws = [&] {
      while (i < line.size() && (line[i] == ' ' || line[i] == '\t')) ++i;
    };
    skip_ws();
    if (i >= line.size() || line[i] == '#') continue;
    std::size_t key_end = i;
    while (key_end < line.size() && line[key_end] != ' ' && line[key_end] != '\t') ++key_end;
    const std::string_view key = line.substr(i, key_end - i);
    i = key_end;
    if (key == "v") {
      Vec3 v{};
      for (int a = 0; a < 3; ++a) {
        skip_ws();
        const char* b = line.data() + i;
        const char* e = line.data() + line.size();
        auto r = std::from_chars(b, e, v[a]);
        if (r.ec != std::errc()) fail(i, "expected a number in vertex record");
        i += std::size_t(r.ptr - b);
      }
      m.vertices.push_back(v);
    } else if (key == "f") {
      face.clear();
      while (true) {
        skip_ws();
        if (i >= line.size()) break;
        const std::size_t col = i;
        const char* b = line.data() + i;
        const char* e = line.data() + line.size();
        long idx = 0;
        auto r = std::from_chars(b, e, idx);
        if (r.ec != std::errc()) fail(col, "expected a vertex index in face record");
        i += std::size_t(r.ptr - b);
        while (i < line.size() && line[i] != ' ' && line[i] != '\t') ++i;  // skip /vt/vn
        if (idx == 0) fail(col, "face index 0 is invalid (indices are 1-based)");
        if (idx < 0) idx = long(m.vertices.size()) + idx + 1;
        if (idx < 1 || std::size_t(idx) > m.vertices.size()) {
          fail(col, "face index " + std::to_string(idx) + " out of range (" + std::to_string(m.vertices.size()) +
                        " vertices so far)");
        }
        face.push_back(idx - 1);
      }
      if (face.size() < 3) fail(0, "face needs at least three vertices");
      for (std::size_t t = 1; t + 1 < face.size(); ++t)
        m.triangles.push_back({std::uint32_t(face[0]), std::uint32_t(face[t]), std::uint32_t(face[t + 1])});
    }
  }
  return m;
}

inline void save_obj(const std::string& path, const Mesh& m) {
  const auto text = to_obj(m);
  detail::write_file(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline Mesh load_obj(const std::string& path) {
  const auto bytes = detail::read_file(path);
  return parse_obj(std::string(bytes.begin(), bytes.end()), path);
}

// ------------------------------------------------------------------------ PLY

inline std::vector<std::uint8_t> to_ply(const Mesh& m) {
  std::ostringstream h;
  h << "ply\nformat binary_little_endian 1.0\nelement vertex " << m.vertices.size()
    << "\nproperty float x\nproperty float y\nproperty float z\nelement face " << m.triangles.size()
    << "\nproperty list uchar int vertex_indices\nend_header\n";
  const std::string header = h.str();
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (const auto& v : m.vertices)
    for (double c : v) detail::put_le<float>(out, static_cast<float>(c));
  for (const auto& f : m.triangles) {
    out.push_back(3);
    for (auto i : f) detail::put_le<std::int32_t>(out, static_cast<std::int32_t>(i));
  }
  return out;
}

/// Reads the binary little-endian layout written by to_ply.
inline Mesh parse_ply(const std::vector<std::uint8_t>& in, const std::string& origin = "<memory>") {
  const std::string marker = "end_header\n";
  const auto it = std::search(in.begin(), in.end(), marker.begin(), marker.end());
  if (in.size() < 4 || std::memcmp(in.data(), "ply\n", 4) != 0 || it == in.end()) {
    throw ParseError(origin + ": not a PLY file");
  }
  std::istringstream header(std::string(in.begin(), it));
  std::string line;
  std::size_t nv = 0, nf = 0, line_no = 0;
  bool binary_le = false;
  while (std::getline(header, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::string a, b;
    ls >> a >> b;
    if (a == "format") {
      binary_le = b == "binary_little_endian";
    } else if (a == "element") {
      std::size_t count = 0;
      if (!(ls >> count)) throw ParseError(origin + ":" + std::to_string(line_no) + ": bad element count");
      if (b == "vertex") nv = count;
      else if (b == "face") nf = count;
      else throw ParseError(origin + ":" + std::to_string(line_no) + ": unsupported element '" + b + "'");
    }
  }
  if (!binary_le) throw ParseError(origin + ": only binary_little_endian PLY is supported");
  std::size_t at = std::size_t(it - in.begin()) + marker.size();
  if (in.size() < at + nv * 12 + nf * 13) throw ParseError(origin + ": truncated PLY payload");
  Mesh m;
  m.vertices.resize(nv);
  for (auto& v : m.vertices)
    for (auto& c : v) {
      c = detail::get_le<float>(in, at);
      at += 4;
    }
  for (std::size_t f = 0; f < nf; ++f) {
    if (in[at] != 3) throw ParseError(origin + ": face " + std::to_string(f) + " is not a triangle");
    ++at;
    Triangle t{};
    for (auto& i : t) {
      const auto v = detail::get_le<std::int32_t>(in, at);
      at += 4;
      if (v < 0 || std::size_t(v) >= nv) {
        throw ParseError(origin + ": face " + std::to_string(f) + " index " + std::to_string(v) + " out of range");
      }
      i = std::uint32_t(v);
    }
    m.triangles.push_back(t);
  }
  return m;
}

inline void save_ply(const std::string& path, const Mesh& m) { detail::write_file(path, to_ply(m)); }
inline Mesh load_ply(const std::string& path) { return parse_ply(detail::read_file(path), path); }

// ------------------------------------------------------------------------ GLB

/// glTF 2.0 binary container with one mesh primitive (POSITION + indices).
inline std::vector<std::uint8_t> to_glb(const Mesh& m) {
  std::vector<std::uint8_t> bin;
  const Bounds b = m.bounds();
  for (const auto& v : m.vertices)
    for (double c : v) detail::put_le<float>(bin, static_cast<float>(c));
  const std::size_t pos_bytes = bin.size();
  for (const auto& f : m.triangles)
    for (auto i : f) detail::put_le<std::uint32_t>(bin, i);
  const std::size_t idx_bytes = bin.size() - pos_bytes;
  while (bin.size() % 4) bin.push_back(0);

  nlohmann::json gltf;
  gltf["asset"] = {{"version", "2.0"}, {"generator", "sst"}};
  gltf["scene"] = 0;
  gltf["scenes"] = nlohmann::json::array({{{"nodes", {0}}}});
  gltf["nodes"] = nlohmann::json::array({{{"mesh", 0}}});
  gltf["meshes"] = nlohmann::json::array(
      {{{"primitives", nlohmann::json::array({{{"attributes", {{"POSITION", 0}}}, {"indices", 1}, {"mode", 4}}})}}});
  auto lo = m.vertices.empty() ? std::vector<float>{0, 0, 0}
                               : std::vector<float>{float(b.lo[0]), float(b.lo[1]), float(b.lo[2])};
  auto hi = m.vertices.empty() ? std::vector<float>{0, 0, 0}
                               : std::vector<float>{float(b.hi[0]), float(b.hi[1]), float(b.hi[2])};
  gltf["accessors"] = nlohmann::json::array(
      {{{"bufferView", 0}, {"componentType", 5126}, {"count", m.vertices.size()}, {"type", "VEC3"}, {"min", lo},
        {"max", hi}},
       {{"bufferView", 1}, {"componentType", 5125}, {"count", m.triangles.size() * 3}, {"type", "SCALAR"}}});
  gltf["bufferViews"] = nlohmann::json::array(
      {{{"buffer", 0}, {"byteOffset", 0}, {"byteLength", pos_bytes}, {"target", 34962}},
       {{"buffer", 0}, {"byteOffset", pos_bytes}, {"byteLength", idx_bytes}, {"target", 34963}}});
  gltf["buffers"] = nlohmann::json::array({{{"byteLength", bin.size()}}});
  std::string text = gltf.dump();
  while (text.size() % 4) text.push_back(' ');

  std::vector<std::uint8_t> out;
  detail::put_le<std::uint32_t>(out, 0x46546C67u);  // "glTF"
  detail::put_le<std::uint32_t>(out, 2);
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(12 + 8 + text.size() + 8 + bin.size()));
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(text.size()));
  detail::put_le<std::uint32_t>(out, 0x4E4F534Au);  // "JSON"
  out.insert(out.end(), text.begin(), text.end());
  detail::put_le<std::uint32_t>(out, static_cast<std::uint32_t>(bin.size()));
  detail::put_le<std::uint32_t>(out, 0x004E4942u);  // "BIN\0"
  out.insert(out.end(), bin.begin(), bin.end());
  return out;
}

/// Reads back the layout produced by to_glb.
inline Mesh parse_glb(const std::vector<std::uint8_t>& in, const std::string& origin = "<memory>") {
  if (in.size() < 20 || detail::get_le<std::uint32_t>(in, 0) != 0x46546C67u) {
    throw ParseError(origin + ": not a GLB file");
  }
  const auto json_len = detail::get_le<std::uint32_t>(in, 12);
  if (20 + std::size_t(json_len) + 8 > in.size()) throw ParseError(origin + ": truncated GLB");
  nlohmann::json gltf;
  try {
    gltf = nlohmann::json::parse(in.begin() + 20, in.begin() + 20 + json_len);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": bad GLB JSON chunk: " + e.what());
  }
  const std::size_t bin_at = 20 + json_len + 8;
  try {
    const auto& views = gltf.at("bufferViews");
    const auto& acc = gltf.at("accessors");
    const std::size_t nv = acc.at(0).at("count"), ni = acc.at(1).at("count");
    const std::size_t pos_off = views.at(0).at("byteOffset"), idx_off = views.at(1).at("byteOffset");
    if (bin_at + idx_off + ni * 4 > in.size() || bin_at + pos_off + nv * 12 > in.size() || ni % 3) {
      throw ParseError(origin + ": GLB buffer views exceed the binary chunk");
    }
    Mesh m;
    m.vertices.resize(nv);
    for (std::size_t v = 0; v < nv; ++v)
      for (int a = 0; a < 3; ++a) m.vertices[v][a] = detail::get_le<float>(in, bin_at + pos_off + (v * 3 + a) * 4);
    for (std::size_t t = 0; t < ni / 3; ++t) {
      Triangle f{};
      for (int a = 0; a < 3; ++a) f[a] = detail::get_le<std::uint32_t>(in, bin_at + idx_off + (t * 3 + a) * 4);
      m.triangles.push_back(f);
    }
    m.validate();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(origin + ": malformed GLB JSON: " + e.what());
  } catch (const GeometryError& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

/// Dispatches on file extension (.obj, .ply, .glb).
inline void save_mesh(const std::string& path, const Mesh& m) {
  auto ends = [&](const char* ext) {
    const std::string e(ext);
    return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  if (ends(".obj")) save_obj(path, m);
  else if (ends(".ply")) save_ply(path, m);
  else if (ends(".glb")) detail::write_file(path, to_glb(m));
  else throw ValueError("save_mesh: unknown mesh extension in '" + path + "'");
}

inline Mesh load_mesh(const std::string& path) {
  auto ends = [&](const char* ext) {
    const std::string e(ext);
    return path.size() >= e.size() && path.compare(path.size() - e.size(), e.size(), e) == 0;
  };
  if (ends(".obj")) return load_obj(path);
  if (ends(".ply")) return load_ply(path);
  if (ends(".glb")) return parse_glb(detail::read_file(path), path);
  throw ValueError("load_mesh: unknown mesh extension in '" + path + "'");
}

}  // namespace sst
