#pragma once

// Read-only HTTP inference over a frozen VAE + GAN pair.
//
//   GET  /model/info                     model card (503 until a model is loaded)
//   POST /sample    {seed, resolution}   draws (z, C) from the seed and decodes a mesh
//   POST /traverse  {shape_id | z + C, dim, value, resolution}
//   GET  /mesh/{id}?format=obj|glb       mesh bytes
//
// Shape ids are content hashes of (model hashes, z, C, resolution), so any
// response can be reproduced from the checkpoints and the request body.
// Coordinates travel in every response; the server keeps only bounded caches.

#include <list>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <unordered_map>
#include <vector>

#include "sst/geometry/mesh_io.hpp"
#include "sst/hash.hpp"
#include "sst/parallel.hpp"
#include "sst/pipeline.hpp"

// After the Eigen-based headers: the resolver header pulled in here defines a
// `_res` macro that collides with Eigen parameter names.
#include <httplib.h>

namespace sst {

/// Least-recently-used map with a fixed capacity; all access is serialized.
template <class K, class V>
class LruCache {
 public:
  explicit LruCache(std::size_t capacity) : capacity_(std::max<std::size_t>(capacity, 1)) {}

  std::optional<V> get(const K& key) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it == index_.end()) return std::nullopt;
    order_.splice(order_.begin(), order_, it->second);
    return it->second->second;
  }

  void put(const K& key, V value) {
    std::lock_guard lock(mutex_);
    auto it = index_.find(key);
    if (it != index_.end()) {
      it->second->second = std::move(value);
      order_.splice(order_.begin(), order_, it->second);
      return;
    }
    order_.emplace_front(key, std::move(value));
    index_[key] = order_.begin();
    if (order_.size() > capacity_) {
      index_.erase(order_.back().first);
      order_.pop_back();
    }
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return order_.size();
  }
  std::size_t capacity() const { return capacity_; }

 private:
  std::size_t capacity_;
  mutable std::mutex mutex_;
  std::list<std::pair<K, V>> order_;
  std::unordered_map<K, typename std::list<std::pair<K, V>>::iterator> index_;
};

struct ServiceConfig {
  std::vector<std::size_t> resolutions{16, 32, 64};
  std::size_t default_resolution = 64;
  std::size_t mesh_cache = 64;
  std::size_t shape_cache = 4096;
  std::size_t workers = worker_count();  // concurrent decodes
  double max_value = 6.0;                // hard cap on |coefficient|
  double sampling_range = 3.0;           // |value| beyond this is extrapolation
};

struct ServiceResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
};

/// Frozen models plus their content hashes.
struct ServedModel {
  ShapeVae<float> vae;
  LatentGan<float> gan;
  std::string vae_hash, gan_hash;
};

class TraverseService {
 public:
  explicit TraverseService(ServiceConfig cfg = {})
      : cfg_(std::move(cfg)), meshes_(cfg_.mesh_cache), shapes_(cfg_.shape_cache), slots_(std::ptrdiff_t(std::max<std::size_t>(cfg_.workers, 1))) {
    if (std::find(cfg_.resolutions.begin(), cfg_.resolutions.end(), cfg_.default_resolution) == cfg_.resolutions.end()) {
      throw ConfigError("service: default resolution is not among the supported resolutions");
    }
  }

  /// Installs a model snapshot; rejects a GAN trained against another VAE.
  void load(ShapeVae<float> vae, LatentGan<float> gan) {
    auto m = std::make_shared<ServedModel>(ServedModel{std::move(vae), std::move(gan), "", ""});
    m->vae_hash = vae_hash(m->vae);
    m->gan_hash = content_hash(m->gan.to_container().serialize());
    check_compatible(m->vae, m->gan, m->vae_hash);
    std::lock_guard lock(model_mutex_);
    model_ = std::move(m);
  }

  void load_files(const std::string& vae_path, const std::string& gan_path) {
    auto vae = ShapeVae<float>::from_container(Container::load(vae_path));
    auto gan = LatentGan<float>::from_container(Container::load(gan_path));
    load(std::move(vae), std::move(gan));
  }

  bool loaded() const { return snapshot() != nullptr; }
  const ServiceConfig& config() const { return cfg_; }
  std::size_t cached_meshes() const { return meshes_.size(); }

  ServiceResponse model_info() const {
    auto m = snapshot();
    if (!m) return error(503, "model not loaded");
    const auto& gc = m->gan.generator.config();
    json dims = json::array();
    for (std::size_t d = 0; d < m->gan.generator.total_dims(); ++d) {
      const auto [s, local] = split_dimension(d, gc.n);
      dims.push_back({{"dim", d}, {"subspace", s}, {"local", local}});
    }
    json card{{"subspaces", m->gan.generator.subspaces()},
              {"n", gc.n},
              {"dims", dims},
              {"total_dims", dims.size()},
              {"layout", m->gan.generator.layout().describe()},
              {"grid", {{"c", gc.c}, {"g", gc.g}}},
              {"z_dim", gc.z_dim},
              {"resolutions", cfg_.resolutions},
              {"default_resolution", cfg_.default_resolution},
              {"max_value", cfg_.max_value},
              {"sampling_range", cfg_.sampling_range},
              {"checkpoints", {{"vae", m->vae_hash}, {"gan", m->gan_hash}}}};
    return {200, "application/json", card.dump()};
  }

  ServiceResponse sample(const std::string& body) const {
    auto m = snapshot();
    if (!m) return error(503, "model not loaded");
    try {
      const json req = parse_body(body);
      check_keys(req, {"seed", "resolution"});
      if (!req.contains("seed") || !req["seed"].is_number_unsigned()) {
        return error(400, "seed must be a non-negative integer");
      }
      const auto res = resolution(req);
      if (!res) return error(400, "resolution must be one of " + json(cfg_.resolutions).dump());
      const auto s = latent_sample(m->gan.generator, req["seed"].get<std::uint64_t>());
      return shape_response(*m, s, *res, json::object());
    } catch (const BadRequest& e) {
      return error(400, e.what());
    }
  }

  ServiceResponse traverse(const std::string& body) const {
    auto m = snapshot();
    if (!m) return error(503, "model not loaded");
    try {
      const json req = parse_body(body);
      check_keys(req, {"shape_id", "z", "C", "dim", "value", "resolution"});
      const auto& gen = m->gan.generator;
      LatentSample base;
      std::size_t res = cfg_.default_resolution;
      if (req.contains("shape_id")) {
        if (!req["shape_id"].is_string()) return error(400, "shape_id must be a string");
        auto known = shapes_.get(req["shape_id"].get<std::string>());
        if (!known) return error(404, "unknown shape id " + req["shape_id"].get<std::string>());
        base = known->sample;
        res = known->resolution;
      } else if (req.contains("z") && req.contains("C")) {
        base = sample_from_json(gen, req["z"], req["C"]);
      } else {
        return error(400, "body needs shape_id or both z and C");
      }
      if (req.contains("resolution")) {
        const auto r = resolution(req);
        if (!r) return error(400, "resolution must be one of " + json(cfg_.resolutions).dump());
        res = *r;
      }
      if (!req.contains("dim") || !req["dim"].is_number_integer()) return error(400, "dim must be an integer");
      const auto dim = req["dim"].get<long long>();
      if (dim < 0 || std::size_t(dim) >= gen.total_dims()) {
        return error(400, "dim " + std::to_string(dim) + " outside [0, " + std::to_string(gen.total_dims()) + ")");
      }
      if (!req.contains("value") || !req["value"].is_number()) return error(400, "value must be a number");
      const double value = req["value"].get<double>();
      if (!std::isfinite(value) || std::abs(value) > cfg_.max_value) {
        return error(400, "value must satisfy |value| <= " + json(cfg_.max_value).dump());
      }
      LatentSample next = base;
      next.coords = traverse_coordinates(base.coords, std::size_t(dim), value);
      json extra{{"dim", dim}, {"value", value}, {"extrapolation", std::abs(value) > cfg_.sampling_range}};
      return shape_response(*m, next, res, extra);
    } catch (const BadRequest& e) {
      return error(400, e.what());
    }
  }

  ServiceResponse mesh(const std::string& id, const std::string& format) const {
    auto m = snapshot();
    if (!m) return error(503, "model not loaded");
    if (format != "obj" && format != "glb") return error(400, "format must be obj or glb");
    auto cached = meshes_.get(id);
    if (!cached) {
      auto known = shapes_.get(id);
      if (!known) return error(404, "unknown shape id " + id);
      cached = decode(*m, known->sample, known->resolution);
      meshes_.put(id, *cached);
    }
    if (format == "obj") return {200, "model/obj", to_obj(**cached)};
    const auto bytes = to_glb(**cached);
    return {200, "model/gltf-binary", std::string(bytes.begin(), bytes.end())};
  }

  /// Registers the routes on an httplib server.
  void mount(httplib::Server& server) const {
    auto send = [](httplib::Response& res, const ServiceResponse& r) {
      res.status = r.status;
      res.set_content(r.body, r.content_type);
    };
    server.Get("/model/info", [this, send](const httplib::Request&, httplib::Response& res) { send(res, model_info()); });
    server.Post("/sample",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, sample(req.body)); });
    server.Post("/traverse",
                [this, send](const httplib::Request& req, httplib::Response& res) { send(res, traverse(req.body)); });
    server.Get(R"(/mesh/([0-9a-f]+))", [this, send](const httplib::Request& req, httplib::Response& res) {
      const std::string format = req.has_param("format") ? req.get_param_value("format") : "obj";
      send(res, mesh(req.matches[1], format));
    });
    server.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      std::string what = "internal error";
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        what = e.what();
      } catch (...) {
      }
      res.status = 500;
      res.set_content(json{{"error", what}}.dump(), "application/json");
    });
  }

 private:
  struct BadRequest : std::runtime_error {
    using std::runtime_error::runtime_error;
  };

  struct KnownShape {
    LatentSample sample;
    std::size_t resolution = 0;
  };

  ServiceConfig cfg_;
  mutable std::mutex model_mutex_;
  std::shared_ptr<const ServedModel> model_;
  mutable LruCache<std::string, std::shared_ptr<const Mesh>> meshes_;
  mutable LruCache<std::string, KnownShape> shapes_;
  mutable std::counting_semaphore<1024> slots_;

  std::shared_ptr<const ServedModel> snapshot() const {
    std::lock_guard lock(model_mutex_);
    return model_;
  }

  static ServiceResponse error(int status, const std::string& message) {
    return {status, "application/json", json{{"error", message}}.dump()};
  }

  static json parse_body(const std::string& body) {
    json j = json::parse(body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw BadRequest("request body must be a JSON object");
    return j;
  }

  static void check_keys(const json& j, std::initializer_list<const char*> allowed) {
    for (const auto& [key, value] : j.items()) {
      bool ok = false;
      for (const char* a : allowed) ok = ok || key == a;
      if (!ok) throw BadRequest("unknown field '" + key + "'");
    }
  }

  std::optional<std::size_t> resolution(const json& req) const {
    if (!req.contains("resolution")) return cfg_.default_resolution;
    if (!req["resolution"].is_number_unsigned()) return std::nullopt;
    const auto r = req["resolution"].get<std::size_t>();
    if (std::find(cfg_.resolutions.begin(), cfg_.resolutions.end(), r) == cfg_.resolutions.end()) return std::nullopt;
    return r;
  }

  static LatentSample sample_from_json(const Generator<float>& gen, const json& z, const json& c) {
    LatentSample s;
    try {
      s.z = z.get<std::vector<double>>();
      s.coords = Coordinates{gen.config().n, c.get<std::vector<double>>()};
    } catch (const json::exception&) {
      throw BadRequest("z and C must be arrays of numbers");
    }
    if (s.z.size() != gen.config().z_dim) {
      throw BadRequest("z needs " + std::to_string(gen.config().z_dim) + " entries");
    }
    if (s.coords.values.size() != gen.total_dims()) {
      throw BadRequest("C needs " + std::to_string(gen.total_dims()) + " entries");
    }
    for (double v : s.z)
      if (!std::isfinite(v)) throw BadRequest("z must be finite");
    for (double v : s.coords.values)
      if (!std::isfinite(v)) throw BadRequest("C must be finite");
    return s;
  }

  static std::string shape_id(const ServedModel& m, const LatentSample& s, std::size_t res) {
    const json key{{"vae", m.vae_hash}, {"gan", m.gan_hash}, {"z", s.z}, {"C", s.coords.values}, {"resolution", res}};
    return content_hash(key.dump());
  }

  std::shared_ptr<const Mesh> decode(const ServedModel& m, const LatentSample& s, std::size_t res) const {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<1024>& s;
      ~Release() { s.release(); }
    } release{slots_};
    return std::make_shared<const Mesh>(field_mesh(generate_field(m.vae, m.gan.generator, s, res)));
  }

  ServiceResponse shape_response(const ServedModel& m, const LatentSample& s, std::size_t res, json extra) const {
    const auto id = shape_id(m, s, res);
    shapes_.put(id, KnownShape{s, res});
    if (!meshes_.get(id)) meshes_.put(id, decode(m, s, res));
    extra["shape_id"] = id;
    extra["mesh_url"] = "/mesh/" + id + "?format=obj";
    extra["z"] = s.z;
    extra["C"] = s.coords.values;
    extra["n"] = s.coords.per_subspace;
    extra["resolution"] = res;
    return {200, "application/json", extra.dump()};
  }
};

}  // namespace sst
