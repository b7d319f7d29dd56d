#pragma once

// Pipeline commands behind the `sst` tool. Each command takes a JSON config
// (defaults overlaid by the caller's values; unknown keys are rejected),
// writes its artifacts into a run directory and records a manifest with the
// resolved config, input hashes and artifact hashes. `rerun` replays a
// manifest and compares the artifacts byte for byte.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "sst/evaluation.hpp"
#include "sst/geometry/mesh_io.hpp"
#include "sst/hash.hpp"
#include "sst/pipeline.hpp"

namespace sst::cli {

namespace fs = std::filesystem;

inline constexpr const char* kToolVersion = "sst 0.1.0";

/// Artifacts of a replayed run differ from the recorded ones.
class ReproducibilityError : public Error {
 public:
  using Error::Error;
  const char* category() const noexcept override { return "mismatch"; }
};

/// Copies every key of `patch` into `base`. Keys must already exist in
/// `base`; nested objects are merged key by key.
inline void overlay(json& base, const json& patch, const std::string& where = "") {
  if (!patch.is_object()) throw ConfigError("config" + where + " must be a JSON object");
  for (const auto& [key, value] : patch.items()) {
    const std::string path = where + "." + key;
    if (!base.contains(key)) throw ConfigError("unknown config key '" + path.substr(1) + "'");
    auto& slot = base[key];
    if (slot.is_object()) {
      overlay(slot, value, path);
    } else {
      const bool numeric = slot.is_number() && value.is_number();
      if (!numeric && slot.type() != value.type() && !slot.is_null()) {
        throw ConfigError("config key '" + path.substr(1) + "' expects " + std::string(slot.type_name()) + ", got " +
                          value.type_name());
      }
      // Numbers keep the default's representation so equal configs hash equally.
      if (slot.is_number_unsigned()) {
        if (!value.is_number_unsigned() && !(value.is_number_integer() && value.get<std::int64_t>() >= 0)) {
          throw ConfigError("config key '" + path.substr(1) + "' expects a non-negative integer");
        }
        slot = value.get<std::uint64_t>();
      } else if (slot.is_number_integer()) {
        if (!value.is_number_integer()) throw ConfigError("config key '" + path.substr(1) + "' expects an integer");
        slot = value.get<std::int64_t>();
      } else if (slot.is_number_float()) {
        slot = value.get<double>();
      } else {
        slot = value;
      }
    }
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  json j = json::parse(is, nullptr, false);
  if (j.is_discarded()) throw ParseError(path + ": not valid JSON");
  return j;
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write '" + path.string() + "'");
  os << text;
}

/// State shared by a command while it runs.
struct RunContext {
  fs::path dir;
  json inputs = json::object();
  json metrics = json::object();
  std::ostream* log = &std::cout;

  /// Records an input file by content hash; throws IoError when missing.
  std::string input(const std::string& name, const std::string& path) {
    if (path.empty()) throw ConfigError("missing required input '" + name + "'");
    if (!fs::exists(path)) throw IoError("input '" + name + "' not found at '" + path + "'");
    inputs[name] = {{"path", path}, {"hash", file_hash(path)}};
    return path;
  }

  fs::path artifact(const std::string& name) const { return dir / name; }
};

using CommandFn = std::function<void(const json& cfg, RunContext& ctx)>;

struct Command {
  std::string name;
  std::string help;
  json defaults;
  std::vector<std::string> path_keys;  // resolved to absolute paths before running
  CommandFn run;
};

// ------------------------------------------------------------------ helpers

inline std::vector<std::string> split_names() { return {"train", "test", "val"}; }

inline Shard load_split(RunContext& ctx, const std::string& data, const std::string& split) {
  const auto names = split_names();
  if (std::find(names.begin(), names.end(), split) == names.end()) {
    throw ConfigError("split must be train, test or val, got '" + split + "'");
  }
  const auto path = (fs::path(data) / (split + ".sst")).string();
  ctx.input("data/" + split, path);
  return load_shard(path);
}

inline ShapeVae<float> load_vae(RunContext& ctx, const std::string& path) {
  ctx.input("vae", path);
  return ShapeVae<float>::from_container(Container::load(path));
}

inline LatentGan<float> load_gan(RunContext& ctx, const std::string& path, const ShapeVae<float>& vae) {
  ctx.input("gan", path);
  auto gan = LatentGan<float>::from_container(Container::load(path));
  check_compatible(vae, gan, vae_hash(vae));
  return gan;
}

inline std::string mesh_extension(const std::string& format) {
  if (format != "obj" && format != "ply" && format != "glb") {
    throw ConfigError("format must be obj, ply or glb, got '" + format + "'");
  }
  return "." + format;
}

inline std::size_t checked_resolution(std::size_t res) {
  if (res < 2 || res > 256) throw ConfigError("resolution must lie in [2, 256]");
  return res;
}

/// "lo:hi" with lo <= hi.
inline std::pair<double, double> parse_range(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos) throw ConfigError("range must look like lo:hi, got '" + text + "'");
  try {
    std::size_t used = 0;
    const double lo = std::stod(text.substr(0, colon), &used);
    if (used != colon) throw std::invalid_argument("lo");
    const std::string rest = text.substr(colon + 1);
    const double hi = std::stod(rest, &used);
    if (used != rest.size()) throw std::invalid_argument("hi");
    if (!(lo <= hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("order");
    return {lo, hi};
  } catch (const std::exception&) {
    throw ConfigError("range must look like lo:hi with finite lo <= hi, got '" + text + "'");
  }
}

inline std::vector<double> sweep_values(double lo, double hi, std::size_t steps) {
  if (steps == 0) throw ConfigError("steps must be at least 1");
  std::vector<double> v(steps);
  for (std::size_t i = 0; i < steps; ++i) v[i] = steps == 1 ? lo : lo + (hi - lo) * double(i) / double(steps - 1);
  return v;
}

/// File stem for a traversal mesh: dim03_coef+1.500, with an _extrapolated
/// suffix outside the sampling range.
inline std::string traversal_name(std::size_t dim, double value, double sampling_range = 3.0) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "dim%02zu_coef%+.3f", dim, value);
  std::string name = buf;
  if (std::abs(value) > sampling_range) name += "_extrapolated";
  return name;
}

inline std::vector<fs::path> mesh_files(const std::string& dir) {
  if (!fs::is_directory(dir)) throw IoError("'" + dir + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& e : fs::directory_iterator(dir)) {
    const auto ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".obj" || ext == ".ply" || ext == ".glb")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw ValueError("no .obj/.ply/.glb meshes in '" + dir + "'");
  return out;
}

// ----------------------------------------------------------------- commands

inline void cmd_dataset(const json& cfg, RunContext& ctx) {
  DatasetConfig dc;
  dc.category = cfg.at("category");
  dc.count = cfg.at("count");
  dc.r = cfg.at("r");
  dc.n_uniform = cfg.at("n_uniform");
  dc.n_surface = cfg.at("n_surface");
  dc.jitter = cfg.at("jitter");
  dc.seed = cfg.at("seed");
  dc.train_fraction = cfg.at("train_fraction");
  dc.test_fraction = cfg.at("test_fraction");
  const auto splits = build_dataset(dc);
  write_shards(splits, dc, ctx.dir.string());
  for (const auto& s : splits) {
    ctx.metrics[s.name] = s.shapes.size();
    *ctx.log << s.name << ": " << s.shapes.size() << " shapes\n";
  }
}

inline void cmd_train_vae(const json& cfg, RunContext& ctx) {
  const auto model_cfg = VaeConfig::from_json(cfg.at("model"));
  const auto train_cfg = VaeTrainConfig::from_json(cfg.at("training"));
  const Shard shard = load_split(ctx, cfg.at("data"), cfg.at("split"));
  if (shard.size() == 0) throw ValueError("training split is empty");
  if (shard.voxels.front().r != model_cfg.r) {
    throw ConfigError("dataset voxels are " + std::to_string(shard.voxels.front().r) + "^3 but the model expects r=" +
                      std::to_string(model_cfg.r));
  }
  Rng init(cfg.at("init_seed").get<std::uint64_t>());
  ShapeVae<float> vae(model_cfg, init);
  json curve = json::array();
  const auto result = train_vae(vae, std::vector<Shard>{shard}, train_cfg, [&](const EpochLog& e) {
    curve.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"bce", e.bce}, {"kl", e.kl}});
    char buf[160];
    std::snprintf(buf, sizeof buf, "epoch %zu loss %.5f bce %.5f kl %.2f (%.1fs)\n", e.epoch, e.loss, e.bce, e.kl,
                  e.seconds);
    *ctx.log << buf << std::flush;
  });
  vae.to_container().save(ctx.artifact("vae.sst").string());
  write_text(ctx.artifact("curve.json"), curve.dump(1) + "\n");
  ctx.metrics["epochs"] = result.epochs.size();
  if (!result.epochs.empty()) ctx.metrics["final_loss"] = result.epochs.back().loss;
  ctx.metrics["vae_hash"] = vae_hash(vae);
  if (result.diverged) throw NumericError(result.message + "; weights from the last completed epoch were saved");
}

inline void cmd_train_gan(const json& cfg, RunContext& ctx) {
  const auto vae = load_vae(ctx, cfg.at("vae"));
  auto gc = GeneratorConfig::from_json(cfg.at("model").at("generator"));
  auto dc = DiscriminatorConfig::from_json(cfg.at("model").at("discriminator"));
  if (gc.c != vae.config().c || gc.g != vae.config().g || dc.c != vae.config().c) {
    throw ConfigError("gan model must use the vae's c=" + std::to_string(vae.config().c) +
                      " and g=" + std::to_string(vae.config().g));
  }
  const auto train_cfg = GanTrainConfig::from_json(cfg.at("training"));
  const Shard shard = load_split(ctx, cfg.at("data"), cfg.at("split"));
  const auto codes = encode_shards(vae, std::vector<Shard>{shard});
  Rng init(cfg.at("init_seed").get<std::uint64_t>());
  LatentGan<float> gan(gc, dc, init);
  gan.vae_hash = vae_hash(vae);
  const std::size_t every = std::max<std::size_t>(1, cfg.at("log_every").get<std::size_t>());
  json curve = json::array();
  const auto result = train_gan(gan, codes, train_cfg, [&](const GanStepLog& s) {
    curve.push_back({{"step", s.step}, {"d_loss", s.d_loss}, {"r1", s.r1}, {"g_loss", s.g_loss},
                     {"regularizer", s.regularizer}});
    if (s.step % every == 0 || s.step == train_cfg.steps) {
      char buf[200];
      std::snprintf(buf, sizeof buf, "step %zu d_loss %.4f r1 %.4f g_loss %.4f reg %.2e (%.3fs)\n", s.step, s.d_loss,
                    s.r1, s.g_loss, s.regularizer, s.seconds);
      *ctx.log << buf << std::flush;
    }
  });
  gan.to_container().save(ctx.artifact("gan.sst").string());
  write_text(ctx.artifact("curve.json"), curve.dump(1) + "\n");
  json ortho = json::array();
  for (const auto& e : gan.generator.layout().entries) ortho.push_back(orthonormality_error(e.model));
  ctx.metrics["steps"] = result.steps.size();
  ctx.metrics["orthonormality_error"] = ortho;
  if (result.diverged) throw NumericError(result.message);
}

inline void cmd_sample(const json& cfg, RunContext& ctx) {
  const auto vae = load_vae(ctx, cfg.at("vae"));
  const auto gan = load_gan(ctx, cfg.at("gan"), vae);
  const std::size_t count = cfg.at("count"), res = checked_resolution(cfg.at("resolution"));
  const std::uint64_t seed = cfg.at("seed");
  const auto ext = mesh_extension(cfg.at("format"));
  json listing = json::array();
  for (std::size_t i = 0; i < count; ++i) {
    const auto s = latent_sample(gan.generator, seed + i);
    char name[32];
    std::snprintf(name, sizeof name, "sample_%03zu", i);
    const Mesh mesh = field_mesh(generate_field(vae, gan.generator, s, res));
    save_mesh(ctx.artifact(name + ext).string(), mesh);
    listing.push_back({{"file", name + ext}, {"seed", seed + i}, {"z", s.z}, {"C", s.coords.values},
                       {"triangles", mesh.triangles.size()}});
    *ctx.log << name << ext << ": " << mesh.triangles.size() << " triangles\n";
  }
  write_text(ctx.artifact("samples.json"), listing.dump(1) + "\n");
  ctx.metrics["count"] = count;
}

inline void cmd_traverse(const json& cfg, RunContext& ctx) {
  const auto vae = load_vae(ctx, cfg.at("vae"));
  const auto gan = load_gan(ctx, cfg.at("gan"), vae);
  const std::size_t dim = cfg.at("dim"), res = checked_resolution(cfg.at("resolution"));
  if (dim >= gan.generator.total_dims()) {
    throw ConfigError("dim " + std::to_string(dim) + " outside [0, " + std::to_string(gan.generator.total_dims()) + ")");
  }
  const auto [lo, hi] = parse_range(cfg.at("range"));
  const auto values = sweep_values(lo, hi, cfg.at("steps"));
  const auto ext = mesh_extension(cfg.at("format"));
  const auto base = latent_sample(gan.generator, cfg.at("seed").get<std::uint64_t>());
  const auto grids = traverse_generate(gan.generator, z_tensor<float>(base), base.coords, dim, values);
  json listing = json::array();
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::string name = traversal_name(dim, values[i]) + ext;
    const Mesh mesh = field_mesh(vae.decode_grid(grids[i], res));
    save_mesh(ctx.artifact(name).string(), mesh);
    listing.push_back({{"file", name}, {"value", values[i]}, {"extrapolated", std::abs(values[i]) > 3.0},
                       {"triangles", mesh.triangles.size()}});
    *ctx.log << name << ": " << mesh.triangles.size() << " triangles\n";
  }
  const auto [subspace, local] = split_dimension(dim, gan.generator.config().n);
  write_text(ctx.artifact("traverse.json"),
             json{{"dim", dim}, {"subspace", subspace}, {"local", local}, {"z", base.z}, {"C", base.coords.values},
                  {"meshes", listing}}
                     .dump(1) +
                 "\n");
  ctx.metrics["meshes"] = values.size();
}

inline void cmd_superres(const json& cfg, RunContext& ctx) {
  const auto vae = load_vae(ctx, cfg.at("vae"));
  const std::size_t res = checked_resolution(cfg.at("resolution"));
  const std::string shape = cfg.at("shape");
  Solid solid;
  if (shape == "sphere") {
    const double radius = cfg.at("radius");
    if (!(radius > 0 && radius <= 0.5)) throw ConfigError("radius must lie in (0, 0.5]");
    solid.parts.push_back(Primitive::sphere({0.5, 0.5, 0.5}, radius, "sphere"));
  } else if (shape == "shard") {
    const std::string path = cfg.at("shard");
    ctx.input("shard", path);
    const Shard sh = load_shard(path);
    const std::size_t index = cfg.at("index");
    if (index >= sh.size()) throw ConfigError("index " + std::to_string(index) + " outside the shard");
    solid = make_solid(sh.specs[index]);
  } else {
    throw ConfigError("shape must be sphere or shard, got '" + shape + "'");
  }
  const VoxelGrid input = voxelize(solid, vae.config().r);
  const auto field = reconstruct(vae, input, res);
  const auto score = score_reconstruction(field, solid, cfg.at("surface_points"), cfg.at("seed"));
  const double baseline = iou(nearest_upsample(input, res), lattice_occupancy(solid, res));
  save_mesh(ctx.artifact("superres" + mesh_extension(cfg.at("format"))).string(), field_mesh(field));
  ctx.metrics = {{"input_resolution", vae.config().r},
                 {"output_resolution", res},
                 {"iou", score.iou},
                 {"chamfer_l2", score.chamfer},
                 {"normal_consistency", score.normal_consistency},
                 {"baseline_nearest_iou", baseline}};
  char buf[200];
  std::snprintf(buf, sizeof buf, "%zu^3 -> %zu^3: IoU %.4f Chamfer-L2 %.3e NC %.4f (nearest-voxel IoU %.4f)\n",
                vae.config().r, res, score.iou, score.chamfer, score.normal_consistency, baseline);
  *ctx.log << buf;
}

inline void cmd_eval(const json& cfg, RunContext& ctx) {
  const std::string mode = cfg.at("mode");
  if (mode == "reconstruction") {
    const auto vae = load_vae(ctx, cfg.at("vae"));
    const Shard shard = load_split(ctx, cfg.at("data"), cfg.at("split"));
    ReconstructionConfig rc;
    rc.res = checked_resolution(cfg.at("resolution"));
    rc.surface_points = cfg.at("points");
    rc.limit = cfg.at("limit");
    rc.seed = cfg.at("seed");
    const auto report = evaluate_reconstruction(vae, shard, rc);
    write_text(ctx.artifact("eval.json"), report.to_json().dump(1) + "\n");
    ctx.metrics = {{"mean_iou", report.mean_iou},
                   {"mean_chamfer_l2", report.mean_chamfer},
                   {"mean_normal_consistency", report.mean_normal_consistency},
                   {"count", report.shapes.size()}};
    char buf[200];
    std::snprintf(buf, sizeof buf, "%zu shapes: IoU %.4f Chamfer-L2 %.3e NC %.4f\n", report.shapes.size(),
                  report.mean_iou, report.mean_chamfer, report.mean_normal_consistency);
    *ctx.log << buf;
  } else if (mode == "generation") {
    const std::size_t points = cfg.at("points");
    const std::uint64_t seed = cfg.at("seed");
    auto load_set = [&](const std::string& key) {
      const std::string dir = cfg.at(key);
      if (dir.empty()) throw ConfigError("generation mode needs --" + key);
      std::vector<ShapeSample> set;
      for (const auto& p : mesh_files(dir)) {
        ctx.input(key + "/" + p.filename().string(), p.string());
        set.push_back(make_shape_sample(load_mesh(p.string()), points, seed + set.size()));
      }
      return set;
    };
    const auto gen = load_set("gen");
    const auto ref = load_set("ref");
    const auto report = evaluate_generation(gen, ref);
    write_text(ctx.artifact("eval.json"), report.to_json().dump(1) + "\n");
    ctx.metrics = report.to_json();
    *ctx.log << report.table();
  } else {
    throw ConfigError("mode must be reconstruction or generation, got '" + mode + "'");
  }
}

inline void cmd_export(const json& cfg, RunContext& ctx) {
  const auto ext = mesh_extension(cfg.at("format"));
  const std::string in = cfg.at("in"), shard = cfg.at("shard");
  if (in.empty() == shard.empty()) throw ConfigError("export needs exactly one of --in or --shard");
  Mesh mesh;
  if (!in.empty()) {
    ctx.input("mesh", in);
    mesh = load_mesh(in);
  } else {
    ctx.input("shard", shard);
    const Shard sh = load_shard(shard);
    const std::size_t index = cfg.at("index");
    if (index >= sh.size()) throw ConfigError("index " + std::to_string(index) + " outside the shard");
    const Solid solid = make_solid(sh.specs[index]);
    const std::size_t res = checked_resolution(cfg.at("resolution"));
    mesh = field_mesh(field_from_function(res, [&](const Vec3& p) { return solid.inside(p) ? 1.0 : 0.0; }));
  }
  save_mesh(ctx.artifact("mesh" + ext).string(), mesh);
  ctx.metrics = {{"vertices", mesh.vertices.size()}, {"triangles", mesh.triangles.size()}};
  *ctx.log << "mesh" << ext << ": " << mesh.vertices.size() << " vertices, " << mesh.triangles.size()
           << " triangles\n";
}

// ----------------------------------------------------------------- registry

inline const std::vector<Command>& commands() {
  static const std::vector<Command> table = [] {
    DatasetConfig d;
    std::vector<Command> t;
    t.push_back({"dataset",
                 "Build synthetic train/test/val shards",
                 {{"category", d.category},
                  {"count", d.count},
                  {"r", d.r},
                  {"n_uniform", d.n_uniform},
                  {"n_surface", d.n_surface},
                  {"jitter", d.jitter},
                  {"seed", d.seed},
                  {"train_fraction", d.train_fraction},
                  {"test_fraction", d.test_fraction}},
                 {},
                 cmd_dataset});
    t.push_back({"train-vae",
                 "Train the voxel-to-occupancy VAE",
                 {{"data", ""},
                  {"split", "train"},
                  {"init_seed", 0u},
                  {"model", VaeConfig{}.to_json()},
                  {"training", VaeTrainConfig{}.to_json()}},
                 {"data"},
                 cmd_train_vae});
    t.push_back({"train-gan",
                 "Train the latent GAN on a frozen VAE's code grids",
                 {{"vae", ""},
                  {"data", ""},
                  {"split", "train"},
                  {"init_seed", 0u},
                  {"log_every", 50u},
                  {"model", {{"generator", GeneratorConfig{}.to_json()}, {"discriminator", DiscriminatorConfig{}.to_json()}}},
                  {"training", GanTrainConfig{}.to_json()}},
                 {"vae", "data"},
                 cmd_train_gan});
    t.push_back({"sample",
                 "Generate meshes from seeds",
                 {{"vae", ""}, {"gan", ""}, {"count", 8u}, {"seed", 0u}, {"resolution", 64u}, {"format", "obj"}},
                 {"vae", "gan"},
                 cmd_sample});
    t.push_back({"traverse",
                 "Sweep one subspace coordinate and export one mesh per value",
                 {{"vae", ""},
                  {"gan", ""},
                  {"seed", 0u},
                  {"dim", 0u},
                  {"steps", 5u},
                  {"range", "-3:3"},
                  {"resolution", 64u},
                  {"format", "obj"}},
                 {"vae", "gan"},
                 cmd_traverse});
    t.push_back({"superres",
                 "Encode a coarse voxelization and decode it on a finer lattice",
                 {{"vae", ""},
                  {"shape", "sphere"},
                  {"radius", 0.35},
                  {"shard", ""},
                  {"index", 0u},
                  {"resolution", 64u},
                  {"surface_points", 2048u},
                  {"seed", 0u},
                  {"format", "obj"}},
                 {"vae", "shard"},
                 cmd_superres});
    t.push_back({"eval",
                 "Reconstruction metrics of a VAE, or COV/MMD/ECD between two mesh sets",
                 {{"mode", "reconstruction"},
                  {"vae", ""},
                  {"data", ""},
                  {"split", "test"},
                  {"limit", 0u},
                  {"resolution", 64u},
                  {"points", 2048u},
                  {"seed", 0u},
                  {"gen", ""},
                  {"ref", ""}},
                 {"vae", "data", "gen", "ref"},
                 cmd_eval});
    t.push_back({"export",
                 "Convert a mesh, or mesh a dataset shape, into obj/ply/glb",
                 {{"in", ""}, {"shard", ""}, {"index", 0u}, {"resolution", 64u}, {"format", "obj"}},
                 {"in", "shard"},
                 cmd_export});
    return t;
  }();
  return table;
}

inline const Command& find_command(const std::string& name) {
  for (const auto& c : commands())
    if (c.name == name) return c;
  throw ConfigError("unknown command '" + name + "'");
}

/// Defaults overlaid with `overrides`, path keys made absolute.
inline json resolve_config(const Command& cmd, const json& overrides) {
  json cfg = cmd.defaults;
  overlay(cfg, overrides);
  for (const auto& key : cmd.path_keys) {
    const std::string p = cfg.at(key);
    if (!p.empty()) cfg[key] = fs::absolute(p).lexically_normal().string();
  }
  return cfg;
}

/// One command-line flag per leaf of a defaults object.
struct Flag {
  std::string name;                // without leading dashes
  std::vector<std::string> path;   // keys from the root to the leaf
  json::value_t type;
};

/// Leaf key names become flags (underscores as hyphens). A leaf whose name
/// repeats elsewhere in the tree is prefixed with its parent key; a name that
/// still repeats uses the whole path.
inline std::vector<Flag> config_flags(const json& defaults) {
  std::vector<Flag> flags;
  std::function<void(const json&, std::vector<std::string>&)> walk = [&](const json& node, std::vector<std::string>& path) {
    for (const auto& [key, value] : node.items()) {
      path.push_back(key);
      if (value.is_object()) walk(value, path);
      else flags.push_back({key, path, value.type()});
      path.pop_back();
    }
  };
  std::vector<std::string> root;
  walk(defaults, root);
  auto join = [](const std::vector<std::string>& parts, std::size_t from) {
    std::string s;
    for (std::size_t i = from; i < parts.size(); ++i) s += (s.empty() ? "" : "-") + parts[i];
    return s;
  };
  auto count = [&](auto pick) {
    std::map<std::string, std::size_t> n;
    for (const auto& f : flags) ++n[pick(f)];
    return n;
  };
  const auto leaf = count([](const Flag& f) { return f.name; });
  for (auto& f : flags)
    if (leaf.at(f.name) > 1 && f.path.size() > 1) f.name = join(f.path, f.path.size() - 2);
  const auto second = count([](const Flag& f) { return f.name; });
  for (auto& f : flags)
    if (second.at(f.name) > 1) f.name = join(f.path, 0);
  for (auto& f : flags) std::replace(f.name.begin(), f.name.end(), '_', '-');
  return flags;
}

/// Converts flag text to the JSON type of the default it overrides. Arrays
/// take JSON ("[64,32]") or a comma list ("64,32").
inline json parse_flag_value(const Flag& flag, const std::string& text) {
  const std::string where = "--" + flag.name;
  if (flag.type == json::value_t::string) return text;
  if (flag.type == json::value_t::boolean) {
    if (text == "true" || text == "1") return true;
    if (text == "false" || text == "0") return false;
    throw ConfigError(where + " expects true or false, got '" + text + "'");
  }
  const std::string source = flag.type == json::value_t::array && (text.empty() || text.front() != '[') ? "[" + text + "]" : text;
  json v = json::parse(source, nullptr, false);
  const bool ok = flag.type == json::value_t::array ? v.is_array()
                  : flag.type == json::value_t::number_unsigned ? v.is_number_unsigned()
                  : flag.type == json::value_t::number_integer ? v.is_number_integer()
                                                               : v.is_number();
  if (v.is_discarded() || !ok) {
    const char* expect = flag.type == json::value_t::array              ? "a list"
                         : flag.type == json::value_t::number_unsigned ? "a non-negative integer"
                         : flag.type == json::value_t::number_integer  ? "an integer"
                                                                        : "a number";
    throw ConfigError(where + " expects " + std::string(expect) + ", got '" + text + "'");
  }
  return v;
}

/// Writes `value` at the flag's path inside `overrides`.
inline void set_flag(json& overrides, const Flag& flag, const json& value) {
  json* node = &overrides;
  for (std::size_t i = 0; i + 1 < flag.path.size(); ++i) node = &(*node)[flag.path[i]];
  (*node)[flag.path.back()] = value;
}

/// Default run directory:$SST_RUN_ROOT (or ./runs) / <command>-<config hash prefix>.
inline fs::path default_run_dir(const std::string& command, const json& cfg) {
  const char* root = std::getenv("SST_RUN_ROOT");
  const fs::path base = root && *root ? fs::path(root) : fs::path("runs");
  return base / (command + "-" + content_hash(cfg.dump()).substr(0, 12));
}

/// Content hash of every file under `dir` except the manifest, keyed by
/// relative path.
inline json hash_artifacts(const fs::path& dir) {
  std::map<std::string, std::string> hashes;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const auto rel = fs::relative(e.path(), dir).generic_string();
    if (rel == "manifest.json") continue;
    hashes[rel] = file_hash(e.path().string());
  }
  return hashes;
}

/// Runs a command into `out` (default_run_dir when empty) and returns the
/// manifest, which is also written to <out>/manifest.json.
inline json run_command(const std::string& name, const json& overrides, const std::string& out = "",
                        std::ostream& log = std::cout) {
  const Command& cmd = find_command(name);
  const json cfg = resolve_config(cmd, overrides);
  RunContext ctx;
  ctx.log = &log;
  ctx.dir = out.empty() ? default_run_dir(name, cfg) : fs::path(out);
  std::error_code ec;
  fs::create_directories(ctx.dir, ec);
  if (ec) throw IoError("cannot create run directory '" + ctx.dir.string() + "': " + ec.message());
  if (fs::exists(ctx.dir / "manifest.json")) fs::remove(ctx.dir / "manifest.json");
  const auto t0 = std::chrono::steady_clock::now();
  json manifest{{"tool", kToolVersion}, {"command", name}, {"config", cfg}};
  if (cfg.contains("seed")) manifest["seed"] = cfg["seed"];
  auto finish = [&](const std::string& status) {
    manifest["status"] = status;
    manifest["inputs"] = ctx.inputs;
    manifest["metrics"] = ctx.metrics;
    manifest["artifacts"] = hash_artifacts(ctx.dir);
    manifest["elapsed_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    write_text(ctx.dir / "manifest.json", manifest.dump(2) + "\n");
  };
  try {
    cmd.run(cfg, ctx);
  } catch (const Error& e) {
    manifest["error"] = {{"category", e.category()}, {"message", e.what()}};
    finish("failed");
    throw;
  }
  finish("ok");
  log << "run directory: " << ctx.dir.string() << "\n";
  return manifest;
}

/// Replays a manifest into `out` (default: <run dir>-rerun) after checking
/// that every recorded input still has its recorded hash, then compares the
/// artifact hashes. Throws ReproducibilityError listing any difference.
inline json rerun(const std::string& manifest_path, const std::string& out = "", std::ostream& log = std::cout) {
  const json recorded = read_json_file(manifest_path);
  for (const auto& key : {"command", "config", "artifacts"})
    if (!recorded.contains(key)) throw ParseError(manifest_path + ": manifest lacks '" + key + "'");
  if (recorded.value("status", "ok") != "ok") throw ConfigError("cannot replay a failed run");
  const json inputs = recorded.value("inputs", json::object());
  for (const auto& [name, entry] : inputs.items()) {
    const std::string path = entry.at("path");
    if (!fs::exists(path)) throw IoError("input '" + name + "' missing at '" + path + "'");
    if (file_hash(path) != entry.at("hash").get<std::string>()) {
      throw ConfigError("input '" + name + "' at '" + path + "' changed since the recorded run");
    }
  }
  const fs::path dir = out.empty() ? fs::path(fs::path(manifest_path).parent_path().string() + "-rerun") : fs::path(out);
  const json replay = run_command(recorded.at("command"), recorded.at("config"), dir.string(), log);
  std::vector<std::string> diffs;
  const json& a = recorded.at("artifacts");
  const json& b = replay.at("artifacts");
  for (const auto& [file, hash] : a.items()) {
    if (!b.contains(file)) diffs.push_back(file + " (missing)");
    else if (b[file] != hash) diffs.push_back(file);
  }
  for (const auto& [file, hash] : b.items())
    if (!a.contains(file)) diffs.push_back(file + " (unexpected)");
  if (!diffs.empty()) {
    std::string list;
    for (const auto& d : diffs) list += (list.empty() ? "" : ", ") + d;
    throw ReproducibilityError("artifacts differ from the manifest: " + list);
  }
  log << "all " << a.size() << " artifacts identical\n";
  return replay;
}

}  // namespace sst::cli
