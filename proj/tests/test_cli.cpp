#include <gtest/gtest.h>

#include <cstdlib>
#include <regex>
#include <sstream>

#include "sst/cli.hpp"

using namespace sst;
using namespace sst::cli;

namespace {

json tiny_vae() {
  VaeConfig c;
  c.r = 16;
  c.g = 8;
  c.c = 3;
  c.encoder_widths = {4};
  c.decoder_width = 16;
  c.decoder_layers = 1;
  return c.to_json();
}

json tiny_gan() {
  GeneratorConfig g;
  g.z_dim = 8;
  g.base = 8;
  g.widths = {6, 4};
  g.post_width = 4;
  g.c = 3;
  DiscriminatorConfig d;
  d.c = 3;
  d.width = 4;
  return {{"generator", g.to_json()}, {"discriminator", d.to_json()}};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

/// Dataset, VAE and GAN trained once for the whole suite.
class Pipeline : public ::testing::Test {
 protected:
  static inline fs::path root;
  static inline std::ostringstream log;

  static void SetUpTestSuite() {
    root = fs::temp_directory_path() / ("sst_cli_" + std::to_string(::getpid()));
    fs::remove_all(root);
    run_command("dataset", {{"count", 12}, {"r", 16}, {"n_uniform", 64}, {"n_surface", 64}}, (root / "data").string(),
                log);
    run_command("train-vae",
                {{"data", (root / "data").string()},
                 {"model", tiny_vae()},
                 {"training", {{"epochs", 1}, {"batch", 4}, {"points", 64}}}},
                (root / "vae").string(), log);
    run_command("train-gan",
                {{"vae", vae()},
                 {"data", (root / "data").string()},
                 {"model", tiny_gan()},
                 {"training", {{"steps", 2}, {"batch", 2}}}},
                (root / "gan").string(), log);
  }
  static void TearDownTestSuite() { fs::remove_all(root); }

  static std::string vae() { return (root / "vae" / "vae.sst").string(); }
  static std::string gan() { return (root / "gan" / "gan.sst").string(); }
  static json manifest(const std::string& run) { return read_json_file((root / run / "manifest.json").string()); }
};

}  // namespace

TEST(ConfigFlags, LeafNamesWithParentPrefixOnCollision) {
  const json defaults{{"seed", 0u},
                      {"data_dir", ""},
                      {"model", {{"generator", {{"c", 8u}, {"z_dim", 64u}}}, {"discriminator", {{"c", 8u}}}}},
                      {"training", {{"seed", 0u}, {"lr", 0.1}}}};
  std::map<std::string, std::vector<std::string>> by_name;
  for (const auto& f : config_flags(defaults)) by_name[f.name] = f.path;
  using P = std::vector<std::string>;
  EXPECT_EQ(by_name.at("data-dir"), (P{"data_dir"}));
  EXPECT_EQ(by_name.at("z-dim"), (P{"model", "generator", "z_dim"}));
  EXPECT_EQ(by_name.at("generator-c"), (P{"model", "generator", "c"}));
  EXPECT_EQ(by_name.at("discriminator-c"), (P{"model", "discriminator", "c"}));
  EXPECT_EQ(by_name.at("seed"), (P{"seed"}));
  EXPECT_EQ(by_name.at("training-seed"), (P{"training", "seed"}));
  EXPECT_EQ(by_name.at("lr"), (P{"training", "lr"}));
  EXPECT_EQ(by_name.size(), 7u);
}

TEST(ConfigFlags, EveryCommandHasUniqueFlags) {
  for (const auto& cmd : commands()) {
    std::set<std::string> seen{"config", "out"};
    for (const auto& f : config_flags(cmd.defaults)) EXPECT_TRUE(seen.insert(f.name).second) << cmd.name << " " << f.name;
  }
}

TEST(ConfigFlags, ValuesTakeTheDefaultsType) {
  const Flag u{"n", {"n"}, json::value_t::number_unsigned}, d{"lr", {"lr"}, json::value_t::number_float},
      l{"widths", {"widths"}, json::value_t::array}, s{"range", {"range"}, json::value_t::string};
  EXPECT_EQ(parse_flag_value(u, "12"), json(12u));
  EXPECT_THROW(parse_flag_value(u, "-1"), ConfigError);
  EXPECT_THROW(parse_flag_value(u, "1.5"), ConfigError);
  EXPECT_THROW(parse_flag_value(u, "abc"), ConfigError);
  EXPECT_EQ(parse_flag_value(d, "2e-4"), json(2e-4));
  EXPECT_EQ(parse_flag_value(d, "3"), json(3));
  EXPECT_EQ(parse_flag_value(l, "64,32"), json({64, 32}));
  EXPECT_EQ(parse_flag_value(l, "[8]"), json({8}));
  EXPECT_EQ(parse_flag_value(s, "-3:3"), json("-3:3"));
  json overrides = json::object();
  set_flag(overrides, {"z-dim", {"model", "generator", "z_dim"}, json::value_t::number_unsigned}, 5u);
  EXPECT_EQ(overrides, json::parse(R"({"model":{"generator":{"z_dim":5}}})"));
}

TEST(Config, OverlayRejectsUnknownKeysAtAnyDepth) {
  const auto& cmd = find_command("train-gan");
  EXPECT_THROW(resolve_config(cmd, {{"stepz", 1}}), ConfigError);
  EXPECT_THROW(resolve_config(cmd, {{"model", {{"generator", {{"zdim", 1}}}}}}), ConfigError);
  EXPECT_THROW(resolve_config(cmd, {{"training", {{"steps", "many"}}}}), ConfigError);
  EXPECT_THROW(resolve_config(cmd, {{"training", {{"steps", -3}}}}), ConfigError);
  EXPECT_THROW(resolve_config(cmd, json::array()), ConfigError);
  EXPECT_THROW(find_command("bogus"), ConfigError);
  const json cfg = resolve_config(cmd, {{"training", {{"steps", 7}}}, {"vae", "rel/vae.sst"}});
  EXPECT_EQ(cfg["training"]["steps"], 7);
  EXPECT_EQ(cfg["training"]["batch"], GanTrainConfig{}.batch);
  EXPECT_TRUE(fs::path(cfg["vae"].get<std::string>()).is_absolute());
  EXPECT_EQ(cfg["data"], "");
}

TEST(Config, DefaultRunDirectoryIsKeyedByConfigHash) {
  const json a{{"x", 1}}, b{{"x", 2}};
  ::setenv("SST_RUN_ROOT", "/tmp/somewhere", 1);
  EXPECT_EQ(default_run_dir("sample", a), fs::path("/tmp/somewhere") / ("sample-" + content_hash(a.dump()).substr(0, 12)));
  EXPECT_NE(default_run_dir("sample", a), default_run_dir("sample", b));
  ::unsetenv("SST_RUN_ROOT");
  EXPECT_EQ(default_run_dir("sample", a).parent_path(), fs::path("runs"));
}

TEST(Config, RangesAndNames) {
  EXPECT_EQ(parse_range("-3:3"), std::make_pair(-3.0, 3.0));
  EXPECT_EQ(parse_range("0.5:0.5"), std::make_pair(0.5, 0.5));
  for (const char* bad : {"3", "3:-3", "a:b", "1:2:3", ":1", "nan:1"}) EXPECT_THROW(parse_range(bad), ConfigError) << bad;
  EXPECT_EQ(sweep_values(-3, 3, 5), (std::vector<double>{-3, -1.5, 0, 1.5, 3}));
  EXPECT_EQ(sweep_values(2, 4, 1), (std::vector<double>{2}));
  EXPECT_THROW(sweep_values(0, 1, 0), ConfigError);
  EXPECT_EQ(traversal_name(3, 1.5), "dim03_coef+1.500");
  EXPECT_EQ(traversal_name(12, -3.0), "dim12_coef-3.000");
  EXPECT_EQ(traversal_name(0, 4.25), "dim00_coef+4.250_extrapolated");
  EXPECT_EQ(traversal_name(0, 0.0), "dim00_coef+0.000");
}

TEST_F(Pipeline, TrainingRunsRecordInputsArtifactsAndMetrics) {
  const json m = manifest("gan");
  EXPECT_EQ(m["command"], "train-gan");
  EXPECT_EQ(m["status"], "ok");
  EXPECT_EQ(m["tool"], kToolVersion);
  EXPECT_EQ(m["inputs"]["vae"]["hash"], file_hash(vae()));
  EXPECT_EQ(m["inputs"]["data/train"]["hash"], file_hash((root / "data" / "train.sst").string()));
  EXPECT_EQ(m["artifacts"]["gan.sst"], file_hash(gan()));
  EXPECT_TRUE(m["artifacts"].contains("curve.json"));
  EXPECT_EQ(m["metrics"]["steps"], 2);
  EXPECT_EQ(m["metrics"]["orthonormality_error"].size(), 4u);
  EXPECT_GE(m["elapsed_seconds"].get<double>(), 0.0);
  const auto loaded = LatentGan<float>::from_container(Container::load(gan()));
  EXPECT_EQ(loaded.vae_hash, manifest("vae")["metrics"]["vae_hash"]);
}

TEST_F(Pipeline, TrainVaeRejectsResolutionMismatch) {
  json model = tiny_vae();
  model["r"] = 32;
  model["encoder_widths"] = {4, 4};
  EXPECT_THROW(run_command("train-vae", {{"data", (root / "data").string()}, {"model", model}},
                           (root / "bad_vae").string(), log),
               ConfigError);
  EXPECT_EQ(manifest("bad_vae")["status"], "failed");
  EXPECT_EQ(manifest("bad_vae")["error"]["category"], "config");
}

TEST_F(Pipeline, TraverseWritesOneMeshPerCoefficient) {
  const json m = run_command("traverse", {{"vae", vae()}, {"gan", gan()}, {"dim", 7}, {"resolution", 16}},
                             (root / "trav").string(), log);
  std::vector<std::string> expect;
  for (double v : {-3.0, -1.5, 0.0, 1.5, 3.0}) expect.push_back(traversal_name(7, v) + ".obj");
  for (const auto& name : expect) {
    ASSERT_TRUE(fs::exists(root / "trav" / name)) << name;
    EXPECT_EQ(m["artifacts"][name], file_hash((root / "trav" / name).string()));
  }
  const json listing = read_json_file((root / "trav" / "traverse.json").string());
  EXPECT_EQ(listing["dim"], 7);
  EXPECT_EQ(listing["subspace"], 1);
  EXPECT_EQ(listing["local"], 1);
  ASSERT_EQ(listing["meshes"].size(), 5u);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(listing["meshes"][i]["file"], expect[i]);
  EXPECT_EQ(m["artifacts"].size(), 6u);

  // Each mesh equals a direct decode of the swept coordinates.
  const auto vae_model = ShapeVae<float>::from_container(Container::load(vae()));
  const auto gan_model = LatentGan<float>::from_container(Container::load(gan()));
  auto s = latent_sample(gan_model.generator, 0);
  s.coords = traverse_coordinates(s.coords, 7, 1.5);
  EXPECT_EQ(slurp(root / "trav" / expect[3]), to_obj(field_mesh(generate_field(vae_model, gan_model.generator, s, 16))));

  EXPECT_THROW(run_command("traverse", {{"vae", vae()}, {"gan", gan()}, {"dim", 24}}, (root / "t2").string(), log),
               ConfigError);
  EXPECT_THROW(run_command("traverse", {{"vae", vae()}, {"gan", gan()}, {"range", "3:-3"}}, (root / "t3").string(), log),
               ConfigError);
}

TEST_F(Pipeline, ExtrapolatedCoefficientsAreMarked) {
  run_command("traverse",
              {{"vae", vae()}, {"gan", gan()}, {"range", "-5:5"}, {"steps", 3}, {"resolution", 8}, {"format", "ply"}},
              (root / "extra").string(), log);
  EXPECT_TRUE(fs::exists(root / "extra" / "dim00_coef-5.000_extrapolated.ply"));
  EXPECT_TRUE(fs::exists(root / "extra" / "dim00_coef+0.000.ply"));
  EXPECT_TRUE(fs::exists(root / "extra" / "dim00_coef+5.000_extrapolated.ply"));
}

TEST_F(Pipeline, SampleIsSeededPerShape) {
  const json m = run_command("sample", {{"vae", vae()}, {"gan", gan()}, {"count", 3}, {"seed", 10}, {"resolution", 12}},
                             (root / "samples").string(), log);
  EXPECT_EQ(m["metrics"]["count"], 3);
  const json listing = read_json_file((root / "samples" / "samples.json").string());
  ASSERT_EQ(listing.size(), 3u);
  const auto gan_model = LatentGan<float>::from_container(Container::load(gan()));
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(listing[i]["seed"], 10 + i);
    EXPECT_EQ(listing[i]["z"].get<std::vector<double>>(), latent_sample(gan_model.generator, 10 + i).z);
    EXPECT_TRUE(fs::exists(root / "samples" / listing[i]["file"].get<std::string>()));
  }
  // Shape 1 of a run seeded at 10 is shape 0 of a run seeded at 11.
  run_command("sample", {{"vae", vae()}, {"gan", gan()}, {"count", 1}, {"seed", 11}, {"resolution", 12}},
              (root / "samples11").string(), log);
  EXPECT_EQ(slurp(root / "samples" / "sample_001.obj"), slurp(root / "samples11" / "sample_000.obj"));
}

TEST_F(Pipeline, SampleRejectsAGanTrainedOnAnotherVae) {
  run_command("train-vae",
              {{"data", (root / "data").string()},
               {"model", tiny_vae()},
               {"init_seed", 5},
               {"training", {{"epochs", 1}, {"batch", 4}, {"points", 64}}}},
              (root / "vae2").string(), log);
  EXPECT_THROW(run_command("sample", {{"vae", (root / "vae2" / "vae.sst").string()}, {"gan", gan()}, {"count", 1}},
                           (root / "s2").string(), log),
               ConfigError);
}

TEST_F(Pipeline, SuperresOnASphereReportsIou) {
  const json m = run_command("superres", {{"vae", vae()}, {"radius", 0.3}, {"resolution", 64}, {"surface_points", 256}},
                             (root / "sr").string(), log);
  const json& metrics = m["metrics"];
  EXPECT_EQ(metrics["input_resolution"], 16);
  EXPECT_EQ(metrics["output_resolution"], 64);
  for (const char* key : {"iou", "baseline_nearest_iou"}) {
    ASSERT_TRUE(metrics[key].is_number()) << key;
    EXPECT_GE(metrics[key].get<double>(), 0.0);
    EXPECT_LE(metrics[key].get<double>(), 1.0);
  }
  EXPECT_GT(metrics["baseline_nearest_iou"].get<double>(), 0.7);  // a sphere of radius 0.3 survives 16^3
  EXPECT_TRUE(metrics["chamfer_l2"].is_number());
  EXPECT_TRUE(fs::exists(root / "sr" / "superres.obj"));
  EXPECT_THROW(run_command("superres", {{"vae", vae()}, {"radius", 0.9}}, (root / "sr2").string(), log), ConfigError);
  EXPECT_THROW(run_command("superres", {{"vae", vae()}, {"shape", "cube"}}, (root / "sr3").string(), log), ConfigError);
}

TEST_F(Pipeline, SuperresOnADatasetShape) {
  const json m = run_command(
      "superres",
      {{"vae", vae()}, {"shape", "shard"}, {"shard", (root / "data" / "test.sst").string()}, {"index", 1}, {"resolution", 24}},
      (root / "sr_shard").string(), log);
  EXPECT_EQ(m["inputs"]["shard"]["hash"], file_hash((root / "data" / "test.sst").string()));
  EXPECT_THROW(run_command("superres",
                           {{"vae", vae()}, {"shape", "shard"}, {"shard", (root / "data" / "test.sst").string()}, {"index", 2}},
                           (root / "sr_bad").string(), log),
               ConfigError);
}

TEST_F(Pipeline, EvalGenerationOfASetAgainstItselfCoversEverything) {
  fs::create_directories(root / "meshes");
  for (int i = 0; i < 3; ++i) {
    Solid s;
    s.parts.push_back(Primitive::sphere({0.5, 0.5, 0.5}, 0.1 + 0.1 * i));
    save_mesh((root / "meshes" / ("m" + std::to_string(i) + ".obj")).string(),
              field_mesh(field_from_function(16, [&](const Vec3& p) { return s.inside(p) ? 1.0 : 0.0; })));
  }
  std::ostringstream out;
  const json m = run_command("eval",
                             {{"mode", "generation"}, {"gen", (root / "meshes").string()}, {"ref", (root / "meshes").string()},
                              {"points", 256}},
                             (root / "evalgen").string(), out);
  EXPECT_DOUBLE_EQ(m["metrics"]["cov"].get<double>(), 1.0);
  EXPECT_DOUBLE_EQ(m["metrics"]["mmd"].get<double>(), 0.0);
  EXPECT_NE(out.str().find("100.00"), std::string::npos) << out.str();
  EXPECT_NE(out.str().find("1:1"), std::string::npos);
  EXPECT_EQ(m["inputs"].size(), 6u);
  EXPECT_THROW(run_command("eval", {{"mode", "generation"}, {"gen", (root / "meshes").string()}}, (root / "e2").string(), log),
               ConfigError);
  EXPECT_THROW(run_command("eval", {{"mode", "fid"}}, (root / "e3").string(), log), ConfigError);
}

TEST_F(Pipeline, EvalReconstruction) {
  const json m = run_command("eval",
                             {{"vae", vae()}, {"data", (root / "data").string()}, {"resolution", 16}, {"points", 128}, {"limit", 2}},
                             (root / "evalrec").string(), log);
  EXPECT_EQ(m["metrics"]["count"], 2);
  const json report = read_json_file((root / "evalrec" / "eval.json").string());
  EXPECT_EQ(report["shapes"].size(), 2u);
  EXPECT_EQ(report["mean_iou"], m["metrics"]["mean_iou"]);
}

TEST_F(Pipeline, ExportConvertsMeshesAndDatasetShapes) {
  run_command("export", {{"shard", (root / "data" / "val.sst").string()}, {"resolution", 20}}, (root / "exp").string(), log);
  const Mesh a = load_mesh((root / "exp" / "mesh.obj").string());
  EXPECT_GT(a.triangles.size(), 0u);
  run_command("export", {{"in", (root / "exp" / "mesh.obj").string()}, {"format", "glb"}}, (root / "exp_glb").string(), log);
  const Mesh b = load_mesh((root / "exp_glb" / "mesh.glb").string());
  EXPECT_EQ(b.vertices.size(), a.vertices.size());
  EXPECT_EQ(b.triangles, a.triangles);
  EXPECT_THROW(run_command("export", json::object(), (root / "exp_none").string(), log), ConfigError);
  EXPECT_THROW(run_command("export", {{"in", (root / "nope.obj").string()}}, (root / "exp_io").string(), log), IoError);
}

TEST_F(Pipeline, RerunReproducesEveryArtifact) {
  for (const char* run : {"data", "vae", "gan", "trav"}) {
    if (!fs::exists(root / run / "manifest.json")) continue;  // trav comes from another test
    const json replay = rerun((root / run / "manifest.json").string(), (root / (std::string(run) + "_again")).string(), log);
    EXPECT_EQ(replay["artifacts"], manifest(run)["artifacts"]) << run;
  }
}

TEST_F(Pipeline, RerunDetectsChangedInputsAndArtifacts) {
  run_command("sample", {{"vae", vae()}, {"gan", gan()}, {"count", 1}, {"resolution", 8}}, (root / "rr").string(), log);
  json m = manifest("rr");
  m["artifacts"]["sample_000.obj"] = std::string(40, '0');
  write_text(root / "rr" / "manifest.json", m.dump());
  try {
    rerun((root / "rr" / "manifest.json").string(), (root / "rr_again").string(), log);
    FAIL() << "expected a mismatch";
  } catch (const ReproducibilityError& e) {
    EXPECT_STREQ(e.category(), "mismatch");
    EXPECT_NE(std::string(e.what()).find("sample_000.obj"), std::string::npos);
  }
  m = manifest("rr");
  m["inputs"]["vae"]["hash"] = std::string(40, '0');
  write_text(root / "rr" / "manifest.json", m.dump());
  EXPECT_THROW(rerun((root / "rr" / "manifest.json").string(), (root / "rr_again2").string(), log), ConfigError);
}

#ifdef SST_BINARY
namespace {

struct Invocation {
  int code;
  std::string err;
};

Invocation invoke(const std::string& args) {
  const auto err = fs::temp_directory_path() / ("sst_cli_err_" + std::to_string(::getpid()));
  const int status = std::system((std::string(SST_BINARY) + " " + args + " >/dev/null 2>" + err.string()).c_str());
  Invocation r{WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(err)};
  fs::remove(err);
  return r;
}

void expect_error_line(const Invocation& r, int code, const std::string& category) {
  EXPECT_EQ(r.code, code) << r.err;
  static const std::regex line(R"(error: category=([a-z]+) message="(?:[^"\\]|\\.)*"\n)");
  std::smatch m;
  ASSERT_TRUE(std::regex_match(r.err, m, line)) << r.err;
  EXPECT_EQ(m[1], category);
}

}  // namespace

TEST(Binary, ErrorLinesAndExitCodes) {
  const auto dir = fs::temp_directory_path() / ("sst_cli_bin_" + std::to_string(::getpid()));
  fs::create_directories(dir);
  write_text(dir / "bad.json", R"({"count": 12, "colour": "red"})");
  write_text(dir / "broken.json", "{");
  const std::string out = " --out " + (dir / "run").string();
  expect_error_line(invoke("dataset --no-such-flag 1"), 2, "usage");
  expect_error_line(invoke("dataset --config " + (dir / "bad.json").string() + out), 3, "config");
  expect_error_line(invoke("dataset --count -4" + out), 3, "config");
  expect_error_line(invoke("dataset --config " + (dir / "broken.json").string() + out), 5, "parse");
  expect_error_line(invoke("sample --vae " + (dir / "missing.sst").string() + " --gan x" + out), 4, "io");
  expect_error_line(invoke("dataset --count 3" + out), 6, "value");
  expect_error_line(invoke("serve"), 2, "usage");
  EXPECT_EQ(invoke("dataset --count 10 --r 8 --n-uniform 4 --n-surface 4" + out).code, 0);
  EXPECT_EQ(invoke("rerun " + (dir / "run" / "manifest.json").string()).code, 0);
  json m = read_json_file((dir / "run" / "manifest.json").string());
  m["artifacts"]["val.sst"] = "0";
  write_text(dir / "run" / "manifest.json", m.dump());
  expect_error_line(invoke("rerun " + (dir / "run" / "manifest.json").string()), 10, "mismatch");
  fs::remove_all(dir);
}
#endif
