#include <gtest/gtest.h>

#include <thread>

#include "sst/service.hpp"

using namespace sst;

namespace {

VaeConfig vae_config() {
  VaeConfig c;
  c.r = 16;
  c.g = 8;
  c.c = 3;
  c.encoder_widths = {4};
  c.decoder_width = 16;
  c.decoder_layers = 1;
  return c;
}

GeneratorConfig gen_config() {
  GeneratorConfig c;
  c.z_dim = 8;
  c.base = 8;
  c.widths = {6, 4};
  c.post_width = 4;
  c.c = 3;
  c.n = 6;
  return c;
}

struct Models {
  ShapeVae<float> vae;
  LatentGan<float> gan;
};

Models make_models(std::uint64_t seed = 0) {
  Rng rng(seed);
  ShapeVae<float> vae(vae_config(), rng);
  DiscriminatorConfig dc;
  dc.c = 3;
  dc.width = 4;
  LatentGan<float> gan(gen_config(), dc, rng);
  gan.vae_hash = vae_hash(vae);
  return {std::move(vae), std::move(gan)};
}

ServiceConfig small_service() {
  ServiceConfig c;
  c.resolutions = {16, 24};
  c.default_resolution = 16;
  c.mesh_cache = 8;
  return c;
}

struct Loaded {
  TraverseService service{small_service()};
  Models models = make_models();
  Loaded() { service.load(models.vae, models.gan); }
};

json body_of(const ServiceResponse& r) { return json::parse(r.body); }

}  // namespace

TEST(LruCache, EvictsLeastRecentlyUsed) {
  LruCache<int, int> cache(2);
  cache.put(1, 10);
  cache.put(2, 20);
  EXPECT_EQ(cache.get(1), 10);
  cache.put(3, 30);
  EXPECT_FALSE(cache.get(2).has_value());
  EXPECT_EQ(cache.get(1), 10);
  EXPECT_EQ(cache.get(3), 30);
  cache.put(3, 31);
  EXPECT_EQ(cache.size(), 2u);
  EXPECT_EQ(cache.get(3), 31);
}

TEST(Service, UnavailableBeforeLoad) {
  TraverseService service(small_service());
  EXPECT_FALSE(service.loaded());
  EXPECT_EQ(service.model_info().status, 503);
  EXPECT_EQ(service.sample(R"({"seed": 1})").status, 503);
  EXPECT_EQ(service.traverse(R"({"shape_id": "ab", "dim": 0, "value": 1})").status, 503);
  EXPECT_EQ(service.mesh("ab", "obj").status, 503);
}

TEST(Service, RejectsGanTrainedOnAnotherVae) {
  TraverseService service(small_service());
  auto m = make_models();
  m.gan.vae_hash = "0000";
  EXPECT_THROW(service.load(m.vae, m.gan), ConfigError);
  EXPECT_FALSE(service.loaded());
}

TEST(Service, ModelInfoListsTwentyFourDimensions) {
  Loaded l;
  const auto r = l.service.model_info();
  ASSERT_EQ(r.status, 200);
  const auto card = body_of(r);
  EXPECT_EQ(card["total_dims"], 24);
  EXPECT_EQ(card["dims"].size(), 24u);
  EXPECT_EQ(card["dims"][13]["subspace"], 2);
  EXPECT_EQ(card["dims"][13]["local"], 1);
  EXPECT_EQ(card["n"], 6);
  EXPECT_EQ(card["resolutions"], json({16, 24}));
  EXPECT_EQ(card["checkpoints"]["vae"], vae_hash(l.models.vae));
  EXPECT_EQ(l.service.model_info().body, r.body);
}

TEST(Service, SampleIsDeterministicPerSeed) {
  Loaded l;
  const auto a = body_of(l.service.sample(R"({"seed": 7})"));
  const auto b = body_of(l.service.sample(R"({"seed": 7})"));
  const auto c = body_of(l.service.sample(R"({"seed": 8})"));
  EXPECT_EQ(a["shape_id"], b["shape_id"]);
  EXPECT_NE(a["shape_id"], c["shape_id"]);
  EXPECT_EQ(a["C"].size(), 24u);
  EXPECT_EQ(a["z"].size(), 8u);
  EXPECT_EQ(a["resolution"], 16);
  EXPECT_EQ(a["mesh_url"], "/mesh/" + a["shape_id"].get<std::string>() + "?format=obj");
}

TEST(Service, SampleValidatesRequests) {
  Loaded l;
  EXPECT_EQ(l.service.sample(R"({"seed": 1, "resolution": 17})").status, 400);
  EXPECT_EQ(l.service.sample(R"({"resolution": 16})").status, 400);
  EXPECT_EQ(l.service.sample(R"({"seed": -1})").status, 400);
  EXPECT_EQ(l.service.sample(R"({"seed": 1, "colour": 2})").status, 400);
  EXPECT_EQ(l.service.sample("not json").status, 400);
  EXPECT_EQ(l.service.sample(R"({"seed": 1, "resolution": 24})").status, 200);
}

TEST(Service, MeshMatchesDirectDecode) {
  Loaded l;
  const auto s = body_of(l.service.sample(R"({"seed": 3})"));
  const auto r = l.service.mesh(s["shape_id"], "obj");
  ASSERT_EQ(r.status, 200);
  EXPECT_EQ(r.content_type, "model/obj");
  const auto sample = latent_sample(l.models.gan.generator, 3);
  const Mesh direct = marching_cubes(l.models.vae.decode_grid(generate_code(l.models.gan.generator, sample), 16), 0.5);
  EXPECT_EQ(r.body, to_obj(direct));
  const Mesh parsed = parse_obj(r.body);
  EXPECT_EQ(parsed.triangles.size(), direct.triangles.size());
}

TEST(Service, GlbHasMagicAndIsStable) {
  Loaded l;
  const auto s = body_of(l.service.sample(R"({"seed": 4})"));
  const auto a = l.service.mesh(s["shape_id"], "glb");
  const auto b = l.service.mesh(s["shape_id"], "glb");
  ASSERT_EQ(a.status, 200);
  EXPECT_EQ(a.content_type, "model/gltf-binary");
  EXPECT_EQ(a.body.substr(0, 4), "glTF");
  EXPECT_EQ(a.body, b.body);
  const Mesh m = parse_glb(std::vector<std::uint8_t>(a.body.begin(), a.body.end()));
  EXPECT_EQ(m.triangles.size(), parse_obj(l.service.mesh(s["shape_id"], "obj").body).triangles.size());
  EXPECT_EQ(l.service.mesh(s["shape_id"], "stl").status, 400);
  EXPECT_EQ(l.service.mesh("deadbeef", "obj").status, 404);
}

TEST(Service, MeshIsRecomputedAfterCacheEviction) {
  Loaded l;
  const auto first = body_of(l.service.sample(R"({"seed": 0})"));
  const auto before = l.service.mesh(first["shape_id"], "obj").body;
  for (int s = 1; s <= 12; ++s) l.service.sample(json{{"seed", s}}.dump());
  EXPECT_LE(l.service.cached_meshes(), 8u);
  EXPECT_EQ(l.service.mesh(first["shape_id"], "obj").body, before);
}

TEST(Service, TraverseToCurrentValueKeepsTheId) {
  Loaded l;
  const auto s = body_of(l.service.sample(R"({"seed": 5})"));
  const double current = s["C"][10];
  const auto t = body_of(l.service.traverse(json{{"shape_id", s["shape_id"]}, {"dim", 10}, {"value", current}}.dump()));
  EXPECT_EQ(t["shape_id"], s["shape_id"]);
  EXPECT_EQ(t["extrapolation"], false);
}

TEST(Service, SequentialTraversalsCompose) {
  Loaded l;
  const auto s = body_of(l.service.sample(R"({"seed": 6})"));
  const auto one = body_of(l.service.traverse(json{{"shape_id", s["shape_id"]}, {"dim", 2}, {"value", 1.5}}.dump()));
  const auto two = body_of(l.service.traverse(json{{"z", one["z"]}, {"C", one["C"]}, {"dim", 20}, {"value", -2.0}}.dump()));
  auto coords = s["C"].get<std::vector<double>>();
  coords[2] = 1.5;
  coords[20] = -2.0;
  const auto direct = body_of(l.service.traverse(json{{"z", s["z"]}, {"C", coords}, {"dim", 20}, {"value", -2.0}}.dump()));
  EXPECT_EQ(two["shape_id"], direct["shape_id"]);
  EXPECT_EQ(l.service.mesh(two["shape_id"], "obj").body, l.service.mesh(direct["shape_id"], "obj").body);
  EXPECT_EQ(two["C"][2], 1.5);
}

TEST(Service, TraverseValidatesRequests) {
  Loaded l;
  const auto s = body_of(l.service.sample(R"({"seed": 9})"));
  const json id = s["shape_id"];
  EXPECT_EQ(l.service.traverse(json{{"shape_id", "feed"}, {"dim", 0}, {"value", 1}}.dump()).status, 404);
  EXPECT_EQ(l.service.traverse(json{{"shape_id", id}, {"dim", 24}, {"value", 1}}.dump()).status, 400);
  EXPECT_EQ(l.service.traverse(json{{"shape_id", id}, {"dim", -1}, {"value", 1}}.dump()).status, 400);
  EXPECT_EQ(l.service.traverse(json{{"shape_id", id}, {"dim", 0}, {"value", 6.5}}.dump()).status, 400);
  EXPECT_EQ(l.service.traverse(json{{"shape_id", id}, {"dim", 0}}.dump()).status, 400);
  EXPECT_EQ(l.service.traverse(json{{"dim", 0}, {"value", 1}}.dump()).status, 400);
  EXPECT_EQ(l.service.traverse(json{{"z", {1, 2}}, {"C", s["C"]}, {"dim", 0}, {"value", 1}}.dump()).status, 400);
  const auto edge = l.service.traverse(json{{"shape_id", id}, {"dim", 23}, {"value", -6}}.dump());
  ASSERT_EQ(edge.status, 200);
  EXPECT_EQ(body_of(edge)["extrapolation"], true);
}

TEST(Service, ConcurrentTraversalsSucceed) {
  Loaded l;
  std::vector<std::string> ids(6);
  std::vector<int> status(6);
  std::vector<std::thread> threads;
  for (int t = 0; t < 6; ++t) {
    threads.emplace_back([&, t] {
      const auto s = body_of(l.service.sample(json{{"seed", 100 + t}}.dump()));
      const auto r = l.service.traverse(json{{"shape_id", s["shape_id"]}, {"dim", t}, {"value", 1.0}}.dump());
      status[t] = r.status;
      if (r.status == 200) ids[t] = body_of(r)["shape_id"];
    });
  }
  for (auto& th : threads) th.join();
  for (int t = 0; t < 6; ++t) {
    EXPECT_EQ(status[t], 200);
    const auto s = body_of(l.service.sample(json{{"seed", 100 + t}}.dump()));
    const auto again = body_of(l.service.traverse(json{{"z", s["z"]}, {"C", s["C"]}, {"dim", t}, {"value", 1.0}}.dump()));
    EXPECT_EQ(again["shape_id"], ids[t]);
  }
}

TEST(Service, ServesOverHttp) {
  Loaded l;
  httplib::Server server;
  l.service.mount(server);
  const int port = server.bind_to_any_port("127.0.0.1");
  ASSERT_GT(port, 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();
  httplib::Client client("127.0.0.1", port);
  auto info = client.Get("/model/info");
  ASSERT_TRUE(info);
  EXPECT_EQ(info->status, 200);
  EXPECT_EQ(json::parse(info->body)["total_dims"], 24);
  auto sample = client.Post("/sample", R"({"seed": 11})", "application/json");
  ASSERT_TRUE(sample);
  ASSERT_EQ(sample->status, 200);
  const auto id = json::parse(sample->body)["shape_id"].get<std::string>();
  auto glb = client.Get("/mesh/" + id + "?format=glb");
  ASSERT_TRUE(glb);
  EXPECT_EQ(glb->status, 200);
  EXPECT_EQ(glb->get_header_value("Content-Type"), "model/gltf-binary");
  EXPECT_EQ(glb->body.substr(0, 4), "glTF");
  auto bad = client.Post("/traverse", json{{"shape_id", id}, {"dim", 99}, {"value", 0}}.dump(), "application/json");
  ASSERT_TRUE(bad);
  EXPECT_EQ(bad->status, 400);
  auto missing = client.Get("/mesh/abcdef");
  ASSERT_TRUE(missing);
  EXPECT_EQ(missing->status, 404);
  server.stop();
  worker.join();
}
