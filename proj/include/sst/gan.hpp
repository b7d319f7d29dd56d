#pragma once

// Latent GAN over shape code grids. The generator maps noise z through a dense
// layer and stride-2 transposed convolutions up to a g^3 feature map, adds
// the four embedded subspace samples there, and maps the result to c
// channels with stride-1 convolutions. The discriminator is a small fully
// convolutional net emitting one logit per overlapping 4^3 patch.

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "sst/checkpoint.hpp"
#include "sst/hash.hpp"
#include "sst/subspace.hpp"
#include "sst/vae.hpp"

namespace sst {

struct GeneratorConfig {
  std::size_t z_dim = 64;
  std::size_t base = 128;                     // channels of the initial 2^3 map
  std::vector<std::size_t> widths{64, 32};    // one stride-2 transposed conv each
  std::size_t post_convs = 2;                 // 3^3 convs after the embedding; 0 = identity
  std::size_t post_width = 32;
  std::size_t c = 8;
  std::size_t g = 8;
  std::size_t n = 6;                          // dimensions per subspace
  double slope = 0.2;

  std::size_t embed_channels() const { return widths.empty() ? base : widths.back(); }

  void validate() const {
    if (z_dim == 0 || base == 0 || c == 0 || n == 0) throw ConfigError("generator config: sizes must be positive");
    for (auto w : widths)
      if (w == 0) throw ConfigError("generator config: widths must be positive");
    if ((std::size_t{2} << widths.size()) != g) {
      throw ConfigError("generator config: 2 * 2^" + std::to_string(widths.size()) + " does not equal g=" +
                        std::to_string(g));
    }
    if (g % 4 != 0) throw ConfigError("generator config: g must be divisible by 4 for the subspace layout");
    if (post_convs == 0 && embed_channels() != c) {
      throw ConfigError("generator config: without post convolutions the embedded map must have c channels");
    }
    if (post_convs > 1 && post_width == 0) throw ConfigError("generator config: post_width must be positive");
    if (!(slope >= 0)) throw ConfigError("generator config: slope must be non-negative");
  }

  json to_json() const {
    return {{"z_dim", z_dim}, {"base", base}, {"widths", widths}, {"post_convs", post_convs},
            {"post_width", post_width}, {"c", c}, {"g", g}, {"n", n}, {"slope", slope}};
  }

  static GeneratorConfig from_json(const json& j) {
    GeneratorConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "z_dim") cfg.z_dim = value.get<std::size_t>();
      else if (key == "base") cfg.base = value.get<std::size_t>();
      else if (key == "widths") cfg.widths = value.get<std::vector<std::size_t>>();
      else if (key == "post_convs") cfg.post_convs = value.get<std::size_t>();
      else if (key == "post_width") cfg.post_width = value.get<std::size_t>();
      else if (key == "c") cfg.c = value.get<std::size_t>();
      else if (key == "g") cfg.g = value.get<std::size_t>();
      else if (key == "n") cfg.n = value.get<std::size_t>();
      else if (key == "slope") cfg.slope = value.get<double>();
      else throw ConfigError("generator config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
  }

  bool operator==(const GeneratorConfig&) const = default;
};

template <class T>
class Generator {
 public:
  Generator(const GeneratorConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    dense_ = Linear<T>(cfg_.z_dim, cfg_.base * 8, rng);
    std::size_t in = cfg_.base;
    for (auto w : cfg_.widths) {
      up_.emplace_back(in, w, 4, 2, 1, rng);
      in = w;
    }
    layout_ = default_layout<T>(cfg_.g, in, cfg_.n, rng);
    for (std::size_t i = 0; i < cfg_.post_convs; ++i) {
      const std::size_t out = i + 1 == cfg_.post_convs ? cfg_.c : cfg_.post_width;
      post_.emplace_back(in, out, 3, 1, 1, rng);
      in = out;
    }
  }

  const GeneratorConfig& config() const { return cfg_; }
  const SubspaceLayout<T>& layout() const { return layout_; }
  SubspaceLayout<T>& layout() { return layout_; }
  std::size_t subspaces() const { return layout_.entries.size(); }
  std::size_t total_dims() const { return layout_.total_dims(); }

  /// Feature map before the embedding: [B, channels, g, g, g].
  Tensor<T> features(const Tensor<T>& z) const {
    if (z.rank() != 2 || z.dim(1) != cfg_.z_dim) {
      throw ShapeError("generate: z must be [B, " + std::to_string(cfg_.z_dim) + "], got " + shape_str(z.shape()));
    }
    auto x = reshape(dense_(z), Shape{z.dim(0), cfg_.base, 2, 2, 2});
    x = leaky_relu(x, T(cfg_.slope));
    for (const auto& layer : up_) x = leaky_relu(layer(x), T(cfg_.slope));
    return x;
  }

  /// z: [B, z_dim]; coords: one [B, n] tensor per subspace. Returns [B, c, g, g, g].
  /// A batch of one is evaluated as a duplicated pair so that results do not
  /// depend on the batch size (single-row products take a different kernel).
  Tensor<T> generate(const Tensor<T>& z, const std::vector<Tensor<T>>& coords) const {
    if (coords.size() != subspaces()) {
      throw ValueError("generate: expected " + std::to_string(subspaces()) + " coordinate vectors, got " +
                       std::to_string(coords.size()));
    }
    for (const auto& c : coords) {
      if (c.rank() != 2 || c.dim(1) != cfg_.n || (z.rank() == 2 && c.dim(0) != z.dim(0))) {
        throw ShapeError("generate: coordinates " + shape_str(c.shape()) + " do not match z " + shape_str(z.shape()) +
                         " and n=" + std::to_string(cfg_.n));
      }
    }
    if (z.rank() == 2 && z.dim(0) == 1) {
      std::vector<Tensor<T>> pair;
      for (const auto& c : coords) pair.push_back(concat<T>({c, c}, 0));
      return slice(run(concat<T>({z, z}, 0), pair), 0, 0, 1);
    }
    return run(z, coords);
  }

  /// Single sample from z [z_dim] and concatenated coordinates. Returns [c, g, g, g].
  Tensor<T> generate(const Tensor<T>& z, const Coordinates& coords) const {
    if (z.rank() != 1) throw ShapeError("generate: z must be a vector, got " + shape_str(z.shape()));
    check_coordinates(coords);
    std::vector<Tensor<T>> blocks;
    for (std::size_t s = 0; s < subspaces(); ++s) blocks.push_back(reshape(coords.block<T>(s), Shape{1, cfg_.n}));
    auto out = generate(reshape(z, Shape{1, z.dim(0)}), blocks);
    return reshape(out, Shape{cfg_.c, cfg_.g, cfg_.g, cfg_.g});
  }

  void check_coordinates(const Coordinates& coords) const {
    if (coords.per_subspace != cfg_.n || coords.values.size() != total_dims()) {
      throw ValueError("generate: expected " + std::to_string(subspaces()) + " coordinate vectors of length " +
                       std::to_string(cfg_.n) + ", got " + std::to_string(coords.values.size()) + " values");
    }
  }

  NamedParams<T> params() const {
    NamedParams<T> out;
    append_params(out, "dense.", dense_.params());
    for (std::size_t i = 0; i < up_.size(); ++i) append_params(out, "up" + std::to_string(i) + ".", up_[i].params());
    append_params(out, "", layout_.params());
    for (std::size_t i = 0; i < post_.size(); ++i)
      append_params(out, "post" + std::to_string(i) + ".", post_[i].params());
    return out;
  }

 private:
  GeneratorConfig cfg_;
  Linear<T> dense_;
  std::vector<ConvTranspose3dLayer<T>> up_;
  SubspaceLayout<T> layout_;
  std::vector<Conv3dLayer<T>> post_;

  Tensor<T> run(const Tensor<T>& z, const std::vector<Tensor<T>>& coords) const {
    auto x = features(z);
    for (std::size_t s = 0; s < layout_.entries.size(); ++s) {
      const auto& e = layout_.entries[s];
      x = embed(x, sample_point(e.model, coords[s]), e.region);
    }
    for (std::size_t i = 0; i < post_.size(); ++i) {
      x = post_[i](x);
      if (i + 1 < post_.size()) x = leaky_relu(x, T(cfg_.slope));
    }
    return x;
  }
};

struct DiscriminatorConfig {
  std::size_t c = 8;
  std::size_t width = 64;
  double slope = 0.2;

  /// Edge of the cube of input sites each output logit depends on.
  static constexpr std::size_t receptive_field() { return 4; }

  void validate() const {
    if (c == 0 || width == 0) throw ConfigError("discriminator config: c and width must be positive");
    if (!(slope >= 0)) throw ConfigError("discriminator config: slope must be non-negative");
  }

  json to_json() const { return {{"c", c}, {"width", width}, {"slope", slope}}; }

  static DiscriminatorConfig from_json(const json& j) {
    DiscriminatorConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "c") cfg.c = value.get<std::size_t>();
      else if (key == "width") cfg.width = value.get<std::size_t>();
      else if (key == "slope") cfg.slope = value.get<double>();
      else throw ConfigError("discriminator config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
  }

  bool operator==(const DiscriminatorConfig&) const = default;
};

/// k3 -> k2 -> k1 valid convolutions: a g^3 grid becomes a (g-3)^3 logit map.
template <class T>
class PatchDiscriminator {
 public:
  PatchDiscriminator(const DiscriminatorConfig& cfg, Rng& rng)
      : cfg_(cfg),
        first_((cfg.validate(), cfg.c), cfg.width, 3, 1, 0, rng),
        second_(cfg.width, cfg.width, 2, 1, 0, rng),
        out_(cfg.width, 1, 1, 1, 0, rng) {}

  const DiscriminatorConfig& config() const { return cfg_; }

  std::size_t output_extent(std::size_t g) const { return g + 1 - DiscriminatorConfig::receptive_field(); }

  /// s: [B, c, g, g, g] -> [B, 1, g-3, g-3, g-3] logits.
  Tensor<T> operator()(const Tensor<T>& s) const {
    if (s.rank() != 5 || s.dim(1) != cfg_.c) {
      throw ShapeError("discriminate: expected [B, " + std::to_string(cfg_.c) + ", g, g, g], got " +
                       shape_str(s.shape()));
    }
    const std::size_t N = DiscriminatorConfig::receptive_field();
    for (std::size_t a = 2; a < 5; ++a) {
      if (s.dim(a) < N) {
        throw ShapeError("discriminate: grid " + shape_str(s.shape()) + " is smaller than the " + std::to_string(N) +
                         "^3 patch");
      }
    }
    auto x = leaky_relu(first_(s), T(cfg_.slope));
    x = leaky_relu(second_(x), T(cfg_.slope));
    return out_(x);
  }

  NamedParams<T> params() const {
    NamedParams<T> out;
    append_params(out, "conv0.", first_.params());
    append_params(out, "conv1.", second_.params());
    append_params(out, "out.", out_.params());
    return out;
  }

 private:
  DiscriminatorConfig cfg_;
  Conv3dLayer<T> first_, second_, out_;
};

// ----------------------------------------------------------------- objectives

template <class T>
struct GeneratorLoss {
  Tensor<T> total;
  double adversarial = 0, regularizer = 0;
};

/// mean softplus(-D(fake)) + alpha * sum over subspaces of ||U U^T - I||_F^2.
template <class T>
GeneratorLoss<T> generator_loss(const Tensor<T>& fake_logits, const SubspaceLayout<T>& layout, double alpha) {
  if (!(alpha >= 0)) throw ValueError("generator_loss: alpha must be non-negative");
  GeneratorLoss<T> out;
  auto adv = mean(softplus(neg(fake_logits)));
  out.adversarial = static_cast<double>(adv.item());
  out.total = adv;
  if (alpha > 0) {
    Tensor<T> reg;
    for (const auto& e : layout.entries) {
      auto r = subspace_regularizer(e.model);
      reg = reg.defined() ? add(reg, r) : r;
    }
    if (reg.defined()) {
      out.regularizer = static_cast<double>(reg.item());
      out.total = add(adv, mul_scalar(reg, T(alpha)));
    }
  }
  return out;
}

/// 1/2 E ||grad_s sum D(s)||^2 over a batch of real grids that require a
/// gradient. The result stays differentiable with respect to D's weights.
template <class T>
Tensor<T> r1_penalty(const Tensor<T>& real_logits, const Tensor<T>& real) {
  if (!real.requires_grad()) throw ValueError("r1_penalty: real grids must require a gradient");
  auto g = grad(sum(real_logits), {real}, true)[0];
  const double batch = real.rank() == 5 ? static_cast<double>(real.dim(0)) : 1.0;
  return mul_scalar(sum(square(g)), T(0.5 / batch));
}

template <class T>
struct DiscriminatorLoss {
  Tensor<T> total;
  double adversarial = 0, r1 = 0;
};

/// mean softplus(D(fake)) + mean softplus(-D(real)) + beta * R1(real).
template <class T>
DiscriminatorLoss<T> discriminator_loss(const Tensor<T>& fake_logits, const Tensor<T>& real_logits,
                                        const Tensor<T>& real, double beta) {
  if (!(beta >= 0)) throw ValueError("discriminator_loss: beta must be non-negative");
  DiscriminatorLoss<T> out;
  auto adv = add(mean(softplus(fake_logits)), mean(softplus(neg(real_logits))));
  out.adversarial = static_cast<double>(adv.item());
  out.total = adv;
  if (beta > 0) {
    auto r1 = r1_penalty(real_logits, real);
    out.r1 = static_cast<double>(r1.item());
    out.total = add(adv, mul_scalar(r1, T(beta)));
  }
  return out;
}

// -------------------------------------------------------------------- model

/// Generator and discriminator plus the hash of the VAE whose code grids the
/// pair was trained on.
template <class T>
struct LatentGan {
  Generator<T> generator;
  PatchDiscriminator<T> discriminator;
  std::string vae_hash;

  LatentGan(const GeneratorConfig& gc, const DiscriminatorConfig& dc, Rng& rng)
      : generator(gc, rng), discriminator(dc, rng) {
    if (gc.c != dc.c) throw ConfigError("gan config: generator and discriminator disagree on c");
  }

  Container to_container() const {
    Container c;
    c.kind = "gan";
    c.meta["generator"] = generator.config().to_json();
    c.meta["discriminator"] = discriminator.config().to_json();
    c.meta["layout"] = generator.layout().describe();
    c.meta["vae_hash"] = vae_hash;
    store_params(c, "generator.", generator.params());
    store_params(c, "discriminator.", discriminator.params());
    return c;
  }

  /// With a non-empty `expected_vae_hash`, refuses a checkpoint trained
  /// against a different VAE.
  static LatentGan from_container(const Container& c, const std::string& expected_vae_hash = "") {
    if (c.kind != "gan") throw ParseError("gan checkpoint: container kind '" + c.kind + "' is not a gan");
    GeneratorConfig gc;
    DiscriminatorConfig dc;
    std::string hash;
    try {
      gc = GeneratorConfig::from_json(c.meta.at("generator"));
      dc = DiscriminatorConfig::from_json(c.meta.at("discriminator"));
      hash = c.meta.at("vae_hash").get<std::string>();
    } catch (const json::exception& e) {
      throw ParseError(std::string("gan checkpoint: bad header: ") + e.what());
    }
    if (!expected_vae_hash.empty() && hash != expected_vae_hash) {
      throw ConfigError("gan checkpoint: trained against vae " + hash + ", but vae " + expected_vae_hash +
                        " was supplied");
    }
    Rng rng(0);
    LatentGan gan(gc, dc, rng);
    if (c.meta.at("layout") != gan.generator.layout().describe()) {
      throw ParseError("gan checkpoint: stored subspace layout does not match the generator config");
    }
    auto gp = gan.generator.params();
    restore_params(c, "generator.", gp);
    auto dp = gan.discriminator.params();
    restore_params(c, "discriminator.", dp);
    gan.vae_hash = hash;
    return gan;
  }
};

template <class T>
std::string vae_hash(const ShapeVae<T>& vae) {
  return content_hash(vae.to_container().serialize());
}

/// One grid per value with dimension `dim` of `base` set to that value and
/// everything else fixed. Each grid equals generate(z, coordinates).
template <class T>
std::vector<Tensor<T>> traverse_generate(const Generator<T>& gen, const Tensor<T>& z, const Coordinates& base,
                                         std::size_t dim, const std::vector<double>& values) {
  gen.check_coordinates(base);
  NoGrad guard;
  std::vector<Tensor<T>> grids;
  for (double v : values) grids.push_back(gen.generate(z, traverse_coordinates(base, dim, v)));
  return grids;
}

// ------------------------------------------------------------------ training

struct GanTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 16;
  std::size_t d_steps = 1;  // discriminator updates per generator update
  double lr_g = 1e-4;
  double lr_d = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double alpha = 1.0;  // subspace regularizer weight
  double beta = 1.0;   // R1 weight
  std::uint64_t seed = 0;

  void validate() const {
    if (steps == 0 || batch == 0 || d_steps == 0) throw ConfigError("gan training: steps, batch, d_steps must be positive");
    if (!(lr_g > 0) || !(lr_d > 0)) throw ConfigError("gan training: learning rates must be positive");
    if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1)) {
      throw ConfigError("gan training: Adam betas must lie in [0, 1)");
    }
    if (!(alpha >= 0) || !(beta >= 0)) throw ConfigError("gan training: alpha and beta must be non-negative");
  }

  json to_json() const {
    return {{"steps", steps}, {"batch", batch}, {"d_steps", d_steps}, {"lr_g", lr_g}, {"lr_d", lr_d},
            {"beta1", beta1}, {"beta2", beta2}, {"alpha", alpha}, {"beta", beta}, {"seed", seed}};
  }

  static GanTrainConfig from_json(const json& j) {
    GanTrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "steps") cfg.steps = value.get<std::size_t>();
      else if (key == "batch") cfg.batch = value.get<std::size_t>();
      else if (key == "d_steps") cfg.d_steps = value.get<std::size_t>();
      else if (key == "lr_g") cfg.lr_g = value.get<double>();
      else if (key == "lr_d") cfg.lr_d = value.get<double>();
      else if (key == "beta1") cfg.beta1 = value.get<double>();
      else if (key == "beta2") cfg.beta2 = value.get<double>();
      else if (key == "alpha") cfg.alpha = value.get<double>();
      else if (key == "beta") cfg.beta = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw ConfigError("gan training: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
  }
};

struct GanStepLog {
  std::size_t step = 0;
  double d_loss = 0, d_adversarial = 0, r1 = 0;
  double g_loss = 0, g_adversarial = 0, regularizer = 0;
  double seconds = 0;

  json to_json() const {
    return {{"step", step}, {"d_loss", d_loss}, {"d_adversarial", d_adversarial}, {"r1", r1},
            {"g_loss", g_loss}, {"g_adversarial", g_adversarial}, {"regularizer", regularizer},
            {"seconds", seconds}};
  }
};

struct GanTrainResult {
  std::vector<GanStepLog> steps;
  bool diverged = false;
  std::string message;
};

/// Posterior parameters of every shape in the shards, [N, c, g, g, g] each.
template <class T>
LatentDistribution<T> encode_shards(const ShapeVae<T>& vae, const std::vector<Shard>& shards, std::size_t chunk = 32) {
  NoGrad guard;
  const auto refs = detail::shape_refs(shards);
  if (refs.empty()) throw ValueError("encode_shards: no shapes");
  std::vector<Tensor<T>> mus, logs;
  for (std::size_t start = 0; start < refs.size(); start += chunk) {
    std::vector<const VoxelGrid*> grids;
    for (std::size_t k = start; k < std::min(refs.size(), start + chunk); ++k)
      grids.push_back(&refs[k].shard->voxels[refs[k].index]);
    auto d = vae.encode(vae.voxel_tensor(grids));
    mus.push_back(d.mu);
    logs.push_back(d.log_sigma);
  }
  return {concat<T>(mus, 0), concat<T>(logs, 0)};
}

/// Draws `batch` real code grids s = mu + sigma * eps from random shapes.
template <class T>
Tensor<T> sample_real_codes(const LatentDistribution<T>& codes, std::size_t batch, Rng& rng) {
  const Shape& full = codes.mu.shape();
  const std::size_t per = codes.mu.numel() / full[0];
  Shape shape = full;
  shape[0] = batch;
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t src = rng.index(full[0]);
    for (std::size_t j = 0; j < per; ++j) {
      const double mu = codes.mu[src * per + j];
      const double sigma = std::exp(static_cast<double>(codes.log_sigma[src * per + j]));
      out[b * per + j] = static_cast<T>(mu + sigma * rng.normal());
    }
  }
  return out;
}

/// Noise z and per-subspace coordinates for a batch, all standard normal.
template <class T>
std::pair<Tensor<T>, std::vector<Tensor<T>>> sample_generator_inputs(const Generator<T>& gen, std::size_t batch,
                                                                    Rng& rng) {
  auto z = Tensor<T>::randn(Shape{batch, gen.config().z_dim}, rng);
  std::vector<Tensor<T>> coords;
  for (std::size_t s = 0; s < gen.subspaces(); ++s) coords.push_back(Tensor<T>::randn(Shape{batch, gen.config().n}, rng));
  return {z, coords};
}

/// Alternating discriminator / generator Adam updates against code grids
/// drawn from a frozen VAE's posterior. A non-finite loss or gradient stops
/// training before the offending update is applied; the result then carries
/// the step, the losses seen so far in that step and the cause.
template <class T>
GanTrainResult train_gan(LatentGan<T>& gan, const LatentDistribution<T>& real_codes, const GanTrainConfig& cfg,
                         const std::function<void(const GanStepLog&)>& on_step = {}) {
  cfg.validate();
  const auto& gc = gan.generator.config();
  const Shape expect{real_codes.mu.dim(0), gc.c, gc.g, gc.g, gc.g};
  if (real_codes.mu.shape() != expect || real_codes.log_sigma.shape() != expect) {
    throw ShapeError("train_gan: real codes " + shape_str(real_codes.mu.shape()) + " do not match the generator's " +
                     std::to_string(gc.c) + " x " + std::to_string(gc.g) + "^3 grids");
  }
  Rng rng(cfg.seed);
  auto gp = gan.generator.params();
  auto dp = gan.discriminator.params();
  Adam<T> opt_g(gp, AdamConfig{cfg.lr_g, cfg.beta1, cfg.beta2, 1e-8});
  Adam<T> opt_d(dp, AdamConfig{cfg.lr_d, cfg.beta1, cfg.beta2, 1e-8});
  GanTrainResult result;
  for (std::size_t step = 1; step <= cfg.steps; ++step) {
    const auto t0 = std::chrono::steady_clock::now();
    GanStepLog log;
    log.step = step;
    auto fail = [&](const std::string& why) {
      result.diverged = true;
      result.message = "gan training stopped at step " + std::to_string(step) + ": " + why +
                       " (d_loss=" + std::to_string(log.d_loss) + ", r1=" + std::to_string(log.r1) +
                       ", g_loss=" + std::to_string(log.g_loss) + ")";
    };
    try {
      for (std::size_t k = 0; k < cfg.d_steps; ++k) {
        Tensor<T> fake;
        {
          NoGrad guard;
          auto [z, coords] = sample_generator_inputs(gan.generator, cfg.batch, rng);
          fake = gan.generator.generate(z, coords);
        }
        auto real = sample_real_codes(real_codes, cfg.batch, rng);
        real.set_requires_grad();
        opt_d.zero_grad();
        auto loss = discriminator_loss(gan.discriminator(fake), gan.discriminator(real), real, cfg.beta);
        log.d_loss = static_cast<double>(loss.total.item());
        log.d_adversarial = loss.adversarial;
        log.r1 = loss.r1;
        if (!std::isfinite(log.d_loss)) {
          fail("non-finite discriminator loss");
          return result;
        }
        backward(loss.total);
        opt_d.step();
      }
      auto [z, coords] = sample_generator_inputs(gan.generator, cfg.batch, rng);
      opt_g.zero_grad();
      auto loss = generator_loss(gan.discriminator(gan.generator.generate(z, coords)), gan.generator.layout(),
                                 cfg.alpha);
      log.g_loss = static_cast<double>(loss.total.item());
      log.g_adversarial = loss.adversarial;
      log.regularizer = loss.regularizer;
      if (!std::isfinite(log.g_loss)) {
        fail("non-finite generator loss");
        return result;
      }
      backward(loss.total);
      opt_g.step();
    } catch (const NumericError& e) {
      fail(e.what());
      return result;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.steps.push_back(log);
    if (on_step) on_step(log);
  }
  opt_d.zero_grad();
  opt_g.zero_grad();
  return result;
}

}  // namespace sst
