#pragma once

// Voxel-to-occupancy variational autoencoder. The encoder maps r^3 voxels to
// the mean and log standard deviation of a c x g^3 shape code grid; the
// decoder reads the code grid by trilinear interpolation at a query point and
// at the six points offset by +-d along each axis, appends the coordinates
// and maps the 7c+3 features to an occupancy logit with a shared MLP.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "sst/checkpoint.hpp"
#include "sst/container.hpp"
#include "sst/datasets.hpp"
#include "sst/geometry/voxel.hpp"
#include "sst/nn.hpp"
#include "sst/optim.hpp"
#include "sst/sample.hpp"

namespace sst {

struct VaeConfig {
  std::size_t r = 32;
  std::size_t c = 8;
  std::size_t g = 8;
  double d = 0.0536;
  std::vector<std::size_t> encoder_widths{16, 32};  // one per stride-2 stage
  std::size_t decoder_width = 128;
  std::size_t decoder_layers = 2;

  /// Number of stride-2 stages taking r down to g.
  std::size_t stages() const {
    std::size_t n = 0, e = r;
    while (e > g && e % 2 == 0) {
      e /= 2;
      ++n;
    }
    return n;
  }

  void validate() const {
    if (r < 1 || c < 1 || g < 1) throw ConfigError("vae config: r, c and g must be at least 1");
    if (!(d > 0 && d < 0.5)) throw ConfigError("vae config: d must lie in (0, 0.5)");
    if ((g << stages()) != r) throw ConfigError("vae config: r must be g times a power of two");
    if (encoder_widths.size() != stages()) {
      throw ConfigError("vae config: encoder_widths needs " + std::to_string(stages()) + " entries for r=" +
                        std::to_string(r) + ", g=" + std::to_string(g));
    }
    for (auto w : encoder_widths)
      if (w == 0) throw ConfigError("vae config: encoder widths must be positive");
    if (decoder_width == 0 || decoder_layers == 0) throw ConfigError("vae config: decoder needs width and layers");
  }

  std::size_t decoder_inputs() const { return 7 * c + 3; }

  json to_json() const {
    return {{"r", r},
            {"c", c},
            {"g", g},
            {"d", d},
            {"encoder_widths", encoder_widths},
            {"decoder_width", decoder_width},
            {"decoder_layers", decoder_layers}};
  }

  static VaeConfig from_json(const json& j) {
    VaeConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "r") cfg.r = value.get<std::size_t>();
      else if (key == "c") cfg.c = value.get<std::size_t>();
      else if (key == "g") cfg.g = value.get<std::size_t>();
      else if (key == "d") cfg.d = value.get<double>();
      else if (key == "encoder_widths") cfg.encoder_widths = value.get<std::vector<std::size_t>>();
      else if (key == "decoder_width") cfg.decoder_width = value.get<std::size_t>();
      else if (key == "decoder_layers") cfg.decoder_layers = value.get<std::size_t>();
      else throw ConfigError("vae config: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
  }

  bool operator==(const VaeConfig&) const = default;
};

/// Diagonal Gaussian over code grids; sigma is stored as its logarithm.
template <class T>
struct LatentDistribution {
  Tensor<T> mu;
  Tensor<T> log_sigma;

  Tensor<T> sigma() const { return exp(log_sigma); }
};

/// s = mu + sigma * eps. A log-sigma of -inf gives sigma = 0 and s = mu.
template <class T>
Tensor<T> reparameterize(const LatentDistribution<T>& dist, const Tensor<T>& eps) {
  if (dist.mu.shape() != dist.log_sigma.shape() || eps.shape() != dist.mu.shape()) {
    throw ShapeError("reparameterize: mu " + shape_str(dist.mu.shape()) + ", log_sigma " +
                     shape_str(dist.log_sigma.shape()) + " and eps " + shape_str(eps.shape()) + " must match");
  }
  return add(dist.mu, mul_const(dist.sigma(), eps));
}

/// KL(N(mu, sigma) || N(0, 1)) = 1/2 sum(mu^2 + sigma^2 - 1 - 2 ln sigma),
/// summed over code elements and averaged over the batch for [B, c, g, g, g].
template <class T>
Tensor<T> kl_divergence(const LatentDistribution<T>& dist) {
  if (dist.mu.shape() != dist.log_sigma.shape()) detail::shape_mismatch("kl_divergence", dist.mu, dist.log_sigma);
  const auto terms = sub(add(square(dist.mu), exp(mul_scalar(dist.log_sigma, T(2)))),
                         add_scalar(mul_scalar(dist.log_sigma, T(2)), T(1)));
  const T batch = dist.mu.rank() == 5 ? static_cast<T>(dist.mu.dim(0)) : T(1);
  return mul_scalar(sum(terms), T(0.5) / batch);
}

/// Mean binary cross-entropy with logits: softplus(x) - y x.
template <class T>
Tensor<T> bce_with_logits(const Tensor<T>& logits, const Tensor<T>& targets) {
  if (logits.numel() != targets.numel()) {
    throw ShapeError("bce: " + std::to_string(logits.numel()) + " predictions for " +
                     std::to_string(targets.numel()) + " targets");
  }
  for (T v : logits.data())
    if (!std::isfinite(static_cast<double>(v))) throw NumericError("bce: non-finite logit");
  const auto y = reshape(targets.detach(), logits.shape());
  return mean(sub(softplus(logits), mul_const(logits, y)));
}

template <class T>
struct VaeLoss {
  Tensor<T> total;
  double bce = 0;
  double kl = 0;
};

/// Mean BCE over the sampled points plus kl_weight times the KL term.
template <class T>
VaeLoss<T> vae_loss(const Tensor<T>& logits, const Tensor<T>& targets, const LatentDistribution<T>& dist,
                    double kl_weight = 1.0) {
  VaeLoss<T> out;
  const auto bce = bce_with_logits(logits, targets);
  const auto kl = kl_divergence(dist);
  out.bce = static_cast<double>(bce.item());
  out.kl = static_cast<double>(kl.item());
  out.total = add(bce, mul_scalar(kl, static_cast<T>(kl_weight)));
  return out;
}

template <class T>
class ShapeVae {
 public:
  ShapeVae() = default;
  ShapeVae(const VaeConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg_.validate();
    std::size_t in = 1;
    for (auto w : cfg_.encoder_widths) {
      down_.emplace_back(in, w, 4, 2, 1, rng);
      in = w;
    }
    const std::size_t width = cfg_.encoder_widths.empty() ? 32 : cfg_.encoder_widths.back();
    mid_ = Conv3dLayer<T>(in, width, 3, 1, 1, rng);
    head_ = Conv3dLayer<T>(width, 2 * cfg_.c, 1, 1, 0, rng);
    std::size_t features = cfg_.decoder_inputs();
    for (std::size_t i = 0; i < cfg_.decoder_layers; ++i) {
      hidden_.emplace_back(features, cfg_.decoder_width, rng);
      features = cfg_.decoder_width;
    }
    out_ = Linear<T>(features, 1, rng);
  }

  const VaeConfig& config() const { return cfg_; }

  /// Packs voxel grids into a [B, 1, r, r, r] tensor of 0/1 values.
  Tensor<T> voxel_tensor(const std::vector<const VoxelGrid*>& grids) const {
    const std::size_t r = cfg_.r, n = r * r * r;
    Tensor<T> x(Shape{grids.size(), 1, r, r, r});
    for (std::size_t b = 0; b < grids.size(); ++b) {
      if (grids[b]->r != r) {
        throw ShapeError("vae encode: voxel extent " + std::to_string(grids[b]->r) + " does not match r=" +
                         std::to_string(r));
      }
      for (std::size_t i = 0; i < n; ++i) x[b * n + i] = grids[b]->bits[i] ? T(1) : T(0);
    }
    return x;
  }

  /// voxels: [B, 1, r, r, r] -> distribution over [B, c, g, g, g].
  LatentDistribution<T> encode(const Tensor<T>& voxels) const {
    const Shape want{voxels.rank() == 5 ? voxels.dim(0) : 0, 1, cfg_.r, cfg_.r, cfg_.r};
    if (voxels.shape() != want) {
      throw ShapeError("vae encode: expected [B,1," + std::to_string(cfg_.r) + "," + std::to_string(cfg_.r) + "," +
                       std::to_string(cfg_.r) + "], got " + shape_str(voxels.shape()));
    }
    auto h = voxels;
    for (const auto& layer : down_) h = leaky_relu(layer(h));
    h = leaky_relu(mid_(h));
    h = head_(h);
    return {slice(h, 1, 0, cfg_.c), clamp(slice(h, 1, cfg_.c, cfg_.c), T(-20), T(10))};
  }

  LatentDistribution<T> encode(const VoxelGrid& grid) const {
    auto d = encode(voxel_tensor({&grid}));
    return {squeeze0(d.mu), squeeze0(d.log_sigma)};
  }

  /// Occupancy logits. s: [B, c, g, g, g] with points [B, P, 3] -> [B, P], or
  /// s: [c, g, g, g] with points [P, 3] -> [P]. Rows of the MLP are computed
  /// independently, so logits do not depend on how points are batched.
  Tensor<T> decode_points(const Tensor<T>& s, const Tensor<T>& points) const {
    const bool batched = s.rank() == 5;
    const Shape code{cfg_.c, cfg_.g, cfg_.g, cfg_.g};
    if (!(batched ? Shape(s.shape().begin() + 1, s.shape().end()) == code : s.shape() == code)) {
      throw ShapeError("vae decode: code grid " + shape_str(s.shape()) + " does not match c=" +
                       std::to_string(cfg_.c) + ", g=" + std::to_string(cfg_.g));
    }
    const std::size_t B = batched ? s.dim(0) : 1;
    if (points.rank() != (batched ? 3u : 2u) || points.shape().back() != 3 || (batched && points.dim(0) != B)) {
      throw ShapeError("vae decode: points " + shape_str(points.shape()) + " do not match code grid " +
                       shape_str(s.shape()));
    }
    const std::size_t P = batched ? points.dim(1) : points.dim(0);
    const std::size_t rows = B * P;
    if (rows == 0) return Tensor<T>(batched ? Shape{B, 0} : Shape{0});

    // Query set per point: p, then p -/+ d along x, y, z, clamped to [0,1].
    Tensor<T> queries(Shape{B, P * 7, 3});
    const double d = cfg_.d;
    for (std::size_t i = 0; i < rows; ++i) {
      const T* p = points.data().data() + i * 3;
      T* q = queries.data().data() + i * 21;
      for (std::size_t k = 0; k < 7; ++k)
        for (std::size_t a = 0; a < 3; ++a) {
          double v = static_cast<double>(p[a]);
          if (k > 0 && (k - 1) / 2 == a) v += (k % 2 == 1 ? -d : d);
          q[k * 3 + a] = static_cast<T>(std::clamp(v, 0.0, 1.0));
        }
    }
    const auto grid = batched ? s : reshape(s, Shape{1, cfg_.c, cfg_.g, cfg_.g, cfg_.g});
    auto feats = reshape(trilinear_sample(grid, queries), Shape{rows, 7 * cfg_.c});
    auto x = concat<T>({feats, reshape(points.detach(), Shape{rows, 3})}, 1);
    // A single-row product would take Eigen's matrix-vector path, whose
    // accumulation order differs from the blocked product; a duplicate row
    // keeps every evaluation on the same kernel.
    if (rows == 1) x = concat<T>({x, x}, 0);
    for (const auto& layer : hidden_) x = leaky_relu(layer(x));
    x = out_(x);
    if (rows == 1) x = slice(x, 0, 0, 1);
    return reshape(x, batched ? Shape{B, P} : Shape{P});
  }

  /// Occupancy probabilities on the res^3 lattice with nodes at i / (res - 1).
  OccupancyField decode_grid(const Tensor<T>& s, std::size_t res, std::size_t chunk = 16384) const {
    if (res < 2) throw ValueError("decode_grid: res must be at least 2");
    NoGrad guard;
    OccupancyField field(res);
    const std::size_t total = res * res * res;
    chunk = std::max<std::size_t>(chunk, 2);
    for (std::size_t start = 0; start < total; start += chunk) {
      const std::size_t n = std::min(chunk, total - start);
      Tensor<T> pts(Shape{n, 3});
      for (std::size_t i = 0; i < n; ++i) {
        const std::size_t idx = start + i;
        const auto p = field.node(idx / (res * res), (idx / res) % res, idx % res);
        for (int a = 0; a < 3; ++a) pts[i * 3 + a] = static_cast<T>(p[a]);
      }
      const auto logits = decode_points(s, pts);
      for (std::size_t i = 0; i < n; ++i) field.values[start + i] = float(sigmoid_value(logits[i]));
    }
    return field;
  }

  NamedParams<T> params() const {
    NamedParams<T> out;
    for (std::size_t i = 0; i < down_.size(); ++i) append_params(out, "encoder.down" + std::to_string(i) + ".", down_[i].params());
    append_params(out, "encoder.mid.", mid_.params());
    append_params(out, "encoder.head.", head_.params());
    for (std::size_t i = 0; i < hidden_.size(); ++i)
      append_params(out, "decoder.hidden" + std::to_string(i) + ".", hidden_[i].params());
    append_params(out, "decoder.out.", out_.params());
    return out;
  }

  /// Zeroes the decoder weights that read the appended coordinates.
  void zero_coordinate_weights() {
    auto& w = hidden_.front().weight;
    const std::size_t width = w.dim(1);
    for (std::size_t row = 7 * cfg_.c; row < w.dim(0); ++row)
      for (std::size_t j = 0; j < width; ++j) w[row * width + j] = T(0);
  }

  Container to_container() const {
    Container c;
    c.kind = "vae";
    c.meta["config"] = cfg_.to_json();
    store_params(c, "", params());
    return c;
  }

  static ShapeVae from_container(const Container& c) {
    if (c.kind != "vae") throw ParseError("vae checkpoint: container kind '" + c.kind + "' is not a vae");
    VaeConfig cfg;
    try {
      cfg = VaeConfig::from_json(c.meta.at("config"));
    } catch (const json::exception& e) {
      throw ParseError(std::string("vae checkpoint: bad config: ") + e.what());
    }
    Rng rng(0);
    ShapeVae vae(cfg, rng);
    auto p = vae.params();
    restore_params(c, "", p);
    return vae;
  }

 private:
  VaeConfig cfg_;
  std::vector<Conv3dLayer<T>> down_;
  Conv3dLayer<T> mid_, head_;
  std::vector<Linear<T>> hidden_;
  Linear<T> out_;

  static Tensor<T> squeeze0(const Tensor<T>& t) { return reshape(t, Shape(t.shape().begin() + 1, t.shape().end())); }
};

struct VaeTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch = 16;
  std::size_t points = 2048;  // per shape per step, half uniform and half near-surface
  double lr = 1e-3;
  double kl_weight = 1e-5;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0 || batch == 0) throw ConfigError("vae training: epochs and batch must be positive");
    if (points < 2 || points % 2 != 0) throw ConfigError("vae training: points must be a positive even number");
    if (!(lr > 0) || !(kl_weight >= 0)) throw ConfigError("vae training: lr must be positive and kl_weight >= 0");
  }

  json to_json() const {
    return {{"epochs", epochs}, {"batch", batch}, {"points", points}, {"lr", lr}, {"kl_weight", kl_weight},
            {"seed", seed}};
  }

  static VaeTrainConfig from_json(const json& j) {
    VaeTrainConfig cfg;
    for (const auto& [key, value] : j.items()) {
      if (key == "epochs") cfg.epochs = value.get<std::size_t>();
      else if (key == "batch") cfg.batch = value.get<std::size_t>();
      else if (key == "points") cfg.points = value.get<std::size_t>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "kl_weight") cfg.kl_weight = value.get<double>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw ConfigError("vae training: unknown key '" + key + "'");
    }
    cfg.validate();
    return cfg;
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0, bce = 0, kl = 0, seconds = 0;

  json to_json() const { return {{"epoch", epoch}, {"loss", loss}, {"bce", bce}, {"kl", kl}, {"seconds", seconds}}; }
};

struct TrainResult {
  std::vector<EpochLog> epochs;
  bool diverged = false;
  std::string message;
};

/// One training batch drawn from shards: voxels, query points and targets.
template <class T>
struct VaeBatch {
  Tensor<T> voxels, points, targets;
};

namespace detail {

struct ShapeRef {
  const Shard* shard;
  std::size_t index;
};

inline std::vector<ShapeRef> shape_refs(const std::vector<Shard>& shards) {
  std::vector<ShapeRef> refs;
  for (const auto& s : shards)
    for (std::size_t i = 0; i < s.size(); ++i) refs.push_back({&s, i});
  return refs;
}

}  // namespace detail

/// Draws points/2 uniform and points/2 near-surface samples for each shape.
template <class T>
VaeBatch<T> make_vae_batch(const ShapeVae<T>& model, const std::vector<detail::ShapeRef>& shapes,
                           std::size_t points, Rng& rng) {
  VaeBatch<T> b;
  std::vector<const VoxelGrid*> grids;
  for (const auto& s : shapes) grids.push_back(&s.shard->voxels[s.index]);
  b.voxels = model.voxel_tensor(grids);
  b.points = Tensor<T>(Shape{shapes.size(), points, 3});
  b.targets = Tensor<T>(Shape{shapes.size(), points});
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    const Shard& sh = *shapes[k].shard;
    const std::size_t P = sh.points_per_shape, nu = sh.n_uniform;
    if (nu == 0 || nu == P) throw ValueError("vae training: shard needs both uniform and near-surface samples");
    for (std::size_t j = 0; j < points; ++j) {
      const std::size_t src = j < points / 2 ? rng.index(nu) : nu + rng.index(P - nu);
      const std::size_t off = shapes[k].index * P + src;
      for (int a = 0; a < 3; ++a) b.points[(k * points + j) * 3 + a] = static_cast<T>(sh.points[off * 3 + a]);
      b.targets[k * points + j] = static_cast<T>(sh.occupancy[off]);
    }
  }
  return b;
}

/// Loss of the current model on a batch, encoding with noise eps.
template <class T>
VaeLoss<T> vae_batch_loss(const ShapeVae<T>& model, const VaeBatch<T>& b, const Tensor<T>& eps, double kl_weight) {
  const auto dist = model.encode(b.voxels);
  const auto s = reparameterize(dist, eps);
  return vae_loss(model.decode_points(s, b.points), b.targets, dist, kl_weight);
}

/// Minibatch Adam on BCE + KL. The model is updated in place. A non-finite
/// loss or gradient stops training and restores the weights from the end of
/// the last completed epoch.
template <class T>
TrainResult train_vae(ShapeVae<T>& model, const std::vector<Shard>& shards, const VaeTrainConfig& cfg,
                      const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  const auto refs = detail::shape_refs(shards);
  if (refs.empty()) throw ValueError("vae training: no shapes");
  auto params = model.params();
  Adam<T> opt(params, AdamConfig{cfg.lr, 0.9, 0.999, 1e-8});
  Rng rng(cfg.seed);
  const auto& mc = model.config();
  TrainResult result;
  Container last_good = model.to_container();
  std::vector<std::size_t> order(refs.size());
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng.engine());
    EpochLog log;
    log.epoch = epoch;
    std::size_t steps = 0;
    try {
      for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
        std::vector<detail::ShapeRef> chosen;
        for (std::size_t k = start; k < std::min(order.size(), start + cfg.batch); ++k) chosen.push_back(refs[order[k]]);
        const auto batch = make_vae_batch(model, chosen, cfg.points, rng);
        const auto eps = Tensor<T>::randn(Shape{chosen.size(), mc.c, mc.g, mc.g, mc.g}, rng);
        opt.zero_grad();
        auto loss = vae_batch_loss(model, batch, eps, cfg.kl_weight);
        const double value = static_cast<double>(loss.total.item());
        if (!std::isfinite(value)) throw NumericError("vae training: non-finite loss at epoch " + std::to_string(epoch));
        backward(loss.total);
        opt.step();
        log.loss += value;
        log.bce += loss.bce;
        log.kl += loss.kl;
        ++steps;
      }
    } catch (const NumericError& e) {
      auto restored = ShapeVae<T>::from_container(last_good).params();
      copy_values(restored, params);
      result.diverged = true;
      result.message = e.what();
      return result;
    }
    log.loss /= double(steps);
    log.bce /= double(steps);
    log.kl /= double(steps);
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.epochs.push_back(log);
    if (on_epoch) on_epoch(log);
    last_good = model.to_container();
  }
  return result;
}

/// Reconstruction from the posterior mean.
template <class T>
OccupancyField reconstruct(const ShapeVae<T>& model, const VoxelGrid& voxels, std::size_t res) {
  NoGrad guard;
  return model.decode_grid(model.encode(voxels).mu, res);
}

/// Exact membership of a solid at the nodes of the res^3 lattice used by
/// decode_grid, binarized in the same layout as OccupancyField::threshold.
inline VoxelGrid lattice_occupancy(const Solid& solid, std::size_t res) {
  return field_from_function(res, [&](const Vec3& p) { return solid.inside(p) ? 1.0 : 0.0; }).threshold(0.5);
}

}  // namespace sst
