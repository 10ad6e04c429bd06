#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mglab/heightmap.hpp"
#include "mglab/nn/checkpoint.hpp"
#include "mglab/nn/layers.hpp"
#include "mglab/primitives.hpp"
#include "mglab/rng.hpp"
#include "mglab/scene_sim.hpp"
#include "mglab/variant.hpp"

namespace mglab {

/// Network sizes. Perception trunk: conv 3x3 stride 2, two residual blocks,
/// conv 3x3; heads are conv 1x1 followed by bilinear upsampling.
struct NetworkConfig {
  std::size_t grid = 64;
  std::size_t rotations = 8;
  std::size_t trunk_channels = 32;
  std::size_t velocity_channels = 16;
  std::size_t stem_padding = 0;
  std::size_t block_dilation = 1;
  double height_scale = 20.0;  // multiplies the height channel (m) on input
  double residual_clamp = 0.05;
  std::uint64_t init_seed = 1;

  static NetworkConfig desk() { return {}; }
  static NetworkConfig full() { return {112, 16, 512, 128, 1, 2, 20.0, 0.05, 1}; }

  void validate() const {
    if (grid < 8) throw std::invalid_argument("network: grid must be at least 8");
    if (rotations < 1) throw std::invalid_argument("network: rotations must be positive");
    if (trunk_channels < 1 || velocity_channels < 1) throw std::invalid_argument("network: channel counts must be positive");
    if (block_dilation < 1) throw std::invalid_argument("network: block dilation must be positive");
    if (!(residual_clamp > 0)) throw std::invalid_argument("network: residual clamp must be positive");
  }

  std::size_t trunk_extent() const {
    const std::size_t stem = (grid + 2 * stem_padding - 3) / 2 + 1;
    const std::size_t trim = 8 * block_dilation;
    if (stem <= trim) throw ShapeError("network: grid " + std::to_string(grid) + " too small for the trunk");
    return stem - trim;
  }

  bool operator==(const NetworkConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, grid, rotations, trunk_channels, velocity_channels,
                                                stem_padding, block_dilation, height_scale, residual_clamp, init_seed)

/// Per-pixel, per-rotation map stored as [R, 1, H, W].
struct AffordanceMap {
  Tensor32 values;

  std::size_t rotations() const { return values.dim(0); }
  std::size_t grid() const { return values.dim(2); }
  float at(std::size_t k, std::size_t i, std::size_t j) const { return values.at(k, 0, i, j); }
  float at(const PixelIndex& p) const { return at(p.rot, p.row, p.col); }
};
using ResidualMap = AffordanceMap;

struct StaticOutput {
  Tensor32 mu_s;    // [R, C, t, t]
  AffordanceMap q_gs;
};

struct DynamicOutput {
  Tensor32 mu_d;    // [R, C, t, t]
  ResidualMap q_m;  // zero when the moving module is off
  AffordanceMap q_gd;
};

/// The wired generator: stage-1 modules (perception1, static head) and
/// stage-2 modules (perception2, moving head, dynamic head).
template <typename T>
class BasicGenerator {
 public:
  using Seq = nn::Sequential<T>;

  explicit BasicGenerator(NetworkConfig cfg = {}) : cfg_(cfg) {
    cfg_.validate();
    build();
    init();
  }

  const NetworkConfig& config() const { return cfg_; }
  std::size_t rotations() const { return cfg_.rotations; }
  std::size_t grid() const { return cfg_.grid; }
  std::size_t trunk() const { return trunk_; }
  const nn::CoordMap& trunk_map() const { return trunk_map_; }

  Seq perception1{"perception1"};
  Seq static_head{"static_head"};
  Seq perception2{"perception2"};
  Seq moving_head{"moving_head"};
  Seq dynamic_head{"dynamic_head"};

  std::vector<Seq*> modules() { return {&perception1, &static_head, &perception2, &moving_head, &dynamic_head}; }
  std::vector<const Seq*> modules() const {
    return {&perception1, &static_head, &perception2, &moving_head, &dynamic_head};
  }

  std::vector<nn::Param<T>*> params() {
    std::vector<nn::Param<T>*> out;
    for (auto* m : modules())
      for (auto* p : m->params()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* m : modules()) m->zero_grad();
  }

  /// Stage-1 modules frozen, stage-2 modules trainable.
  void freeze_stage1(bool frozen) {
    perception1.set_trainable(!frozen);
    static_head.set_trainable(!frozen);
  }

  /// Full-resolution map -> trunk grid (average pooling).
  Tensor<T> downsample(const Tensor<T>& full) const { return down_.forward(full); }
  nn::AvgDownsample<T>& downsampler() { return down_; }

  /// Stack [R, 4, H, W] -> network input with the height channel rescaled.
  Tensor<T> prepare_input(const RotationStack& stack) const {
    if (stack.maps.rank() != 4 || stack.maps.dim(1) != kStackChannels || stack.maps.dim(2) != cfg_.grid ||
        stack.maps.dim(3) != cfg_.grid) {
      throw ShapeError("rotation stack " + shape_str(stack.maps.shape()) + " does not match a " +
                       std::to_string(cfg_.grid) + "x" + std::to_string(cfg_.grid) + " network");
    }
    if (stack.maps.dim(0) != cfg_.rotations) {
      throw ShapeError("rotation stack has " + std::to_string(stack.maps.dim(0)) + " copies, network expects " +
                       std::to_string(cfg_.rotations));
    }
    Tensor<T> x(stack.maps.shape());
    std::copy(stack.maps.data(), stack.maps.data() + stack.maps.size(), x.data());
    const std::size_t plane = cfg_.grid * cfg_.grid;
    const auto scale = static_cast<T>(cfg_.height_scale);
    for (std::size_t k = 0; k < x.dim(0); ++k) {
      T* h = x.data() + (k * kStackChannels + 3) * plane;
      for (std::size_t i = 0; i < plane; ++i) h[i] *= scale;
    }
    return x;
  }

  /// Constant velocity block [N, Cv, t, t].
  Tensor<T> velocity_block(std::size_t n, double v) const {
    Tensor<T> b({n, cfg_.velocity_channels, trunk_, trunk_});
    b.fill(static_cast<T>(v));
    return b;
  }

  nn::Checkpoint to_checkpoint(const std::string& stage, MethodVariant variant) const {
    nlohmann::json tag = {{"stage", stage}, {"variant", std::string(variant_name(variant))}, {"network", cfg_}};
    nn::Checkpoint ck;
    ck.tag = tag.dump();
    auto* self = const_cast<BasicGenerator*>(this);
    for (auto* p : self->params()) ck.entries.push_back(nn::to_entry(*p));
    return ck;
  }

  /// Same network at another precision (e.g. double for gradient checks).
  template <typename U>
  BasicGenerator<U> cast() const {
    BasicGenerator<U> out(cfg_);
    auto* self = const_cast<BasicGenerator*>(this);
    const auto src = self->params();
    const auto dst = out.params();
    for (std::size_t i = 0; i < src.size(); ++i) {
      std::copy(src[i]->value.data(), src[i]->value.data() + src[i]->value.size(), dst[i]->value.data());
      dst[i]->trainable = src[i]->trainable;
    }
    return out;
  }

  /// Rebuilds a generator from a checkpoint; shapes and names must match.
  static BasicGenerator from_checkpoint(const nn::Checkpoint& ck) {
    BasicGenerator g(network_of(ck));
    g.load(ck);
    return g;
  }

  void load(const nn::Checkpoint& ck) {
    const auto ps = params();
    if (ck.entries.size() != ps.size()) {
      throw nn::CheckpointError("checkpoint has " + std::to_string(ck.entries.size()) + " tensors, generator has " +
                                std::to_string(ps.size()));
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (ck.entries[i].name != ps[i]->name) {
        throw nn::CheckpointError("checkpoint tensor " + std::to_string(i) + " is '" + ck.entries[i].name +
                                  "', expected '" + ps[i]->name + "'");
      }
      nn::load_entry(*ps[i], ck.entries[i]);
    }
  }

  static nlohmann::json tag_of(const nn::Checkpoint& ck) {
    try {
      return nlohmann::json::parse(ck.tag);
    } catch (const nlohmann::json::exception&) {
      throw nn::CheckpointError("checkpoint tag is not valid metadata");
    }
  }
  static NetworkConfig network_of(const nn::Checkpoint& ck) {
    const auto tag = tag_of(ck);
    if (!tag.contains("network")) throw nn::CheckpointError("checkpoint tag lacks the network description");
    return tag.at("network").get<NetworkConfig>();
  }

 private:
  void build() {
    const std::size_t c = cfg_.trunk_channels, cv = cfg_.velocity_channels, d = cfg_.block_dilation;
    const std::size_t n = cfg_.grid;
    trunk_ = cfg_.trunk_extent();

    perception1.add(nn::Conv2d<T>("perception1.stem", {kStackChannels, c, 3, 2, cfg_.stem_padding, 1}));
    perception1.add(nn::Relu<T>());
    perception1.add(nn::ResidualBlock<T>("perception1.block1", c, d, false));
    perception1.add(nn::ResidualBlock<T>("perception1.block2", c, d, false));
    perception1.add(nn::Conv2d<T>("perception1.out", {c, c, 3, 1, 1, 1}));
    trunk_map_ = perception1.coord_map();

    const auto head = [&](Seq& s, const std::string& name, std::size_t in) {
      s.add(nn::Conv2d<T>(name + ".conv", {in, 1, 1, 1, 0, 1}));
      s.add(nn::BilinearUpsample<T>(n, n, trunk_map_));
    };
    head(static_head, "static_head", c);

    perception2.add(nn::Conv2d<T>("perception2.in", {c + 1, c, 3, 1, 1, 1}));
    perception2.add(nn::Relu<T>());
    perception2.add(nn::ResidualBlock<T>("perception2.block1", c, 1, true));
    perception2.add(nn::ResidualBlock<T>("perception2.block2", c, 1, true));
    perception2.add(nn::Conv2d<T>("perception2.out", {c, c, 3, 1, 1, 1}));

    head(moving_head, "moving_head", c + cv);
    head(dynamic_head, "dynamic_head", c + cv + 1);

    const auto radius = static_cast<std::size_t>(std::lround(trunk_map_.scale / 2));
    down_ = nn::AvgDownsample<T>(trunk_, trunk_, trunk_map_, radius);
  }

  void init() {
    Rng rng(cfg_.init_seed);
    for (auto* m : modules())
      for (std::size_t i = 0; i < m->size(); ++i) {
        auto& l = m->layer(i);
        if (auto* conv = dynamic_cast<nn::Conv2d<T>*>(&l)) conv->init(rng);
        if (auto* block = dynamic_cast<nn::ResidualBlock<T>*>(&l)) block->init(rng);
      }
    // Heads start at zero: grasp maps begin uniform at 0.5 and the residual
    // at 0, so v_hat = v until the moving module has seen successes.
    for (auto* m : {&static_head, &moving_head, &dynamic_head})
      for (auto* p : m->params()) p->value.fill(T(0));
  }

  NetworkConfig cfg_;
  std::size_t trunk_ = 0;
  nn::CoordMap trunk_map_;
  nn::AvgDownsample<T> down_{1, 1, {}, 0};
};

using GeneratorState = BasicGenerator<float>;

// ---------------------------------------------------------------------------
// Forward passes

template <typename T>
Tensor<T> sigmoid(Tensor<T> x) {
  for (auto& v : x.values()) v = static_cast<T>(1.0 / (1.0 + std::exp(-static_cast<double>(v))));
  return x;
}

template <typename T>
Tensor<T> clamp_residual(Tensor<T> x, double limit) {
  const auto l = static_cast<T>(limit);
  for (auto& v : x.values()) v = std::clamp(v, -l, l);
  return x;
}

/// Perception1 and static head over all rotation copies.
inline StaticOutput forward_static(const RotationStack& stack, const GeneratorState& g) {
  const Tensor32 x = g.prepare_input(stack);
  StaticOutput out;
  out.mu_s = g.perception1.forward(x);
  out.q_gs.values = sigmoid(g.static_head.forward(out.mu_s));
  return out;
}

/// Concatenation1 input for perception2: [mu_s, downsampled Q_gs]; the map
/// channel is zero when the static module is not wired in.
inline Tensor32 static_features(const StaticOutput& s, const GeneratorState& g, bool use_static) {
  Tensor32 qd = use_static ? g.downsample(s.q_gs.values) : Tensor32({s.mu_s.dim(0), 1, g.trunk(), g.trunk()});
  return concat_channels(s.mu_s, qd);
}

/// Perception2, moving head and dynamic head over all rotation copies.
inline DynamicOutput forward_dynamic(const StaticOutput& s, double v, const GeneratorState& g, Wiring w = {}) {
  if (s.mu_s.rank() != 4 || s.mu_s.dim(1) != g.config().trunk_channels || s.mu_s.dim(2) != g.trunk()) {
    throw ShapeError("forward_dynamic: trunk features " + shape_str(s.mu_s.shape()) + " do not match the generator");
  }
  const std::size_t r = s.mu_s.dim(0);
  DynamicOutput out;
  out.mu_d = g.perception2.forward(static_features(s, g, w.static_module));
  const Tensor32 mu_d_star = concat_channels(out.mu_d, g.velocity_block(r, v));
  if (w.moving_module) {
    out.q_m.values = clamp_residual(g.moving_head.forward(mu_d_star), g.config().residual_clamp);
  } else {
    out.q_m.values = Tensor32({r, 1, g.grid(), g.grid()});
  }
  if (w.dynamic_module) {
    out.q_gd.values = sigmoid(g.dynamic_head.forward(concat_channels(mu_d_star, g.downsample(out.q_m.values))));
  } else {
    out.q_gd.values = s.q_gs.values;
  }
  return out;
}

/// Convenience overload running both stages from a stack.
inline DynamicOutput forward_dynamic(const RotationStack& stack, double v, const GeneratorState& g, Wiring w = {}) {
  return forward_dynamic(forward_static(stack, g), v, g, w);
}

// ---------------------------------------------------------------------------
// Action selection

inline void require_finite(const AffordanceMap& m, const char* what) {
  if (!m.values.all_finite()) throw std::domain_error(std::string(what) + " contains non-finite values");
}

/// Pixels eligible for a grasp, [R, 1, H, W] with 1 = eligible. Empty means
/// every pixel is eligible.
struct ActionMask {
  Tensor32 allowed;
  bool empty() const { return allowed.empty(); }
  bool ok(std::size_t idx) const { return allowed.empty() || allowed[idx] != 0.0f; }
};

/// Pixels whose rotated height channel shows something above `min_height`.
/// Grasps over bare floor cannot succeed, so the trainer and evaluator only
/// consider object-support pixels. Falls back to all pixels on an empty scene.
inline ActionMask support_mask(const RotationStack& stack, double min_height) {
  const std::size_t r = stack.maps.dim(0), n = stack.grid();
  ActionMask m{Tensor32({r, 1, n, n})};
  bool any = false;
  for (std::size_t k = 0; k < r; ++k)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (stack.maps.at(k, 3, i, j) > min_height) {
          m.allowed.at(k, 0, i, j) = 1.0f;
          any = true;
        }
  if (!any) m.allowed = Tensor32();
  return m;
}

namespace detail {
inline PixelIndex unflatten(std::size_t idx, std::size_t n) { return {(idx / n) % n, idx % n, idx / (n * n)}; }

inline void check_mask(const AffordanceMap& q, const ActionMask* mask) {
  if (mask && !mask->empty() && mask->allowed.shape() != q.values.shape()) {
    throw ShapeError("action mask " + shape_str(mask->allowed.shape()) + " does not match map " +
                     shape_str(q.values.shape()));
  }
}
}  // namespace detail

/// Global argmax over (k, i, j); the first maximum in lexicographic order wins.
inline PixelIndex argmax_pixel(const AffordanceMap& q, const ActionMask* mask = nullptr) {
  require_finite(q, "affordance map");
  detail::check_mask(q, mask);
  const float* d = q.values.data();
  std::size_t best = q.values.size();
  for (std::size_t idx = 0; idx < q.values.size(); ++idx) {
    if (mask && !mask->ok(idx)) continue;
    if (best == q.values.size() || d[idx] > d[best]) best = idx;
  }
  if (best == q.values.size()) best = 0;
  return detail::unflatten(best, q.grid());
}

inline double rotation_angle(std::size_t k, std::size_t rotations) {
  return static_cast<double>(k) * (2.0 * kPi / static_cast<double>(rotations));
}

inline GraspPrimitive grasp_at(const PixelIndex& p, std::size_t rotations, const FrameConfig& frame) {
  const Vec2 w = pixel_to_world(p.row, p.col, p.rot, rotations, frame);
  return {w.x, w.y, rotation_angle(p.rot, rotations), p};
}

/// v_hat = clamp(v + Q_m at the chosen pixel).
inline MovePrimitive move_at(const ResidualMap& q_m, const PixelIndex& p, double v, const ActuatorLimits& limits) {
  require_finite(q_m, "residual map");
  return {limits.clamp(v + static_cast<double>(q_m.at(p))), v};
}

inline std::pair<MovePrimitive, GraspPrimitive> action_determination(const ResidualMap& q_m, const AffordanceMap& q_gd,
                                                                     double v, const FrameConfig& frame,
                                                                     const ActuatorLimits& limits = {},
                                                                     const ActionMask* mask = nullptr) {
  if (q_m.values.shape() != q_gd.values.shape()) {
    throw ShapeError("residual map " + shape_str(q_m.values.shape()) + " and grasp map " +
                     shape_str(q_gd.values.shape()) + " differ");
  }
  const PixelIndex p = argmax_pixel(q_gd, mask);
  return {move_at(q_m, p, v, limits), grasp_at(p, q_gd.rotations(), frame)};
}

inline constexpr double kTopFraction = 0.05;

/// Flat indices of the top 5% of eligible pixels, highest first (ties by index).
inline std::vector<std::size_t> top_fraction(const AffordanceMap& q, const ActionMask* mask = nullptr,
                                             double fraction = kTopFraction) {
  detail::check_mask(q, mask);
  std::vector<std::size_t> idx;
  idx.reserve(q.values.size());
  for (std::size_t i = 0; i < q.values.size(); ++i)
    if (!mask || mask->ok(i)) idx.push_back(i);
  const auto count =
      std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(idx.size()))));
  const float* d = q.values.data();
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(count), idx.end(),
                    [d](std::size_t a, std::size_t b) { return d[a] > d[b] || (d[a] == d[b] && a < b); });
  idx.resize(count);
  return idx;
}

/// Epsilon-greedy: the argmax with probability 1 - eps, otherwise a uniform
/// pick from the top-5% set.
inline PixelIndex exploration_action(const AffordanceMap& q, double epsilon, Rng& rng,
                                     const ActionMask* mask = nullptr) {
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) throw std::invalid_argument("exploration: epsilon must lie in [0, 1]");
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  if (u >= epsilon) return argmax_pixel(q, mask);
  require_finite(q, "affordance map");
  const auto top = top_fraction(q, mask);
  const std::size_t pick = top[std::uniform_int_distribution<std::size_t>(0, top.size() - 1)(rng)];
  return detail::unflatten(pick, q.grid());
}

}  // namespace mglab
