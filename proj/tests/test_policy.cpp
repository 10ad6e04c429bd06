#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "mglab/policy.hpp"

using namespace mglab;

namespace {

void randomize(GeneratorState::Seq& s, Rng& rng, double scale) {
  std::normal_distribution<double> nd(0.0, scale);
  for (auto* p : s.params())
    for (auto& v : p->value.values()) v = static_cast<float>(nd(rng));
}

// Trunk extent from the layer list: 3x3 stride-2 stem, two residual blocks of
// two unpadded 3x3 convs each (dilated), then a padded 3x3 conv.
std::size_t trunk_by_layers(std::size_t n, std::size_t stem_pad, std::size_t dil) {
  std::size_t t = (n + 2 * stem_pad - 3) / 2 + 1;
  for (int conv = 0; conv < 4; ++conv) t -= 2 * dil;
  return t;
}

NetworkConfig small_net() {
  NetworkConfig c;
  c.grid = 32;
  c.rotations = 8;
  c.trunk_channels = 8;
  c.velocity_channels = 4;
  return c;
}

RotationStack scene_stack(std::uint64_t seed, std::size_t n_objects, const NetworkConfig& net, double cell) {
  const FrameConfig frame = FrameConfig::centered(net.grid, cell);
  SceneConfig sc;
  sc.margin = 0.02;
  const SceneSpec scene = sample_scene(seed, sc, frame, n_objects);
  return build_rotation_stack(render_heightmap(scene, frame), net.rotations);
}

GeneratorState random_generator(const NetworkConfig& net, std::uint64_t seed) {
  GeneratorState g(net);
  Rng rng(seed);
  randomize(g.static_head, rng, 0.3);
  randomize(g.moving_head, rng, 0.01);
  randomize(g.dynamic_head, rng, 0.3);
  return g;
}

AffordanceMap map_of(std::size_t r, std::size_t n, float fill = 0.0f) {
  AffordanceMap m{Tensor32({r, 1, n, n})};
  m.values.fill(fill);
  return m;
}

}  // namespace

TEST(ForwardStatic, DeskShapes) {
  const NetworkConfig net = NetworkConfig::desk();
  EXPECT_EQ(trunk_by_layers(64, 0, 1), 23u);
  GeneratorState g(net);
  EXPECT_EQ(g.trunk(), 23u);
  const auto stack = scene_stack(1, 2, net, 0.005);
  const auto s = forward_static(stack, g);
  EXPECT_EQ(s.mu_s.shape(), (std::vector<std::size_t>{8, 32, 23, 23}));
  EXPECT_EQ(s.q_gs.values.shape(), (std::vector<std::size_t>{8, 1, 64, 64}));
}

TEST(ForwardStatic, FullTrunkShape) {
  const NetworkConfig net = NetworkConfig::full();
  EXPECT_EQ(trunk_by_layers(112, 1, 2), 40u);
  EXPECT_EQ(net.trunk_extent(), 40u);
  // One rotation copy through the full-width trunk keeps this affordable.
  GeneratorState g(net);
  Tensor32 x({1, kStackChannels, 112, 112});
  Rng rng(3);
  for (auto& v : x.values()) v = static_cast<float>(uniform(rng, 0.0, 1.0));
  const Tensor32 mu = g.perception1.forward(x);
  EXPECT_EQ(mu.shape(), (std::vector<std::size_t>{1, 512, 40, 40}));
  EXPECT_EQ(g.static_head.forward(mu).shape(), (std::vector<std::size_t>{1, 1, 112, 112}));
  EXPECT_EQ(g.velocity_block(16, 0.15).shape(), (std::vector<std::size_t>{16, 128, 40, 40}));
}

TEST(ForwardStatic, ZeroHeadIsUniformSigmoidOfBias) {
  const NetworkConfig net = small_net();
  GeneratorState g(net);
  const auto stack = scene_stack(2, 2, net, 0.01);
  const auto init = forward_static(stack, g);
  for (const auto& v : init.q_gs.values.values()) EXPECT_EQ(v, 0.5f);
  for (auto* p : g.static_head.params())
    if (p->value.size() == 1) p->value.fill(0.7f);
    else p->value.fill(0.0f);
  const float expect = static_cast<float>(1.0 / (1.0 + std::exp(-0.7)));
  const auto biased = forward_static(stack, g);
  for (const auto& v : biased.q_gs.values.values()) EXPECT_NEAR(v, expect, 1e-6);
}

TEST(ForwardStatic, RejectsMismatchedStack) {
  GeneratorState g(small_net());
  NetworkConfig other = small_net();
  other.rotations = 4;
  EXPECT_THROW(forward_static(scene_stack(1, 1, other, 0.01), g), ShapeError);
  other = small_net();
  other.grid = 40;
  EXPECT_THROW(forward_static(scene_stack(1, 1, other, 0.01), g), ShapeError);
}

TEST(ForwardStatic, HeightChannelIsScaled) {
  GeneratorState g(small_net());
  const auto stack = scene_stack(4, 2, small_net(), 0.01);
  const Tensor32 x = g.prepare_input(stack);
  for (std::size_t i = 0; i < 32; ++i) {
    EXPECT_EQ(x.at(3, 3, i, 7), stack.maps.at(3, 3, i, 7) * 20.0f);
    EXPECT_EQ(x.at(3, 0, i, 7), stack.maps.at(3, 0, i, 7));
  }
}

TEST(ForwardDynamic, VelocityBlockIsConstant) {
  GeneratorState g(NetworkConfig::desk());
  const Tensor32 b = g.velocity_block(8, 0.15);
  EXPECT_EQ(b.shape(), (std::vector<std::size_t>{8, 16, 23, 23}));
  for (const auto& v : b.values()) EXPECT_EQ(v, 0.15f);
}

TEST(ForwardDynamic, PureFunctionOfInputs) {
  const NetworkConfig net = small_net();
  const GeneratorState g = random_generator(net, 5);
  const auto stack = scene_stack(6, 3, net, 0.01);
  const auto a = forward_dynamic(stack, 0.15, g);
  const auto b = forward_dynamic(stack, 0.15, g);
  EXPECT_EQ(a.q_gd.values, b.q_gd.values);
  EXPECT_EQ(a.q_m.values, b.q_m.values);
  EXPECT_EQ(a.mu_d, b.mu_d);
  // The commanded velocity reaches both heads.
  const auto c = forward_dynamic(stack, 0.20, g);
  EXPECT_NE(a.q_m.values, c.q_m.values);
  EXPECT_NE(a.q_gd.values, c.q_gd.values);
}

TEST(ForwardDynamic, ZeroDynamicWeightsGiveConstantMap) {
  const NetworkConfig net = small_net();
  GeneratorState g = random_generator(net, 7);
  for (auto* p : g.dynamic_head.params())
    if (p->value.size() == 1) p->value.fill(-0.4f);
    else p->value.fill(0.0f);
  const auto d = forward_dynamic(scene_stack(8, 2, net, 0.01), 0.12, g);
  const float first = d.q_gd.values[0];
  for (const auto& v : d.q_gd.values.values()) EXPECT_EQ(v, first);
  EXPECT_NEAR(first, 1.0 / (1.0 + std::exp(0.4)), 1e-6);
}

TEST(ForwardDynamic, ResidualStaysWithinClamp) {
  const NetworkConfig net = small_net();
  GeneratorState g = random_generator(net, 9);
  Rng rng(1);
  randomize(g.moving_head, rng, 5.0);
  const auto d = forward_dynamic(scene_stack(10, 3, net, 0.01), 0.15, g);
  bool hit = false;
  for (const auto& v : d.q_m.values.values()) {
    EXPECT_LE(std::abs(v), 0.05f);
    hit = hit || std::abs(v) == 0.05f;
  }
  EXPECT_TRUE(hit);
}

TEST(ForwardDynamic, WiringSwitchesModulesOff) {
  const NetworkConfig net = small_net();
  const GeneratorState g = random_generator(net, 11);
  const auto stack = scene_stack(12, 2, net, 0.01);
  const auto s = forward_static(stack, g);
  const auto no_dyn = forward_dynamic(s, 0.15, g, wiring(MethodVariant::WO_DG));
  EXPECT_EQ(no_dyn.q_gd.values, s.q_gs.values);
  const auto no_move = forward_dynamic(s, 0.15, g, wiring(MethodVariant::WO_M));
  for (const auto& v : no_move.q_m.values.values()) EXPECT_EQ(v, 0.0f);
  // Without the static module the Q_gs channel into perception2 is zero, so
  // changing the static head must not move the dynamic output.
  GeneratorState g2 = g;
  Rng rng(2);
  randomize(g2.static_head, rng, 1.0);
  const auto a = forward_dynamic(stack, 0.15, g, wiring(MethodVariant::WO_SG));
  const auto b = forward_dynamic(stack, 0.15, g2, wiring(MethodVariant::WO_SG));
  EXPECT_EQ(a.q_gd.values, b.q_gd.values);
  const auto c = forward_dynamic(stack, 0.15, g, wiring(MethodVariant::PP));
  const auto e = forward_dynamic(stack, 0.15, g2, wiring(MethodVariant::PP));
  EXPECT_NE(c.q_gd.values, e.q_gd.values);
}

TEST(ForwardDynamic, RejectsForeignTrunk) {
  const GeneratorState g(small_net());
  StaticOutput s;
  s.mu_s = Tensor32({8, 8, 5, 5});
  EXPECT_THROW(forward_dynamic(s, 0.15, g), ShapeError);
}

TEST(ActionDetermination, RotationThreeOfSixteenIs67_5Degrees) {
  const std::size_t r = 16, n = 16;
  auto q = map_of(r, n, 0.2f);
  auto m = map_of(r, n);
  q.values.at(3, 0, 5, 9) = 0.9f;
  const auto [move, grasp] = action_determination(m, q, 0.15, FrameConfig::centered(n, 0.01));
  EXPECT_EQ(grasp.pixel, (PixelIndex{5, 9, 3}));
  EXPECT_NEAR(grasp.theta * 180.0 / kPi, 67.5, 1e-12);
  EXPECT_EQ(move.v_hat, 0.15);
}

TEST(ActionDetermination, ResidualAddsToUserVelocity) {
  const std::size_t r = 8, n = 12;
  auto q = map_of(r, n, 0.1f);
  auto m = map_of(r, n, -0.03f);
  q.values.at(6, 0, 2, 11) = 0.7f;
  m.values.at(6, 0, 2, 11) = 0.004f;
  const auto [move, grasp] = action_determination(m, q, 0.15, FrameConfig::centered(n, 0.01));
  EXPECT_NEAR(move.v_hat, 0.154, 1e-9);
  EXPECT_EQ(move.v_target, 0.15);
  const Vec2 w = pixel_to_world(2, 11, 6, r, FrameConfig::centered(n, 0.01));
  EXPECT_EQ(grasp.x, w.x);
  EXPECT_EQ(grasp.y, w.y);
}

TEST(ActionDetermination, ConstantMapPicksOrigin) {
  auto q = map_of(8, 10, 0.5f);
  const auto [move, grasp] = action_determination(map_of(8, 10), q, 0.1, FrameConfig::centered(10, 0.01));
  EXPECT_EQ(grasp.pixel, (PixelIndex{0, 0, 0}));
  EXPECT_EQ(grasp.theta, 0.0);
}

TEST(ActionDetermination, TiesPreferLowestRotationThenRowThenColumn) {
  auto q = map_of(4, 6, 0.1f);
  q.values.at(2, 0, 0, 0) = 0.8f;
  q.values.at(1, 0, 5, 5) = 0.8f;
  q.values.at(1, 0, 3, 4) = 0.8f;
  q.values.at(1, 0, 3, 2) = 0.8f;
  EXPECT_EQ(argmax_pixel(q), (PixelIndex{3, 2, 1}));
}

TEST(ActionDetermination, VelocityAlwaysWithinLimits) {
  ActuatorLimits lim;
  for (float res : {-1.0f, -0.05f, 0.0f, 0.05f, 1.0f}) {
    for (double v : {lim.v_min, 0.15, lim.v_max}) {
      auto m = map_of(2, 4, res);
      const auto [move, grasp] = action_determination(m, map_of(2, 4), v, FrameConfig::centered(4, 0.01), lim);
      EXPECT_GE(move.v_hat, lim.v_min);
      EXPECT_LE(move.v_hat, lim.v_max);
    }
  }
}

TEST(ActionDetermination, ThetaIsQuantized) {
  for (std::size_t r : {1u, 4u, 8u, 16u}) {
    for (std::size_t k = 0; k < r; ++k) {
      const auto gp = grasp_at({1, 2, k}, r, FrameConfig::centered(8, 0.01));
      EXPECT_EQ(gp.theta, static_cast<double>(k) * (2.0 * kPi / static_cast<double>(r)));
    }
  }
}

TEST(ActionDetermination, RejectsBadMaps) {
  auto q = map_of(2, 4);
  q.values[5] = std::nanf("");
  EXPECT_THROW(action_determination(map_of(2, 4), q, 0.1, FrameConfig::centered(4, 0.01)), std::domain_error);
  auto m = map_of(2, 4);
  m.values[3] = INFINITY;
  EXPECT_THROW(action_determination(m, map_of(2, 4), 0.1, FrameConfig::centered(4, 0.01)), std::domain_error);
  EXPECT_THROW(action_determination(map_of(2, 5), map_of(2, 4), 0.1, FrameConfig::centered(4, 0.01)), ShapeError);
}

TEST(ActionMask, SupportPixelsFollowHeight) {
  const NetworkConfig net = small_net();
  const auto stack = scene_stack(13, 2, net, 0.01);
  const ActionMask mask = support_mask(stack, 0.01);
  ASSERT_FALSE(mask.empty());
  for (std::size_t k = 0; k < 8; ++k)
    for (std::size_t i = 0; i < 32; ++i)
      for (std::size_t j = 0; j < 32; ++j)
        EXPECT_EQ(mask.allowed.at(k, 0, i, j) != 0.0f, stack.maps.at(k, 3, i, j) > 0.01f);
  // Masked argmax never lands on a disallowed pixel even when it scores best.
  auto q = map_of(8, 32, 0.3f);
  q.values.at(0, 0, 0, 0) = 1.0f;  // corner is bare floor (margin)
  const PixelIndex p = argmax_pixel(q, &mask);
  EXPECT_NE(mask.allowed.at(p.rot, 0, p.row, p.col), 0.0f);
}

TEST(ActionMask, EmptySceneAllowsEverything) {
  const FrameConfig frame = FrameConfig::centered(16, 0.01);
  const auto stack = build_rotation_stack(render_heightmap({}, frame), 4);
  EXPECT_TRUE(support_mask(stack, 0.01).empty());
}

TEST(Exploration, GreedyWhenEpsilonZero) {
  const NetworkConfig net = small_net();
  const GeneratorState g = random_generator(net, 14);
  const auto d = forward_dynamic(scene_stack(15, 3, net, 0.01), 0.15, g);
  const auto [move, grasp] = action_determination(d.q_m, d.q_gd, 0.15, FrameConfig::centered(32, 0.01));
  Rng rng(0);
  for (int t = 0; t < 50; ++t) EXPECT_EQ(exploration_action(d.q_gd, 0.0, rng), grasp.pixel);
}

TEST(Exploration, FullEpsilonStaysInTopFivePercent) {
  const std::size_t r = 4, n = 10;  // 400 pixels -> top 20
  AffordanceMap q = map_of(r, n);
  for (std::size_t i = 0; i < q.values.size(); ++i) q.values[i] = static_cast<float>((i * 37) % 400) / 400.0f;
  std::set<std::size_t> top;
  for (std::size_t i = 0; i < q.values.size(); ++i)
    if (q.values[i] >= 380.0f / 400.0f) top.insert(i);
  ASSERT_EQ(top.size(), 20u);
  Rng rng(1);
  std::set<std::size_t> seen;
  for (int t = 0; t < 2000; ++t) {
    const PixelIndex p = exploration_action(q, 1.0, rng);
    const std::size_t flat = (p.rot * n + p.row) * n + p.col;
    EXPECT_TRUE(top.count(flat)) << flat;
    seen.insert(flat);
  }
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Exploration, TopFractionWithinMask) {
  AffordanceMap q = map_of(1, 10);
  for (std::size_t i = 0; i < 100; ++i) q.values[i] = static_cast<float>(i);
  ActionMask mask{Tensor32({1, 1, 10, 10})};
  for (std::size_t i = 0; i < 40; ++i) mask.allowed[i] = 1.0f;
  const auto top = top_fraction(q, &mask);
  ASSERT_EQ(top.size(), 2u);  // ceil(0.05 * 40)
  EXPECT_EQ(top[0], 39u);
  EXPECT_EQ(top[1], 38u);
}

TEST(Exploration, SeededChoicesRepeat) {
  AffordanceMap q = map_of(8, 16);
  Rng fill(3);
  for (auto& v : q.values.values()) v = static_cast<float>(uniform(fill, 0, 1));
  Rng a(42), b(42);
  for (int t = 0; t < 200; ++t) EXPECT_EQ(exploration_action(q, 0.5, a), exploration_action(q, 0.5, b));
}

TEST(Exploration, RejectsEpsilonOutsideUnitInterval) {
  Rng rng(0);
  EXPECT_THROW(exploration_action(map_of(1, 4), -0.1, rng), std::invalid_argument);
  EXPECT_THROW(exploration_action(map_of(1, 4), 1.5, rng), std::invalid_argument);
}

TEST(Equivariance, QuarterTurnOfInputPermutesRotationCopies) {
  const NetworkConfig net = small_net();
  const GeneratorState g = random_generator(net, 16);
  const FrameConfig frame = FrameConfig::centered(net.grid, 0.01);
  SceneConfig sc;
  sc.margin = 0.02;
  const Heightmap hm = render_heightmap(sample_scene(17, sc, frame, 3), frame);

  // Turn the heightmap by 90 deg: out(i, j) = in(j, n-1-i).
  const std::size_t n = net.grid;
  Heightmap turned = hm;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t src = j * n + (n - 1 - i), dst = i * n + j;
      turned.height[dst] = hm.height[src];
      for (std::size_t c = 0; c < 3; ++c) turned.color[dst * 3 + c] = hm.color[src * 3 + c];
    }

  const std::size_t r = net.rotations, shift = r / 4;
  const auto a = forward_dynamic(build_rotation_stack(hm, r), 0.15, g);
  const auto b = forward_dynamic(build_rotation_stack(turned, r), 0.15, g);
  const auto as = forward_static(build_rotation_stack(hm, r), g);
  const auto bs = forward_static(build_rotation_stack(turned, r), g);
  for (std::size_t k = 0; k < r; ++k) {
    const std::size_t src = (k + shift) % r;
    EXPECT_EQ(b.q_gd.values.slice_sample(k), a.q_gd.values.slice_sample(src)) << k;
    EXPECT_EQ(b.q_m.values.slice_sample(k), a.q_m.values.slice_sample(src)) << k;
    EXPECT_EQ(bs.q_gs.values.slice_sample(k), as.q_gs.values.slice_sample(src)) << k;
  }

  const PixelIndex pa = argmax_pixel(a.q_gd), pb = argmax_pixel(b.q_gd);
  EXPECT_EQ(pb.rot, (pa.rot + r - shift) % r);
  EXPECT_EQ(pb.row, pa.row);
  EXPECT_EQ(pb.col, pa.col);
  // In world terms the chosen point turns with the input: a point at grid
  // offset (dx, dy) of the original appears at (dy, -dx) in the turned map.
  const Vec2 wa = pixel_to_world(pa.row, pa.col, pa.rot, r, frame);
  const Vec2 wb = pixel_to_world(pb.row, pb.col, pb.rot, r, frame);
  const double c = frame.center_index();
  const double dxa = (wa.x - frame.origin_x) / frame.cell_size - c, dya = (wa.y - frame.origin_y) / frame.cell_size - c;
  const double dxb = (wb.x - frame.origin_x) / frame.cell_size - c, dyb = (wb.y - frame.origin_y) / frame.cell_size - c;
  EXPECT_NEAR(dxb, dya, 1e-9);
  EXPECT_NEAR(dyb, -dxa, 1e-9);
}

TEST(Checkpoint, RoundTripPreservesOutputs) {
  const NetworkConfig net = small_net();
  const GeneratorState g = random_generator(net, 18);
  const auto ck = g.to_checkpoint("mobile", MethodVariant::PP);
  const auto bytes = nn::serialize(ck);
  const GeneratorState h = GeneratorState::from_checkpoint(nn::deserialize(bytes));
  EXPECT_EQ(h.config(), net);
  const auto stack = scene_stack(19, 2, net, 0.01);
  EXPECT_EQ(forward_dynamic(stack, 0.13, g).q_gd.values, forward_dynamic(stack, 0.13, h).q_gd.values);
  const auto tag = GeneratorState::tag_of(ck);
  EXPECT_EQ(tag.at("stage"), "mobile");
  EXPECT_EQ(tag.at("variant"), "PP");
}

TEST(Checkpoint, ReserializesToTheSameBytes) {
  GeneratorState g = random_generator(small_net(), 20);
  g.freeze_stage1(true);
  const auto bytes = nn::serialize(g.to_checkpoint("mobile", MethodVariant::WO_M));
  GeneratorState h = GeneratorState::from_checkpoint(nn::deserialize(bytes));
  EXPECT_FALSE(h.perception1.params().front()->trainable);
  EXPECT_EQ(nn::serialize(h.to_checkpoint("mobile", MethodVariant::WO_M)), bytes);
}

TEST(Checkpoint, LoadRejectsForeignTensors) {
  GeneratorState g(small_net());
  auto ck = g.to_checkpoint("static", MethodVariant::PP);
  ck.entries[0].name = "bogus";
  EXPECT_THROW(g.load(ck), nn::CheckpointError);
  ck.entries.pop_back();
  EXPECT_THROW(g.load(ck), nn::CheckpointError);
  nn::Checkpoint bad;
  bad.tag = "not json";
  EXPECT_THROW(GeneratorState::from_checkpoint(bad), nn::CheckpointError);
}
