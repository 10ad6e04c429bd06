#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "mglab/geometry.hpp"
#include "mglab/heightmap.hpp"
#include "mglab/primitives.hpp"
#include "mglab/rng.hpp"
#include "mglab/scene.hpp"

namespace mglab {

struct ObjectConfig {
  std::size_t max_parts = 4;
  double part_width_min = 0.015;
  double part_width_max = 0.05;
  double part_length_min = 0.03;
  double part_length_max = 0.10;
  double height_min = 0.02;
  double height_max = 0.08;
  double max_extent = 0.12;  // bounding-box side limit of the whole object
  // At least one part must have a side no wider than this; matches the
  // default gripper's opening minus a finger.
  double graspable_width = 0.055;
  int max_retries = 200;
};

struct SceneConfig {
  ObjectConfig object;
  double margin = 0.04;     // keep-out band along the frame border
  double clearance = 0.01;  // minimum gap between objects
  int max_retries = 2000;
};

struct GripperConfig {
  double max_opening = 0.065;
  double finger_width = 0.01;
  double close_tolerance = 0.005;
  double min_pinch_height = 0.01;
};

struct ActuatorLimits {
  double v_min = 0.05;
  double v_max = 0.30;
  double clamp(double v) const { return std::clamp(v, v_min, v_max); }
};

/// Realized base velocity: v_true = v + drift(v) + N(0, noise_std). Finger
/// closure lags the grasp trigger by `trigger_lag` seconds.
struct VelocityErrorModel {
  std::vector<double> drift_coeffs{0.005, -0.1};  // c0 + c1 v + c2 v^2 ...
  double noise_std = 0.002;
  double trigger_lag = 0.5;

  double drift(double v) const {
    double out = 0.0, p = 1.0;
    for (double c : drift_coeffs) {
      out += c * p;
      p *= v;
    }
    return out;
  }

  static VelocityErrorModel ideal() { return {{}, 0.0, 0.5}; }
};

struct TimingConfig {
  double approach_distance = 1.25;  // meters from start to the workspace origin
  double grasp_overhead = 10.0;     // seconds for lateral move, grasp, lift
  double stop_penalty = 11.2;       // stop-and-grasp: decelerate, settle, restart
};

struct TrialOutcome {
  bool success = false;
  double v_true = 0.0;
  double x_effective = 0.0;
  double elapsed = 0.0;
  double residual_opening = 0.0;
};

// ---------------------------------------------------------------------------
// Object and scene sampling

namespace detail {

inline bool parts_connected(const std::vector<RectPart>& parts) {
  if (parts.empty()) return false;
  std::vector<bool> seen(parts.size(), false);
  std::vector<std::size_t> frontier{0};
  seen[0] = true;
  while (!frontier.empty()) {
    const auto a = frontier.back();
    frontier.pop_back();
    for (std::size_t b = 0; b < parts.size(); ++b)
      if (!seen[b] && rects_intersect(parts[a].rect, parts[b].rect)) {
        seen[b] = true;
        frontier.push_back(b);
      }
  }
  return std::all_of(seen.begin(), seen.end(), [](bool s) { return s; });
}

inline std::pair<Vec2, Vec2> bounds(const ObjectSpec& obj) {
  Vec2 lo{std::numeric_limits<double>::infinity(), std::numeric_limits<double>::infinity()};
  Vec2 hi{-lo.x, -lo.y};
  for (const auto& part : obj.parts)
    for (const auto& p : part.rect.corners()) {
      lo = {std::min(lo.x, p.x), std::min(lo.y, p.y)};
      hi = {std::max(hi.x, p.x), std::max(hi.y, p.y)};
    }
  return {lo, hi};
}

}  // namespace detail

inline bool object_is_connected(const ObjectSpec& obj) { return detail::parts_connected(obj.parts); }

inline bool object_has_graspable_part(const ObjectSpec& obj, double graspable_width) {
  return std::any_of(obj.parts.begin(), obj.parts.end(), [&](const RectPart& p) {
    return std::min(p.rect.size.x, p.rect.size.y) <= graspable_width;
  });
}

/// Samples a connected rectangle union centered on the origin. Each new part
/// is attached with its center inside an existing part, at the same or a
/// perpendicular yaw.
inline ObjectSpec sample_object(Rng& rng, const ObjectConfig& cfg) {
  std::uniform_int_distribution<std::size_t> count_dist(1, std::max<std::size_t>(1, cfg.max_parts));
  for (int attempt = 0; attempt < cfg.max_retries; ++attempt) {
    ObjectSpec obj;
    const std::size_t count = count_dist(rng);
    const double base_yaw = uniform(rng, 0.0, kPi);
    for (std::size_t k = 0; k < count; ++k) {
      RectPart part;
      part.rect.size = {uniform(rng, cfg.part_width_min, cfg.part_width_max),
                        uniform(rng, cfg.part_length_min, cfg.part_length_max)};
      part.height = uniform(rng, cfg.height_min, cfg.height_max);
      part.color = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
      if (k == 0) {
        part.rect.center = {0.0, 0.0};
        part.rect.yaw = base_yaw;
      } else {
        std::uniform_int_distribution<std::size_t> parent_dist(0, k - 1);
        const auto& parent = obj.parts[parent_dist(rng)];
        const double u = uniform(rng, -0.5, 0.5) * parent.rect.size.x;
        const double v = uniform(rng, -0.5, 0.5) * parent.rect.size.y;
        part.rect.center = parent.rect.center + parent.rect.axis_u() * u + parent.rect.axis_v() * v;
        part.rect.yaw = parent.rect.yaw + (uniform(rng, 0.0, 1.0) < 0.5 ? 0.0 : kPi / 2);
      }
      obj.parts.push_back(part);
    }
    const auto [lo, hi] = detail::bounds(obj);
    if (hi.x - lo.x > cfg.max_extent || hi.y - lo.y > cfg.max_extent) continue;
    if (!object_has_graspable_part(obj, cfg.graspable_width) || !object_is_connected(obj)) continue;
    const Vec2 mid = (lo + hi) * 0.5;
    for (auto& part : obj.parts) part.rect.center = part.rect.center - mid;
    return obj;
  }
  throw SceneError("sample_object: no valid object after " + std::to_string(cfg.max_retries) + " attempts");
}

inline ObjectSpec place_object(const ObjectSpec& obj, Vec2 position, double yaw) {
  ObjectSpec placed = obj;
  for (auto& part : placed.parts) {
    part.rect.center = position + rotate(part.rect.center, yaw);
    part.rect.yaw += yaw;
  }
  return placed;
}

inline bool object_inside_margins(const ObjectSpec& obj, const FrameConfig& frame, double margin) {
  const auto [lo, hi] = detail::bounds(obj);
  return lo.x >= frame.origin_x + margin && lo.y >= frame.origin_y + margin && hi.x <= frame.max_x() - margin &&
         hi.y <= frame.max_y() - margin;
}

inline bool objects_overlap(const ObjectSpec& a, const ObjectSpec& b, double clearance) {
  for (const auto& pa : a.parts)
    for (const auto& pb : b.parts)
      if (rects_intersect(pa.rect, pb.rect, clearance)) return true;
  return false;
}

/// Random workspace color and `n_objects` non-overlapping objects inside the
/// frame margins, fully determined by `seed`.
inline SceneSpec sample_scene(std::uint64_t seed, const SceneConfig& cfg, const FrameConfig& frame,
                              std::size_t n_objects) {
  if (n_objects < 1) throw SceneError("sample_scene: need at least one object");
  Rng rng(seed);
  SceneSpec scene;
  scene.seed = seed;
  scene.workspace_color = {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
  int budget = cfg.max_retries;
  while (scene.objects.size() < n_objects) {
    if (budget-- <= 0) {
      throw SceneError("sample_scene: could not place " + std::to_string(n_objects) + " objects within " +
                       std::to_string(cfg.max_retries) + " attempts");
    }
    const ObjectSpec obj = sample_object(rng, cfg.object);
    const Vec2 pos{uniform(rng, frame.origin_x, frame.max_x()), uniform(rng, frame.origin_y, frame.max_y())};
    ObjectSpec placed = place_object(obj, pos, uniform(rng, 0.0, 2.0 * kPi));
    if (!object_inside_margins(placed, frame, cfg.margin)) continue;
    const bool clash = std::any_of(scene.objects.begin(), scene.objects.end(),
                                   [&](const ObjectSpec& o) { return objects_overlap(o, placed, cfg.clearance); });
    if (clash) continue;
    scene.objects.push_back(std::move(placed));
  }
  return scene;
}

// ---------------------------------------------------------------------------
// Grasp physics

/// Fully-closed test: the grasp holds something iff the fingers stopped with
/// an opening strictly above the close tolerance.
inline bool detect_grasp_success(double residual_opening, const GripperConfig& grip) {
  return residual_opening > grip.close_tolerance;
}

struct GraspContact {
  bool fingers_blocked = false;  // a finger would land on an object
  double residual_opening = 0.0;
  bool pinch_height_ok = false;
  bool single_object = false;
};

/// Closes a vertical parallel-jaw gripper centered at `at` with its fingers
/// moving along theta + 90 degrees.
inline GraspContact grasp_contact(const SceneSpec& scene, Vec2 at, double theta, const GripperConfig& grip) {
  const Vec2 dir = unit(theta + kPi / 2);
  const double half = grip.max_opening / 2;
  struct Hit {
    Interval span;
    std::size_t object;
    double height;
  };
  std::vector<Hit> hits;
  GraspContact out;
  for (std::size_t o = 0; o < scene.objects.size(); ++o)
    for (const auto& part : scene.objects[o].parts) {
      const auto iv = clip_line(part.rect, at, dir);
      if (!iv) continue;
      // Finger footprints occupy [half, half + finger_width] on both sides.
      const bool blocks_right = iv->hi >= half && iv->lo <= half + grip.finger_width;
      const bool blocks_left = iv->lo <= -half && iv->hi >= -half - grip.finger_width;
      if (blocks_left || blocks_right) out.fingers_blocked = true;
      const Interval inside{std::max(iv->lo, -half), std::min(iv->hi, half)};
      if (inside.lo <= inside.hi) hits.push_back({inside, o, part.height});
    }
  if (out.fingers_blocked || hits.empty()) return out;

  const auto left = std::min_element(hits.begin(), hits.end(),
                                     [](const Hit& a, const Hit& b) { return a.span.lo < b.span.lo; });
  const auto right = std::max_element(hits.begin(), hits.end(),
                                      [](const Hit& a, const Hit& b) { return a.span.hi < b.span.hi; });
  out.residual_opening = right->span.hi - left->span.lo;
  // Tallest part under each contact point decides whether the pads can pinch.
  const auto contact_height = [&](double s) {
    double h = 0.0;
    for (const auto& hit : hits)
      if (hit.span.lo <= s && s <= hit.span.hi) h = std::max(h, hit.height);
    return h;
  };
  out.pinch_height_ok = contact_height(left->span.lo) >= grip.min_pinch_height &&
                        contact_height(right->span.hi) >= grip.min_pinch_height;
  out.single_object = std::all_of(hits.begin(), hits.end(), [&](const Hit& h) { return h.object == left->object; });
  return out;
}

/// Static ground-truth grasp test.
inline bool grasp_oracle(const SceneSpec& scene, double x, double y, double theta, const GripperConfig& grip) {
  const auto c = grasp_contact(scene, {x, y}, theta, grip);
  return !c.fingers_blocked && c.single_object && c.pinch_height_ok &&
         detect_grasp_success(c.residual_opening, grip);
}

/// Executes a grasp while the base drives at the commanded velocity. The arm
/// times its closure for the user velocity `move.v_target`, so any gap
/// between realized and target velocity shifts the effective grasp point
/// along the motion axis by trigger_lag * (v_true - v_target).
inline TrialOutcome simulate_mobile_grasp(const SceneSpec& scene, const MovePrimitive& move,
                                          const GraspPrimitive& grasp, const VelocityErrorModel& err,
                                          const GripperConfig& grip, const TimingConfig& timing, Rng& rng) {
  const double noise = err.noise_std > 0 ? std::normal_distribution<double>(0.0, err.noise_std)(rng) : 0.0;
  TrialOutcome out;
  out.v_true = std::max(1e-3, move.v_hat + err.drift(move.v_hat) + noise);
  out.x_effective = grasp.x + err.trigger_lag * (out.v_true - move.v_target);
  const auto c = grasp_contact(scene, {out.x_effective, grasp.y}, grasp.theta, grip);
  out.residual_opening = c.fingers_blocked ? 0.0 : c.residual_opening;
  out.success = !c.fingers_blocked && c.single_object && c.pinch_height_ok &&
                detect_grasp_success(c.residual_opening, grip);
  out.elapsed = (timing.approach_distance + out.x_effective) / out.v_true + timing.grasp_overhead;
  return out;
}

/// Correction that, added to the commanded velocity, would have produced the
/// target: v_target - v_true.
inline double true_residual(double v_target, double v_true) { return v_target - v_true; }

}  // namespace mglab
