#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "json.hpp"

#include "mglab/image_io.hpp"
#include "mglab/parallel.hpp"
#include "mglab/policy.hpp"
#include "mglab/training.hpp"

namespace mglab {

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Timing

/// 3600 / t, unrounded.
inline double mpph_exact(double mean_time_s) {
  if (!(mean_time_s > 0) || !std::isfinite(mean_time_s)) {
    throw std::invalid_argument("mpph: mean time must be positive, got " + std::to_string(mean_time_s));
  }
  return 3600.0 / mean_time_s;
}

/// Whole picks per hour. Table-style figures drop the fraction (33.7 s -> 106).
inline long mpph(double mean_time_s) { return static_cast<long>(std::floor(mpph_exact(mean_time_s) + 1e-9)); }

/// Moving grasp: approach at the realized velocity, then the grasp overhead.
inline double collection_time(double v_true, double distance, double overhead) {
  if (!(v_true > 0)) throw std::invalid_argument("collection_time: velocity must be positive");
  return distance / v_true + overhead;
}

/// Stop-and-grasp (v = 0.00 in the tables): cruise, stop, grasp, restart.
inline double stop_collection_time(double v_cruise, const TimingConfig& t) {
  return collection_time(v_cruise, t.approach_distance, t.grasp_overhead) + t.stop_penalty;
}

// ---------------------------------------------------------------------------
// Residual statistics

struct ResidualStats {
  std::size_t n = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation
};

inline ResidualStats residual_stats(const std::vector<double>& residuals) {
  if (residuals.size() < 2) {
    throw EvalError("residual_stats: need at least 2 successful trials, got " + std::to_string(residuals.size()));
  }
  ResidualStats s;
  s.n = residuals.size();
  for (double r : residuals) s.mean += r;
  s.mean /= static_cast<double>(s.n);
  double ss = 0.0;
  for (double r : residuals) ss += (r - s.mean) * (r - s.mean);
  s.std = std::sqrt(ss / static_cast<double>(s.n - 1));
  return s;
}

// ---------------------------------------------------------------------------
// Velocity settings

struct VelocitySetting {
  bool random = false;  // v^rv: drawn per trial from the test velocity set
  double v = 0.0;

  std::string label() const {
    if (random) return "rv";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    if (std::stod(buf) != v) std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  }
};

/// "0.10,0.15,0.20,rv"
inline std::vector<VelocitySetting> parse_velocities(const std::string& csv) {
  std::vector<VelocitySetting> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(" \t"));
    item.erase(item.find_last_not_of(" \t") + 1);
    if (item.empty()) continue;
    if (item == "rv") {
      out.push_back({true, 0.0});
      continue;
    }
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(item, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != item.size() || !(v > 0)) throw std::invalid_argument("bad velocity '" + item + "' (want m/s or rv)");
    out.push_back({false, v});
  }
  if (out.empty()) throw std::invalid_argument("empty velocity list");
  return out;
}

inline std::vector<VelocitySetting> table_velocities() { return parse_velocities("0.10,0.15,0.20,rv"); }

// ---------------------------------------------------------------------------
// Policies

struct TrialContext {
  const SceneSpec& scene;
  const RotationStack& stack;
  const ActionMask& mask;
  double v;
  const TrainConfig& cfg;
  std::uint64_t policy_seed;
};

struct Decision {
  MovePrimitive move;
  GraspPrimitive grasp;
  double delta = 0.0;  // predicted residual at the chosen pixel
};

using Policy = std::function<Decision(const TrialContext&)>;

/// Greedy action selection with the variant's wiring. BL uses Q_gs and v_hat = v.
inline Policy generator_policy(const GeneratorState& g, MethodVariant variant) {
  return [&g, variant](const TrialContext& c) {
    const FrameConfig frame = c.cfg.frame();
    const StaticOutput s = forward_static(c.stack, g);
    Decision d;
    if (variant == MethodVariant::BL) {
      const PixelIndex p = argmax_pixel(s.q_gs, &c.mask);
      d.grasp = grasp_at(p, g.rotations(), frame);
      d.move = {c.cfg.limits.clamp(c.v), c.v};
      return d;
    }
    const DynamicOutput out = forward_dynamic(s, c.v, g, wiring(variant));
    std::tie(d.move, d.grasp) = action_determination(out.q_m, out.q_gd, c.v, frame, c.cfg.limits, &c.mask);
    d.delta = out.q_m.at(d.grasp.pixel);
    return d;
  };
}

/// Setpoint that makes the drift model's mean velocity equal v.
inline double compensated_velocity(double v, const VelocityErrorModel& e) {
  double u = v;
  for (int i = 0; i < 100; ++i) u = v - e.drift(u);
  return u;
}

/// Cheating upper bound: exact drift compensation and a grasp the oracle
/// accepts (first such pixel in (k, i, j) order).
inline Policy oracle_policy() {
  return [](const TrialContext& c) {
    const FrameConfig frame = c.cfg.frame();
    const std::size_t r = c.stack.rotations, n = c.stack.grid();
    Decision d;
    const double u = compensated_velocity(c.v, c.cfg.error);
    d.move = {c.cfg.limits.clamp(u), c.v};
    d.delta = u - c.v;
    d.grasp = grasp_at({0, 0, 0}, r, frame);
    for (std::size_t idx = 0; idx < r * n * n; ++idx) {
      if (!c.mask.ok(idx)) continue;
      const GraspPrimitive gp = grasp_at(detail::unflatten(idx, n), r, frame);
      if (grasp_oracle(c.scene, gp.x, gp.y, gp.theta, c.cfg.gripper)) {
        d.grasp = gp;
        break;
      }
    }
    return d;
  };
}

/// Uniform pixel and rotation over the whole grid, v_hat = v.
inline Policy random_policy() {
  return [](const TrialContext& c) {
    Rng rng(c.policy_seed);
    const std::size_t r = c.stack.rotations, n = c.stack.grid();
    const std::size_t idx = std::uniform_int_distribution<std::size_t>(0, r * n * n - 1)(rng);
    Decision d;
    d.grasp = grasp_at(detail::unflatten(idx, n), r, c.cfg.frame());
    d.move = {c.cfg.limits.clamp(c.v), c.v};
    return d;
  };
}

// ---------------------------------------------------------------------------
// Trials

struct EvalConfig {
  std::size_t trials = 200;
  std::uint64_t seed = 0;
  std::vector<VelocitySetting> velocities = table_velocities();
};

struct TrialResult {
  std::size_t index = 0;
  double v = 0.0;
  double v_hat = 0.0;
  double v_true = 0.0;
  double delta = 0.0;
  PixelIndex pixel;
  bool success = false;
  double elapsed = 0.0;
};

/// Evaluation scene, noise and v^rv draw for trial t. The same for every
/// method and velocity setting (common random numbers).
struct EvalTrial {
  std::size_t n_objects = 1;
  std::uint64_t scene_seed = 0;
  std::uint64_t sim_seed = 0;
  std::uint64_t policy_seed = 0;
  double v_random = 0.0;
};

inline constexpr std::uint64_t kEvalStream = 7;

inline EvalTrial eval_trial(const TrainConfig& cfg, const EvalConfig& ec, std::size_t t) {
  EvalTrial e;
  e.n_objects = cfg.objects_in(t % cfg.workspaces);
  e.scene_seed = derive_seed(ec.seed, {kEvalStream, t, 1});
  e.sim_seed = derive_seed(ec.seed, {kEvalStream, t, 2});
  e.policy_seed = derive_seed(ec.seed, {kEvalStream, t, 4});
  Rng rng(derive_seed(ec.seed, {kEvalStream, t, 3}));
  const auto& set = cfg.test_velocities;
  e.v_random = set[std::uniform_int_distribution<std::size_t>(0, set.size() - 1)(rng)];
  return e;
}

/// Runs `ec.trials` episodes for one velocity setting. Trials may run on
/// several workers; results are stored by index, so the output does not
/// depend on the worker count.
inline std::vector<TrialResult> run_trials(const Policy& policy, const TrainConfig& cfg, const EvalConfig& ec,
                                           const VelocitySetting& vs) {
  std::vector<TrialResult> out(ec.trials);
  const FrameConfig frame = cfg.frame();
  parallel_for(ec.trials, [&](std::size_t t) {
    const EvalTrial e = eval_trial(cfg, ec, t);
    const SceneSpec scene = sample_trial_scene(e.scene_seed, cfg, e.n_objects);
    const RotationStack stack = build_rotation_stack(render_heightmap(scene, frame), cfg.network.rotations);
    const ActionMask mask = support_mask(stack, cfg.support_height);
    const double v = vs.random ? e.v_random : vs.v;
    const Decision d = policy({scene, stack, mask, v, cfg, e.policy_seed});
    Rng sim(e.sim_seed);
    const TrialOutcome o = simulate_mobile_grasp(scene, d.move, d.grasp, cfg.error, cfg.gripper, cfg.timing, sim);
    out[t] = {t, v, d.move.v_hat, o.v_true, d.delta, d.grasp.pixel, o.success, o.elapsed};
  });
  return out;
}

// ---------------------------------------------------------------------------
// Report

struct CellStats {
  std::string method;
  std::string velocity;
  std::size_t trials = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;  // percent
  std::optional<ResidualStats> residual;
  std::size_t residual_positive = 0;  // successful trials with delta > 0
  double mean_time = 0.0;
  double mpph = 0.0;          // attempts per hour, unrounded
  double success_mpph = 0.0;  // picks per hour counting successes only
};

inline CellStats summarize(const std::string& method, const std::string& velocity,
                           const std::vector<TrialResult>& results) {
  CellStats c{method, velocity, results.size()};
  std::vector<double> deltas;
  double time = 0.0;
  for (const auto& r : results) {
    time += r.elapsed;
    if (!r.success) continue;
    ++c.successes;
    deltas.push_back(r.delta);
    if (r.delta > 0) ++c.residual_positive;
  }
  if (c.trials > 0) {
    c.success_rate = 100.0 * static_cast<double>(c.successes) / static_cast<double>(c.trials);
    c.mean_time = time / static_cast<double>(c.trials);
    c.mpph = mpph_exact(c.mean_time);
    c.success_mpph = c.mpph * static_cast<double>(c.successes) / static_cast<double>(c.trials);
  }
  if (deltas.size() >= 2) c.residual = residual_stats(deltas);
  return c;
}

struct EvalReport {
  std::vector<std::string> methods;
  std::vector<std::string> velocities;
  std::vector<CellStats> cells;  // method-major
  std::size_t trials = 0;
  TimingConfig timing;

  const CellStats& cell(const std::string& method, const std::string& velocity) const {
    for (const auto& c : cells)
      if (c.method == method && c.velocity == velocity) return c;
    throw EvalError("no result for " + method + " at v=" + velocity);
  }

  /// Mean success rate over the velocity settings.
  double method_mean(const std::string& method) const {
    double s = 0.0;
    for (const auto& v : velocities) s += cell(method, v).success_rate;
    return velocities.empty() ? 0.0 : s / static_cast<double>(velocities.size());
  }
};

struct MethodEntry {
  std::string name;
  Policy policy;
};

inline EvalReport run_policies(const std::vector<MethodEntry>& methods, const TrainConfig& cfg, const EvalConfig& ec) {
  cfg.validate();
  if (ec.velocities.empty()) throw EvalError("evaluation needs at least one velocity setting");
  EvalReport rep;
  rep.trials = ec.trials;
  rep.timing = cfg.timing;
  for (const auto& v : ec.velocities) rep.velocities.push_back(v.label());
  for (const auto& m : methods) {
    if (!m.policy) throw EvalError("method " + m.name + " has no policy");
    rep.methods.push_back(m.name);
    for (const auto& v : ec.velocities) rep.cells.push_back(summarize(m.name, v.label(), run_trials(m.policy, cfg, ec, v)));
  }
  return rep;
}

/// Ablation harness: one trained generator per variant.
inline EvalReport run_ablation(const std::vector<std::pair<MethodVariant, const GeneratorState*>>& variants,
                               const TrainConfig& cfg, const EvalConfig& ec) {
  std::vector<MethodEntry> methods;
  for (const auto& [variant, g] : variants) {
    if (!g) throw EvalError("missing checkpoint for variant " + std::string(variant_name(variant)));
    if (g->config() != cfg.network) {
      throw EvalError("checkpoint for " + std::string(variant_name(variant)) + " does not match the configured network");
    }
    methods.push_back({std::string(variant_name(variant)), generator_policy(*g, variant)});
  }
  return run_policies(methods, cfg, ec);
}

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline std::string fmt(double v, const char* f = "%.6f") {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

inline std::ofstream open_text(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw EvalError("cannot write " + path.string());
  return os;
}

}  // namespace detail

/// Writes table_success.csv/.md (velocity rows, method columns),
/// table_methods.md (method rows), table_timing.csv, residuals.csv and
/// summary.json. Byte-stable for a given report.
inline void render_report(const EvalReport& rep, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw EvalError("cannot create " + dir.string() + ": " + ec.message());
  using detail::fmt;

  auto csv = detail::open_text(dir / "table_success.csv");
  csv << "method,velocity,trials,successes,success_rate\n";
  for (const auto& c : rep.cells)
    csv << c.method << ',' << c.velocity << ',' << c.trials << ',' << c.successes << ',' << fmt(c.success_rate, "%.2f")
        << '\n';

  auto md = detail::open_text(dir / "table_success.md");
  md << "| v (m/s) |";
  for (const auto& m : rep.methods) md << ' ' << m << " |";
  md << "\n|---|";
  for (std::size_t i = 0; i < rep.methods.size(); ++i) md << "---|";
  md << '\n';
  for (const auto& v : rep.velocities) {
    md << "| " << v << " |";
    for (const auto& m : rep.methods) md << ' ' << fmt(rep.cell(m, v).success_rate, "%.1f") << " |";
    md << '\n';
  }
  if (!rep.velocities.empty()) {
    md << "| mean |";
    for (const auto& m : rep.methods) md << ' ' << fmt(rep.method_mean(m), "%.1f") << " |";
    md << '\n';
  }

  // Same numbers, one row per method.
  auto mm = detail::open_text(dir / "table_methods.md");
  mm << "| method |";
  for (const auto& v : rep.velocities) mm << ' ' << v << " |";
  mm << " mean |\n|---|";
  for (std::size_t i = 0; i <= rep.velocities.size(); ++i) mm << "---|";
  mm << '\n';
  for (const auto& m : rep.methods) {
    mm << "| " << m << " |";
    for (const auto& v : rep.velocities) mm << ' ' << fmt(rep.cell(m, v).success_rate, "%.1f") << " |";
    mm << ' ' << fmt(rep.method_mean(m), "%.1f") << " |\n";
  }

  auto tim = detail::open_text(dir / "table_timing.csv");
  tim << "method,velocity,mean_time_s,mpph,mpph_exact,success_mpph\n";
  if (!rep.cells.empty()) {
    const double stop = stop_collection_time(0.10, rep.timing);
    tim << "stop-and-grasp,0.00," << fmt(stop, "%.3f") << ',' << mpph(stop) << ',' << fmt(mpph_exact(stop), "%.3f")
        << ",\n";
  }
  for (const auto& c : rep.cells) {
    if (c.trials == 0) continue;
    tim << c.method << ',' << c.velocity << ',' << fmt(c.mean_time, "%.3f") << ',' << mpph(c.mean_time) << ','
        << fmt(c.mpph, "%.3f") << ',' << fmt(c.success_mpph, "%.3f") << '\n';
  }

  auto res = detail::open_text(dir / "residuals.csv");
  res << "method,velocity,n,mean,std,positive\n";
  for (const auto& c : rep.cells) {
    if (!c.residual) continue;
    res << c.method << ',' << c.velocity << ',' << c.residual->n << ',' << fmt(c.residual->mean, "%.6g") << ','
        << fmt(c.residual->std, "%.6g") << ',' << c.residual_positive << '\n';
  }

  nlohmann::ordered_json js;
  js["trials"] = rep.trials;
  js["methods"] = rep.methods;
  js["velocities"] = rep.velocities;
  js["mean_success"] = nlohmann::ordered_json::object();
  for (const auto& m : rep.methods) js["mean_success"][m] = rep.method_mean(m);
  js["cells"] = nlohmann::ordered_json::array();
  for (const auto& c : rep.cells) {
    nlohmann::ordered_json cj = {{"method", c.method},       {"velocity", c.velocity},
                                 {"trials", c.trials},       {"successes", c.successes},
                                 {"success_rate", c.success_rate}, {"mean_time_s", c.mean_time},
                                 {"mpph", c.trials ? mpph(c.mean_time) : 0}, {"success_mpph", c.success_mpph}};
    if (c.residual) cj["residual"] = {{"n", c.residual->n}, {"mean", c.residual->mean}, {"std", c.residual->std}};
    js["cells"].push_back(cj);
  }
  detail::open_text(dir / "summary.json") << js.dump(2) << '\n';
}

/// Learning curves (rolling success vs step) as a PPM line plot; one color
/// per series in name order.
inline RgbImage plot_curves(const std::map<std::string, std::vector<double>>& curves, std::size_t h = 240,
                            std::size_t w = 480) {
  RgbImage img(h, w);
  std::fill(img.pixels.begin(), img.pixels.end(), std::uint8_t{255});
  std::size_t longest = 1;
  for (const auto& [name, ys] : curves) longest = std::max(longest, ys.size());
  for (std::size_t j = 0; j < w; ++j) {  // gridlines at 25% steps
    for (int q = 0; q <= 4; ++q) {
      const auto i = static_cast<std::size_t>(std::lround((1.0 - q / 4.0) * static_cast<double>(h - 1)));
      auto* px = img.at(i, j);
      px[0] = px[1] = px[2] = 220;
    }
  }
  std::size_t idx = 0;
  for (const auto& [name, ys] : curves) {
    const auto col = false_color(curves.size() > 1 ? static_cast<double>(idx) / static_cast<double>(curves.size() - 1) : 0.0);
    ++idx;
    long prev_i = -1, prev_j = -1;
    for (std::size_t s = 0; s < ys.size(); ++s) {
      const long j = std::lround(static_cast<double>(s) / static_cast<double>(std::max<std::size_t>(1, longest - 1)) *
                                 static_cast<double>(w - 1));
      const long i = std::lround((1.0 - std::clamp(ys[s], 0.0, 1.0)) * static_cast<double>(h - 1));
      const long steps = prev_j < 0 ? 0 : std::max(std::abs(j - prev_j), std::abs(i - prev_i));
      for (long k = 0; k <= steps; ++k) {
        const double f = steps ? static_cast<double>(k) / static_cast<double>(steps) : 1.0;
        const long ii = prev_j < 0 ? i : std::lround(prev_i + f * static_cast<double>(i - prev_i));
        const long jj = prev_j < 0 ? j : std::lround(prev_j + f * static_cast<double>(j - prev_j));
        auto* px = img.at(static_cast<std::size_t>(ii), static_cast<std::size_t>(jj));
        for (int c = 0; c < 3; ++c) px[c] = to_byte(col[static_cast<std::size_t>(c)]);
      }
      prev_i = i;
      prev_j = j;
    }
  }
  return img;
}

/// Per-rotation map images for one scene, superimposed on the rotated color
/// input: static_kK.ppm (Q_gs), dynamic_kK.ppm (Q_gd), residual_kK.ppm (Q_m,
/// scaled to the clamp band), plus input.ppm and input_height.pgm.
inline std::vector<std::filesystem::path> render_maps(const GeneratorState& g, MethodVariant variant,
                                                      const SceneSpec& scene, double v, const FrameConfig& frame,
                                                      const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw EvalError("cannot create " + dir.string() + ": " + ec.message());
  const Heightmap hm = render_heightmap(scene, frame);
  const RotationStack stack = build_rotation_stack(hm, g.rotations());
  const StaticOutput s = forward_static(stack, g);
  DynamicOutput d;
  if (variant == MethodVariant::BL) {
    d.q_gd = s.q_gs;
    d.q_m.values = Tensor32(s.q_gs.values.shape());
  } else {
    d = forward_dynamic(s, v, g, wiring(variant));
  }
  std::vector<std::filesystem::path> files;
  const auto put = [&](const std::filesystem::path& p, const RgbImage& img) {
    write_ppm(p, img);
    files.push_back(p);
  };
  put(dir / "input.ppm", color_image(hm));
  export_height_pgm(dir / "input_height.pgm", hm);
  files.push_back(dir / "input_height.pgm");

  const std::size_t n = g.grid(), plane = n * n;
  const double lim = g.config().residual_clamp;
  for (std::size_t k = 0; k < g.rotations(); ++k) {
    RgbImage base(n, n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        for (std::size_t c = 0; c < 3; ++c) base.at(i, j)[c] = to_byte(stack.maps.at(k, c, i, j));
    const std::string suffix = "_k" + std::to_string(k) + ".ppm";
    put(dir / ("static" + suffix), false_color_image(s.q_gs.values.data() + k * plane, n, n, 0.0, 1.0, &base));
    put(dir / ("dynamic" + suffix), false_color_image(d.q_gd.values.data() + k * plane, n, n, 0.0, 1.0, &base));
    put(dir / ("residual" + suffix), false_color_image(d.q_m.values.data() + k * plane, n, n, -lim, lim, &base));
  }
  return files;
}

}  // namespace mglab
