#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <functional>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "mglab/heightmap.hpp"
#include "mglab/nn/checkpoint.hpp"
#include "mglab/nn/losses.hpp"
#include "mglab/nn/optimizer.hpp"
#include "mglab/policy.hpp"
#include "mglab/rng.hpp"
#include "mglab/scene_sim.hpp"
#include "mglab/variant.hpp"

namespace mglab {

enum class Stage { Static = 1, Mobile = 2 };

inline std::string stage_name(Stage s) { return s == Stage::Static ? "static" : "mobile"; }

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainConfig {
  NetworkConfig network;
  double cell_size = 0.005;
  SceneConfig scene;
  std::size_t workspaces = 8;
  std::size_t objects_min = 1;
  std::size_t objects_max = 4;
  std::size_t static_steps = 2000;
  std::size_t mobile_steps = 2000;
  double v_train_min = 0.10;
  double v_train_max = 0.20;
  std::vector<double> test_velocities = {0.10, 0.11, 0.12, 0.13, 0.14, 0.15, 0.16,
                                         0.17, 0.18, 0.19, 0.20, 0.21, 0.22};
  nn::SgdConfig sgd;
  double epsilon_start = 0.5;
  double epsilon_end = 0.1;
  std::size_t rolling_window = 200;
  std::size_t frozen_check_every = 100;
  double support_height = 0.01;  // grasps are only tried where the map shows more than this
  std::uint64_t seed = 0;
  GripperConfig gripper;
  VelocityErrorModel error;
  ActuatorLimits limits;
  TimingConfig timing;

  FrameConfig frame() const { return FrameConfig::centered(network.grid, cell_size); }

  void validate() const {
    network.validate();
    frame().validate();
    if (workspaces < 1) throw std::invalid_argument("train: workspaces must be positive");
    if (objects_min < 1 || objects_max < objects_min) throw std::invalid_argument("train: bad object count range");
    if (!(v_train_min > 0) || v_train_max < v_train_min) throw std::invalid_argument("train: bad velocity range");
    if (v_train_min < limits.v_min || v_train_max > limits.v_max) {
      throw std::invalid_argument("train: velocity range outside the actuator limits");
    }
    for (double v : test_velocities)
      if (v < limits.v_min || v > limits.v_max) throw std::invalid_argument("train: test velocity outside the limits");
    if (test_velocities.empty()) throw std::invalid_argument("train: empty test velocity set");
    if (rolling_window < 1) throw std::invalid_argument("train: rolling window must be positive");
    if (epsilon_start < 0 || epsilon_start > 1 || epsilon_end < 0 || epsilon_end > 1) {
      throw std::invalid_argument("train: epsilon must lie in [0, 1]");
    }
    if (!(sgd.lr >= 0) || !(sgd.momentum >= 0 && sgd.momentum < 1)) throw std::invalid_argument("train: bad optimizer");
  }

  std::size_t objects_in(std::size_t workspace) const {
    return objects_min + workspace % (objects_max - objects_min + 1);
  }
  std::size_t steps(Stage s) const { return s == Stage::Static ? static_steps : mobile_steps; }

  /// Linear anneal from epsilon_start at step 0 to epsilon_end at the last step.
  double epsilon(std::size_t step, std::size_t total) const {
    if (total <= 1) return epsilon_end;
    const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
    return epsilon_start + (epsilon_end - epsilon_start) * f;
  }
};

/// One executed trial and its self-supervised label.
struct TrialRecord {
  Stage stage = Stage::Static;
  MethodVariant variant = MethodVariant::PP;
  std::size_t step = 0;
  std::size_t workspace = 0;
  std::size_t n_objects = 1;
  std::uint64_t scene_seed = 0;
  std::uint64_t sim_seed = 0;
  double v = 0.0;      // user velocity (0 for static trials)
  double v_hat = 0.0;  // commanded velocity
  double v_true = 0.0;
  PixelIndex pixel;
  int label = 0;
  double delta = 0.0;  // predicted residual at the pixel
  std::optional<double> delta_bar;
  double q = 0.0;      // predicted success probability at the pixel
  bool explored = false;
  nn::LossValue loss;
  double rolling_success = 0.0;
};

/// G from the closure test; the residual target is present only on success.
/// `v_target` is the velocity the base was asked to realize.
inline std::pair<int, std::optional<double>> label_from_trial(const TrialOutcome& outcome, double v_target) {
  if (!outcome.success) return {0, std::nullopt};
  return {1, true_residual(v_target, outcome.v_true)};
}

inline std::string metrics_header() {
  return "step,stage,variant,workspace,scene_seed,v,v_hat,row,col,rot,G,q,delta,delta_bar,v_true,loss_total,"
         "loss_grasp,loss_move,rolling_success\n";
}

inline std::string metrics_row(const TrialRecord& r) {
  char target[32] = "";
  if (r.delta_bar) std::snprintf(target, sizeof target, "%.9g", *r.delta_bar);
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%s,%s,%zu,%llu,%.9g,%.9g,%zu,%zu,%zu,%d,%.9g,%.9g,%s,%.9g,%.9g,%.9g,%.9g,%.6f\n",
                r.step, stage_name(r.stage).c_str(), std::string(variant_name(r.variant)).c_str(), r.workspace,
                static_cast<unsigned long long>(r.scene_seed), r.v, r.v_hat, r.pixel.row, r.pixel.col, r.pixel.rot,
                r.label, r.q, r.delta, target, r.v_true, r.loss.total, r.loss.grasp_term, r.loss.move_term,
                r.rolling_success);
  return buf;
}

// ---------------------------------------------------------------------------
// Pixel-masked update

namespace detail {

// Gradient tensor that is zero except at one output pixel.
template <typename T>
Tensor<T> pixel_grad(std::size_t grid, const PixelIndex& p, double g) {
  Tensor<T> t({1, 1, grid, grid});
  t.at(0, 0, p.row, p.col) = static_cast<T>(g);
  return t;
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

struct PassOptions {
  bool backward = true;  // fill gradients of the modules this trial trains
  bool kinks = false;    // record relu and clamp switch states
};

template <typename T>
struct PixelPass {
  nn::LossValue loss;
  Tensor<T> qm_down;                // Q_m as fed to the dynamic head
  std::vector<std::uint8_t> kinks;  // changes here mean a probe crossed a kink
};

/// Loss of one executed trial at its pixel, recomputed on that rotation copy
/// only (`x` is the prepared [1, 4, n, n] input). With `opt.backward`, zeroes
/// and then fills the gradients of the modules the stage and variant train.
/// Q_m enters the dynamic head without gradient; `qm_fixed` substitutes that
/// input, which lets a finite-difference check hold it constant.
template <typename T>
PixelPass<T> pixel_pass(BasicGenerator<T>& g, const Tensor<T>& x, const TrialRecord& rec, PassOptions opt = {},
                        const Tensor<T>* qm_fixed = nullptr) {
  const std::size_t n = g.grid();
  if (rec.pixel.row >= n || rec.pixel.col >= n || rec.pixel.rot >= g.rotations()) {
    throw ShapeError("update: pixel (" + std::to_string(rec.pixel.row) + ", " + std::to_string(rec.pixel.col) + ", " +
                     std::to_string(rec.pixel.rot) + ") outside the generator's maps");
  }
  if (rec.label != 0 && rec.label != 1) throw std::invalid_argument("update: label must be 0 or 1");
  const auto& p = rec.pixel;
  if (opt.backward) g.zero_grad();
  PixelPass<T> out;

  if (rec.stage == Stage::Static) {
    nn::Tape<T> t1, th;
    const Tensor<T> mu = g.perception1.forward(x, t1);
    const Tensor<T> logits = g.static_head.forward(mu, th);
    const double q = detail::sigmoid(logits.at(0, 0, p.row, p.col));
    out.loss = nn::combined_loss(q, rec.label, 0.0, 0.0);
    if (opt.backward) {
      const Tensor<T> gmu = g.static_head.backward(th, detail::pixel_grad<T>(n, p, nn::bce_logit_grad(q, rec.label)));
      g.perception1.backward(t1, gmu, false);
    }
    if (opt.kinks) g.perception1.collect_kinks(x, out.kinks);
    return out;
  }

  const Wiring w = wiring(rec.variant);
  if (rec.variant == MethodVariant::BL) throw std::invalid_argument("update: the baseline has no mobile stage");
  const bool train_p1 = !w.static_module;
  const std::size_t c = g.config().trunk_channels, cv = g.config().velocity_channels;

  nn::Tape<T> t1, t2, tm, td;
  const Tensor<T> mu_s = train_p1 ? g.perception1.forward(x, t1) : g.perception1.forward(x);
  Tensor<T> q_gs_full({1, 1, n, n});
  if (w.static_module) q_gs_full = sigmoid(g.static_head.forward(mu_s));
  const Tensor<T> qs_down = w.static_module ? g.downsample(q_gs_full) : Tensor<T>({1, 1, g.trunk(), g.trunk()});
  const Tensor<T> in2 = concat_channels(mu_s, qs_down);
  const Tensor<T> mu_d = g.perception2.forward(in2, t2);
  const Tensor<T> mu_d_star = concat_channels(mu_d, g.velocity_block(1, rec.v));

  double delta = 0.0;
  out.qm_down = Tensor<T>({1, 1, g.trunk(), g.trunk()});
  const double limit = g.config().residual_clamp;
  double raw = 0.0;
  if (w.moving_module) {
    const Tensor<T> raw_map = g.moving_head.forward(mu_d_star, tm);
    raw = raw_map.at(0, 0, p.row, p.col);
    // Clamp at working precision, exactly as the forward pass does.
    const auto fl = static_cast<T>(limit);
    delta = std::clamp(raw_map.at(0, 0, p.row, p.col), -fl, fl);
    out.qm_down = g.downsample(clamp_residual(raw_map, limit));
  }
  double q = q_gs_full.at(0, 0, p.row, p.col);
  if (w.dynamic_module) {
    const Tensor<T> dyn_logits =
        g.dynamic_head.forward(concat_channels(mu_d_star, qm_fixed ? *qm_fixed : out.qm_down), td);
    q = detail::sigmoid(dyn_logits.at(0, 0, p.row, p.col));
  }
  const double target = rec.delta_bar.value_or(0.0);
  out.loss = nn::combined_loss(q, rec.label, delta, target);
  const nn::LossGrads lg = nn::combined_loss_grads(q, rec.label, delta, target);
  const double lim = static_cast<T>(limit);

  if (opt.kinks) {
    if (train_p1) g.perception1.collect_kinks(x, out.kinks);
    g.perception2.collect_kinks(in2, out.kinks);
    if (w.moving_module) out.kinks.push_back(raw <= -lim ? 0 : raw >= lim ? 2 : 1);
  }
  if (!opt.backward) return out;

  Tensor<T> g_star({1, c + cv, g.trunk(), g.trunk()});
  bool any = false;
  if (w.dynamic_module) {
    const Tensor<T> gin = g.dynamic_head.backward(td, detail::pixel_grad<T>(n, p, lg.logit));
    g_star = split_channels(gin, c + cv).first;  // Q_m input is detached
    any = true;
  }
  // The clamp passes gradient inside the band and when it pulls back inward.
  const bool pass = std::abs(raw) < lim || (raw >= lim && lg.delta > 0) || (raw <= -lim && lg.delta < 0);
  if (w.moving_module && rec.label == 1 && pass) {
    const Tensor<T> gin = g.moving_head.backward(tm, detail::pixel_grad<T>(n, p, lg.delta));
    for (std::size_t i = 0; i < gin.size(); ++i) g_star[i] += gin[i];
    any = true;
  }
  if (any) {
    const Tensor<T> g_mu_d = split_channels(g_star, c).first;
    const Tensor<T> g_in2 = g.perception2.backward(t2, g_mu_d, train_p1);
    if (train_p1) g.perception1.backward(t1, split_channels(g_in2, c).first, false);
  }
  return out;
}

/// Recomputes the forward pass for the executed rotation copy only, applies
/// the loss at the executed pixel and takes one optimizer step on the
/// trainable parameters. Returns the loss before the step.
inline nn::LossValue single_pixel_update(GeneratorState& g, nn::SgdMomentum<float>& opt, const RotationStack& stack,
                                         const TrialRecord& rec) {
  if (rec.pixel.rot >= g.rotations()) {
    throw ShapeError("update: pixel (" + std::to_string(rec.pixel.row) + ", " + std::to_string(rec.pixel.col) + ", " +
                     std::to_string(rec.pixel.rot) + ") outside the generator's maps");
  }
  const Tensor32 x = g.prepare_input(stack).slice_sample(rec.pixel.rot);
  const nn::LossValue loss = pixel_pass(g, x, rec).loss;
  opt.step(g.params());
  return loss;
}

/// Which modules a stage/variant trains.
inline void set_trainable(GeneratorState& g, Stage stage, MethodVariant variant) {
  for (auto* m : g.modules()) m->set_trainable(false);
  if (stage == Stage::Static) {
    g.perception1.set_trainable(true);
    g.static_head.set_trainable(true);
    return;
  }
  const Wiring w = wiring(variant);
  if (variant == MethodVariant::BL) return;
  g.perception1.set_trainable(!w.static_module);
  g.perception2.set_trainable(true);
  g.moving_head.set_trainable(w.moving_module);
  g.dynamic_head.set_trainable(w.dynamic_module);
}

/// Hash of the stage-1 tensors, used to enforce the freezing contract.
inline std::uint64_t stage1_hash(const GeneratorState& g) {
  nn::Checkpoint ck;
  for (const auto* m : {&g.perception1, &g.static_head})
    for (auto* p : const_cast<GeneratorState::Seq*>(m)->params()) ck.entries.push_back(nn::to_entry(*p));
  return nn::checkpoint_hash(ck);
}

// ---------------------------------------------------------------------------
// Trial generation

struct TrialSetup {
  std::size_t workspace = 0;
  std::size_t n_objects = 1;
  std::uint64_t scene_seed = 0;
  std::uint64_t sim_seed = 0;
  std::uint64_t explore_seed = 0;
  double v = 0.0;
};

/// Per-step randomness derives from (seed, stage, step) only, so every variant
/// sees the same scene and velocity sequence and any step can be replayed.
inline TrialSetup trial_setup(const TrainConfig& cfg, Stage stage, std::size_t step) {
  TrialSetup s;
  s.workspace = step % cfg.workspaces;
  s.n_objects = cfg.objects_in(s.workspace);
  const auto st = static_cast<std::uint64_t>(stage);
  s.scene_seed = derive_seed(cfg.seed, {st, step, 1});
  s.sim_seed = derive_seed(cfg.seed, {st, step, 2});
  s.explore_seed = derive_seed(cfg.seed, {st, step, 3});
  if (stage == Stage::Mobile) {
    Rng rng(derive_seed(cfg.seed, {st, step, 4}));
    s.v = uniform(rng, cfg.v_train_min, cfg.v_train_max);
  }
  return s;
}

/// Scenes are resampled (with a derived seed) if the sampler gives up.
inline SceneSpec sample_trial_scene(std::uint64_t seed, const TrainConfig& cfg, std::size_t n_objects) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    try {
      return sample_scene(attempt == 0 ? seed : derive_seed(seed, {attempt}), cfg.scene, cfg.frame(), n_objects);
    } catch (const SceneError&) {
      if (attempt >= 16) throw;
    }
  }
}

/// Executes the recorded action again and returns the outcome.
inline TrialOutcome replay_trial(const TrainConfig& cfg, const TrialRecord& r) {
  const SceneSpec scene = sample_trial_scene(r.scene_seed, cfg, r.n_objects);
  const GraspPrimitive grasp = grasp_at(r.pixel, cfg.network.rotations, cfg.frame());
  if (r.stage == Stage::Static) {
    TrialOutcome out;
    out.success = grasp_oracle(scene, grasp.x, grasp.y, grasp.theta, cfg.gripper);
    return out;
  }
  Rng rng(r.sim_seed);
  return simulate_mobile_grasp(scene, {r.v_hat, r.v}, grasp, cfg.error, cfg.gripper, cfg.timing, rng);
}

// ---------------------------------------------------------------------------
// Trainer

/// Online trainer for one stage. Updates are applied serially in trial order.
class Trainer {
 public:
  Trainer(TrainConfig cfg, Stage stage, MethodVariant variant, GeneratorState g)
      : cfg_(std::move(cfg)), stage_(stage), variant_(variant), g_(std::move(g)), opt_(cfg_.sgd) {
    cfg_.validate();
    if (g_.config() != cfg_.network) throw TrainingError("trainer: generator does not match the configured network");
    if (stage_ == Stage::Mobile && variant_ == MethodVariant::BL) {
      throw TrainingError("trainer: the baseline uses the stage-1 checkpoint as is");
    }
    set_trainable(g_, stage_, variant_);
    if (guards_stage1()) frozen_hash_ = stage1_hash(g_);
  }

  const TrainConfig& config() const { return cfg_; }
  Stage stage() const { return stage_; }
  MethodVariant variant() const { return variant_; }
  const GeneratorState& generator() const { return g_; }
  std::size_t steps_done() const { return step_; }
  std::size_t total_steps() const { return cfg_.steps(stage_); }
  double rolling_success() const {
    if (window_.empty()) return 0.0;
    std::size_t s = 0;
    for (int x : window_) s += static_cast<std::size_t>(x);
    return static_cast<double>(s) / static_cast<double>(window_.size());
  }

  TrialRecord step() {
    const TrialSetup setup = trial_setup(cfg_, stage_, step_);
    const FrameConfig frame = cfg_.frame();
    const SceneSpec scene = sample_trial_scene(setup.scene_seed, cfg_, setup.n_objects);
    const RotationStack stack = build_rotation_stack(render_heightmap(scene, frame), g_.rotations());
    const double eps = cfg_.epsilon(step_, total_steps());
    Rng explore(setup.explore_seed);

    TrialRecord r;
    r.stage = stage_;
    r.variant = variant_;
    r.step = step_;
    r.workspace = setup.workspace;
    r.n_objects = setup.n_objects;
    r.scene_seed = setup.scene_seed;
    r.sim_seed = setup.sim_seed;
    r.v = setup.v;

    const ActionMask mask = support_mask(stack, cfg_.support_height);
    const StaticOutput s = forward_static(stack, g_);
    if (!s.q_gs.values.all_finite()) {
      throw TrainingError("training diverged at " + stage_name(stage_) + " step " + std::to_string(step_) +
                          ": static grasp map is not finite");
    }
    if (stage_ == Stage::Static) {
      r.pixel = exploration_action(s.q_gs, eps, explore, &mask);
      r.explored = !(r.pixel == argmax_pixel(s.q_gs, &mask));
      r.q = s.q_gs.at(r.pixel);
      const GraspPrimitive grasp = grasp_at(r.pixel, g_.rotations(), frame);
      r.label = grasp_oracle(scene, grasp.x, grasp.y, grasp.theta, cfg_.gripper) ? 1 : 0;
    } else {
      const Wiring w = wiring(variant_);
      const DynamicOutput d = forward_dynamic(s, r.v, g_, w);
      const AffordanceMap& q = w.dynamic_module ? d.q_gd : s.q_gs;
      r.pixel = exploration_action(q, eps, explore, &mask);
      r.explored = !(r.pixel == argmax_pixel(q, &mask));
      r.q = q.at(r.pixel);
      r.delta = d.q_m.at(r.pixel);
      const MovePrimitive move = move_at(d.q_m, r.pixel, r.v, cfg_.limits);
      r.v_hat = move.v_hat;
      Rng sim(setup.sim_seed);
      const TrialOutcome out =
          simulate_mobile_grasp(scene, move, grasp_at(r.pixel, g_.rotations(), frame), cfg_.error, cfg_.gripper,
                                cfg_.timing, sim);
      r.v_true = out.v_true;
      // The residual target is measured against the commanded setpoint: it is
      // the correction that would have made the realized velocity equal v.
      std::tie(r.label, r.delta_bar) = label_from_trial(out, r.v_hat);
    }

    r.loss = single_pixel_update(g_, opt_, stack, r);
    if (!std::isfinite(r.loss.total)) {
      throw TrainingError("training diverged at " + stage_name(stage_) + " step " + std::to_string(step_) +
                          ": loss is " + std::to_string(r.loss.total) + " (grasp " +
                          std::to_string(r.loss.grasp_term) + ", move " + std::to_string(r.loss.move_term) + ")");
    }
    for (auto* p : g_.params())
      if (p->trainable && !p->value.all_finite()) {
        throw TrainingError("training diverged at step " + std::to_string(step_) + ": parameter " + p->name +
                            " is no longer finite");
      }
    window_.push_back(r.label);
    if (window_.size() > cfg_.rolling_window) window_.pop_front();
    r.rolling_success = rolling_success();
    ++step_;
    if (guards_stage1() && cfg_.frozen_check_every > 0 &&
        (step_ % cfg_.frozen_check_every == 0 || step_ == total_steps())) {
      check_frozen();
    }
    return r;
  }

  /// Runs until `total_steps()`, or `max_steps` more steps when given.
  std::vector<TrialRecord> run(std::optional<std::size_t> max_steps = std::nullopt,
                               const std::function<void(const TrialRecord&)>& on_step = {}) {
    std::vector<TrialRecord> out;
    const std::size_t end = max_steps ? std::min(total_steps(), step_ + *max_steps) : total_steps();
    while (step_ < end) {
      out.push_back(step());
      if (on_step) on_step(out.back());
    }
    return out;
  }

  void check_frozen() const {
    if (guards_stage1() && stage1_hash(g_) != frozen_hash_) {
      throw TrainingError("frozen stage-1 parameters changed during " + stage_name(stage_) + " training at step " +
                          std::to_string(step_));
    }
  }
  std::uint64_t frozen_hash() const { return frozen_hash_; }

  nn::Checkpoint checkpoint() const { return g_.to_checkpoint(stage_name(stage_), variant_); }

  /// Parameters, momentum buffers and progress, enough to continue the run.
  nn::Checkpoint resume_state() const {
    nn::Checkpoint ck = checkpoint();
    for (const auto& [name, buf] : opt_.buffers()) {
      nn::CheckpointEntry e{"momentum:" + name, false, buf.shape(), buf.to_vector()};
      ck.entries.push_back(std::move(e));
    }
    auto tag = GeneratorState::tag_of(ck);
    tag["resume"] = {{"step", step_}, {"window", std::vector<int>(window_.begin(), window_.end())},
                     {"frozen_hash", frozen_hash_}};
    ck.tag = tag.dump();
    return ck;
  }

  static Trainer resume(TrainConfig cfg, const nn::Checkpoint& state) {
    auto tag = GeneratorState::tag_of(state);
    if (!tag.contains("resume")) throw nn::CheckpointError("not a trainer state file");
    const Stage stage = tag.at("stage").get<std::string>() == "static" ? Stage::Static : Stage::Mobile;
    const MethodVariant variant = parse_variant(tag.at("variant").get<std::string>());
    nn::Checkpoint model;
    model.tag = state.tag;
    std::vector<nn::CheckpointEntry> momentum;
    for (const auto& e : state.entries) (e.name.rfind("momentum:", 0) == 0 ? momentum : model.entries).push_back(e);
    Trainer t(std::move(cfg), stage, variant, GeneratorState::from_checkpoint(model));
    for (const auto& e : momentum) t.opt_.buffers().emplace(e.name.substr(9), Tensor32(e.shape, e.data));
    t.step_ = tag.at("resume").at("step").get<std::size_t>();
    for (int x : tag.at("resume").at("window").get<std::vector<int>>()) t.window_.push_back(x);
    t.frozen_hash_ = tag.at("resume").at("frozen_hash").get<std::uint64_t>();
    t.check_frozen();
    return t;
  }

 private:
  bool guards_stage1() const { return stage_ == Stage::Mobile && wiring(variant_).static_module; }

  TrainConfig cfg_;
  Stage stage_;
  MethodVariant variant_;
  GeneratorState g_;
  nn::SgdMomentum<float> opt_;
  std::size_t step_ = 0;
  std::deque<int> window_;
  std::uint64_t frozen_hash_ = 0;
};

/// Stage 1 from the seeded initialization.
inline Trainer train_static(const TrainConfig& cfg, std::ostream* metrics = nullptr) {
  Trainer t(cfg, Stage::Static, MethodVariant::PP, GeneratorState(cfg.network));
  if (metrics) *metrics << metrics_header();
  t.run(std::nullopt, [&](const TrialRecord& r) {
    if (metrics) *metrics << metrics_row(r);
  });
  return t;
}

/// Starting generator for stage 2. Variants without the static module start
/// perception1 from the seeded initialization instead of the stage-1 weights.
inline GeneratorState mobile_start(const TrainConfig& cfg, const nn::Checkpoint& static_ckpt, MethodVariant variant) {
  GeneratorState g = GeneratorState::from_checkpoint(static_ckpt);
  if (g.config() != cfg.network) throw TrainingError("stage-1 checkpoint network differs from the configuration");
  const auto tag = GeneratorState::tag_of(static_ckpt);
  if (tag.value("stage", "") != "static") throw TrainingError("train-mobile needs a stage-1 checkpoint");
  if (!wiring(variant).static_module) {
    const GeneratorState fresh(cfg.network);
    g.perception1 = fresh.perception1;
  }
  return g;
}

inline Trainer train_mobile(const TrainConfig& cfg, const nn::Checkpoint& static_ckpt, MethodVariant variant,
                            std::ostream* metrics = nullptr) {
  Trainer t(cfg, Stage::Mobile, variant, mobile_start(cfg, static_ckpt, variant));
  if (metrics) *metrics << metrics_header();
  t.run(std::nullopt, [&](const TrialRecord& r) {
    if (metrics) *metrics << metrics_row(r);
  });
  return t;
}

}  // namespace mglab
