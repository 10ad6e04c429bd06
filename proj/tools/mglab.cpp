// mglab: train, evaluate and inspect mobile-grasp generators.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "mglab/config.hpp"
#include "mglab/eval.hpp"
#include "mglab/scene_io.hpp"
#include "mglab/training.hpp"
#include "mglab/version.hpp"

namespace fs = std::filesystem;
using namespace mglab;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
  std::optional<std::size_t> trials;
  std::optional<std::string> velocities;
  std::optional<int> threads;
  std::size_t log_every = 100;
};

void add_common(CLI::App* cmd, Common& c, bool steps, bool eval_flags) {
  cmd->add_option("--config", c.config, "YAML config file (defaults when omitted)")->envname("MGLAB_CONFIG");
  cmd->add_option("--out", c.out, "output directory")->required()->envname("MGLAB_OUT");
  cmd->add_option("--seed", c.seed, "root seed (training seed, or evaluation seed for evaluate)")
      ->envname("MGLAB_SEED");
  cmd->add_option("--threads", c.threads, "worker threads; results do not depend on it")
      ->check(CLI::PositiveNumber)
      ->envname("MGLAB_THREADS");
  if (steps) {
    cmd->add_option("--steps", c.steps, "training trials for this stage")->envname("MGLAB_STEPS");
    cmd->add_option("--log-every", c.log_every, "progress line every N steps (0: quiet)")->envname("MGLAB_LOG_EVERY");
  }
  if (eval_flags) {
    cmd->add_option("--trials", c.trials, "evaluation trials per velocity setting")->envname("MGLAB_TRIALS");
    cmd->add_option("--velocities", c.velocities, "e.g. 0.10,0.15,0.20,rv")->envname("MGLAB_VELOCITIES");
  }
}

std::string hex(std::uint64_t h) {
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string file_hash(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::uint64_t h = 1469598103934665603ull;
  for (char ch; in.get(ch);) {
    h ^= static_cast<unsigned char>(ch);
    h *= 1099511628211ull;
  }
  return hex(h);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Config file (or defaults), then flags; flags have already absorbed MGLAB_*
/// environment values.
RunConfig effective_config(const Common& c, std::optional<Stage> stage) {
  RunConfig rc;
  if (!c.config.empty()) {
    if (!fs::exists(c.config)) throw UsageError("config file not found: " + c.config);
    rc = load_config(c.config);
  }
  if (c.seed) (stage ? rc.train.seed : rc.eval.seed) = *c.seed;
  if (c.steps && stage) (*stage == Stage::Static ? rc.train.static_steps : rc.train.mobile_steps) = *c.steps;
  if (c.trials) rc.eval.trials = *c.trials;
  if (c.velocities) {
    try {
      rc.eval.velocities = parse_velocities(*c.velocities);
    } catch (const std::invalid_argument& e) {
      throw UsageError(std::string("--velocities: ") + e.what());
    }
  }
  if (c.threads) rc.threads = *c.threads;
  try {
    rc.train.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  set_num_threads(rc.threads);
  return rc;
}

std::vector<MethodVariant> parse_variant_list(const std::string& csv) {
  std::vector<MethodVariant> out;
  std::stringstream ss(csv);
  for (std::string item; std::getline(ss, item, ',');) {
    if (item.empty()) continue;
    try {
      const MethodVariant v = parse_variant(item);
      if (std::find(out.begin(), out.end(), v) != out.end()) throw UsageError("variant listed twice: " + item);
      out.push_back(v);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (out.empty()) throw UsageError("empty variant list");
  return out;
}

// ---------------------------------------------------------------------------
// Run manifest: written before any work and rewritten as outputs appear.
// Named per command, so both training stages can share one directory.

std::string config_name(const std::string& command) { return "config-" + command + ".yaml"; }

class Manifest {
 public:
  Manifest(const fs::path& dir, const std::string& command, const RunConfig& rc, const std::vector<std::string>& argv)
      : dir_(dir), command_(command) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir_.string() + ": " + ec.message());
    const std::string yaml = config_to_yaml(rc);
    std::ofstream(dir_ / config_name(command), std::ios::binary) << yaml;
    std::string cmdline;
    for (const auto& a : argv) cmdline += (cmdline.empty() ? "" : " ") + a;
    j_["tool"] = "mglab";
    j_["version"] = kVersion;
    j_["command"] = command;
    j_["argv"] = cmdline;
    j_["status"] = "started";
    j_["threads"] = rc.threads;
    j_["seeds"] = {{"training", rc.train.seed}, {"network_init", rc.train.network.init_seed}, {"eval", rc.eval.seed}};
    j_["config_file"] = config_name(command);
    j_["config"] = yaml;
    j_["stages"] = nlohmann::ordered_json::array();
    j_["inputs"] = nlohmann::ordered_json::object();
    j_["outputs"] = nlohmann::ordered_json::object();
    write();
  }

  void input(const std::string& key, const fs::path& p, const std::string& hash) {
    j_["inputs"][key] = {{"path", p.string()}, {"hash", hash}};
  }
  void output(const std::string& key, const fs::path& p) {
    j_["outputs"][key] = {{"path", p.filename().string()}, {"hash", file_hash(p)}};
  }
  void stage(const std::string& s) { j_["stages"].push_back(s); }
  nlohmann::ordered_json& json() { return j_; }

  void finish(const std::string& status) {
    j_["status"] = status;
    write();
  }
  void write() const { std::ofstream(dir_ / ("manifest-" + command_ + ".json"), std::ios::binary) << j_.dump(2) << '\n'; }

 private:
  fs::path dir_;
  std::string command_;
  nlohmann::ordered_json j_;
};

// ---------------------------------------------------------------------------
// Training runs

struct Log {
  std::ofstream file;
  void operator()(const std::string& line) {
    std::cerr << line << '\n';
    file << line << '\n';
    file.flush();
  }
};

std::vector<double> rolling_column(const fs::path& csv) {
  std::ifstream in(csv);
  std::vector<double> out;
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto pos = line.rfind(',');
    if (pos != std::string::npos) out.push_back(std::stod(line.substr(pos + 1)));
  }
  return out;
}

/// Keeps the header and the first `rows` data rows of a metrics file, so a
/// resumed run appends exactly where its state left off.
void truncate_metrics(const fs::path& csv, std::size_t rows) {
  std::ifstream in(csv, std::ios::binary);
  if (!in) throw std::runtime_error("resume: missing metrics file " + csv.string());
  std::string kept, line;
  for (std::size_t i = 0; i <= rows && std::getline(in, line); ++i) kept += line + "\n";
  in.close();
  std::ofstream(csv, std::ios::binary | std::ios::trunc) << kept;
}

/// Runs `t` to completion (or `stop_after` more steps), writing
/// <prefix>_metrics.csv, <prefix>_state.ckpt and, once done, <prefix>.ckpt.
bool run_stage(Trainer& t, const fs::path& out, const std::string& prefix, bool resumed,
               std::optional<std::size_t> stop_after, std::size_t log_every, Manifest& m) {
  const fs::path csv = out / (prefix + "_metrics.csv");
  if (resumed) {
    truncate_metrics(csv, t.steps_done());
  } else {
    std::ofstream(csv, std::ios::binary | std::ios::trunc) << metrics_header();
  }
  std::ofstream metrics(csv, std::ios::binary | std::ios::app);
  Log log{std::ofstream(out / (prefix + ".log"), std::ios::app)};
  log(prefix + ": " + (resumed ? "resuming at step " + std::to_string(t.steps_done()) : std::string("starting")) +
      ", " + std::to_string(t.total_steps()) + " steps");
  const std::size_t check_every = t.config().frozen_check_every;
  const bool guarded = t.stage() == Stage::Mobile && wiring(t.variant()).static_module;
  t.run(stop_after, [&](const TrialRecord& r) {
    metrics << metrics_row(r);
    const std::size_t done = r.step + 1;
    if (guarded && check_every > 0 && (done % check_every == 0 || done == t.total_steps())) {
      log(prefix + ": frozen stage-1 hash " + hex(t.frozen_hash()) + " verified at step " + std::to_string(done));
    }
    if (log_every > 0 && (done % log_every == 0 || done == t.total_steps())) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s: step %zu/%zu rolling success %.3f", prefix.c_str(), done, t.total_steps(),
                    r.rolling_success);
      log(buf);
    }
  });
  metrics.close();

  const fs::path state = out / (prefix + "_state.ckpt");
  nn::save_checkpoint(t.resume_state(), state);
  m.output(prefix + "_metrics", csv);
  m.output(prefix + "_state", state);
  const bool done = t.steps_done() == t.total_steps();
  if (done) {
    const fs::path ck = out / (prefix + ".ckpt");
    nn::save_checkpoint(t.checkpoint(), ck);
    m.output(prefix + "_checkpoint", ck);
    m.json()["outputs"][prefix + "_checkpoint"]["parameter_hash"] = hex(nn::checkpoint_hash(t.checkpoint()));
    const fs::path curve = out / (prefix + "_curve.ppm");
    write_ppm(curve, plot_curves({{prefix, rolling_column(csv)}}));
    m.output(prefix + "_curve", curve);
    log(prefix + ": finished, checkpoint " + ck.filename().string());
  } else {
    log(prefix + ": paused at step " + std::to_string(t.steps_done()) + "; resume with --resume " + state.string());
  }
  m.write();
  return done;
}

/// On resume the effective config must match the snapshot of the run being
/// continued (thread count aside).
void check_resume_config(RunConfig rc, const fs::path& out, const std::string& command) {
  const fs::path snap = out / config_name(command);
  if (!fs::exists(snap)) return;
  RunConfig old = load_config(snap);
  old.threads = rc.threads = 1;
  if (config_to_yaml(old) != config_to_yaml(rc)) {
    throw UsageError("resume: configuration differs from the run in " + out.string() +
                     " (pass --config " + snap.string() + ")");
  }
}

int cmd_train_static(const Common& c, const std::optional<std::string>& resume, std::optional<std::size_t> stop_after,
                     const std::vector<std::string>& argv) {
  Common cc = c;
  const fs::path snap = fs::path(cc.out) / config_name("train-static");
  if (resume && cc.config.empty() && fs::exists(snap)) cc.config = snap.string();
  const RunConfig rc = effective_config(cc, Stage::Static);
  if (resume) check_resume_config(rc, cc.out, "train-static");
  Manifest m(cc.out, "train-static", rc, argv);
  m.stage("static");
  std::optional<Trainer> t;
  if (resume) {
    const auto state = nn::load_checkpoint(*resume);
    m.input("resume_state", *resume, hex(nn::checkpoint_hash(state)));
    m.write();
    t.emplace(Trainer::resume(rc.train, state));
    if (t->stage() != Stage::Static) throw UsageError("--resume: " + *resume + " is not a stage-1 state");
  } else {
    t.emplace(rc.train, Stage::Static, MethodVariant::PP, GeneratorState(rc.train.network));
  }
  const bool done = run_stage(*t, cc.out, "static", resume.has_value(), stop_after, cc.log_every, m);
  m.finish(done ? "complete" : "paused");
  return 0;
}

int cmd_train_mobile(const Common& c, const std::string& static_path, const std::string& variants_csv,
                     const std::optional<std::string>& resume, std::optional<std::size_t> stop_after,
                     const std::vector<std::string>& argv) {
  Common cc = c;
  const fs::path snap = fs::path(cc.out) / config_name("train-mobile");
  if (resume && cc.config.empty() && fs::exists(snap)) cc.config = snap.string();
  const RunConfig rc = effective_config(cc, Stage::Mobile);
  std::vector<MethodVariant> variants = parse_variant_list(variants_csv);
  if (resume && variants.size() != 1) throw UsageError("--resume continues one variant; pass --variants with one name");
  if (resume) check_resume_config(rc, cc.out, "train-mobile");
  Manifest m(cc.out, "train-mobile", rc, argv);

  // Rejected here, before any training, if unreadable or not a stage-1 file.
  const nn::Checkpoint static_ck = nn::load_checkpoint(static_path);
  m.input("static_checkpoint", static_path, hex(nn::checkpoint_hash(static_ck)));
  if (GeneratorState::tag_of(static_ck).value("stage", "") != "static") {
    throw TrainingError(static_path + " is not a stage-1 checkpoint");
  }
  m.write();

  bool all_done = true;
  for (MethodVariant v : variants) {
    const std::string name(variant_name(v));
    if (v == MethodVariant::BL) {
      std::cerr << "BL: uses the stage-1 checkpoint as is; nothing to train\n";
      continue;
    }
    m.stage("mobile:" + name);
    std::optional<Trainer> t;
    if (resume) {
      const auto state = nn::load_checkpoint(*resume);
      m.input("resume_state", *resume, hex(nn::checkpoint_hash(state)));
      t.emplace(Trainer::resume(rc.train, state));
      if (t->stage() != Stage::Mobile || t->variant() != v) {
        throw UsageError("--resume: " + *resume + " is not a stage-2 " + name + " state");
      }
    } else {
      t.emplace(rc.train, Stage::Mobile, v, mobile_start(rc.train, static_ck, v));
    }
    all_done &= run_stage(*t, cc.out, "mobile_" + name, resume.has_value(), stop_after, cc.log_every, m);
  }
  m.finish(all_done ? "complete" : "paused");
  return 0;
}

fs::path default_checkpoint(const fs::path& models, MethodVariant v) {
  return models / (v == MethodVariant::BL ? "static.ckpt" : "mobile_" + std::string(variant_name(v)) + ".ckpt");
}

int cmd_evaluate(const Common& c, const std::string& variants_csv, const std::string& models,
                 const std::vector<std::string>& explicit_ckpts, const std::vector<std::string>& argv) {
  const RunConfig rc = effective_config(c, std::nullopt);
  const auto variants = parse_variant_list(variants_csv);
  std::map<MethodVariant, fs::path> paths;
  for (const auto& spec : explicit_ckpts) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--checkpoint expects VARIANT=PATH, got '" + spec + "'");
    try {
      paths[parse_variant(spec.substr(0, eq))] = spec.substr(eq + 1);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  for (MethodVariant v : variants) {
    if (paths.count(v)) continue;
    if (models.empty()) throw UsageError("no checkpoint for " + std::string(variant_name(v)) + " (use --models or --checkpoint)");
    paths[v] = default_checkpoint(models, v);
  }

  Manifest m(c.out, "evaluate", rc, argv);
  std::vector<std::string> names;
  for (MethodVariant v : variants) names.emplace_back(variant_name(v));
  m.json()["variants"] = names;
  m.write();

  std::vector<GeneratorState> gens;
  gens.reserve(variants.size());
  for (MethodVariant v : variants) {
    const auto ck = nn::load_checkpoint(paths[v]);
    m.input(std::string(variant_name(v)), paths[v], hex(nn::checkpoint_hash(ck)));
    const auto tag = GeneratorState::tag_of(ck);
    const bool stage1 = tag.value("stage", "") == "static";
    if (v == MethodVariant::BL ? !stage1 : (stage1 || tag.value("variant", "") != variant_name(v))) {
      throw EvalError(paths[v].string() + " is not a " + std::string(variant_name(v)) + " checkpoint");
    }
    gens.push_back(GeneratorState::from_checkpoint(ck));
  }
  m.write();
  std::vector<std::pair<MethodVariant, const GeneratorState*>> entries;
  for (std::size_t i = 0; i < variants.size(); ++i) entries.emplace_back(variants[i], &gens[i]);
  const EvalReport rep = run_ablation(entries, rc.train, rc.eval);
  render_report(rep, c.out);
  for (const char* f : {"table_success.csv", "table_success.md", "table_methods.md", "table_timing.csv",
                        "residuals.csv", "summary.json"})
    m.output(f, fs::path(c.out) / f);

  if (!models.empty()) {
    std::map<std::string, std::vector<double>> curves;
    for (MethodVariant v : variants) {
      const fs::path csv = fs::path(models) / ("mobile_" + std::string(variant_name(v)) + "_metrics.csv");
      if (v != MethodVariant::BL && fs::exists(csv)) curves[std::string(variant_name(v))] = rolling_column(csv);
    }
    if (!curves.empty()) {
      write_ppm(fs::path(c.out) / "curves.ppm", plot_curves(curves));
      m.output("curves.ppm", fs::path(c.out) / "curves.ppm");
    }
  }
  std::cout << slurp(fs::path(c.out) / "table_success.md");
  m.finish("complete");
  return 0;
}

int cmd_render(const Common& c, const std::string& ckpt_path, std::uint64_t scene_seed, std::size_t objects,
               double velocity, const std::optional<std::string>& variant_name_opt,
               const std::optional<std::string>& scene_file, const std::vector<std::string>& argv) {
  const RunConfig rc = effective_config(c, std::nullopt);
  std::optional<MethodVariant> variant;
  if (variant_name_opt) {
    try {
      variant = parse_variant(*variant_name_opt);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (objects < 1) throw UsageError("--objects must be at least 1");
  Manifest m(c.out, "render", rc, argv);
  const auto ck = nn::load_checkpoint(ckpt_path);
  m.input("checkpoint", ckpt_path, hex(nn::checkpoint_hash(ck)));
  const auto tag = GeneratorState::tag_of(ck);
  if (!variant) variant = tag.value("stage", "") == "static" ? MethodVariant::BL : parse_variant(tag.value("variant", "PP"));
  const GeneratorState g = GeneratorState::from_checkpoint(ck);
  TrainConfig cfg = rc.train;
  cfg.network = g.config();
  SceneSpec scene;
  if (scene_file) {
    scene = load_scene(*scene_file);
    m.input("scene", *scene_file, file_hash(*scene_file));
  } else {
    scene = sample_trial_scene(scene_seed, cfg, objects);
  }
  m.json()["scene_seed"] = scene_seed;
  m.json()["variant"] = std::string(variant_name(*variant));
  m.json()["velocity"] = velocity;
  m.write();
  save_scene(scene, fs::path(c.out) / "scene.json");
  m.output("scene.json", fs::path(c.out) / "scene.json");
  for (const auto& f : render_maps(g, *variant, scene, velocity, cfg.frame(), c.out)) m.output(f.filename().string(), f);
  m.finish("complete");
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"mglab: two-stage mobile grasp learning on a simulated desk"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  Common ts, tm, ev, rd;
  std::optional<std::string> ts_resume, tm_resume, rd_variant, rd_scene;
  std::optional<std::size_t> ts_stop, tm_stop;
  std::string tm_static, tm_variants = "PP,WO_SG,WO_M,WO_DG";
  std::string ev_variants = "BL,WO_SG,WO_M,WO_DG,PP", ev_models;
  std::vector<std::string> ev_ckpts;
  std::string rd_ckpt;
  std::uint64_t rd_seed = 0;
  std::size_t rd_objects = 3;
  double rd_velocity = 0.15;

  auto* c_ts = app.add_subcommand("train-static", "stage 1: learn the static grasp module");
  add_common(c_ts, ts, true, false);
  c_ts->add_option("--resume", ts_resume, "continue from a *_state.ckpt written by an earlier run");
  c_ts->add_option("--stop-after", ts_stop, "run at most N steps, then save a resumable state");

  auto* c_tm = app.add_subcommand("train-mobile", "stage 2: learn moving and dynamic modules per variant");
  add_common(c_tm, tm, true, false);
  c_tm->add_option("--static", tm_static, "stage-1 checkpoint")->required()->envname("MGLAB_STATIC");
  c_tm->add_option("--variants", tm_variants, "comma-separated variants")->envname("MGLAB_VARIANTS");
  c_tm->add_option("--resume", tm_resume, "continue from a mobile_<V>_state.ckpt");
  c_tm->add_option("--stop-after", tm_stop, "run at most N steps per variant, then save a resumable state");

  auto* c_ev = app.add_subcommand("evaluate", "success-rate and timing tables over velocity settings");
  add_common(c_ev, ev, false, true);
  c_ev->add_option("--variants", ev_variants, "comma-separated variants, table column order")
      ->envname("MGLAB_VARIANTS");
  c_ev->add_option("--models", ev_models, "directory with static.ckpt and mobile_<V>.ckpt")->envname("MGLAB_MODELS");
  c_ev->add_option("--checkpoint", ev_ckpts, "VARIANT=PATH, overrides --models (repeatable)");

  auto* c_rd = app.add_subcommand("render", "per-rotation affordance maps for one scene");
  add_common(c_rd, rd, false, false);
  c_rd->add_option("--checkpoint", rd_ckpt, "generator checkpoint")->required()->envname("MGLAB_CHECKPOINT");
  c_rd->add_option("--scene-seed", rd_seed, "scene seed");
  c_rd->add_option("--objects", rd_objects, "objects in the sampled scene");
  c_rd->add_option("--velocity", rd_velocity, "user velocity for the dynamic maps");
  c_rd->add_option("--variant", rd_variant, "wiring (default: from the checkpoint)");
  c_rd->add_option("--scene", rd_scene, "scene JSON file instead of a sampled scene");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (*c_ts) return cmd_train_static(ts, ts_resume, ts_stop, args);
    if (*c_tm) return cmd_train_mobile(tm, tm_static, tm_variants, tm_resume, tm_stop, args);
    if (*c_ev) return cmd_evaluate(ev, ev_variants, ev_models, ev_ckpts, args);
    return cmd_render(rd, rd_ckpt, rd_seed, rd_objects, rd_velocity, rd_variant, rd_scene, args);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
