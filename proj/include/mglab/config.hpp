#pragma once

#include <filesystem>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <yaml-cpp/yaml.h>

#include "mglab/eval.hpp"
#include "mglab/training.hpp"

namespace mglab {

/// Bad or unreadable configuration. The message carries file, line and the
/// dotted field path.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything a run needs. File layout (all sections and keys optional):
///
///   network:  grid rotations trunk_channels velocity_channels stem_padding
///             block_dilation height_scale residual_clamp init_seed
///   frame:    cell_size
///   scene:    margin clearance max_retries
///             object: max_parts part_width_min part_width_max part_length_min
///                     part_length_max height_min height_max max_extent graspable_width
///   training: seed workspaces objects_min objects_max static_steps mobile_steps
///             v_train_min v_train_max test_velocities epsilon_start epsilon_end
///             rolling_window frozen_check_every support_height
///             sgd: lr momentum weight_decay
///   gripper:  max_opening finger_width close_tolerance min_pinch_height
///   error:    drift (polynomial coefficients, constant first) noise_std trigger_lag
///   limits:   v_min v_max
///   timing:   approach_distance grasp_overhead stop_penalty
///   eval:     seed trials velocities ("0.10,0.15,0.20,rv" or a list)
///   run:      threads
struct RunConfig {
  TrainConfig train;
  EvalConfig eval;
  int threads = 1;
};

namespace detail {

class YamlReader {
 public:
  explicit YamlReader(std::string source) : source_(std::move(source)) {}

  [[noreturn]] void fail(const YAML::Node& n, const std::string& path, const std::string& what) const {
    std::string where = source_;
    if (n.Mark().line >= 0) where += ":" + std::to_string(n.Mark().line + 1);
    throw ConfigError(where + ": " + path + ": " + what);
  }

  /// Runs `fn(key, value, path)` for each entry of a mapping and rejects
  /// keys outside `allowed`.
  template <typename Fn>
  void section(const YAML::Node& n, const std::string& path, const std::set<std::string>& allowed, Fn&& fn) const {
    if (!n || n.IsNull()) return;
    if (!n.IsMap()) fail(n, path.empty() ? "<root>" : path, "expected a mapping");
    for (const auto& kv : n) {
      const auto key = kv.first.as<std::string>();
      const std::string full = path.empty() ? key : path + "." + key;
      if (!allowed.count(key)) fail(kv.first, full, "unknown field");
      fn(key, kv.second, full);
    }
  }

  double number(const YAML::Node& n, const std::string& path) const {
    if (!n.IsScalar()) fail(n, path, "expected a number");
    try {
      return n.as<double>();
    } catch (const YAML::Exception&) {
      fail(n, path, "expected a number, got '" + n.Scalar() + "'");
    }
  }

  std::size_t count(const YAML::Node& n, const std::string& path) const {
    if (!n.IsScalar()) fail(n, path, "expected a non-negative integer");
    const std::string& s = n.Scalar();
    if (s.empty() || s.find_first_not_of("0123456789") != std::string::npos) {
      fail(n, path, "expected a non-negative integer, got '" + s + "'");
    }
    try {
      return static_cast<std::size_t>(std::stoull(s));
    } catch (const std::exception&) {
      fail(n, path, "integer out of range");
    }
  }

  std::vector<double> numbers(const YAML::Node& n, const std::string& path) const {
    if (!n.IsSequence()) fail(n, path, "expected a list of numbers");
    std::vector<double> out;
    for (std::size_t i = 0; i < n.size(); ++i) out.push_back(number(n[i], path + "[" + std::to_string(i) + "]"));
    return out;
  }

 private:
  std::string source_;
};

}  // namespace detail

inline RunConfig parse_config(const std::string& text, const std::string& source = "<config>") {
  detail::YamlReader rd(source);
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::ParserException& e) {
    throw ConfigError(source + ":" + std::to_string(e.mark.line + 1) + ": " + e.msg);
  }
  RunConfig rc;
  TrainConfig& t = rc.train;

  rd.section(root, "", {"network", "frame", "scene", "training", "gripper", "error", "limits", "timing", "eval", "run"},
             [&](const std::string& sec, const YAML::Node& n, const std::string& p) {
    if (sec == "network") {
      auto& c = t.network;
      rd.section(n, p,
                 {"grid", "rotations", "trunk_channels", "velocity_channels", "stem_padding", "block_dilation",
                  "height_scale", "residual_clamp", "init_seed"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "grid") c.grid = rd.count(v, f);
        else if (k == "rotations") c.rotations = rd.count(v, f);
        else if (k == "trunk_channels") c.trunk_channels = rd.count(v, f);
        else if (k == "velocity_channels") c.velocity_channels = rd.count(v, f);
        else if (k == "stem_padding") c.stem_padding = rd.count(v, f);
        else if (k == "block_dilation") c.block_dilation = rd.count(v, f);
        else if (k == "height_scale") c.height_scale = rd.number(v, f);
        else if (k == "residual_clamp") c.residual_clamp = rd.number(v, f);
        else c.init_seed = rd.count(v, f);
      });
    } else if (sec == "frame") {
      rd.section(n, p, {"cell_size"}, [&](const std::string&, const YAML::Node& v, const std::string& f) {
        t.cell_size = rd.number(v, f);
      });
    } else if (sec == "scene") {
      auto& c = t.scene;
      rd.section(n, p, {"margin", "clearance", "max_retries", "object"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "margin") c.margin = rd.number(v, f);
        else if (k == "clearance") c.clearance = rd.number(v, f);
        else if (k == "max_retries") c.max_retries = static_cast<int>(rd.count(v, f));
        else {
          auto& o = c.object;
          rd.section(v, f,
                     {"max_parts", "part_width_min", "part_width_max", "part_length_min", "part_length_max",
                      "height_min", "height_max", "max_extent", "graspable_width"},
                     [&](const std::string& k2, const YAML::Node& v2, const std::string& f2) {
            if (k2 == "max_parts") o.max_parts = rd.count(v2, f2);
            else if (k2 == "part_width_min") o.part_width_min = rd.number(v2, f2);
            else if (k2 == "part_width_max") o.part_width_max = rd.number(v2, f2);
            else if (k2 == "part_length_min") o.part_length_min = rd.number(v2, f2);
            else if (k2 == "part_length_max") o.part_length_max = rd.number(v2, f2);
            else if (k2 == "height_min") o.height_min = rd.number(v2, f2);
            else if (k2 == "height_max") o.height_max = rd.number(v2, f2);
            else if (k2 == "max_extent") o.max_extent = rd.number(v2, f2);
            else o.graspable_width = rd.number(v2, f2);
          });
        }
      });
    } else if (sec == "training") {
      rd.section(n, p,
                 {"seed", "workspaces", "objects_min", "objects_max", "static_steps", "mobile_steps", "v_train_min",
                  "v_train_max", "test_velocities", "epsilon_start", "epsilon_end", "rolling_window",
                  "frozen_check_every", "support_height", "sgd"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "seed") t.seed = rd.count(v, f);
        else if (k == "workspaces") t.workspaces = rd.count(v, f);
        else if (k == "objects_min") t.objects_min = rd.count(v, f);
        else if (k == "objects_max") t.objects_max = rd.count(v, f);
        else if (k == "static_steps") t.static_steps = rd.count(v, f);
        else if (k == "mobile_steps") t.mobile_steps = rd.count(v, f);
        else if (k == "v_train_min") t.v_train_min = rd.number(v, f);
        else if (k == "v_train_max") t.v_train_max = rd.number(v, f);
        else if (k == "test_velocities") t.test_velocities = rd.numbers(v, f);
        else if (k == "epsilon_start") t.epsilon_start = rd.number(v, f);
        else if (k == "epsilon_end") t.epsilon_end = rd.number(v, f);
        else if (k == "rolling_window") t.rolling_window = rd.count(v, f);
        else if (k == "frozen_check_every") t.frozen_check_every = rd.count(v, f);
        else if (k == "support_height") t.support_height = rd.number(v, f);
        else {
          rd.section(v, f, {"lr", "momentum", "weight_decay"},
                     [&](const std::string& k2, const YAML::Node& v2, const std::string& f2) {
            if (k2 == "lr") t.sgd.lr = rd.number(v2, f2);
            else if (k2 == "momentum") t.sgd.momentum = rd.number(v2, f2);
            else t.sgd.weight_decay = rd.number(v2, f2);
          });
        }
      });
    } else if (sec == "gripper") {
      auto& c = t.gripper;
      rd.section(n, p, {"max_opening", "finger_width", "close_tolerance", "min_pinch_height"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "max_opening") c.max_opening = rd.number(v, f);
        else if (k == "finger_width") c.finger_width = rd.number(v, f);
        else if (k == "close_tolerance") c.close_tolerance = rd.number(v, f);
        else c.min_pinch_height = rd.number(v, f);
      });
    } else if (sec == "error") {
      auto& c = t.error;
      rd.section(n, p, {"drift", "noise_std", "trigger_lag"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "drift") c.drift_coeffs = rd.numbers(v, f);
        else if (k == "noise_std") c.noise_std = rd.number(v, f);
        else c.trigger_lag = rd.number(v, f);
      });
    } else if (sec == "limits") {
      rd.section(n, p, {"v_min", "v_max"}, [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        (k == "v_min" ? t.limits.v_min : t.limits.v_max) = rd.number(v, f);
      });
    } else if (sec == "timing") {
      auto& c = t.timing;
      rd.section(n, p, {"approach_distance", "grasp_overhead", "stop_penalty"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "approach_distance") c.approach_distance = rd.number(v, f);
        else if (k == "grasp_overhead") c.grasp_overhead = rd.number(v, f);
        else c.stop_penalty = rd.number(v, f);
      });
    } else if (sec == "eval") {
      rd.section(n, p, {"seed", "trials", "velocities"},
                 [&](const std::string& k, const YAML::Node& v, const std::string& f) {
        if (k == "seed") rc.eval.seed = rd.count(v, f);
        else if (k == "trials") rc.eval.trials = rd.count(v, f);
        else {
          std::string csv;
          if (v.IsSequence()) {
            for (std::size_t i = 0; i < v.size(); ++i) csv += (i ? "," : "") + v[i].as<std::string>();
          } else if (v.IsScalar()) {
            csv = v.Scalar();
          } else {
            rd.fail(v, f, "expected a velocity list");
          }
          try {
            rc.eval.velocities = parse_velocities(csv);
          } catch (const std::invalid_argument& e) {
            rd.fail(v, f, e.what());
          }
        }
      });
    } else {
      rd.section(n, p, {"threads"}, [&](const std::string&, const YAML::Node& v, const std::string& f) {
        rc.threads = static_cast<int>(rd.count(v, f));
        if (rc.threads < 1) rd.fail(v, f, "must be at least 1");
      });
    }
  });

  try {
    t.validate();
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return rc;
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path.string());
}

/// Full snapshot in the same layout `parse_config` reads back, with every
/// field spelled out. Doubles print with round-trip precision.
inline std::string config_to_yaml(const RunConfig& rc) {
  const TrainConfig& t = rc.train;
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  const auto seq = [&](const std::vector<double>& xs) {
    e << YAML::Flow << YAML::BeginSeq;
    for (double x : xs) e << x;
    e << YAML::EndSeq;
  };
  e << YAML::BeginMap;
  e << YAML::Key << "network" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "grid" << YAML::Value << t.network.grid << YAML::Key << "rotations" << YAML::Value
    << t.network.rotations << YAML::Key << "trunk_channels" << YAML::Value << t.network.trunk_channels << YAML::Key
    << "velocity_channels" << YAML::Value << t.network.velocity_channels << YAML::Key << "stem_padding"
    << YAML::Value << t.network.stem_padding << YAML::Key << "block_dilation" << YAML::Value
    << t.network.block_dilation << YAML::Key << "height_scale" << YAML::Value << t.network.height_scale << YAML::Key
    << "residual_clamp" << YAML::Value << t.network.residual_clamp << YAML::Key << "init_seed" << YAML::Value
    << t.network.init_seed;
  e << YAML::EndMap;
  e << YAML::Key << "frame" << YAML::Value << YAML::BeginMap << YAML::Key << "cell_size" << YAML::Value << t.cell_size
    << YAML::EndMap;
  const auto& o = t.scene.object;
  e << YAML::Key << "scene" << YAML::Value << YAML::BeginMap << YAML::Key << "margin" << YAML::Value << t.scene.margin
    << YAML::Key << "clearance" << YAML::Value << t.scene.clearance << YAML::Key << "max_retries" << YAML::Value
    << t.scene.max_retries << YAML::Key << "object" << YAML::Value << YAML::BeginMap << YAML::Key << "max_parts"
    << YAML::Value << o.max_parts << YAML::Key << "part_width_min" << YAML::Value << o.part_width_min << YAML::Key
    << "part_width_max" << YAML::Value << o.part_width_max << YAML::Key << "part_length_min" << YAML::Value
    << o.part_length_min << YAML::Key << "part_length_max" << YAML::Value << o.part_length_max << YAML::Key
    << "height_min" << YAML::Value << o.height_min << YAML::Key << "height_max" << YAML::Value << o.height_max
    << YAML::Key << "max_extent" << YAML::Value << o.max_extent << YAML::Key << "graspable_width" << YAML::Value
    << o.graspable_width << YAML::EndMap << YAML::EndMap;
  e << YAML::Key << "training" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << t.seed << YAML::Key << "workspaces" << YAML::Value << t.workspaces
    << YAML::Key << "objects_min" << YAML::Value << t.objects_min << YAML::Key << "objects_max" << YAML::Value
    << t.objects_max << YAML::Key << "static_steps" << YAML::Value << t.static_steps << YAML::Key << "mobile_steps"
    << YAML::Value << t.mobile_steps << YAML::Key << "v_train_min" << YAML::Value << t.v_train_min << YAML::Key
    << "v_train_max" << YAML::Value << t.v_train_max << YAML::Key << "test_velocities" << YAML::Value;
  seq(t.test_velocities);
  e << YAML::Key << "epsilon_start" << YAML::Value << t.epsilon_start << YAML::Key << "epsilon_end" << YAML::Value
    << t.epsilon_end << YAML::Key << "rolling_window" << YAML::Value << t.rolling_window << YAML::Key
    << "frozen_check_every" << YAML::Value << t.frozen_check_every << YAML::Key << "support_height" << YAML::Value
    << t.support_height << YAML::Key << "sgd" << YAML::Value << YAML::BeginMap << YAML::Key << "lr" << YAML::Value
    << t.sgd.lr << YAML::Key << "momentum" << YAML::Value << t.sgd.momentum << YAML::Key << "weight_decay"
    << YAML::Value << t.sgd.weight_decay << YAML::EndMap;
  e << YAML::EndMap;
  e << YAML::Key << "gripper" << YAML::Value << YAML::BeginMap << YAML::Key << "max_opening" << YAML::Value
    << t.gripper.max_opening << YAML::Key << "finger_width" << YAML::Value << t.gripper.finger_width << YAML::Key
    << "close_tolerance" << YAML::Value << t.gripper.close_tolerance << YAML::Key << "min_pinch_height"
    << YAML::Value << t.gripper.min_pinch_height << YAML::EndMap;
  e << YAML::Key << "error" << YAML::Value << YAML::BeginMap << YAML::Key << "drift" << YAML::Value;
  seq(t.error.drift_coeffs);
  e << YAML::Key << "noise_std" << YAML::Value << t.error.noise_std << YAML::Key << "trigger_lag" << YAML::Value
    << t.error.trigger_lag << YAML::EndMap;
  e << YAML::Key << "limits" << YAML::Value << YAML::BeginMap << YAML::Key << "v_min" << YAML::Value << t.limits.v_min
    << YAML::Key << "v_max" << YAML::Value << t.limits.v_max << YAML::EndMap;
  e << YAML::Key << "timing" << YAML::Value << YAML::BeginMap << YAML::Key << "approach_distance" << YAML::Value
    << t.timing.approach_distance << YAML::Key << "grasp_overhead" << YAML::Value << t.timing.grasp_overhead
    << YAML::Key << "stop_penalty" << YAML::Value << t.timing.stop_penalty << YAML::EndMap;
  std::string vel;
  for (const auto& v : rc.eval.velocities) vel += (vel.empty() ? "" : ",") + v.label();
  e << YAML::Key << "eval" << YAML::Value << YAML::BeginMap << YAML::Key << "seed" << YAML::Value << rc.eval.seed
    << YAML::Key << "trials" << YAML::Value << rc.eval.trials << YAML::Key << "velocities" << YAML::Value << vel
    << YAML::EndMap;
  e << YAML::Key << "run" << YAML::Value << YAML::BeginMap << YAML::Key << "threads" << YAML::Value << rc.threads
    << YAML::EndMap;
  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace mglab
