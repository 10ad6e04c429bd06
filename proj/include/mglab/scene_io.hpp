#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "mglab/scene.hpp"

namespace mglab {

// Scene files are JSON:
//   {"format": "mglab.scene", "version": 1, "seed": 7,
//    "workspace_color": [r, g, b],
//    "objects": [{"parts": [{"center": [x, y], "size": [sx, sy], "yaw": rad,
//                            "height": m, "color": [r, g, b]}]}]}
// Lengths in meters, colors in [0, 1]. Doubles round-trip exactly.
inline constexpr const char* kSceneFormat = "mglab.scene";
inline constexpr int kSceneVersion = 1;

inline nlohmann::json scene_to_json(const SceneSpec& s) {
  using nlohmann::json;
  const auto rgb = [](const Rgb& c) { return json::array({c.r, c.g, c.b}); };
  json objects = json::array();
  for (const auto& o : s.objects) {
    json parts = json::array();
    for (const auto& p : o.parts) {
      parts.push_back({{"center", {p.rect.center.x, p.rect.center.y}},
                       {"size", {p.rect.size.x, p.rect.size.y}},
                       {"yaw", p.rect.yaw},
                       {"height", p.height},
                       {"color", rgb(p.color)}});
    }
    objects.push_back({{"parts", parts}});
  }
  return {{"format", kSceneFormat},     {"version", kSceneVersion}, {"seed", s.seed},
          {"workspace_color", rgb(s.workspace_color)}, {"objects", objects}};
}

namespace detail {

inline const nlohmann::json& field(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SceneError("scene file: missing field '" + where + key + "'");
  return j.at(key);
}

inline double number(const nlohmann::json& j, const std::string& where) {
  if (!j.is_number()) throw SceneError("scene file: '" + where + "' must be a number");
  return j.get<double>();
}

inline std::pair<double, double> pair_of(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 2) throw SceneError("scene file: '" + where + "' must be a 2-element array");
  return {number(j[0], where + "[0]"), number(j[1], where + "[1]")};
}

inline Rgb rgb_of(const nlohmann::json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 3) throw SceneError("scene file: '" + where + "' must be [r, g, b]");
  return {number(j[0], where + "[0]"), number(j[1], where + "[1]"), number(j[2], where + "[2]")};
}

}  // namespace detail

inline SceneSpec scene_from_json(const nlohmann::json& j) {
  const auto& fmt = detail::field(j, "format", "");
  if (!fmt.is_string() || fmt.get<std::string>() != kSceneFormat) {
    throw SceneError(std::string("scene file: format must be '") + kSceneFormat + "'");
  }
  const auto& ver = detail::field(j, "version", "");
  if (!ver.is_number_integer() || ver.get<int>() != kSceneVersion) {
    throw SceneError("scene file: unsupported version " + ver.dump() + " (expected " + std::to_string(kSceneVersion) +
                     ")");
  }
  SceneSpec s;
  const auto& seed = detail::field(j, "seed", "");
  if (!seed.is_number_unsigned()) throw SceneError("scene file: 'seed' must be a non-negative integer");
  s.seed = seed.get<std::uint64_t>();
  s.workspace_color = detail::rgb_of(detail::field(j, "workspace_color", ""), "workspace_color");
  const auto& objects = detail::field(j, "objects", "");
  if (!objects.is_array()) throw SceneError("scene file: 'objects' must be an array");
  for (std::size_t i = 0; i < objects.size(); ++i) {
    const std::string ow = "objects[" + std::to_string(i) + "].";
    const auto& parts = detail::field(objects[i], "parts", ow);
    if (!parts.is_array() || parts.empty()) throw SceneError("scene file: '" + ow + "parts' must be a non-empty array");
    ObjectSpec o;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const std::string pw = ow + "parts[" + std::to_string(k) + "].";
      const auto& pj = parts[k];
      RectPart p;
      const auto [cx, cy] = detail::pair_of(detail::field(pj, "center", pw), pw + "center");
      const auto [sx, sy] = detail::pair_of(detail::field(pj, "size", pw), pw + "size");
      if (!(sx > 0) || !(sy > 0)) throw SceneError("scene file: '" + pw + "size' must be positive");
      p.rect.center = {cx, cy};
      p.rect.size = {sx, sy};
      p.rect.yaw = detail::number(detail::field(pj, "yaw", pw), pw + "yaw");
      p.height = detail::number(detail::field(pj, "height", pw), pw + "height");
      if (!(p.height > 0)) throw SceneError("scene file: '" + pw + "height' must be positive");
      p.color = detail::rgb_of(detail::field(pj, "color", pw), pw + "color");
      o.parts.push_back(p);
    }
    s.objects.push_back(std::move(o));
  }
  return s;
}

inline void save_scene(const SceneSpec& s, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw SceneError("cannot write scene file " + path.string());
  out << scene_to_json(s).dump(2) << '\n';
  if (!out) throw SceneError("failed writing scene file " + path.string());
}

inline SceneSpec load_scene(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw SceneError("cannot open scene file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(buf.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw SceneError("scene file " + path.string() + ": " + e.what());
  }
  return scene_from_json(j);
}

}  // namespace mglab
