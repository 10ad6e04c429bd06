#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "mglab/geometry.hpp"

namespace mglab {

class SceneError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RectPart {
  OrientedRect rect;
  double height = 0.0;
  Rgb color;
  bool operator==(const RectPart& o) const {
    return rect.center == o.rect.center && rect.size == o.rect.size && rect.yaw == o.rect.yaw && height == o.height &&
           color == o.color;
  }
};

/// A target object: a connected union of rectangles.
struct ObjectSpec {
  std::vector<RectPart> parts;
  bool operator==(const ObjectSpec&) const = default;
};

struct SceneSpec {
  Rgb workspace_color{0.5, 0.5, 0.5};
  std::vector<ObjectSpec> objects;  // parts in world coordinates
  std::uint64_t seed = 0;
  bool operator==(const SceneSpec&) const = default;
};

}  // namespace mglab
