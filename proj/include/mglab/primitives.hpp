#pragma once

#include <cstddef>

namespace mglab {

/// Location in a rotation stack: row, column and rotation copy.
struct PixelIndex {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t rot = 0;
  bool operator==(const PixelIndex&) const = default;
};

/// Dynamic grasp primitive: world grasp point (x along the motion axis, y
/// lateral) and gripper yaw, quantized to the rotation grid.
struct GraspPrimitive {
  double x = 0.0;
  double y = 0.0;
  double theta = 0.0;
  PixelIndex pixel;
};

/// Moving primitive. `v_hat` is the commanded base velocity; `v_target` is the
/// user's velocity the grasp timing is planned for.
struct MovePrimitive {
  double v_hat = 0.0;
  double v_target = 0.0;
};

}  // namespace mglab
