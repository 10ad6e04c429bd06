#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "mglab/geometry.hpp"
#include "mglab/scene.hpp"
#include "mglab/tensor.hpp"

namespace mglab {

/// Image frame of the ideal top-down camera. Pixel (row i, col j) sits at
/// world (origin_x + j * cell_size, origin_y + i * cell_size); columns run
/// along the motion axis (+X).
struct FrameConfig {
  double cell_size = 0.005;
  double origin_x = -0.1575;
  double origin_y = -0.1575;
  std::size_t grid_h = 64;
  std::size_t grid_w = 64;

  /// Frame of an n x n grid centered on the world origin.
  static FrameConfig centered(std::size_t n, double cell) {
    const double o = -0.5 * static_cast<double>(n - 1) * cell;
    return {cell, o, o, n, n};
  }

  void validate() const {
    if (!(cell_size > 0)) throw std::invalid_argument("frame: cell_size must be positive");
    if (grid_h == 0 || grid_w == 0) throw std::invalid_argument("frame: empty grid");
    if (grid_h != grid_w) throw std::invalid_argument("frame: grid must be square");
  }

  double max_x() const { return origin_x + static_cast<double>(grid_w - 1) * cell_size; }
  double max_y() const { return origin_y + static_cast<double>(grid_h - 1) * cell_size; }
  // Continuous pixel coordinate of the grid's rotation center.
  double center_index() const { return 0.5 * static_cast<double>(grid_w - 1); }
};

struct Heightmap {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<float> color;   // grid_h * grid_w * 3, interleaved RGB
  std::vector<float> height;  // grid_h * grid_w, meters

  float h(std::size_t i, std::size_t j) const { return height[i * grid_w + j]; }
  float c(std::size_t i, std::size_t j, std::size_t ch) const { return color[(i * grid_w + j) * 3 + ch]; }
  bool operator==(const Heightmap&) const = default;
};

/// Rasterizes the scene by sampling each cell at its center. A cell takes the
/// height and color of the tallest covering rectangle.
inline Heightmap render_heightmap(const SceneSpec& scene, const FrameConfig& frame) {
  frame.validate();
  const double half = 0.5 * frame.cell_size;
  for (const auto& obj : scene.objects)
    for (const auto& part : obj.parts)
      for (const auto& p : part.rect.corners()) {
        if (p.x < frame.origin_x - half || p.x > frame.max_x() + half || p.y < frame.origin_y - half ||
            p.y > frame.max_y() + half) {
          throw SceneError("scene rejected: object corner (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
                           ") outside the image frame");
        }
      }

  Heightmap hm;
  hm.grid_h = frame.grid_h;
  hm.grid_w = frame.grid_w;
  hm.height.assign(frame.grid_h * frame.grid_w, 0.0f);
  hm.color.resize(frame.grid_h * frame.grid_w * 3);
  for (std::size_t i = 0; i < frame.grid_h; ++i) {
    for (std::size_t j = 0; j < frame.grid_w; ++j) {
      const Vec2 p{frame.origin_x + static_cast<double>(j) * frame.cell_size,
                   frame.origin_y + static_cast<double>(i) * frame.cell_size};
      double best = 0.0;
      Rgb col = scene.workspace_color;
      for (const auto& obj : scene.objects)
        for (const auto& part : obj.parts)
          if (part.height > best && part.rect.contains(p)) {
            best = part.height;
            col = part.color;
          }
      const std::size_t idx = i * frame.grid_w + j;
      hm.height[idx] = static_cast<float>(best);
      hm.color[idx * 3 + 0] = static_cast<float>(col.r);
      hm.color[idx * 3 + 1] = static_cast<float>(col.g);
      hm.color[idx * 3 + 2] = static_cast<float>(col.b);
    }
  }
  return hm;
}

inline constexpr std::size_t kStackChannels = 4;

/// R rotated copies of the 4-channel image (RGB + height), shape [R, 4, H, W].
struct RotationStack {
  std::size_t rotations = 1;
  Tensor32 maps;

  std::size_t grid() const { return maps.dim(2); }
  bool operator==(const RotationStack&) const = default;
};

namespace detail {

// One exact quarter turn of a [C, n, n] block: out(i, j) = in(j, n-1-i).
inline void quarter_turn(const float* in, float* out, std::size_t channels, std::size_t n) {
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out[(c * n + i) * n + j] = in[(c * n + j) * n + (n - 1 - i)];
}

// Bilinear resampling of a [C, n, n] block: out(p) = in(c + R(angle)(p - c)),
// zero outside the grid.
inline void rotate_bilinear(const float* in, float* out, std::size_t channels, std::size_t n, double angle) {
  const double center = 0.5 * static_cast<double>(n - 1);
  const double cs = std::cos(angle), sn = std::sin(angle);
  const auto sample = [&](std::size_t c, long i, long j) -> double {
    if (i < 0 || j < 0 || i >= static_cast<long>(n) || j >= static_cast<long>(n)) return 0.0;
    return in[(c * n + static_cast<std::size_t>(i)) * n + static_cast<std::size_t>(j)];
  };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = static_cast<double>(j) - center, dy = static_cast<double>(i) - center;
      const double sx = center + cs * dx - sn * dy;
      const double sy = center + sn * dx + cs * dy;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const double wx = sx - fx, wy = sy - fy;
      const long x0 = static_cast<long>(fx), y0 = static_cast<long>(fy);
      for (std::size_t c = 0; c < channels; ++c) {
        const double v = (1 - wy) * ((1 - wx) * sample(c, y0, x0) + wx * sample(c, y0, x0 + 1)) +
                         wy * ((1 - wx) * sample(c, y0 + 1, x0) + wx * sample(c, y0 + 1, x0 + 1));
        out[(c * n + i) * n + j] = static_cast<float>(v);
      }
    }
  }
}

// Splits rotation k of R into quarter turns plus a remainder in [0, 90) deg.
inline std::pair<std::size_t, double> split_rotation(std::size_t k, std::size_t rotations) {
  // The remainder depends only on 4k mod R, so copies k and k + R/4 share
  // bit-identical interpolation weights.
  const std::size_t quarters = (4 * k) / rotations;
  const double remainder =
      (kPi / 2) * static_cast<double>((4 * k) % rotations) / static_cast<double>(rotations);
  return {quarters, remainder};
}

}  // namespace detail

/// Copy k samples the input at c + R(k * 2pi / R)(p - c) around the grid
/// center c. Quarter turns are exact permutations; the remaining angle uses
/// bilinear interpolation with zero fill.
inline RotationStack build_rotation_stack(const Heightmap& hm, std::size_t rotations) {
  if (rotations < 1) throw std::invalid_argument("rotation stack: need at least one rotation");
  if (hm.grid_h != hm.grid_w) throw std::invalid_argument("rotation stack: heightmap grid must be square");
  const std::size_t n = hm.grid_h, plane = n * n, block = kStackChannels * plane;
  std::vector<float> base(block);
  for (std::size_t idx = 0; idx < plane; ++idx) {
    for (std::size_t ch = 0; ch < 3; ++ch) base[ch * plane + idx] = hm.color[idx * 3 + ch];
    base[3 * plane + idx] = hm.height[idx];
  }
  RotationStack stack{rotations, Tensor32({rotations, kStackChannels, n, n})};
  std::vector<float> turned(block), tmp(block);
  for (std::size_t k = 0; k < rotations; ++k) {
    const auto [quarters, remainder] = detail::split_rotation(k, rotations);
    turned = base;
    for (std::size_t q = 0; q < quarters; ++q) {
      detail::quarter_turn(turned.data(), tmp.data(), kStackChannels, n);
      std::swap(turned, tmp);
    }
    float* dst = stack.maps.data() + k * block;
    if (remainder == 0.0) {
      std::copy(turned.begin(), turned.end(), dst);
    } else {
      detail::rotate_bilinear(turned.data(), dst, kStackChannels, n, remainder);
    }
  }
  return stack;
}

/// Maps pixel (row, col) of rotation copy `rot` to world coordinates.
inline Vec2 pixel_to_world(std::size_t row, std::size_t col, std::size_t rot, std::size_t rotations,
                           const FrameConfig& frame) {
  if (row >= frame.grid_h || col >= frame.grid_w) {
    throw std::out_of_range("pixel (" + std::to_string(row) + ", " + std::to_string(col) + ") outside the grid");
  }
  if (rot >= rotations) throw std::out_of_range("rotation index " + std::to_string(rot) + " out of range");
  const double c = frame.center_index();
  const auto [quarters, remainder] = detail::split_rotation(rot, rotations);
  double dx = static_cast<double>(col) - c, dy = static_cast<double>(row) - c;
  if (remainder != 0.0) {
    const double cs = std::cos(remainder), sn = std::sin(remainder);
    const double rx = cs * dx - sn * dy, ry = sn * dx + cs * dy;
    dx = rx;
    dy = ry;
  }
  for (std::size_t q = 0; q < quarters; ++q) {
    const double rx = -dy, ry = dx;
    dx = rx;
    dy = ry;
  }
  return {frame.origin_x + (c + dx) * frame.cell_size, frame.origin_y + (c + dy) * frame.cell_size};
}

/// Nearest copy-0 pixel (row, col) of a world point. May lie outside the grid.
inline std::pair<long, long> world_to_pixel(Vec2 p, const FrameConfig& frame) {
  return {std::lround((p.y - frame.origin_y) / frame.cell_size), std::lround((p.x - frame.origin_x) / frame.cell_size)};
}

}  // namespace mglab
