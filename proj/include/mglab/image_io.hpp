#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mglab/heightmap.hpp"

namespace mglab {

struct RgbImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB

  RgbImage() = default;
  RgbImage(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w * 3, 0) {}
  std::uint8_t* at(std::size_t i, std::size_t j) { return &pixels[(i * width + j) * 3]; }
};

inline std::ofstream open_binary(const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

/// Binary PPM (P6), 8 bits per channel.
inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  auto os = open_binary(path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  os.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
}

/// Binary PGM (P5) with 16-bit big-endian samples.
inline void write_pgm16(const std::filesystem::path& path, std::size_t h, std::size_t w,
                        const std::vector<std::uint16_t>& values) {
  auto os = open_binary(path);
  os << "P5\n" << w << ' ' << h << "\n65535\n";
  for (auto v : values) {
    const char b[2] = {static_cast<char>(v >> 8), static_cast<char>(v & 0xff)};
    os.write(b, 2);
  }
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
}

/// Height channel as 16-bit grayscale, one unit per millimeter.
inline void export_height_pgm(const std::filesystem::path& path, const Heightmap& hm) {
  std::vector<std::uint16_t> mm(hm.height.size());
  std::transform(hm.height.begin(), hm.height.end(), mm.begin(), [](float m) {
    return static_cast<std::uint16_t>(std::clamp<long>(std::lround(m * 1000.0), 0, 65535));
  });
  write_pgm16(path, hm.grid_h, hm.grid_w, mm);
}

inline RgbImage color_image(const Heightmap& hm) {
  RgbImage img(hm.grid_h, hm.grid_w);
  for (std::size_t i = 0; i < hm.grid_h; ++i)
    for (std::size_t j = 0; j < hm.grid_w; ++j)
      for (std::size_t c = 0; c < 3; ++c) img.at(i, j)[c] = to_byte(hm.c(i, j, c));
  return img;
}

/// Blue -> cyan -> yellow -> red ramp for a value in [0, 1].
inline std::array<double, 3> false_color(double t) {
  t = std::clamp(t, 0.0, 1.0);
  static constexpr std::array<std::array<double, 3>, 4> stops = {
      {{0.1, 0.1, 0.8}, {0.1, 0.8, 0.9}, {0.95, 0.9, 0.1}, {0.9, 0.1, 0.1}}};
  const double s = t * 3.0;
  const auto k = std::min<std::size_t>(2, static_cast<std::size_t>(s));
  const double f = s - static_cast<double>(k);
  return {stops[k][0] + f * (stops[k + 1][0] - stops[k][0]), stops[k][1] + f * (stops[k + 1][1] - stops[k][1]),
          stops[k][2] + f * (stops[k + 1][2] - stops[k][2])};
}

/// False-color rendering of an [h, w] map scaled from [lo, hi], optionally
/// alpha-blended over a base image.
inline RgbImage false_color_image(const float* values, std::size_t h, std::size_t w, double lo, double hi,
                                  const RgbImage* base = nullptr, double alpha = 0.6) {
  RgbImage img(h, w);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < w; ++j) {
      const auto col = false_color((values[i * w + j] - lo) / (hi - lo));
      for (std::size_t c = 0; c < 3; ++c) {
        double v = col[c];
        if (base) v = alpha * v + (1 - alpha) * base->pixels[(i * w + j) * 3 + c] / 255.0;
        img.at(i, j)[c] = to_byte(v);
      }
    }
  return img;
}

}  // namespace mglab
