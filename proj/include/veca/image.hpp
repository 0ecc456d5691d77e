#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "veca/rng.hpp"
#include "veca/tensor.hpp"

namespace veca {

inline constexpr std::array<double, 3> kImageMean = {0.485, 0.456, 0.406};
inline constexpr std::array<double, 3> kImageStd = {0.229, 0.224, 0.225};

/// RGB image in [0, 1], planar [3 x H x W].
struct RgbImage {
  std::size_t height = 0, width = 0;
  std::vector<double> pixels;

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
};

/// Colored rectangles and discs over a noisy background.
inline RgbImage synthetic_image(std::size_t height, std::size_t width, Rng& rng) {
  RgbImage img{height, width, std::vector<double>(3 * height * width)};
  std::array<double, 3> base;
  for (auto& b : base) b = rng.uniform(0.1, 0.9);
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) img.at(c, y, x) = std::clamp(base[c] + 0.1 * rng.normal(), 0.0, 1.0);

  const std::size_t shapes = 1 + rng.below(3);
  for (std::size_t s = 0; s < shapes; ++s) {
    std::array<double, 3> color;
    for (auto& v : color) v = rng.uniform();
    const bool disc = rng.uniform() < 0.5;
    const double cx = rng.uniform(0.0, double(width)), cy = rng.uniform(0.0, double(height));
    const double rx = rng.uniform(0.1, 0.4) * double(width), ry = rng.uniform(0.1, 0.4) * double(height);
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t x = 0; x < width; ++x) {
        const double dx = (double(x) + 0.5 - cx) / rx, dy = (double(y) + 0.5 - cy) / ry;
        const bool inside = disc ? dx * dx + dy * dy <= 1.0 : std::abs(dx) <= 1.0 && std::abs(dy) <= 1.0;
        if (inside)
          for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = color[c];
      }
  }
  return img;
}

/// Stacks images into a normalized [B x 3 x H x W] tensor.
template <typename T>
Tensor<T> to_batch(const std::vector<RgbImage>& images) {
  if (images.empty()) throw DimensionError("to_batch: no images");
  const std::size_t h = images[0].height, w = images[0].width;
  std::vector<T> out;
  out.reserve(images.size() * 3 * h * w);
  for (const auto& img : images) {
    if (img.height != h || img.width != w) throw DimensionError("to_batch: images differ in size");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < h * w; ++i)
        out.push_back(T((img.pixels[c * h * w + i] - kImageMean[c]) / kImageStd[c]));
  }
  return Tensor<T>({images.size(), 3, h, w}, std::move(out));
}

template <typename T>
Tensor<T> synthetic_batch(std::size_t count, std::size_t height, std::size_t width, Rng& rng) {
  std::vector<RgbImage> imgs;
  for (std::size_t i = 0; i < count; ++i) imgs.push_back(synthetic_image(height, width, rng));
  return to_batch<T>(imgs);
}

/// Image `id` of the synthetic family seeded by `seed`; independent of other ids.
inline RgbImage synthetic_image_by_id(std::uint64_t seed, std::uint64_t id, std::size_t height, std::size_t width) {
  Rng rng(seed, "image-" + std::to_string(id));
  return synthetic_image(height, width, rng);
}

/// Binary PPM (P6, maxval 255).
inline RgbImage read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open image " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw FormatError(path + ": not a binary PPM (P6) file");
  auto next_int = [&]() {
    for (;;) {
      is >> std::ws;
      if (is.peek() == '#') {
        std::string line;
        std::getline(is, line);
        continue;
      }
      long v = -1;
      is >> v;
      if (!is || v <= 0) throw FormatError(path + ": malformed PPM header");
      return static_cast<std::size_t>(v);
    }
  };
  const std::size_t w = next_int(), h = next_int(), maxval = next_int();
  if (maxval > 255) throw FormatError(path + ": only 8-bit PPM is supported");
  is.get();
  std::vector<unsigned char> raw(3 * w * h);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw FormatError(path + ": truncated pixel data");
  RgbImage img{h, w, std::vector<double>(3 * h * w)};
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (std::size_t c = 0; c < 3; ++c) img.at(c, y, x) = raw[(y * w + x) * 3 + c] / double(maxval);
  return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write image " + path);
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < 3; ++c) {
        const double v = std::clamp(img.pixels[(c * img.height + y) * img.width + x], 0.0, 1.0);
        os.put(static_cast<char>(static_cast<unsigned char>(v * 255.0 + 0.5)));
      }
  if (!os) throw IoError("failed writing image " + path);
}

}  // namespace veca
