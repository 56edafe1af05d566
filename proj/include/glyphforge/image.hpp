#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "glyphforge/rng.hpp"
#include "glyphforge/tensor.hpp"

namespace glyphforge {

/// 8-bit grayscale raster, row-major, 0 = black ink, 255 = white ground.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, std::uint8_t fill = 255) : height(h), width(w), pixels(h * w, fill) {}

  bool empty() const noexcept { return pixels.empty(); }
  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  bool operator==(const GrayImage&) const = default;
};

/// Decodes PNG or binary/ASCII PGM (detected from the file signature) to gray.
GrayImage read_image(const std::filesystem::path& path);
void write_png(const GrayImage& image, const std::filesystem::path& path);
void write_pgm(const GrayImage& image, const std::filesystem::path& path);

/// Float raster on the 0..255 scale used between transform stages.
struct FloatImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  FloatImage() = default;
  FloatImage(std::size_t h, std::size_t w, float fill) : height(h), width(w), values(h * w, fill) {}
  static FloatImage from(const GrayImage& g);

  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

constexpr std::size_t kMaxImageSide = 4096;
constexpr float kWhite = 255.0f;

/// Bilinear resample, pixel centers aligned (half-pixel convention), edge clamped.
FloatImage resize_bilinear(const FloatImage& src, std::size_t height, std::size_t width);

/// Rotation about the image center by `degrees`, keeping the
/// frame size; samples falling outside the source read as white.
FloatImage rotate_bilinear(const FloatImage& src, double degrees);

/// Extents after scaling the longest side to `side`; the other side rounds
/// to nearest and never drops below 1.
std::pair<std::size_t, std::size_t> fit_longest_side(std::size_t height, std::size_t width, std::size_t side);

/// 3x3 median with replicated borders.
GrayImage median3x3(const GrayImage& src);

}  // namespace glyphforge
