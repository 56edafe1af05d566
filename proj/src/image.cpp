#include "glyphforge/image.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cctype>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>

#include "glyphforge/error.hpp"

namespace glyphforge {
namespace {

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), ErrorCode::missing_file, "cannot open image " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void check_extents(std::size_t h, std::size_t w, const std::string& what) {
  require(h >= 1 && w >= 1, ErrorCode::invalid_argument, what + ": empty image");
  require(h <= kMaxImageSide && w <= kMaxImageSide, ErrorCode::invalid_argument,
          what + ": " + std::to_string(h) + "x" + std::to_string(w) + " exceeds " + std::to_string(kMaxImageSide) +
              " px per side");
}

// Minimal PGM tokenizer: whitespace separated, '#' comments to end of line.
class PgmReader {
 public:
  PgmReader(const std::vector<unsigned char>& bytes, std::string name) : b_(bytes), name_(std::move(name)) {}

  std::size_t number() {
    skip();
    require(pos_ < b_.size() && std::isdigit(b_[pos_]), ErrorCode::io, name_ + ": malformed PGM header");
    std::size_t v = 0;
    while (pos_ < b_.size() && std::isdigit(b_[pos_])) {
      v = v * 10 + (b_[pos_++] - '0');
      require(v <= 1u << 20, ErrorCode::io, name_ + ": PGM value out of range");
    }
    return v;
  }

  // Exactly one whitespace byte separates the header from binary data.
  void single_space() {
    require(pos_ < b_.size() && std::isspace(b_[pos_]), ErrorCode::io, name_ + ": malformed PGM header");
    ++pos_;
  }

  std::size_t pos() const { return pos_; }
  void seek(std::size_t p) { pos_ = p; }

 private:
  void skip() {
    while (pos_ < b_.size()) {
      if (std::isspace(b_[pos_])) {
        ++pos_;
      } else if (b_[pos_] == '#') {
        while (pos_ < b_.size() && b_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<unsigned char>& b_;
  std::string name_;
  std::size_t pos_ = 2;
};

GrayImage decode_pgm(const std::vector<unsigned char>& bytes, const std::string& name) {
  const bool binary = bytes[1] == '5';
  PgmReader r(bytes, name);
  const std::size_t w = r.number(), h = r.number(), maxval = r.number();
  require(maxval >= 1 && maxval <= 65535, ErrorCode::io, name + ": PGM maxval " + std::to_string(maxval));
  check_extents(h, w, name);
  GrayImage img(h, w);
  const auto scale = [&](std::size_t v) {
    require(v <= maxval, ErrorCode::io, name + ": PGM sample exceeds maxval");
    return static_cast<std::uint8_t>((v * 255 + maxval / 2) / maxval);
  };
  if (binary) {
    r.single_space();
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    require(bytes.size() - r.pos() >= h * w * bpp, ErrorCode::io, name + ": PGM pixel data truncated");
    const unsigned char* p = bytes.data() + r.pos();
    for (std::size_t i = 0; i < h * w; ++i) {
      const std::size_t v = bpp == 1 ? p[i] : (std::size_t{p[2 * i]} << 8) | p[2 * i + 1];
      img.pixels[i] = scale(v);
    }
  } else {
    for (std::size_t i = 0; i < h * w; ++i) img.pixels[i] = scale(r.number());
  }
  return img;
}

GrayImage decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    fail(ErrorCode::io, name + ": " + png.message);
  png.format = PNG_FORMAT_GRAY;
  if (png.height < 1 || png.width < 1 || png.height > kMaxImageSide || png.width > kMaxImageSide) {
    png_image_free(&png);
    check_extents(png.height, png.width, name);
  }
  GrayImage img(png.height, png.width);
  // Transparent pixels composite onto white.
  png_color white{255, 255, 255};
  if (!png_image_finish_read(&png, &white, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    fail(ErrorCode::io, name + ": " + msg);
  }
  return img;
}

}  // namespace

GrayImage read_image(const std::filesystem::path& path) {
  const auto bytes = slurp(path);
  const std::string name = path.string();
  static constexpr std::array<unsigned char, 8> kPngSig{0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.size() >= 8 && std::equal(kPngSig.begin(), kPngSig.end(), bytes.begin())) return decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && (bytes[1] == '5' || bytes[1] == '2')) return decode_pgm(bytes, name);
  fail(ErrorCode::io, name + ": not a PNG or PGM image");
}

void write_png(const GrayImage& image, const std::filesystem::path& path) {
  check_extents(image.height, image.width, path.string());
  png_image png;
  std::memset(&png, 0, sizeof png);
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr))
    fail(ErrorCode::io, path.string() + ": " + png.message);
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
  check_extents(image.height, image.width, path.string());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::io, "cannot write " + path.string());
  out << "P5\n" << image.width << ' ' << image.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(image.pixels.data()), static_cast<std::streamsize>(image.pixels.size()));
  require(static_cast<bool>(out), ErrorCode::io, "short write to " + path.string());
}

FloatImage FloatImage::from(const GrayImage& g) {
  FloatImage f;
  f.height = g.height;
  f.width = g.width;
  f.values.assign(g.pixels.begin(), g.pixels.end());
  return f;
}

FloatImage resize_bilinear(const FloatImage& src, std::size_t height, std::size_t width) {
  check_extents(src.height, src.width, "resize");
  require(height >= 1 && width >= 1, ErrorCode::invalid_argument, "resize: target extents must be positive");
  FloatImage dst(height, width, 0.0f);
  const double sy = static_cast<double>(src.height) / height, sx = static_cast<double>(src.width) / width;
  const auto max_y = static_cast<double>(src.height - 1), max_x = static_cast<double>(src.width - 1);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, src.height - 1);
    const double wy = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, src.width - 1);
      const double wx = fx - x0;
      const double top = src.at(y0, x0) * (1 - wx) + src.at(y0, x1) * wx;
      const double bottom = src.at(y1, x0) * (1 - wx) + src.at(y1, x1) * wx;
      dst.values[y * width + x] = static_cast<float>(top * (1 - wy) + bottom * wy);
    }
  }
  return dst;
}

FloatImage rotate_bilinear(const FloatImage& src, double degrees) {
  check_extents(src.height, src.width, "rotate");
  FloatImage dst(src.height, src.width, kWhite);
  const double rad = degrees * std::numbers::pi / 180.0;
  const double c = std::cos(rad), s = std::sin(rad);
  const double cy = (src.height - 1) / 2.0, cx = (src.width - 1) / 2.0;
  const auto H = static_cast<std::ptrdiff_t>(src.height), W = static_cast<std::ptrdiff_t>(src.width);
  const auto sample = [&](std::ptrdiff_t y, std::ptrdiff_t x) -> double {
    return (y < 0 || x < 0 || y >= H || x >= W) ? kWhite : src.values[y * W + x];
  };
  for (std::size_t y = 0; y < src.height; ++y) {
    for (std::size_t x = 0; x < src.width; ++x) {
      // Inverse map: rotate the destination point back by -degrees.
      const double dy = y - cy, dx = x - cx;
      const double sx = c * dx - s * dy + cx;
      const double sy = s * dx + c * dy + cy;
      const double fy = std::floor(sy), fx = std::floor(sx);
      const auto y0 = static_cast<std::ptrdiff_t>(fy), x0 = static_cast<std::ptrdiff_t>(fx);
      const double wy = sy - fy, wx = sx - fx;
      const double top = sample(y0, x0) * (1 - wx) + sample(y0, x0 + 1) * wx;
      const double bottom = sample(y0 + 1, x0) * (1 - wx) + sample(y0 + 1, x0 + 1) * wx;
      dst.values[y * src.width + x] = static_cast<float>(top * (1 - wy) + bottom * wy);
    }
  }
  return dst;
}

std::pair<std::size_t, std::size_t> fit_longest_side(std::size_t height, std::size_t width, std::size_t side) {
  check_extents(height, width, "fit");
  require(side >= 1, ErrorCode::invalid_argument, "fit: target side must be positive");
  const auto scaled = [&](std::size_t a, std::size_t longest) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(static_cast<double>(a) * side / longest)));
  };
  if (height >= width) return {side, scaled(width, height)};
  return {scaled(height, width), side};
}

GrayImage median3x3(const GrayImage& src) {
  check_extents(src.height, src.width, "median");
  GrayImage dst(src.height, src.width);
  const auto H = static_cast<std::ptrdiff_t>(src.height), W = static_cast<std::ptrdiff_t>(src.width);
  std::array<std::uint8_t, 9> win{};
  for (std::ptrdiff_t y = 0; y < H; ++y) {
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      std::size_t k = 0;
      for (std::ptrdiff_t dy = -1; dy <= 1; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx)
          win[k++] = src.pixels[std::clamp(y + dy, std::ptrdiff_t{0}, H - 1) * W + std::clamp(x + dx, std::ptrdiff_t{0}, W - 1)];
      std::nth_element(win.begin(), win.begin() + 4, win.end());
      dst.pixels[y * W + x] = win[4];
    }
  }
  return dst;
}

}  // namespace glyphforge
