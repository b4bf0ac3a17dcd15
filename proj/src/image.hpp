#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace salient {

// Three-channel image with intensities in [0, 1], stored height x width x 3.
class Image {
 public:
  static constexpr std::size_t kChannels = 3;

  Image() = default;
  Image(std::size_t height, std::size_t width)
      : height_(height), width_(width), pixels_(height * width * kChannels, 0.0) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }

  double& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels_[(y * width_ + x) * kChannels + c];
  }
  double at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[(y * width_ + x) * kChannels + c];
  }

  std::vector<double>& pixels() { return pixels_; }
  const std::vector<double>& pixels() const { return pixels_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

// Binary PPM (P6, maxval 255). Intensities quantize to k/255.
std::string encode_ppm(const Image& image);
Image decode_ppm(const std::string& bytes);
void write_ppm(const std::filesystem::path& path, const Image& image);
Image read_ppm(const std::filesystem::path& path);

// Binary PGM (P5, maxval 255) of a row-major grayscale grid in [0, 1].
std::string encode_pgm(std::size_t height, std::size_t width, const std::vector<double>& gray);

double quantize_255(double v);

}  // namespace salient
