#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "nst/error.hpp"
#include "nst/pipelines.hpp"
#include "nst/tensor.hpp"
#include "nst/weights.hpp"

namespace nst {

/// Path names a format other than PNG or binary PPM.
class UnsupportedFormatError : public Error {
 public:
  using Error::Error;
};

/// File is readable but its contents do not decode.
class CorruptImageError : public Error {
 public:
  using Error::Error;
};

/// 8-bit RGB, row-major, interleaved.
struct ImageBuffer {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> samples;

  ImageBuffer() = default;
  ImageBuffer(int w, int h) : width(w), height(h), samples(std::size_t(3) * w * h, 0) {}

  std::uint8_t& at(int x, int y, int c) { return samples[(std::size_t(y) * width + x) * 3 + c]; }
  std::uint8_t at(int x, int y, int c) const {
    return samples[(std::size_t(y) * width + x) * 3 + c];
  }
  friend bool operator==(const ImageBuffer&, const ImageBuffer&) = default;
};

enum class ImageFormat { Png, Ppm };

/// From the extension (.png, .ppm); throws UnsupportedFormatError.
ImageFormat format_for_path(const std::filesystem::path& path);

/// Decodes by content signature. Missing or unreadable files throw IoError,
/// unknown signatures UnsupportedFormatError, bad contents CorruptImageError.
ImageBuffer load_image(const std::filesystem::path& path);
ImageBuffer decode_image(const std::string& bytes, const std::string& what = "image");

/// Encodes per the extension and writes atomically.
void save_image(const ImageBuffer& image, const std::filesystem::path& path);
std::string encode_image(const ImageBuffer& image, ImageFormat format);

struct PreprocessSpec {
  bool scale_to_unit = true;
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> std{1.0, 1.0, 1.0};
  /// Width and height to resample to (bilinear) before normalizing.
  std::optional<std::array<int, 2>> resize;

  std::vector<std::string> validate() const;
  /// Per-channel range of preprocessed pixel values.
  PixelRange pixel_range() const;

  /// Reads "scale", "mean" and "std" from the weight metadata; absent keys
  /// keep the identity defaults and are listed in `missing` when given.
  static PreprocessSpec from_metadata(const WeightStore& weights,
                                      std::vector<std::string>* missing = nullptr);
};

/// 1×3×H×W tensor of ((v / 255 if scale_to_unit) − mean) / std.
Tensor preprocess(const ImageBuffer& image, const PreprocessSpec& spec);

/// Inverts the normalization, rounds, and clamps to [0, 255].
ImageBuffer deprocess(const Tensor& tensor, const PreprocessSpec& spec);

/// Bilinear resampling with pixel-center alignment.
ImageBuffer resize_image(const ImageBuffer& image, int width, int height);

}  // namespace nst
