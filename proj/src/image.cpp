#include "nst/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <sstream>

#include <png.h>

#include "nst/fileio.hpp"

namespace nst {

ImageFormat format_for_path(const std::filesystem::path& path) {
  std::string ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return ImageFormat::Png;
  if (ext == ".ppm") return ImageFormat::Ppm;
  throw UnsupportedFormatError("unsupported image format '" + ext + "' for " + path.string() +
                               " (expected .png or .ppm)");
}

namespace {

const unsigned char kPngSignature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};

ImageBuffer decode_png(const std::string& bytes, const std::string& what) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw CorruptImageError(what + ": corrupt PNG (" + msg + ")");
  }
  img.format = PNG_FORMAT_RGB;
  if (img.width == 0 || img.height == 0 || img.width > 1u << 15 || img.height > 1u << 15) {
    png_image_free(&img);
    throw CorruptImageError(what + ": implausible PNG size");
  }
  ImageBuffer out(int(img.width), int(img.height));
  if (!png_image_finish_read(&img, nullptr, out.samples.data(), 0, nullptr)) {
    const std::string msg = img.message;
    png_image_free(&img);
    throw CorruptImageError(what + ": corrupt PNG (" + msg + ")");
  }
  return out;
}

std::string encode_png(const ImageBuffer& image) {
  png_image img;
  std::memset(&img, 0, sizeof(img));
  img.version = PNG_IMAGE_VERSION;
  img.width = png_uint_32(image.width);
  img.height = png_uint_32(image.height);
  img.format = PNG_FORMAT_RGB;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, image.samples.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + img.message);
  }
  std::string bytes(size, '\0');
  if (!png_image_write_to_memory(&img, bytes.data(), &size, 0, image.samples.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encoding failed: ") + img.message);
  }
  bytes.resize(size);
  return bytes;
}

// Reads one header integer, skipping whitespace and comments.
bool ppm_int(const std::string& b, std::size_t& pos, long& value) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(b[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  if (pos >= b.size() || !std::isdigit(static_cast<unsigned char>(b[pos]))) return false;
  value = 0;
  while (pos < b.size() && std::isdigit(static_cast<unsigned char>(b[pos]))) {
    value = value * 10 + (b[pos++] - '0');
    if (value > 1 << 20) return false;
  }
  return true;
}

ImageBuffer decode_ppm(const std::string& bytes, const std::string& what) {
  std::size_t pos = 2;
  long w = 0, h = 0, maxval = 0;
  if (!ppm_int(bytes, pos, w) || !ppm_int(bytes, pos, h) || !ppm_int(bytes, pos, maxval) ||
      pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw CorruptImageError(what + ": malformed PPM header");
  }
  ++pos;
  if (w <= 0 || h <= 0 || w > 1 << 15 || h > 1 << 15) {
    throw CorruptImageError(what + ": implausible PPM size");
  }
  if (maxval <= 0) throw CorruptImageError(what + ": PPM max value must be positive");
  if (maxval > 255) throw UnsupportedFormatError(what + ": 16-bit PPM is not supported");
  ImageBuffer out{int(w), int(h)};
  if (bytes.size() - pos < out.samples.size()) {
    throw CorruptImageError(what + ": PPM pixel data truncated");
  }
  for (std::size_t i = 0; i < out.samples.size(); ++i) {
    const long v = static_cast<unsigned char>(bytes[pos + i]);
    if (v > maxval) throw CorruptImageError(what + ": PPM sample exceeds max value");
    out.samples[i] = std::uint8_t(maxval == 255 ? v : (v * 255 + maxval / 2) / maxval);
  }
  return out;
}

std::string encode_ppm(const ImageBuffer& image) {
  std::string bytes = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                      "\n255\n";
  bytes.append(reinterpret_cast<const char*>(image.samples.data()), image.samples.size());
  return bytes;
}

}  // namespace

ImageBuffer decode_image(const std::string& bytes, const std::string& what) {
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), kPngSignature, 8) == 0) {
    return decode_png(bytes, what);
  }
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6') return decode_ppm(bytes, what);
  throw UnsupportedFormatError(what + ": not a PNG or binary PPM file");
}

ImageBuffer load_image(const std::filesystem::path& path) {
  return decode_image(read_file(path), path.string());
}

std::string encode_image(const ImageBuffer& image, ImageFormat format) {
  if (image.width <= 0 || image.height <= 0 ||
      image.samples.size() != std::size_t(3) * image.width * image.height) {
    throw ShapeError("image buffer holds " + std::to_string(image.samples.size()) +
                     " samples for " + std::to_string(image.width) + "x" +
                     std::to_string(image.height));
  }
  return format == ImageFormat::Png ? encode_png(image) : encode_ppm(image);
}

void save_image(const ImageBuffer& image, const std::filesystem::path& path) {
  write_file_atomic(path, encode_image(image, format_for_path(path)));
}

// ---------------------------------------------------------------------------
// Preprocessing
// ---------------------------------------------------------------------------

std::vector<std::string> PreprocessSpec::validate() const {
  std::vector<std::string> out;
  for (int c = 0; c < 3; ++c) {
    if (!(std[c] > 0) || !std::isfinite(std[c])) {
      out.push_back("preprocess.std[" + std::to_string(c) + "] must be positive");
    }
    if (!std::isfinite(mean[c])) {
      out.push_back("preprocess.mean[" + std::to_string(c) + "] must be finite");
    }
  }
  if (resize && ((*resize)[0] <= 0 || (*resize)[1] <= 0)) {
    out.push_back("preprocess.resize must be positive");
  }
  return out;
}

PixelRange PreprocessSpec::pixel_range() const {
  const double top = scale_to_unit ? 1.0 : 255.0;
  PixelRange r;
  for (int c = 0; c < 3; ++c) {
    r.lo[c] = float((0.0 - mean[c]) / std[c]);
    r.hi[c] = float((top - mean[c]) / std[c]);
  }
  return r;
}

namespace {

bool parse_triple(const std::string& text, std::array<double, 3>& out) {
  std::array<double, 3> v{};
  std::istringstream in(text);
  for (int c = 0; c < 3; ++c) {
    if (!(in >> v[c])) return false;
    if (c < 2) {
      char comma = 0;
      if (!(in >> comma) || comma != ',') return false;
    }
  }
  in >> std::ws;
  if (!in.eof()) return false;
  out = v;
  return true;
}

}  // namespace

PreprocessSpec PreprocessSpec::from_metadata(const WeightStore& weights,
                                             std::vector<std::string>* missing) {
  PreprocessSpec spec;
  auto note = [&](const std::string& key) {
    if (missing) missing->push_back(key);
  };
  if (auto s = weights.meta("scale")) {
    if (*s == "unit") {
      spec.scale_to_unit = true;
    } else if (*s == "byte") {
      spec.scale_to_unit = false;
    } else {
      throw ValidationError({"weight metadata 'scale' must be 'unit' or 'byte', got '" + *s + "'"});
    }
  } else {
    note("scale");
  }
  for (const char* key : {"mean", "std"}) {
    auto& target = std::string(key) == "mean" ? spec.mean : spec.std;
    if (auto s = weights.meta(key)) {
      if (!parse_triple(*s, target)) {
        throw ValidationError({std::string("weight metadata '") + key +
                               "' must be three comma-separated numbers, got '" + *s + "'"});
      }
    } else {
      note(key);
    }
  }
  if (auto v = spec.validate(); !v.empty()) throw ValidationError(std::move(v));
  return spec;
}

ImageBuffer resize_image(const ImageBuffer& image, int width, int height) {
  if (width <= 0 || height <= 0) throw ShapeError("resize target must be positive");
  if (width == image.width && height == image.height) return image;
  ImageBuffer out(width, height);
  const double sx = double(image.width) / width, sy = double(image.height) / height;
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, double(image.height - 1));
    const int y0 = int(fy), y1 = std::min(y0 + 1, image.height - 1);
    const double ty = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, double(image.width - 1));
      const int x0 = int(fx), x1 = std::min(x0 + 1, image.width - 1);
      const double tx = fx - x0;
      for (int c = 0; c < 3; ++c) {
        const double top = image.at(x0, y0, c) * (1 - tx) + image.at(x1, y0, c) * tx;
        const double bottom = image.at(x0, y1, c) * (1 - tx) + image.at(x1, y1, c) * tx;
        out.at(x, y, c) = std::uint8_t(std::lround(top * (1 - ty) + bottom * ty));
      }
    }
  }
  return out;
}

Tensor preprocess(const ImageBuffer& image, const PreprocessSpec& spec) {
  if (auto v = spec.validate(); !v.empty()) throw ValidationError(std::move(v));
  const ImageBuffer src =
      spec.resize ? resize_image(image, (*spec.resize)[0], (*spec.resize)[1]) : image;
  Tensor out({1, 3, src.height, src.width});
  const double unit = spec.scale_to_unit ? 1.0 / 255.0 : 1.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < src.height; ++y) {
      for (int x = 0; x < src.width; ++x) {
        out(0, c, y, x) = float((src.at(x, y, c) * unit - spec.mean[c]) / spec.std[c]);
      }
    }
  }
  return out;
}

ImageBuffer deprocess(const Tensor& tensor, const PreprocessSpec& spec) {
  if (auto v = spec.validate(); !v.empty()) throw ValidationError(std::move(v));
  const Shape s = tensor.shape();
  if (s.n != 1 || s.c != 3) throw ShapeError("deprocess expects 1x3xHxW, got " + s.str());
  ImageBuffer out(int(s.w), int(s.h));
  const double unit = spec.scale_to_unit ? 255.0 : 1.0;
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < out.height; ++y) {
      for (int x = 0; x < out.width; ++x) {
        const double v = (double(tensor(0, c, y, x)) * spec.std[c] + spec.mean[c]) * unit;
        const double r = std::isfinite(v) ? std::round(v) : 0.0;
        out.at(x, y, c) = std::uint8_t(std::clamp(r, 0.0, 255.0));
      }
    }
  }
  return out;
}

}  // namespace nst
