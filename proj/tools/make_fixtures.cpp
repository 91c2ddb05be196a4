// Writes the bundled fixture images: an 8-image corpus, 4 content/style
// pairs and the probe image, all 64×64 RGB PNG, generated from fixed seeds.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "nst/image.hpp"

namespace fs = std::filesystem;
using nst::ImageBuffer;

namespace {

constexpr int kSize = 64;
constexpr double kPi = 3.14159265358979323846;

struct Rgb {
  double r, g, b;
};

Rgb mix(Rgb a, Rgb b, double t) {
  return {a.r + (b.r - a.r) * t, a.g + (b.g - a.g) * t, a.b + (b.b - a.b) * t};
}

double uniform(std::mt19937_64& rng) { return double(rng() >> 11) * 0x1.0p-53; }

Rgb random_color(std::mt19937_64& rng) { return {uniform(rng), uniform(rng), uniform(rng)}; }

ImageBuffer render(const std::function<Rgb(double x, double y)>& f) {
  ImageBuffer img(kSize, kSize);
  for (int y = 0; y < kSize; ++y) {
    for (int x = 0; x < kSize; ++x) {
      const Rgb c = f((x + 0.5) / kSize, (y + 0.5) / kSize);
      const double v[3] = {c.r, c.g, c.b};
      for (int k = 0; k < 3; ++k) {
        img.at(x, y, k) = std::uint8_t(std::lround(std::clamp(v[k], 0.0, 1.0) * 255.0));
      }
    }
  }
  return img;
}

// Smooth gradient background with a few flat shapes: object-like content.
ImageBuffer scene(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Rgb top = random_color(rng), bottom = random_color(rng);
  struct Shape {
    bool disc;
    double cx, cy, r;
    Rgb color;
  };
  std::vector<Shape> shapes;
  const int count = 2 + int(rng() % 3);
  for (int i = 0; i < count; ++i) {
    shapes.push_back({rng() % 2 == 0, 0.15 + 0.7 * uniform(rng), 0.15 + 0.7 * uniform(rng),
                      0.08 + 0.15 * uniform(rng), random_color(rng)});
  }
  return render([&](double x, double y) {
    Rgb c = mix(top, bottom, y);
    for (const auto& s : shapes) {
      const double dx = x - s.cx, dy = y - s.cy;
      const bool inside = s.disc ? dx * dx + dy * dy < s.r * s.r
                                 : std::abs(dx) < s.r && std::abs(dy) < s.r;
      if (inside) c = s.color;
    }
    return c;
  });
}

// Periodic high-frequency pattern in two colors: texture-like style.
ImageBuffer texture(std::uint64_t seed, int kind) {
  std::mt19937_64 rng(seed);
  const Rgb a = random_color(rng), b = random_color(rng);
  const double freq = 4 + 6 * uniform(rng);
  const double angle = kPi * uniform(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  return render([&](double x, double y) {
    const double u = x * ca + y * sa, v = -x * sa + y * ca;
    double t = 0;
    switch (kind % 4) {
      case 0: t = 0.5 + 0.5 * std::sin(2 * kPi * freq * u); break;
      case 1: t = (int(std::floor(freq * u)) + int(std::floor(freq * v))) % 2 == 0 ? 1 : 0; break;
      case 2: t = 0.5 + 0.5 * std::sin(2 * kPi * freq * u + 3 * std::sin(2 * kPi * 2 * v)); break;
      default: {
        const double d = std::hypot(x - 0.5, y - 0.5);
        t = 0.5 + 0.5 * std::cos(2 * kPi * freq * d);
        break;
      }
    }
    return mix(a, b, t);
  });
}

void write(const ImageBuffer& img, const fs::path& path) {
  nst::save_image(img, path);
  std::printf("%s\n", path.string().c_str());
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root = argc > 1 ? fs::path(argv[1]) : fs::path("data");
  fs::create_directories(root / "corpus");
  fs::create_directories(root / "pairs");
  for (int i = 0; i < 8; ++i) {
    const ImageBuffer img = i % 2 == 0 ? scene(100 + i) : texture(200 + i, i / 2);
    char name[32];
    std::snprintf(name, sizeof(name), "%02d.png", i);
    write(img, root / "corpus" / name);
  }
  for (int k = 0; k < 4; ++k) {
    write(scene(300 + k), root / "pairs" / ("content_" + std::to_string(k) + ".png"));
    write(texture(400 + k, k), root / "pairs" / ("style_" + std::to_string(k) + ".png"));
  }
  write(scene(500), root / "probe.png");
  return 0;
}
