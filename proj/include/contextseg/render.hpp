#pragma once

// Colored rendering of labeled sketches to binary PPM.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "contextseg/error.hpp"
#include "contextseg/raster.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

using Rgb = std::array<std::uint8_t, 3>;

inline constexpr Rgb kUnlabeledColor{128, 128, 128};

// Fixed colors for the first twelve part indices; later indices walk the hue
// circle by the golden angle.
inline Rgb palette_color(std::size_t part) {
  static constexpr std::array<Rgb, 12> kBase{{{230, 25, 75},
                                             {60, 180, 75},
                                             {0, 130, 200},
                                             {245, 130, 48},
                                             {145, 30, 180},
                                             {70, 240, 240},
                                             {240, 50, 230},
                                             {210, 245, 60},
                                             {0, 128, 128},
                                             {170, 110, 40},
                                             {128, 0, 0},
                                             {0, 0, 128}}};
  if (part < kBase.size()) return kBase[part];
  const double h = std::fmod(static_cast<double>(part) * 137.50776405, 360.0) / 60.0;
  const double x = 1.0 - std::abs(std::fmod(h, 2.0) - 1.0);
  double r = 0, g = 0, b = 0;
  switch (static_cast<int>(h)) {
    case 0: r = 1, g = x; break;
    case 1: r = x, g = 1; break;
    case 2: g = 1, b = x; break;
    case 3: g = x, b = 1; break;
    case 4: r = x, b = 1; break;
    default: r = 1, b = x; break;
  }
  auto c = [](double v) { return static_cast<std::uint8_t>(std::lround(40 + 180 * v)); };
  return {c(r), c(g), c(b)};
}

inline std::vector<Rgb> make_palette(const PartVocabulary& vocab) {
  std::vector<Rgb> p;
  for (std::size_t i = 0; i < vocab.size(); ++i) p.push_back(palette_color(i));
  return p;
}

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<Rgb> pixels;

  RgbImage(int w, int h, Rgb fill) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {}
  Rgb& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// Each stroke is drawn in its part's color; `scale` upsamples the canvas.
inline RgbImage render_labeled(const Sketch& sketch, const std::vector<int>& labels, const std::vector<Rgb>& palette,
                               int scale = 4, int thickness = 2) {
  if (labels.size() != sketch.strokes.size()) throw DataError("render: label count does not match stroke count");
  if (scale < 1 || thickness < 1) throw ConfigError("render: scale and thickness must be >= 1");
  for (int l : labels)
    if (l != kUnlabeled && (l < 0 || static_cast<std::size_t>(l) >= palette.size()))
      throw DataError("render: label " + std::to_string(l) + " has no palette entry");
  const int res = sketch.resolution * scale;
  RgbImage img(res, res, {255, 255, 255});
  for (std::size_t i = 0; i < sketch.strokes.size(); ++i) {
    Stroke st = sketch.strokes[i];
    for (auto& p : st.points) {
      p.x = std::min(p.x * scale, res - 1.0);
      p.y = std::min(p.y * scale, res - 1.0);
    }
    ImageGrid mask(res, res);
    rasterize_into(mask, st, thickness * scale / 2 + 1);
    const Rgb color = labels[i] == kUnlabeled ? kUnlabeledColor : palette[static_cast<std::size_t>(labels[i])];
    for (int y = 0; y < res; ++y)
      for (int x = 0; x < res; ++x)
        if (mask.at(x, y) != 0.0) img.at(x, y) = color;
  }
  return img;
}

inline void write_ppm(const std::string& path, const RgbImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os << "P6\n" << img.width << ' ' << img.height << "\n255\n";
  for (const auto& px : img.pixels) os.write(reinterpret_cast<const char*>(px.data()), 3);
  if (!os) throw Error("failed writing '" + path + "'");
}

}  // namespace cseg
