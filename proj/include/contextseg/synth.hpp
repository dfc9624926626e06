#pragma once

// Procedural labeled sketch corpora. Each template draws its parts in a unit
// frame with per-part jitter, then the whole sketch is normalized onto the
// target canvas.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "contextseg/error.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

struct SynthConfig {
  std::string template_name = "face";
  int count = 100;
  int resolution = 64;
  std::map<std::string, double> presence;  // part name -> probability, default 1
  double position_jitter = 0.04;           // unit-frame translation of parts
  double size_jitter = 0.15;               // relative size variation
  double point_noise = 0.004;              // per-point gaussian noise
  std::uint64_t seed = 1;

  void validate() const {
    if (count < 0) throw ConfigError("synth count must be non-negative");
    if (resolution < 16) throw ConfigError("synth resolution must be at least 16");
    for (const auto& [name, p] : presence)
      if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("presence probability for '" + name + "' outside [0,1]");
    if (position_jitter < 0 || size_jitter < 0 || point_noise < 0) throw ConfigError("jitter magnitudes must be >= 0");
  }
};

inline std::vector<std::string> synth_template_names() { return {"face", "rocket"}; }

inline std::vector<std::string> synth_template_parts(const std::string& name) {
  if (name == "face") return {"head", "eye", "mouth"};
  if (name == "rocket") return {"body", "fin", "window"};
  throw ConfigError("unknown synth template '" + name + "'");
}

namespace detail {

class SynthDraw {
 public:
  SynthDraw(const SynthConfig& cfg, std::mt19937_64& rng) : cfg_(cfg), rng_(rng) {}

  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double jitter(double mag) { return mag > 0 ? uniform(-mag, mag) : 0.0; }
  double pos() { return jitter(cfg_.position_jitter); }
  double size() { return 1.0 + jitter(cfg_.size_jitter); }

  Point2D noisy(double x, double y) {
    if (cfg_.point_noise <= 0) return {x, y};
    std::normal_distribution<double> n(0.0, cfg_.point_noise);
    const double dx = n(rng_);
    const double dy = n(rng_);
    return {x + dx, y + dy};
  }

  Stroke ellipse(double cx, double cy, double rx, double ry, int n) {
    Stroke s;
    const double start = uniform(0.0, 2.0 * std::numbers::pi);
    for (int i = 0; i <= n; ++i) {
      const double a = start + 2.0 * std::numbers::pi * (i % n) / n;
      s.points.push_back(noisy(cx + rx * std::cos(a), cy + ry * std::sin(a)));
    }
    return s;
  }

  // Polyline through `corners`, each edge subdivided into `per_edge` pieces.
  Stroke polygon(const std::vector<Point2D>& corners, int per_edge, bool closed) {
    Stroke s;
    const std::size_t edges = closed ? corners.size() : corners.size() - 1;
    for (std::size_t e = 0; e < edges; ++e) {
      const Point2D a = corners[e];
      const Point2D b = corners[(e + 1) % corners.size()];
      for (int k = 0; k < per_edge; ++k) {
        const double t = static_cast<double>(k) / per_edge;
        s.points.push_back(noisy(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)));
      }
    }
    const Point2D last = closed ? corners.front() : corners.back();
    s.points.push_back(noisy(last.x, last.y));
    return s;
  }

 private:
  const SynthConfig& cfg_;
  std::mt19937_64& rng_;
};

struct PartStroke {
  int part;
  Stroke stroke;
};

inline std::vector<PartStroke> draw_face(SynthDraw& d, const std::vector<bool>& present) {
  std::vector<PartStroke> out;
  const double cx = 0.5 + d.pos();
  const double cy = 0.5 + d.pos();
  const double rx = 0.42 * d.size();
  const double ry = 0.46 * d.size();
  if (present[0]) out.push_back({0, d.ellipse(cx, cy, rx, ry, 28)});
  if (present[1]) {
    const double ey = cy - 0.12 * ry / 0.46 + d.pos();
    const double dx = 0.17 * rx / 0.42 * d.size();
    for (int side : {-1, 1}) {
      const double r = 0.055 * d.size();
      out.push_back({1, d.ellipse(cx + side * dx + d.pos() * 0.3, ey + d.pos() * 0.3, r, r * d.size(), 10)});
    }
  }
  if (present[2]) {
    const double my = cy + 0.2 * ry / 0.46 + d.pos();
    const double hw = 0.16 * d.size();
    const double sag = 0.07 * d.size();
    const double mx = cx + d.pos() * 0.5;
    Stroke s;
    for (int i = 0; i <= 8; ++i) {
      const double t = -1.0 + 2.0 * i / 8.0;
      s.points.push_back(d.noisy(mx + hw * t, my + sag * (1.0 - t * t)));
    }
    out.push_back({2, std::move(s)});
  }
  return out;
}

inline std::vector<PartStroke> draw_rocket(SynthDraw& d, const std::vector<bool>& present) {
  std::vector<PartStroke> out;
  const double cx = 0.5 + d.pos();
  const double hw = 0.13 * d.size();
  const double top = 0.08 + d.pos();
  const double bottom = 0.8 + d.pos();
  const double shoulder = top + 0.22 * d.size();
  if (present[0])
    out.push_back({0, d.polygon({{cx, top}, {cx + hw, shoulder}, {cx + hw, bottom}, {cx - hw, bottom}, {cx - hw, shoulder}},
                                4, true)});
  if (present[1]) {
    const double fin_h = 0.2 * d.size();
    const double fin_w = 0.12 * d.size();
    for (int side : {-1, 1}) {
      const double x0 = cx + side * hw;
      out.push_back({1, d.polygon({{x0, bottom - fin_h}, {x0 + side * fin_w, bottom + 0.1}, {x0, bottom}}, 3, true)});
    }
  }
  if (present[2]) {
    const double r = 0.065 * d.size();
    out.push_back({2, d.ellipse(cx + d.pos() * 0.2, shoulder + 0.12 + d.pos() * 0.5, r, r, 12)});
  }
  return out;
}

}  // namespace detail

inline Corpus synth_corpus(const SynthConfig& cfg) {
  cfg.validate();
  const auto parts = synth_template_parts(cfg.template_name);
  for (const auto& [name, p] : cfg.presence)
    if (std::find(parts.begin(), parts.end(), name) == parts.end())
      throw ConfigError("template '" + cfg.template_name + "' has no part '" + name + "'");
  Corpus corpus;
  corpus.vocab = PartVocabulary::from_names(parts);
  std::mt19937_64 rng(cfg.seed);
  detail::SynthDraw draw(cfg, rng);
  for (int n = 0; n < cfg.count; ++n) {
    std::vector<bool> present(parts.size());
    for (std::size_t p = 0; p < parts.size(); ++p) {
      auto it = cfg.presence.find(parts[p]);
      const double prob = it == cfg.presence.end() ? 1.0 : it->second;
      present[p] = draw.uniform(0.0, 1.0) < prob;
    }
    if (std::none_of(present.begin(), present.end(), [](bool b) { return b; })) present[0] = true;
    auto drawn = cfg.template_name == "face" ? detail::draw_face(draw, present) : detail::draw_rocket(draw, present);
    std::shuffle(drawn.begin(), drawn.end(), rng);
    LabeledSketch ls;
    ls.sketch.category = cfg.template_name;
    for (auto& ps : drawn) {
      ls.sketch.strokes.push_back(std::move(ps.stroke));
      ls.labels.push_back(ps.part);
    }
    renumber_strokes(ls.sketch);
    ls.sketch = normalize_sketch(ls.sketch, cfg.resolution);
    corpus.sketches.push_back(std::move(ls));
  }
  return corpus;
}

}  // namespace cseg
