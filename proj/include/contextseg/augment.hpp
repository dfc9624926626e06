#pragma once

// Stroke- and sketch-level geometric augmentation, and semantic copy-paste of
// a rare part into sketches that lack it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "contextseg/error.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

struct AugmentConfig {
  double stroke_rotation_deg = 10.0;
  double stroke_scale_lo = 0.9, stroke_scale_hi = 1.1;
  double stroke_perturb_px = 3.0;
  double stroke_fraction = 0.5;  // probability a stroke is transformed
  double sketch_rotation_deg = 15.0;
  double sketch_scale_lo = 0.85, sketch_scale_hi = 1.15;
  double drop_probability = 0.1;
  std::uint64_t seed = 1;

  static AugmentConfig identity() {
    AugmentConfig c;
    c.stroke_rotation_deg = c.stroke_perturb_px = c.sketch_rotation_deg = c.drop_probability = 0.0;
    c.stroke_scale_lo = c.stroke_scale_hi = c.sketch_scale_lo = c.sketch_scale_hi = 1.0;
    return c;
  }

  void validate() const {
    if (stroke_rotation_deg < 0 || stroke_perturb_px < 0 || sketch_rotation_deg < 0)
      throw ConfigError("augmentation magnitudes must be >= 0");
    if (!(stroke_scale_lo > 0 && stroke_scale_lo <= stroke_scale_hi && sketch_scale_lo > 0 &&
          sketch_scale_lo <= sketch_scale_hi))
      throw ConfigError("augmentation scale ranges must satisfy 0 < lo <= hi");
    if (!(stroke_fraction >= 0 && stroke_fraction <= 1 && drop_probability >= 0 && drop_probability <= 1))
      throw ConfigError("augmentation probabilities must be in [0,1]");
  }
};

namespace detail {

inline double draw(std::mt19937_64& rng, double lo, double hi) {
  return lo == hi ? lo : std::uniform_real_distribution<double>(lo, hi)(rng);
}

// Rotation by `deg` and scaling by `s` about (cx, cy), then translation.
// Exact identity parameters leave points untouched.
inline void transform_points(std::vector<Point2D>& pts, double cx, double cy, double deg, double s, double dx,
                             double dy) {
  if (deg == 0.0 && s == 1.0 && dx == 0.0 && dy == 0.0) return;
  const double rad = deg * std::numbers::pi / 180.0;
  const double cs = std::cos(rad) * s, sn = std::sin(rad) * s;
  for (auto& p : pts) {
    const double x = p.x - cx, y = p.y - cy;
    p = {cx + cs * x - sn * y + dx, cy + sn * x + cs * y + dy};
  }
}

}  // namespace detail

// A seeded subset of strokes, each rotated, scaled and shifted about its own centroid.
inline LabeledSketch augment_stroke_level(const LabeledSketch& ls, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  LabeledSketch out = ls;
  std::bernoulli_distribution pick(cfg.stroke_fraction);
  for (auto& st : out.sketch.strokes) {
    if (!pick(rng) || st.points.empty()) continue;
    double cx = 0, cy = 0;
    for (const auto& p : st.points) {
      cx += p.x;
      cy += p.y;
    }
    cx /= static_cast<double>(st.points.size());
    cy /= static_cast<double>(st.points.size());
    const double deg = detail::draw(rng, -cfg.stroke_rotation_deg, cfg.stroke_rotation_deg);
    const double s = detail::draw(rng, cfg.stroke_scale_lo, cfg.stroke_scale_hi);
    const double dx = detail::draw(rng, -cfg.stroke_perturb_px, cfg.stroke_perturb_px);
    const double dy = detail::draw(rng, -cfg.stroke_perturb_px, cfg.stroke_perturb_px);
    detail::transform_points(st.points, cx, cy, deg, s, dx, dy);
  }
  clamp_to_canvas(out.sketch);
  return out;
}

inline LabeledSketch augment_stroke_level(const LabeledSketch& ls, const AugmentConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return augment_stroke_level(ls, cfg, rng);
}

// Whole-sketch rotation and scale about the canvas center, then independent
// stroke drops; at least one stroke always survives.
inline LabeledSketch augment_sketch_level(const LabeledSketch& ls, const AugmentConfig& cfg, std::mt19937_64& rng) {
  cfg.validate();
  LabeledSketch out = ls;
  const double c = (ls.sketch.resolution - 1) / 2.0;
  const double deg = detail::draw(rng, -cfg.sketch_rotation_deg, cfg.sketch_rotation_deg);
  const double s = detail::draw(rng, cfg.sketch_scale_lo, cfg.sketch_scale_hi);
  for (auto& st : out.sketch.strokes) detail::transform_points(st.points, c, c, deg, s, 0.0, 0.0);
  clamp_to_canvas(out.sketch);

  const std::size_t n = out.sketch.strokes.size();
  if (n == 0 || cfg.drop_probability == 0.0) return out;
  std::bernoulli_distribution drop(cfg.drop_probability);
  std::vector<char> keep(n);
  for (auto& k : keep) k = !drop(rng);
  if (std::none_of(keep.begin(), keep.end(), [](char k) { return k != 0; }))
    keep[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1;
  LabeledSketch kept;
  kept.sketch.category = out.sketch.category;
  kept.sketch.resolution = out.sketch.resolution;
  const bool has_labels = out.labels.size() == n;
  for (std::size_t i = 0; i < n; ++i) {
    if (!keep[i]) continue;
    kept.sketch.strokes.push_back(std::move(out.sketch.strokes[i]));
    if (has_labels) kept.labels.push_back(out.labels[i]);
  }
  renumber_strokes(kept.sketch);
  return kept;
}

inline LabeledSketch augment_sketch_level(const LabeledSketch& ls, const AugmentConfig& cfg) {
  std::mt19937_64 rng(cfg.seed);
  return augment_sketch_level(ls, cfg, rng);
}

// ---------------------------------------------------------------------------
// Occurrence statistics

struct OccurrenceReport {
  std::vector<std::string> parts;
  std::vector<double> sketch_occurrence;  // fraction of sketches containing the part
  std::vector<double> stroke_share;       // fraction of all labeled strokes
  std::size_t sketches = 0, strokes = 0;
};

inline bool has_part(const LabeledSketch& ls, std::size_t part) {
  return std::find(ls.labels.begin(), ls.labels.end(), static_cast<int>(part)) != ls.labels.end();
}

inline OccurrenceReport occurrence_report(std::span<const LabeledSketch> corpus, const PartVocabulary& vocab) {
  OccurrenceReport r;
  r.parts = vocab.names;
  r.sketches = corpus.size();
  std::vector<std::size_t> in_sketch(vocab.size(), 0), strokes(vocab.size(), 0);
  for (const auto& ls : corpus) {
    std::vector<char> seen(vocab.size(), 0);
    for (int l : ls.labels) {
      if (l < 0 || static_cast<std::size_t>(l) >= vocab.size()) continue;
      ++strokes[static_cast<std::size_t>(l)];
      ++r.strokes;
      seen[static_cast<std::size_t>(l)] = 1;
    }
    for (std::size_t p = 0; p < vocab.size(); ++p) in_sketch[p] += seen[p];
  }
  for (std::size_t p = 0; p < vocab.size(); ++p) {
    r.sketch_occurrence.push_back(r.sketches ? static_cast<double>(in_sketch[p]) / static_cast<double>(r.sketches) : 0.0);
    r.stroke_share.push_back(r.strokes ? static_cast<double>(strokes[p]) / static_cast<double>(r.strokes) : 0.0);
  }
  return r;
}

// ---------------------------------------------------------------------------
// Semantic copy-paste

struct SemanticPasteRule {
  std::string rare;
  std::string anchor;
  double inner_fraction = 0.6;  // placement center range, relative to the anchor bbox
  double scale_lo = 0.25, scale_hi = 0.40;  // pasted longer side / anchor shorter side
  double rotation_jitter_deg = 10.0;
  double offset_jitter_px = 2.0;
  double target_occurrence = 0.5;

  void validate() const {
    if (rare.empty() || anchor.empty()) throw ConfigError("paste rule needs rare and anchor parts");
    if (rare == anchor) throw ConfigError("paste rule rare and anchor parts must differ");
    if (!(target_occurrence > 0.0 && target_occurrence <= 1.0)) throw ConfigError("target occurrence must be in (0,1]");
    if (!(inner_fraction >= 0.0 && inner_fraction <= 1.0)) throw ConfigError("inner fraction must be in [0,1]");
    if (!(scale_lo > 0.0 && scale_lo <= scale_hi)) throw ConfigError("paste scale range must satisfy 0 < lo <= hi");
    if (rotation_jitter_deg < 0 || offset_jitter_px < 0) throw ConfigError("paste jitter must be >= 0");
  }
};

struct PasteRecord {
  std::size_t target = 0;    // sketch index in the corpus
  std::size_t template_ = 0; // sketch index the part was copied from
  BBox anchor_box, pasted_box;
  Point2D placement;
};

struct PasteResult {
  Corpus corpus;
  std::vector<PasteRecord> pastes;
  std::vector<std::string> log;  // skipped targets and pastes
  OccurrenceReport before, after;
};

inline constexpr int kPasteAttempts = 16;

inline PasteResult semantic_copy_paste(const Corpus& input, const SemanticPasteRule& rule, std::uint64_t seed) {
  rule.validate();
  const auto rare_idx = input.vocab.index_of(rule.rare);
  const auto anchor_idx = input.vocab.index_of(rule.anchor);
  if (!rare_idx) throw DataError("rare part '" + rule.rare + "' not in vocabulary");
  if (!anchor_idx) throw DataError("anchor part '" + rule.anchor + "' not in vocabulary");
  const std::size_t rare = *rare_idx, anchor = *anchor_idx;

  PasteResult res;
  res.corpus = input;
  res.before = occurrence_report(input.sketches, input.vocab);
  std::vector<std::size_t> set_a, set_b;
  for (std::size_t n = 0; n < input.sketches.size(); ++n) (has_part(input.sketches[n], rare) ? set_a : set_b).push_back(n);
  if (set_a.empty()) throw DataError("no sketch contains part '" + rule.rare + "'");
  if (set_b.empty()) throw DataError("every sketch already contains part '" + rule.rare + "'");

  const auto total = static_cast<long>(input.sketches.size());
  const long needed = std::lround(rule.target_occurrence * static_cast<double>(total)) - static_cast<long>(set_a.size());
  std::mt19937_64 rng(seed);
  std::shuffle(set_b.begin(), set_b.end(), rng);
  long done = 0;
  for (std::size_t k = 0; k < set_b.size() && done < needed; ++k) {
    const std::size_t target = set_b[k];
    const LabeledSketch& dst = input.sketches[target];
    if (!has_part(dst, anchor)) {
      res.log.push_back("sketch " + std::to_string(target) + ": no '" + rule.anchor + "' part, skipped");
      continue;
    }
    const std::size_t tmpl = set_a[std::uniform_int_distribution<std::size_t>(0, set_a.size() - 1)(rng)];
    const LabeledSketch& src = input.sketches[tmpl];
    const BBox rbox = bbox_of_part(src, static_cast<int>(rare));
    const BBox abox = bbox_of_part(dst, static_cast<int>(anchor));

    const double longer = std::max(rbox.width(), rbox.height());
    const double shorter = std::min(abox.width(), abox.height());
    const double frac = detail::draw(rng, rule.scale_lo, rule.scale_hi);
    const double s = longer > 0.0 ? frac * shorter / longer : 1.0;
    const double hx = 0.5 * rule.inner_fraction * abox.width(), hy = 0.5 * rule.inner_fraction * abox.height();
    const Point2D at{detail::draw(rng, abox.center_x() - hx, abox.center_x() + hx),
                     detail::draw(rng, abox.center_y() - hy, abox.center_y() + hy)};

    std::vector<Stroke> placed;
    BBox pbox;
    bool ok = false;
    for (int attempt = 0; attempt < kPasteAttempts && !ok; ++attempt) {
      const double deg = detail::draw(rng, -rule.rotation_jitter_deg, rule.rotation_jitter_deg);
      const double jx = detail::draw(rng, -rule.offset_jitter_px, rule.offset_jitter_px);
      const double jy = detail::draw(rng, -rule.offset_jitter_px, rule.offset_jitter_px);
      placed.clear();
      pbox = BBox{};
      for (std::size_t i = 0; i < src.sketch.strokes.size(); ++i) {
        if (src.labels[i] != static_cast<int>(rare)) continue;
        Stroke st = src.sketch.strokes[i];
        for (auto& p : st.points) p = {at.x + s * (p.x - rbox.center_x()), at.y + s * (p.y - rbox.center_y())};
        detail::transform_points(st.points, at.x, at.y, deg, 1.0, jx, jy);
        for (const auto& p : st.points) pbox.extend(p);
        placed.push_back(std::move(st));
      }
      ok = abox.contains(pbox);
    }
    if (!ok) {
      res.log.push_back("sketch " + std::to_string(target) + ": paste did not fit after " +
                        std::to_string(kPasteAttempts) + " attempts, skipped");
      continue;
    }
    LabeledSketch& out = res.corpus.sketches[target];
    for (auto& st : placed) {
      out.sketch.strokes.push_back(std::move(st));
      out.labels.push_back(static_cast<int>(rare));
    }
    renumber_strokes(out.sketch);
    res.pastes.push_back({target, tmpl, abox, pbox, at});
    res.log.push_back("sketch " + std::to_string(target) + ": pasted '" + rule.rare + "' from sketch " + std::to_string(tmpl));
    ++done;
  }
  if (done < needed)
    res.log.push_back("target occurrence not reached: " + std::to_string(done) + " of " + std::to_string(needed) +
                      " pastes");
  res.after = occurrence_report(res.corpus.sketches, res.corpus.vocab);
  return res;
}

}  // namespace cseg
