#pragma once

// Stroke, grouping and component accuracy over S x C label matrices, and the
// rotation / offset robustness harnesses.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "contextseg/error.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

struct LabelMatrix {
  std::size_t strokes = 0;
  std::size_t parts = 0;
  std::vector<std::uint8_t> cells;  // row-major S x C

  LabelMatrix() = default;
  LabelMatrix(std::size_t s, std::size_t c) : strokes(s), parts(c), cells(s * c, 0) {}

  static LabelMatrix from_labels(std::span<const std::size_t> labels, std::size_t parts) {
    LabelMatrix m(labels.size(), parts);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= parts) throw DataError("label " + std::to_string(labels[i]) + " outside " + std::to_string(parts) + " parts");
      m.cells[i * parts + labels[i]] = 1;
    }
    return m;
  }

  static LabelMatrix from_labels(std::span<const int> labels, std::size_t parts) {
    std::vector<std::size_t> l;
    for (int v : labels) {
      if (v < 0) throw DataError("unlabeled stroke in ground truth");
      l.push_back(static_cast<std::size_t>(v));
    }
    return from_labels(std::span<const std::size_t>(l), parts);
  }

  bool at(std::size_t i, std::size_t j) const { return cells[i * parts + j] != 0; }
  void set(std::size_t i, std::size_t j, bool v) { cells[i * parts + j] = v ? 1 : 0; }

  // Column of the single 1 in row i, or -1 when the row is not one-hot.
  long assigned(std::size_t i) const {
    long col = -1;
    for (std::size_t j = 0; j < parts; ++j)
      if (at(i, j)) {
        if (col >= 0) return -1;
        col = static_cast<long>(j);
      }
    return col;
  }

  bool one_hot() const {
    for (std::size_t i = 0; i < strokes; ++i)
      if (assigned(i) < 0) return false;
    return true;
  }
};

namespace detail {

inline void check_pair(const LabelMatrix& gt, const LabelMatrix& pred) {
  if (gt.strokes != pred.strokes || gt.parts != pred.parts)
    throw ShapeError("label matrices differ in shape: " + std::to_string(gt.strokes) + "x" + std::to_string(gt.parts) +
                     " vs " + std::to_string(pred.strokes) + "x" + std::to_string(pred.parts));
}

inline void check_gt(const LabelMatrix& gt) {
  if (!gt.one_hot()) throw DataError("ground-truth label matrix must have exactly one 1 per row");
}

}  // namespace detail

struct MetricCounts {
  std::size_t strokes = 0, correct_strokes = 0;
  std::size_t cells = 0, mismatched_cells = 0;
  std::size_t components = 0, correct_components = 0;
  std::vector<std::size_t> part_strokes, part_correct;

  void add(const LabelMatrix& gt, const LabelMatrix& pred) {
    detail::check_pair(gt, pred);
    detail::check_gt(gt);
    if (part_strokes.size() < gt.parts) {
      part_strokes.resize(gt.parts, 0);
      part_correct.resize(gt.parts, 0);
    }
    std::vector<std::size_t> comp_total(gt.parts, 0), comp_ok(gt.parts, 0);
    for (std::size_t i = 0; i < gt.strokes; ++i) {
      const auto g = static_cast<std::size_t>(gt.assigned(i));
      const bool ok = pred.assigned(i) == static_cast<long>(g);
      ++strokes;
      correct_strokes += ok;
      ++part_strokes[g];
      part_correct[g] += ok;
      ++comp_total[g];
      comp_ok[g] += ok;
      for (std::size_t j = 0; j < gt.parts; ++j) mismatched_cells += gt.at(i, j) != pred.at(i, j);
    }
    cells += gt.strokes * gt.parts;
    for (std::size_t p = 0; p < gt.parts; ++p) {
      if (comp_total[p] == 0) continue;
      ++components;
      correct_components += 4 * comp_ok[p] >= 3 * comp_total[p];
    }
  }
};

// Empty evaluation sets score 1.
inline double ratio_or_one(std::size_t num, std::size_t den) {
  return den == 0 ? 1.0 : static_cast<double>(num) / static_cast<double>(den);
}

inline double stroke_accuracy(const LabelMatrix& gt, const LabelMatrix& pred) {
  MetricCounts c;
  c.add(gt, pred);
  return ratio_or_one(c.correct_strokes, c.strokes);
}

inline double grouping_accuracy(const LabelMatrix& gt, const LabelMatrix& pred) {
  detail::check_pair(gt, pred);
  std::size_t diff = 0;
  for (std::size_t k = 0; k < gt.cells.size(); ++k) diff += gt.cells[k] != pred.cells[k];
  return gt.cells.empty() ? 1.0 : 1.0 - static_cast<double>(diff) / static_cast<double>(gt.cells.size());
}

inline double component_accuracy(const LabelMatrix& gt, const LabelMatrix& pred) {
  MetricCounts c;
  c.add(gt, pred);
  return ratio_or_one(c.correct_components, c.components);
}

struct EvalReport {
  double sacc = 1, gacc = 1, cacc = 1;
  std::vector<double> part_sacc;  // per part index; 1 for parts with no strokes
  MetricCounts counts;
  std::size_t sketches = 0;

  static EvalReport from_counts(MetricCounts c, std::size_t sketches) {
    EvalReport r;
    r.sacc = ratio_or_one(c.correct_strokes, c.strokes);
    r.gacc = 1.0 - (c.cells == 0 ? 0.0 : static_cast<double>(c.mismatched_cells) / static_cast<double>(c.cells));
    r.cacc = ratio_or_one(c.correct_components, c.components);
    for (std::size_t p = 0; p < c.part_strokes.size(); ++p) r.part_sacc.push_back(ratio_or_one(c.part_correct[p], c.part_strokes[p]));
    r.counts = std::move(c);
    r.sketches = sketches;
    return r;
  }

  friend bool operator==(const EvalReport& a, const EvalReport& b) {
    return a.sacc == b.sacc && a.gacc == b.gacc && a.cacc == b.cacc && a.part_sacc == b.part_sacc &&
           a.sketches == b.sketches;
  }
};

inline EvalReport evaluate(std::span<const LabelMatrix> gt, std::span<const LabelMatrix> pred) {
  if (gt.size() != pred.size()) throw ShapeError("evaluate: ground truth and prediction counts differ");
  MetricCounts c;
  for (std::size_t n = 0; n < gt.size(); ++n) c.add(gt[n], pred[n]);
  return EvalReport::from_counts(std::move(c), gt.size());
}

// Part labels for every stroke of a sketch.
using Labeler = std::function<std::vector<std::size_t>(const Sketch&)>;

inline EvalReport evaluate_labeler(const Labeler& labeler, std::span<const LabeledSketch> corpus, std::size_t parts) {
  std::vector<LabelMatrix> gt, pred;
  for (const auto& ls : corpus) {
    gt.push_back(LabelMatrix::from_labels(std::span<const int>(ls.labels), parts));
    const auto labels = labeler(ls.sketch);
    if (labels.size() != ls.sketch.strokes.size()) throw ShapeError("labeler returned the wrong number of labels");
    pred.push_back(LabelMatrix::from_labels(std::span<const std::size_t>(labels), parts));
  }
  return evaluate(gt, pred);
}

inline nlohmann::json report_json(const EvalReport& r, const PartVocabulary* vocab = nullptr) {
  nlohmann::json j{{"sacc", r.sacc},
                   {"gacc", r.gacc},
                   {"cacc", r.cacc},
                   {"sketches", r.sketches},
                   {"strokes", r.counts.strokes},
                   {"components", r.counts.components}};
  nlohmann::json parts = nlohmann::json::object();
  for (std::size_t p = 0; p < r.part_sacc.size(); ++p)
    parts[vocab && p < vocab->size() ? vocab->names[p] : std::to_string(p)] = r.part_sacc[p];
  j["part_sacc"] = parts;
  return j;
}

inline std::string report_csv(const EvalReport& r, const PartVocabulary* vocab = nullptr) {
  std::string out = "metric,value\n";
  char buf[160];
  auto row = [&](const std::string& k, double v) {
    std::snprintf(buf, sizeof buf, "%s,%.9g\n", k.c_str(), v);
    out += buf;
  };
  row("sacc", r.sacc);
  row("gacc", r.gacc);
  row("cacc", r.cacc);
  for (std::size_t p = 0; p < r.part_sacc.size(); ++p)
    row("sacc:" + (vocab && p < vocab->size() ? vocab->names[p] : std::to_string(p)), r.part_sacc[p]);
  return out;
}

// ---------------------------------------------------------------------------
// Robustness harnesses

inline const std::vector<double>& default_rotation_angles() {
  static const std::vector<double> a{-45, -30, -15, 0, 15, 30, 45};
  return a;
}

inline const std::vector<double>& default_offset_sigmas() {
  static const std::vector<double> s{0.0, 0.05, 0.10, 0.15, 0.20};
  return s;
}

// Whole-sketch rotation about the canvas center, then clamped. 0 returns the input.
inline Sketch rotate_sketch(const Sketch& s, double degrees) {
  if (degrees == 0.0) return s;
  Sketch out = s;
  const double c = (s.resolution - 1) / 2.0;
  const double rad = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(rad), sn = std::sin(rad);
  for (auto& st : out.strokes)
    for (auto& p : st.points) {
      const double dx = p.x - c, dy = p.y - c;
      p = {c + cs * dx - sn * dy, c + sn * dx + cs * dy};
    }
  clamp_to_canvas(out);
  return out;
}

enum class OffsetMode { kGaussian, kUniform };

// Translates each stroke by an independent offset with standard deviation
// sigma_fraction * bbox diagonal. The uniform mode draws from
// [-sqrt(3) sigma, sqrt(3) sigma], matching the Gaussian's variance.
inline Sketch offset_sketch(const Sketch& s, double sigma_fraction, std::mt19937_64& rng,
                            OffsetMode mode = OffsetMode::kGaussian) {
  if (sigma_fraction == 0.0 || s.strokes.empty()) return s;
  const double sigma = sigma_fraction * bbox_of(s).diagonal();
  Sketch out = s;
  std::normal_distribution<double> gauss(0.0, sigma);
  std::uniform_real_distribution<double> uni(-std::sqrt(3.0) * sigma, std::sqrt(3.0) * sigma);
  for (auto& st : out.strokes) {
    const double dx = mode == OffsetMode::kGaussian ? gauss(rng) : uni(rng);
    const double dy = mode == OffsetMode::kGaussian ? gauss(rng) : uni(rng);
    for (auto& p : st.points) {
      p.x += dx;
      p.y += dy;
    }
  }
  clamp_to_canvas(out);
  return out;
}

struct MetricTriple {
  double sacc = 0, gacc = 0, cacc = 0;
};

struct InvarianceReport {
  std::string kind;            // "rotation" or "offset"
  std::vector<double> levels;  // degrees or sigma fractions
  std::vector<EvalReport> rows;
  MetricTriple average;
  MetricTriple stddev;  // population standard deviation over the rows

  std::size_t table_rows() const { return rows.size() + 2; }
};

namespace detail {

inline void summarize(InvarianceReport& r) {
  const double n = static_cast<double>(r.rows.size());
  if (r.rows.empty()) return;
  MetricTriple m;
  for (const auto& e : r.rows) {
    m.sacc += e.sacc;
    m.gacc += e.gacc;
    m.cacc += e.cacc;
  }
  m = {m.sacc / n, m.gacc / n, m.cacc / n};
  MetricTriple v;
  for (const auto& e : r.rows) {
    v.sacc += (e.sacc - m.sacc) * (e.sacc - m.sacc);
    v.gacc += (e.gacc - m.gacc) * (e.gacc - m.gacc);
    v.cacc += (e.cacc - m.cacc) * (e.cacc - m.cacc);
  }
  r.average = m;
  r.stddev = {std::sqrt(v.sacc / n), std::sqrt(v.gacc / n), std::sqrt(v.cacc / n)};
}

// Evaluates every level independently; levels may run in parallel.
inline InvarianceReport run_levels(std::string kind, const std::vector<double>& levels,
                                   const std::function<EvalReport(std::size_t)>& eval_level) {
  InvarianceReport r{std::move(kind), levels, std::vector<EvalReport>(levels.size()), {}, {}};
  std::exception_ptr failure;
#pragma omp parallel for schedule(dynamic)
  for (long k = 0; k < static_cast<long>(levels.size()); ++k) {
    try {
      r.rows[static_cast<std::size_t>(k)] = eval_level(static_cast<std::size_t>(k));
    } catch (...) {
#pragma omp critical
      failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  summarize(r);
  return r;
}

}  // namespace detail

inline InvarianceReport rotation_invariance_test(const Labeler& labeler, std::span<const LabeledSketch> corpus,
                                                 std::size_t parts,
                                                 const std::vector<double>& angles = default_rotation_angles()) {
  return detail::run_levels("rotation", angles, [&](std::size_t k) {
    const Labeler rotated = [&](const Sketch& s) { return labeler(rotate_sketch(s, angles[k])); };
    return evaluate_labeler(rotated, corpus, parts);
  });
}

inline InvarianceReport offset_invariance_test(const Labeler& labeler, std::span<const LabeledSketch> corpus,
                                               std::size_t parts, std::uint64_t seed,
                                               const std::vector<double>& sigmas = default_offset_sigmas(),
                                               OffsetMode mode = OffsetMode::kGaussian) {
  return detail::run_levels(mode == OffsetMode::kGaussian ? "offset" : "offset-uniform", sigmas, [&](std::size_t k) {
    std::mt19937_64 rng(seed + 1000003ULL * (k + 1));
    const Labeler moved = [&](const Sketch& s) { return labeler(offset_sketch(s, sigmas[k], rng, mode)); };
    return evaluate_labeler(moved, corpus, parts);
  });
}

inline std::string invariance_csv(const InvarianceReport& r) {
  std::string out = (r.kind == "rotation" ? "angle" : "sigma") + std::string(",sacc,gacc,cacc\n");
  char buf[200];
  for (std::size_t k = 0; k < r.rows.size(); ++k) {
    std::snprintf(buf, sizeof buf, "%g,%.9g,%.9g,%.9g\n", r.levels[k], r.rows[k].sacc, r.rows[k].gacc, r.rows[k].cacc);
    out += buf;
  }
  std::snprintf(buf, sizeof buf, "Average,%.9g,%.9g,%.9g\n", r.average.sacc, r.average.gacc, r.average.cacc);
  out += buf;
  std::snprintf(buf, sizeof buf, "Standard Deviation,%.9g,%.9g,%.9g\n", r.stddev.sacc, r.stddev.gacc, r.stddev.cacc);
  out += buf;
  return out;
}

inline nlohmann::json invariance_json(const InvarianceReport& r) {
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t k = 0; k < r.rows.size(); ++k)
    rows.push_back({{"level", r.levels[k]}, {"sacc", r.rows[k].sacc}, {"gacc", r.rows[k].gacc}, {"cacc", r.rows[k].cacc}});
  auto triple = [](const MetricTriple& t) { return nlohmann::json{{"sacc", t.sacc}, {"gacc", t.gacc}, {"cacc", t.cacc}}; };
  return {{"kind", r.kind}, {"rows", rows}, {"average", triple(r.average)}, {"standard_deviation", triple(r.stddev)}};
}

}  // namespace cseg
