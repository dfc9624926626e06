#pragma once

// In-memory sketch model plus the corpus-level operations that act on it:
// NDJSON parsing/serialization, normalization, part merging and decode order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "contextseg/error.hpp"

namespace cseg {

struct Point2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2D&, const Point2D&) = default;
};

struct Stroke {
  std::vector<Point2D> points;
  int id = 0;

  friend bool operator==(const Stroke&, const Stroke&) = default;
};

inline constexpr int kDefaultResolution = 256;
inline constexpr double kDefaultMargin = 4.0;

struct Sketch {
  std::vector<Stroke> strokes;
  std::string category;
  int resolution = kDefaultResolution;

  std::size_t size() const noexcept { return strokes.size(); }
  friend bool operator==(const Sketch&, const Sketch&) = default;
};

// Label sentinel for sketches that carry no part annotation.
inline constexpr int kUnlabeled = -1;

// Part names plus the order in which the segmenter decodes them. `order[j]`
// is the index into `names` of the part emitted at decode step j.
struct PartVocabulary {
  std::vector<std::string> names;
  std::vector<std::size_t> order;

  static PartVocabulary from_names(std::vector<std::string> names) {
    PartVocabulary v;
    v.order.resize(names.size());
    std::iota(v.order.begin(), v.order.end(), std::size_t{0});
    v.names = std::move(names);
    v.validate();
    return v;
  }

  std::size_t size() const noexcept { return names.size(); }

  std::optional<std::size_t> index_of(std::string_view name) const {
    auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - names.begin());
  }

  // Part index decoded at step j.
  std::size_t part_at_step(std::size_t j) const { return order.at(j); }

  // Decode step of part p (inverse of `order`).
  std::size_t step_of_part(std::size_t p) const {
    auto it = std::find(order.begin(), order.end(), p);
    if (it == order.end()) throw DataError("part index " + std::to_string(p) + " missing from decode order");
    return static_cast<std::size_t>(it - order.begin());
  }

  std::vector<std::string> ordered_names() const {
    std::vector<std::string> out;
    out.reserve(order.size());
    for (auto p : order) out.push_back(names.at(p));
    return out;
  }

  void validate() const {
    for (std::size_t i = 0; i < names.size(); ++i)
      for (std::size_t j = i + 1; j < names.size(); ++j)
        if (names[i] == names[j]) throw DataError("duplicate part name '" + names[i] + "'");
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != i || sorted.size() != names.size())
        throw DataError("decode order is not a permutation of the vocabulary");
  }

  friend bool operator==(const PartVocabulary&, const PartVocabulary&) = default;
};

struct LabeledSketch {
  Sketch sketch;
  std::vector<int> labels;

  bool is_labeled() const {
    return !labels.empty() &&
           std::none_of(labels.begin(), labels.end(), [](int l) { return l == kUnlabeled; });
  }

  friend bool operator==(const LabeledSketch&, const LabeledSketch&) = default;
};

struct Corpus {
  PartVocabulary vocab;
  std::vector<LabeledSketch> sketches;

  std::size_t size() const noexcept { return sketches.size(); }
  friend bool operator==(const Corpus&, const Corpus&) = default;
};

struct BBox {
  double min_x = std::numeric_limits<double>::infinity();
  double min_y = std::numeric_limits<double>::infinity();
  double max_x = -std::numeric_limits<double>::infinity();
  double max_y = -std::numeric_limits<double>::infinity();

  bool empty() const noexcept { return min_x > max_x; }
  double width() const noexcept { return max_x - min_x; }
  double height() const noexcept { return max_y - min_y; }
  double diagonal() const noexcept { return std::hypot(width(), height()); }
  double center_x() const noexcept { return 0.5 * (min_x + max_x); }
  double center_y() const noexcept { return 0.5 * (min_y + max_y); }

  void extend(const Point2D& p) noexcept {
    min_x = std::min(min_x, p.x);
    min_y = std::min(min_y, p.y);
    max_x = std::max(max_x, p.x);
    max_y = std::max(max_y, p.y);
  }

  bool contains(const BBox& other, double tol = 0.0) const noexcept {
    return other.min_x >= min_x - tol && other.max_x <= max_x + tol && other.min_y >= min_y - tol &&
           other.max_y <= max_y + tol;
  }
};

inline BBox bbox_of(const Stroke& s) {
  BBox b;
  for (const auto& p : s.points) b.extend(p);
  return b;
}

inline BBox bbox_of(const Sketch& s) {
  BBox b;
  for (const auto& st : s.strokes)
    for (const auto& p : st.points) b.extend(p);
  return b;
}

// Bounding box of the strokes carrying `label`; empty when the part is absent.
inline BBox bbox_of_part(const LabeledSketch& ls, int label) {
  BBox b;
  for (std::size_t i = 0; i < ls.sketch.strokes.size(); ++i)
    if (ls.labels.at(i) == label)
      for (const auto& p : ls.sketch.strokes[i].points) b.extend(p);
  return b;
}

inline void renumber_strokes(Sketch& s) {
  for (std::size_t i = 0; i < s.strokes.size(); ++i) s.strokes[i].id = static_cast<int>(i);
}

// Structural checks shared by the parser and downstream ops. Canvas bounds are
// enforced separately (`in_canvas`), since raw inputs precede normalization.
inline void validate_structure(const Sketch& s) {
  if (s.strokes.empty()) throw DataError("sketch has no strokes");
  if (s.resolution <= 0) throw DataError("resolution must be positive");
  for (std::size_t i = 0; i < s.strokes.size(); ++i) {
    const auto& st = s.strokes[i];
    if (st.points.empty()) throw DataError("stroke " + std::to_string(i) + " has no points");
    if (st.id != static_cast<int>(i)) throw DataError("stroke ids must be contiguous from 0");
    for (const auto& p : st.points)
      if (!std::isfinite(p.x) || !std::isfinite(p.y))
        throw DataError("stroke " + std::to_string(i) + " has a non-finite coordinate");
  }
}

inline bool in_canvas(const Sketch& s) {
  const double r = s.resolution;
  for (const auto& st : s.strokes)
    for (const auto& p : st.points)
      if (!(p.x >= 0.0 && p.x < r && p.y >= 0.0 && p.y < r)) return false;
  return true;
}

inline void validate_labels(const LabeledSketch& ls, const PartVocabulary& vocab) {
  if (ls.labels.size() != ls.sketch.strokes.size())
    throw DataError("label count " + std::to_string(ls.labels.size()) + " does not match stroke count " +
                    std::to_string(ls.sketch.strokes.size()));
  for (int l : ls.labels)
    if (l != kUnlabeled && (l < 0 || static_cast<std::size_t>(l) >= vocab.size()))
      throw DataError("label " + std::to_string(l) + " outside vocabulary");
}

// Clamp every point into [0, resolution - 1].
inline void clamp_to_canvas(Sketch& s) {
  const double hi = s.resolution - 1.0;
  for (auto& st : s.strokes)
    for (auto& p : st.points) {
      p.x = std::clamp(p.x, 0.0, hi);
      p.y = std::clamp(p.y, 0.0, hi);
    }
}

// ---------------------------------------------------------------------------
// NDJSON parsing and serialization

enum class CorpusFormat { kQuickDrawNdjson, kNativeNdjson };

inline CorpusFormat parse_format_name(std::string_view name) {
  if (name == "ndjson-quickdraw" || name == "quickdraw") return CorpusFormat::kQuickDrawNdjson;
  if (name == "native-json" || name == "native") return CorpusFormat::kNativeNdjson;
  throw ConfigError("unknown corpus format '" + std::string(name) + "'");
}

namespace detail {

inline Stroke parse_native_stroke(const nlohmann::json& js, int id) {
  if (!js.is_array()) throw DataError("stroke is not an array");
  Stroke st;
  st.id = id;
  for (const auto& pt : js) {
    if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
      throw DataError("point is not an [x, y] pair");
    st.points.push_back({pt[0].get<double>(), pt[1].get<double>()});
  }
  if (st.points.empty()) throw DataError("stroke " + std::to_string(id) + " has no points");
  return st;
}

inline Stroke parse_quickdraw_stroke(const nlohmann::json& js, int id) {
  if (!js.is_array() || js.size() < 2 || !js[0].is_array() || !js[1].is_array())
    throw DataError("quickdraw stroke must be [[xs...],[ys...]]");
  const auto& xs = js[0];
  const auto& ys = js[1];
  if (xs.size() != ys.size()) throw DataError("quickdraw stroke has mismatched x/y lengths");
  Stroke st;
  st.id = id;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!xs[i].is_number() || !ys[i].is_number()) throw DataError("non-numeric coordinate");
    st.points.push_back({xs[i].get<double>(), ys[i].get<double>()});
  }
  if (st.points.empty()) throw DataError("stroke " + std::to_string(id) + " has no points");
  return st;
}

inline std::size_t intern_part(PartVocabulary& vocab, const std::string& name, const PartVocabulary* expected) {
  if (expected != nullptr) {
    auto idx = expected->index_of(name);
    if (!idx) throw DataError("unknown part name '" + name + "'");
    return *idx;
  }
  if (auto idx = vocab.index_of(name)) return *idx;
  vocab.names.push_back(name);
  vocab.order.push_back(vocab.names.size() - 1);
  return vocab.names.size() - 1;
}

}  // namespace detail

// Parses one sketch per non-blank line. Labels are remapped onto a single
// corpus vocabulary: `expected` when given (unknown names are errors),
// otherwise the union of per-line vocabularies in first-appearance order.
inline Corpus parse_corpus(std::string_view bytes, CorpusFormat format, const PartVocabulary* expected = nullptr) {
  Corpus corpus;
  if (expected != nullptr) corpus.vocab = *expected;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    std::size_t end = bytes.find('\n', pos);
    if (end == std::string_view::npos) end = bytes.size();
    std::string_view line = bytes.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    try {
      auto js = nlohmann::json::parse(line);
      if (!js.is_object()) throw DataError("line is not a JSON object");
      LabeledSketch ls;
      if (format == CorpusFormat::kNativeNdjson) {
        if (!js.contains("strokes")) throw DataError("missing 'strokes'");
        ls.sketch.category = js.value("category", std::string{});
        ls.sketch.resolution = js.value("resolution", kDefaultResolution);
        int id = 0;
        for (const auto& st : js.at("strokes")) ls.sketch.strokes.push_back(detail::parse_native_stroke(st, id++));
        const bool has_labels = js.contains("labels") && !js.at("labels").is_null();
        if (has_labels) {
          std::vector<std::string> line_vocab = js.value("vocab", std::vector<std::string>{});
          std::vector<std::size_t> remap;
          for (const auto& name : line_vocab) remap.push_back(detail::intern_part(corpus.vocab, name, expected));
          for (const auto& l : js.at("labels")) {
            const int li = l.get<int>();
            if (li == kUnlabeled) {
              ls.labels.push_back(kUnlabeled);
              continue;
            }
            if (li < 0 || static_cast<std::size_t>(li) >= line_vocab.size())
              throw DataError("label " + std::to_string(li) + " outside line vocabulary");
            ls.labels.push_back(static_cast<int>(remap[static_cast<std::size_t>(li)]));
          }
        } else {
          if (js.contains("vocab"))
            for (const auto& name : js.at("vocab").get<std::vector<std::string>>())
              detail::intern_part(corpus.vocab, name, expected);
          ls.labels.assign(ls.sketch.strokes.size(), kUnlabeled);
        }
      } else {
        if (!js.contains("drawing")) throw DataError("missing 'drawing'");
        ls.sketch.category = js.value("word", std::string{});
        ls.sketch.resolution = kDefaultResolution;
        int id = 0;
        for (const auto& st : js.at("drawing")) ls.sketch.strokes.push_back(detail::parse_quickdraw_stroke(st, id++));
        ls.labels.assign(ls.sketch.strokes.size(), kUnlabeled);
      }
      validate_structure(ls.sketch);
      if (ls.labels.size() != ls.sketch.strokes.size()) throw DataError("label count does not match stroke count");
      corpus.sketches.push_back(std::move(ls));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const DataError& e) {
      throw DataError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return corpus;
}

inline nlohmann::json to_json_line(const LabeledSketch& ls, const PartVocabulary& vocab) {
  nlohmann::json js;
  js["category"] = ls.sketch.category;
  js["resolution"] = ls.sketch.resolution;
  nlohmann::json strokes = nlohmann::json::array();
  for (const auto& st : ls.sketch.strokes) {
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : st.points) pts.push_back({p.x, p.y});
    strokes.push_back(std::move(pts));
  }
  js["strokes"] = std::move(strokes);
  const bool any_label = std::any_of(ls.labels.begin(), ls.labels.end(), [](int l) { return l != kUnlabeled; });
  if (any_label)
    js["labels"] = ls.labels;
  else
    js["labels"] = nullptr;
  js["vocab"] = vocab.names;
  return js;
}

inline std::string serialize_corpus(const Corpus& corpus) {
  std::string out;
  for (const auto& ls : corpus.sketches) {
    out += to_json_line(ls, corpus.vocab).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------
// Normalization

// Uniform scale + translation so the bounding box spans [m, resolution - m]
// along its longer axis, centered along the shorter one.
inline Sketch normalize_sketch(const Sketch& s, int resolution, double margin = kDefaultMargin) {
  if (s.strokes.empty()) throw DataError("cannot normalize an empty sketch");
  if (resolution <= 0 || 2.0 * margin >= resolution) throw ConfigError("margin too large for resolution");
  const BBox box = bbox_of(s);
  const double longest = std::max(box.width(), box.height());
  if (!(longest > 0.0)) throw DataError("degenerate sketch");
  const double span = resolution - 2.0 * margin;
  const double scale = span / longest;
  const double off_x = margin + 0.5 * (span - box.width() * scale);
  const double off_y = margin + 0.5 * (span - box.height() * scale);
  Sketch out = s;
  out.resolution = resolution;
  for (auto& st : out.strokes)
    for (auto& p : st.points) {
      p.x = off_x + (p.x - box.min_x) * scale;
      p.y = off_y + (p.y - box.min_y) * scale;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Part merging

using PartMergeMap = std::map<std::string, std::string>;

struct MergeResult {
  LabeledSketch sketch;
  PartVocabulary vocab;
};

// Vocabulary image of `m` over the source names, duplicates collapsed in
// first-appearance order. Names missing from `m` are dropped.
inline PartVocabulary merged_vocabulary(const PartMergeMap& m, const PartVocabulary& vocab) {
  std::vector<std::string> names;
  for (const auto& n : vocab.names) {
    auto it = m.find(n);
    if (it == m.end()) continue;
    if (std::find(names.begin(), names.end(), it->second) == names.end()) names.push_back(it->second);
  }
  return PartVocabulary::from_names(std::move(names));
}

inline MergeResult merge_parts(const LabeledSketch& ls, const PartMergeMap& m, const PartVocabulary& vocab) {
  MergeResult r{ls, merged_vocabulary(m, vocab)};
  for (auto& l : r.sketch.labels) {
    if (l == kUnlabeled) continue;
    const std::string& name = vocab.names.at(static_cast<std::size_t>(l));
    auto it = m.find(name);
    if (it == m.end()) throw DataError("merge map has no entry for part '" + name + "'");
    l = static_cast<int>(*r.vocab.index_of(it->second));
  }
  return r;
}

inline Corpus merge_corpus(const Corpus& corpus, const PartMergeMap& m) {
  Corpus out;
  out.vocab = merged_vocabulary(m, corpus.vocab);
  for (const auto& ls : corpus.sketches) out.sketches.push_back(merge_parts(ls, m, corpus.vocab).sketch);
  return out;
}

// ---------------------------------------------------------------------------
// Decode order

enum class OrderMode { kFreqDesc, kFreqAsc, kRandom };

inline OrderMode parse_order_mode(std::string_view name) {
  if (name == "freq-desc") return OrderMode::kFreqDesc;
  if (name == "freq-asc") return OrderMode::kFreqAsc;
  if (name == "random") return OrderMode::kRandom;
  throw ConfigError("unknown group order '" + std::string(name) + "'");
}

inline std::string order_mode_name(OrderMode m) {
  switch (m) {
    case OrderMode::kFreqDesc: return "freq-desc";
    case OrderMode::kFreqAsc: return "freq-asc";
    case OrderMode::kRandom: return "random";
  }
  return "freq-desc";
}

inline std::vector<std::size_t> part_stroke_counts(std::span<const LabeledSketch> corpus, std::size_t parts) {
  std::vector<std::size_t> counts(parts, 0);
  for (const auto& ls : corpus)
    for (int l : ls.labels)
      if (l != kUnlabeled && static_cast<std::size_t>(l) < parts) ++counts[static_cast<std::size_t>(l)];
  return counts;
}

// Orders parts by total stroke count; ties break by name.
inline PartVocabulary part_decode_order(std::span<const LabeledSketch> corpus, const PartVocabulary& vocab,
                                        OrderMode mode, std::uint64_t seed = 0) {
  PartVocabulary out = vocab;
  out.order.resize(vocab.size());
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  const auto counts = part_stroke_counts(corpus, vocab.size());
  auto by_name = [&](std::size_t a, std::size_t b) { return vocab.names[a] < vocab.names[b]; };
  switch (mode) {
    case OrderMode::kFreqDesc:
      std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
        return counts[a] != counts[b] ? counts[a] > counts[b] : by_name(a, b);
      });
      break;
    case OrderMode::kFreqAsc:
      std::sort(out.order.begin(), out.order.end(), [&](std::size_t a, std::size_t b) {
        return counts[a] != counts[b] ? counts[a] < counts[b] : by_name(a, b);
      });
      break;
    case OrderMode::kRandom: {
      std::sort(out.order.begin(), out.order.end(), by_name);
      std::mt19937_64 rng(seed);
      std::shuffle(out.order.begin(), out.order.end(), rng);
      break;
    }
  }
  return out;
}

}  // namespace cseg
