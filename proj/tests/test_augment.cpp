#include <gtest/gtest.h>

#include <cmath>

#include "contextseg/augment.hpp"
#include "contextseg/synth.hpp"

using namespace cseg;

namespace {

LabeledSketch sample_sketch() {
  SynthConfig sc;
  sc.count = 1;
  sc.seed = 4;
  return synth_corpus(sc).sketches[0];
}

void expect_valid(const LabeledSketch& ls) {
  EXPECT_EQ(ls.labels.size(), ls.sketch.strokes.size());
  EXPECT_TRUE(in_canvas(ls.sketch));
  for (std::size_t i = 0; i < ls.sketch.strokes.size(); ++i) EXPECT_EQ(ls.sketch.strokes[i].id, static_cast<int>(i));
}

Corpus rare_eye_corpus(int count, std::uint64_t seed) {
  SynthConfig sc;
  sc.count = count;
  sc.seed = seed;
  sc.presence = {{"eye", 0.2}};
  return synth_corpus(sc);
}

}  // namespace

TEST(AugmentStrokeLevel, IdentityDeterminismAndValidity) {
  const auto ls = sample_sketch();
  EXPECT_EQ(augment_stroke_level(ls, AugmentConfig::identity()), ls);
  AugmentConfig cfg;
  cfg.seed = 9;
  const auto a = augment_stroke_level(ls, cfg);
  EXPECT_EQ(a, augment_stroke_level(ls, cfg));
  EXPECT_EQ(a.labels, ls.labels);
  EXPECT_EQ(a.sketch.strokes.size(), ls.sketch.strokes.size());
  EXPECT_NE(a, ls);
  expect_valid(a);
}

TEST(AugmentStrokeLevel, TransformsAboutCentroid) {
  LabeledSketch ls;
  ls.sketch.resolution = 64;
  ls.sketch.strokes = {Stroke{{{20, 20}, {40, 20}}, 0}};
  ls.labels = {0};
  AugmentConfig cfg = AugmentConfig::identity();
  cfg.stroke_fraction = 1.0;
  cfg.stroke_scale_lo = cfg.stroke_scale_hi = 0.5;
  const auto out = augment_stroke_level(ls, cfg);
  EXPECT_NEAR(out.sketch.strokes[0].points[0].x, 25.0, 1e-12);
  EXPECT_NEAR(out.sketch.strokes[0].points[1].x, 35.0, 1e-12);
  EXPECT_NEAR(out.sketch.strokes[0].points[0].y, 20.0, 1e-12);
}

TEST(AugmentSketchLevel, IdentityAndDropFloor) {
  const auto ls = sample_sketch();
  EXPECT_EQ(augment_sketch_level(ls, AugmentConfig::identity()), ls);
  AugmentConfig all = AugmentConfig::identity();
  all.drop_probability = 1.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    all.seed = s;
    const auto out = augment_sketch_level(ls, all);
    ASSERT_EQ(out.sketch.strokes.size(), 1u);
    expect_valid(out);
    // survivor keeps its label
    const auto idx = static_cast<std::size_t>(
        std::find_if(ls.sketch.strokes.begin(), ls.sketch.strokes.end(),
                     [&](const Stroke& st) { return st.points == out.sketch.strokes[0].points; }) -
        ls.sketch.strokes.begin());
    ASSERT_LT(idx, ls.labels.size());
    EXPECT_EQ(out.labels[0], ls.labels[idx]);
  }
  AugmentConfig cfg;
  for (std::uint64_t s = 0; s < 30; ++s) {
    cfg.seed = s;
    const auto out = augment_sketch_level(ls, cfg);
    expect_valid(out);
    EXPECT_GE(out.sketch.strokes.size(), 1u);
    EXPECT_EQ(out, augment_sketch_level(ls, cfg));
  }
}

TEST(AugmentConfig, Validation) {
  AugmentConfig c;
  c.drop_probability = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = AugmentConfig{};
  c.sketch_scale_lo = 2.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Occurrence, HandCounts) {
  auto vocab = PartVocabulary::from_names({"body", "fin", "window"});
  auto mk = [](std::vector<int> labels) {
    LabeledSketch ls;
    ls.sketch.resolution = 64;
    for (std::size_t i = 0; i < labels.size(); ++i) ls.sketch.strokes.push_back(Stroke{{{1, 1}}, static_cast<int>(i)});
    ls.labels = std::move(labels);
    return ls;
  };
  std::vector<LabeledSketch> c{mk({0, 1, 1}), mk({0, 2}), mk({0, 0, 1, 2, 2})};
  const auto r = occurrence_report(c, vocab);
  EXPECT_EQ(r.sketch_occurrence, (std::vector<double>{1.0, 2.0 / 3, 2.0 / 3}));
  EXPECT_EQ(r.stroke_share[0], 4.0 / 10);
  EXPECT_EQ(r.stroke_share[1], 3.0 / 10);
  EXPECT_NEAR(r.stroke_share[0] + r.stroke_share[1] + r.stroke_share[2], 1.0, 1e-12);
}

TEST(SemanticCopyPaste, ReachesTargetWithContainment) {
  const auto corpus = rare_eye_corpus(60, 3);
  const auto eye = *corpus.vocab.index_of("eye");
  SemanticPasteRule rule{"eye", "head"};
  const auto before = occurrence_report(corpus.sketches, corpus.vocab).sketch_occurrence[eye];
  EXPECT_LE(before, 0.25);
  const auto res = semantic_copy_paste(corpus, rule, 11);
  EXPECT_EQ(res.before.sketch_occurrence[eye], before);
  EXPECT_NEAR(res.after.sketch_occurrence[eye], 0.5, 1.0 / 60 + 1e-12);
  ASSERT_FALSE(res.pastes.empty());
  for (const auto& p : res.pastes) {
    EXPECT_TRUE(p.anchor_box.contains(p.pasted_box));
    // recompute from the output corpus
    const auto& ls = res.corpus.sketches[p.target];
    BBox pasted;
    for (std::size_t i = corpus.sketches[p.target].sketch.strokes.size(); i < ls.sketch.strokes.size(); ++i) {
      EXPECT_EQ(ls.labels[i], static_cast<int>(eye));
      for (const auto& pt : ls.sketch.strokes[i].points) pasted.extend(pt);
    }
    EXPECT_TRUE(bbox_of_part(corpus.sketches[p.target], static_cast<int>(*corpus.vocab.index_of("head"))).contains(pasted));
    expect_valid(ls);
  }
  // Set-A sketches are untouched; untouched B sketches too.
  for (std::size_t n = 0; n < corpus.size(); ++n) {
    const bool pasted = std::any_of(res.pastes.begin(), res.pastes.end(), [&](const PasteRecord& p) { return p.target == n; });
    if (!pasted) {
      EXPECT_EQ(res.corpus.sketches[n], corpus.sketches[n]);
    }
  }
  const auto again = semantic_copy_paste(corpus, rule, 11);
  EXPECT_EQ(again.corpus, res.corpus);
}

TEST(SemanticCopyPaste, ZeroJitterLandsOnPlacement) {
  const auto corpus = rare_eye_corpus(30, 5);
  SemanticPasteRule rule{"eye", "head"};
  rule.rotation_jitter_deg = rule.offset_jitter_px = 0.0;
  rule.scale_lo = rule.scale_hi = 0.3;
  const auto res = semantic_copy_paste(corpus, rule, 2);
  ASSERT_FALSE(res.pastes.empty());
  for (const auto& p : res.pastes) {
    EXPECT_NEAR(p.pasted_box.center_x(), p.placement.x, 1e-9);
    EXPECT_NEAR(p.pasted_box.center_y(), p.placement.y, 1e-9);
    const double shorter = std::min(p.anchor_box.width(), p.anchor_box.height());
    EXPECT_NEAR(std::max(p.pasted_box.width(), p.pasted_box.height()), 0.3 * shorter, 1e-9);
  }
}

TEST(SemanticCopyPaste, AboveTargetIsNoOp) {
  SynthConfig sc;
  sc.count = 20;
  const auto corpus = synth_corpus(sc);  // eyes present everywhere
  SemanticPasteRule rule{"mouth", "head"};
  rule.target_occurrence = 0.5;
  auto c2 = corpus;
  // strip mouths from 5 sketches, still 75% occurrence
  const int mouth = static_cast<int>(*corpus.vocab.index_of("mouth"));
  for (int n = 0; n < 5; ++n) {
    auto& ls = c2.sketches[static_cast<std::size_t>(n)];
    LabeledSketch kept;
    kept.sketch.resolution = ls.sketch.resolution;
    for (std::size_t i = 0; i < ls.labels.size(); ++i)
      if (ls.labels[i] != mouth) {
        kept.sketch.strokes.push_back(ls.sketch.strokes[i]);
        kept.labels.push_back(ls.labels[i]);
      }
    renumber_strokes(kept.sketch);
    ls = kept;
  }
  const auto res = semantic_copy_paste(c2, rule, 1);
  EXPECT_TRUE(res.pastes.empty());
  EXPECT_EQ(res.corpus, c2);
}

TEST(SemanticCopyPaste, Errors) {
  const auto corpus = rare_eye_corpus(10, 1);
  EXPECT_THROW(semantic_copy_paste(corpus, SemanticPasteRule{"eye", "eye"}, 1), ConfigError);
  EXPECT_THROW(semantic_copy_paste(corpus, SemanticPasteRule{"nose", "head"}, 1), DataError);
  SynthConfig sc;
  sc.count = 5;
  sc.presence = {{"eye", 0.0}};
  EXPECT_THROW(semantic_copy_paste(synth_corpus(sc), SemanticPasteRule{"eye", "head"}, 1), DataError);
  sc.presence.clear();
  EXPECT_THROW(semantic_copy_paste(synth_corpus(sc), SemanticPasteRule{"eye", "head"}, 1), DataError);
}

TEST(SemanticCopyPaste, MissingAnchorTargetsAreSkipped) {
  SynthConfig sc;
  sc.count = 40;
  sc.seed = 8;
  sc.presence = {{"eye", 0.2}, {"head", 0.5}};
  const auto corpus = synth_corpus(sc);
  const auto res = semantic_copy_paste(corpus, SemanticPasteRule{"eye", "head"}, 3);
  const bool logged = std::any_of(res.log.begin(), res.log.end(), [](const std::string& l) {
    return l.find("skipped") != std::string::npos;
  });
  EXPECT_TRUE(logged);
  for (const auto& p : res.pastes) EXPECT_TRUE(has_part(corpus.sketches[p.target], *corpus.vocab.index_of("head")));
}
