#pragma once

// Segmentation Transformer. A post-LN encoder turns stroke embeddings into
// stroke codes; a causal decoder consumes the start token plus embeddings of
// previously emitted groups and produces one group code per decode step.
// Stroke i joins group j when sigmoid(s_i . g_j) exceeds the threshold.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "contextseg/ad/adam.hpp"
#include "contextseg/ad/attention.hpp"
#include "contextseg/ad/ops.hpp"
#include "contextseg/ad/params.hpp"
#include "contextseg/embednet.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

// Defaults are sized for CPU runs on small corpora; full_scale() gives the
// values used for large datasets.
struct SegConfig {
  std::size_t layers = 4;
  std::size_t heads = 4;
  double dropout = 0.1;
  std::size_t model_dim = 64;
  std::size_t ffn_mult = 4;
  double focal_gamma = 2.0;
  double threshold = 0.5;
  OrderMode order_mode = OrderMode::kFreqDesc;
  std::uint64_t order_seed = 0;
  double tf_start = 1.0;
  double tf_end = 0.2;
  int epochs = 30;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  static SegConfig full_scale() {
    SegConfig c;
    c.dropout = 0.4;
    c.model_dim = 256;
    c.lr = 1e-4;
    return c;
  }

  void validate() const {
    if (layers == 0 || heads == 0) throw ConfigError("segmenter needs at least one layer and one head");
    if (model_dim == 0 || model_dim % heads != 0) throw ConfigError("model dim must be a positive multiple of heads");
    if (model_dim % 2 != 0) throw ConfigError("model dim must be even");
    if (ffn_mult == 0) throw ConfigError("ffn multiplier must be > 0");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must be in [0,1)");
    if (!(focal_gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
    if (!(threshold > 0.0 && threshold < 1.0)) throw ConfigError("selection threshold must be in (0,1)");
    if (!(tf_start >= 0.0 && tf_start <= 1.0 && tf_end >= 0.0 && tf_end <= 1.0))
      throw ConfigError("teacher-forcing endpoints must be in [0,1]");
    if (epochs < 0 || batch_size == 0 || !(lr > 0.0)) throw ConfigError("invalid segmenter training schedule");
  }
};

// [n, d] sinusoid table: sin at even columns, cos at odd ones.
template <typename T = double>
ad::Tensor<T> positional_encoding(std::size_t n, std::size_t d) {
  if (d % 2 != 0) throw ConfigError("positional encoding needs an even dimension");
  ad::Tensor<T> pe({n, d});
  for (std::size_t pos = 0; pos < n; ++pos)
    for (std::size_t i = 0; i < d; i += 2) {
      const double angle = static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / static_cast<double>(d));
      pe[pos * d + i] = static_cast<T>(std::sin(angle));
      pe[pos * d + i + 1] = static_cast<T>(std::cos(angle));
    }
  return pe;
}

inline double schedule_ratio(double progress, double start = 1.0, double end = 0.2) {
  progress = std::clamp(progress, 0.0, 1.0);
  return (1.0 - progress) * start + progress * end;
}

// ---------------------------------------------------------------------------
// Pointer selection and loss

struct Selection {
  std::vector<double> prob;  // per stroke
  std::vector<int> members;  // stroke ids with prob > threshold, not yet assigned
};

template <typename T>
Selection select_strokes(const ad::Tensor<T>& codes, std::span<const T> g, double threshold,
                         std::span<const char> assigned = {}) {
  if (codes.rank() != 2 || codes.shape()[1] != g.size())
    throw ShapeError("select_strokes: code dims " + ad::shape_str(codes.shape()) + " vs group code " +
                     std::to_string(g.size()));
  const std::size_t s = codes.shape()[0], d = g.size();
  if (!assigned.empty() && assigned.size() != s) throw ShapeError("select_strokes: assigned mask length mismatch");
  Selection out;
  out.prob.resize(s);
  for (std::size_t i = 0; i < s; ++i) {
    double z = 0;
    for (std::size_t k = 0; k < d; ++k) z += static_cast<double>(codes[i * d + k]) * static_cast<double>(g[k]);
    out.prob[i] = ad::sigmoid_scalar(z);
    if (out.prob[i] > threshold && (assigned.empty() || !assigned[i])) out.members.push_back(static_cast<int>(i));
  }
  return out;
}

inline constexpr double kProbClamp = 1e-7;

// Summed focal terms over a row-major probability matrix and its 0/1 membership.
inline double focal_group_loss(std::span<const double> probs, std::span<const std::uint8_t> membership, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  if (probs.size() != membership.size()) throw ShapeError("focal_group_loss: probability/membership size mismatch");
  double total = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    const double p = std::clamp(probs[k], kProbClamp, 1.0 - kProbClamp);
    total += membership[k] ? -std::pow(1.0 - p, gamma) * std::log(p) : -std::pow(p, gamma) * std::log(1.0 - p);
  }
  return total;
}

namespace detail {

inline double softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

}  // namespace detail

// Same loss evaluated from logits, with log p = -softplus(-z) and
// log(1 - p) = -softplus(z), so saturated logits keep a gradient.
template <typename T>
ad::Var<T> focal_loss_logits(ad::Var<T> logits, std::vector<std::uint8_t> membership, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("focal gamma must be >= 0");
  const auto& z = logits.value();
  if (z.size() != membership.size()) throw ShapeError("focal_loss_logits: logits/membership size mismatch");
  double total = 0;
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double zz = static_cast<double>(z[k]);
    const double p = ad::sigmoid_scalar(zz);
    total += membership[k] ? std::pow(1.0 - p, gamma) * detail::softplus(-zz) : std::pow(p, gamma) * detail::softplus(zz);
  }
  return logits.tape->record(
      "focal_loss", ad::Tensor<T>({1}, {static_cast<T>(total)}), {logits},
      [logits, membership = std::move(membership), gamma](ad::Tape<T>& t, std::size_t self) {
        auto* gz = ad::detail::grad_sink(t, logits);
        if (!gz) return;
        const double g = static_cast<double>(t.grad(self)[0]);
        const auto& z = t.value(logits.id);
        for (std::size_t k = 0; k < z.size(); ++k) {
          const double zz = static_cast<double>(z[k]);
          const double p = ad::sigmoid_scalar(zz);
          const double d = membership[k]
                               ? -std::pow(1.0 - p, gamma) * (gamma * p * detail::softplus(-zz) + (1.0 - p))
                               : std::pow(p, gamma) * (gamma * (1.0 - p) * detail::softplus(zz) + p);
          (*gz)[k] += static_cast<T>(g * d);
        }
      });
}

// ---------------------------------------------------------------------------
// Model

// Per-call counter for dropout masks; identity when not training.
struct DropoutStream {
  bool training = false;
  std::uint64_t base = 0;
  std::uint64_t counter = 0;

  std::uint64_t next() {
    std::uint64_t x = base + 0x9E3779B97F4A7C15ULL * ++counter;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }
};

template <typename T>
class SegFormer {
 public:
  using Var = ad::Var<T>;
  using Tape = ad::Tape<T>;

  static constexpr T kLayerNormEps = static_cast<T>(1e-5);

  SegFormer(SegConfig cfg, std::size_t parts) : cfg_(std::move(cfg)), parts_(parts) {
    cfg_.validate();
    if (parts_ == 0) throw ConfigError("segmenter needs at least one part");
    std::mt19937_64 rng(cfg_.seed);
    const std::size_t d = cfg_.model_dim;
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "enc/l" + std::to_string(l);
      attention_params(p + "/attn", rng);
      norm_params(p + "/ln1");
      ffn_params(p, rng);
      norm_params(p + "/ln2");
    }
    params_.add("dec/flag", {2, d}, ad::Init::kXavierUniform, rng);
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "dec/l" + std::to_string(l);
      attention_params(p + "/self", rng);
      norm_params(p + "/ln1");
      attention_params(p + "/cross", rng);
      norm_params(p + "/ln2");
      ffn_params(p, rng);
      norm_params(p + "/ln3");
    }
    dense_params("dec/out", d, d, rng);
  }

  const SegConfig& config() const noexcept { return cfg_; }
  std::size_t parts() const noexcept { return parts_; }
  ad::ParameterStore<T>& params() noexcept { return params_; }
  const ad::ParameterStore<T>& params() const noexcept { return params_; }

  // Per-dimension standardization applied to every embedding fed to the
  // model (stroke inputs and group contexts). Identity until fitted.
  const std::vector<T>& input_mean() const noexcept { return in_mean_; }
  const std::vector<T>& input_inv_std() const noexcept { return in_inv_std_; }
  void set_input_normalization(std::vector<T> mean, std::vector<T> inv_std) {
    if (mean.size() != cfg_.model_dim || inv_std.size() != cfg_.model_dim)
      throw ShapeError("input normalization has the wrong dimension");
    in_mean_ = std::move(mean);
    in_inv_std_ = std::move(inv_std);
  }
  void fit_input_normalization(const std::vector<const ad::Tensor<T>*>& rows) {
    const std::size_t d = cfg_.model_dim;
    std::vector<double> sum(d, 0.0), sq(d, 0.0);
    double n = 0;
    for (const auto* t : rows)
      for (std::size_t r = 0; r < t->size() / d; ++r, ++n)
        for (std::size_t k = 0; k < d; ++k) {
          const double v = static_cast<double>((*t)[r * d + k]);
          sum[k] += v;
          sq[k] += v * v;
        }
    if (n == 0) throw DataError("no embeddings to fit input normalization");
    for (std::size_t k = 0; k < d; ++k) {
      const double m = sum[k] / n;
      const double var = std::max(sq[k] / n - m * m, 0.0);
      in_mean_[k] = static_cast<T>(m);
      in_inv_std_[k] = static_cast<T>(1.0 / std::max(std::sqrt(var), 1e-6));
    }
  }
  ad::Tensor<T> normalize(ad::Tensor<T> x) const {
    const std::size_t d = cfg_.model_dim;
    if (x.size() % d != 0) throw ShapeError("normalize: row length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = (x[i] - in_mean_[i % d]) * in_inv_std_[i % d];
    return x;
  }

  // emb [S, D] -> codes [S, D]; row i gets the positional code of positions[i]
  // (default: its index).
  Var encode_strokes(Tape& t, Var emb, DropoutStream& drop, std::span<const std::size_t> positions = {}) const {
    check_rows(emb, "encode_strokes");
    const std::size_t s = emb.shape()[0], d = cfg_.model_dim;
    if (s == 0) throw DataError("encode_strokes: no strokes");
    std::vector<std::size_t> pos(positions.begin(), positions.end());
    if (pos.empty()) {
      pos.resize(s);
      std::iota(pos.begin(), pos.end(), std::size_t{0});
    }
    if (pos.size() != s) throw ShapeError("encode_strokes: positions length mismatch");
    ad::Tensor<T> pe({s, d});
    const std::size_t max_pos = *std::max_element(pos.begin(), pos.end());
    const auto table = positional_encoding<T>(max_pos + 1, d);
    for (std::size_t i = 0; i < s; ++i) std::copy_n(table.data() + pos[i] * d, d, pe.data() + i * d);
    Var x = ad::add(emb, t.constant(std::move(pe)));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "enc/l" + std::to_string(l);
      x = residual_norm(t, x, ad::multi_head_attention(x, x, attention(t, p + "/attn"), cfg_.heads, false), p + "/ln1", drop);
      x = residual_norm(t, x, ffn(t, x, p), p + "/ln2", drop);
    }
    return x;
  }

  // Group codes [J, D] for decode steps 0..J-1. contexts [J, D] holds the
  // start token followed by the embeddings of the groups of steps 0..J-2;
  // flags[k] is the assigned mask in effect at step k.
  Var decode_steps(Tape& t, Var codes, Var contexts, const std::vector<std::vector<char>>& flags,
                   DropoutStream& drop) const {
    check_rows(codes, "decode_steps");
    check_rows(contexts, "decode_steps");
    const std::size_t s = codes.shape()[0], j = contexts.shape()[0], d = cfg_.model_dim;
    if (j == 0) throw ShapeError("decode_steps: empty context sequence");
    if (j > parts_) throw Error("decode step " + std::to_string(j - 1) + " beyond part count");
    if (flags.size() != j) throw ShapeError("decode_steps: one flag mask per step required");
    // Per-step cross-attention memories, shared between steps with equal masks.
    Var flag_table = t.parameter(params_.get("dec/flag"));
    std::vector<Var> memory;
    std::vector<std::size_t> memory_of(j);
    std::map<std::vector<char>, std::size_t> seen;
    for (std::size_t k = 0; k < j; ++k) {
      if (flags[k].size() != s) throw ShapeError("decode_steps: flag mask length mismatch");
      auto [it, fresh] = seen.emplace(flags[k], memory.size());
      if (fresh) {
        std::vector<std::size_t> idx(flags[k].begin(), flags[k].end());
        memory.push_back(ad::add(codes, ad::gather_rows(flag_table, idx)));
      }
      memory_of[k] = it->second;
    }
    Var x = ad::add(contexts, t.constant(positional_encoding<T>(j, d)));
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
      const std::string p = "dec/l" + std::to_string(l);
      x = residual_norm(t, x, ad::multi_head_attention(x, x, attention(t, p + "/self"), cfg_.heads, true), p + "/ln1", drop);
      const auto cross_w = attention(t, p + "/cross");
      std::vector<Var> rows;
      for (std::size_t k = 0; k < j; ++k)
        rows.push_back(ad::multi_head_attention(ad::slice(x, 0, k, k + 1), memory[memory_of[k]], cross_w, cfg_.heads, false));
      Var cross = j == 1 ? rows[0] : ad::concat(std::span<const Var>(rows), 0);
      x = residual_norm(t, x, cross, p + "/ln2", drop);
      x = residual_norm(t, x, ffn(t, x, p), p + "/ln3", drop);
    }
    return ad::dense(x, t.parameter(params_.get("dec/out/w")), t.parameter(params_.get("dec/out/b")));
  }

  // logits [S, J] = codes . group_codes^T
  static Var logits(Var codes, Var group_codes) { return ad::matmul(codes, ad::transpose(group_codes)); }

 private:
  void check_rows(Var v, const char* op) const {
    if (v.shape().size() != 2 || v.shape()[1] != cfg_.model_dim)
      throw ShapeError(std::string(op) + ": expected [*, " + std::to_string(cfg_.model_dim) + "], got " +
                       ad::shape_str(v.shape()));
  }
  void dense_params(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    params_.add(name + "/w", {in, out}, ad::Init::kXavierUniform, rng);
    params_.add(name + "/b", {out}, ad::Init::kZeros, rng);
  }
  void attention_params(const std::string& name, std::mt19937_64& rng) {
    for (const char* m : {"q", "k", "v", "o"}) dense_params(name + "/" + m, cfg_.model_dim, cfg_.model_dim, rng);
  }
  void norm_params(const std::string& name) {
    std::mt19937_64 unused(0);
    params_.add(name + "/g", {cfg_.model_dim}, ad::Init::kOnes, unused);
    params_.add(name + "/b", {cfg_.model_dim}, ad::Init::kZeros, unused);
  }
  void ffn_params(const std::string& p, std::mt19937_64& rng) {
    dense_params(p + "/ffn1", cfg_.model_dim, cfg_.ffn_mult * cfg_.model_dim, rng);
    dense_params(p + "/ffn2", cfg_.ffn_mult * cfg_.model_dim, cfg_.model_dim, rng);
  }

  Var param(Tape& t, const std::string& name) const { return t.parameter(params_.get(name)); }
  ad::AttentionWeights<T> attention(Tape& t, const std::string& p) const {
    return {param(t, p + "/q/w"), param(t, p + "/q/b"), param(t, p + "/k/w"), param(t, p + "/k/b"),
            param(t, p + "/v/w"), param(t, p + "/v/b"), param(t, p + "/o/w"), param(t, p + "/o/b")};
  }
  Var ffn(Tape& t, Var x, const std::string& p) const {
    Var h = ad::relu(ad::dense(x, param(t, p + "/ffn1/w"), param(t, p + "/ffn1/b")));
    return ad::dense(h, param(t, p + "/ffn2/w"), param(t, p + "/ffn2/b"));
  }
  Var residual_norm(Tape& t, Var x, Var sub, const std::string& ln, DropoutStream& drop) const {
    sub = ad::dropout(sub, cfg_.dropout, drop.next(), drop.training);
    return ad::layer_norm(ad::add(x, sub), param(t, ln + "/g"), param(t, ln + "/b"), kLayerNormEps);
  }

  SegConfig cfg_;
  std::size_t parts_;
  ad::ParameterStore<T> params_;
  std::vector<T> in_mean_ = std::vector<T>(cfg_.model_dim, T{0});
  std::vector<T> in_inv_std_ = std::vector<T>(cfg_.model_dim, T{1});
};

// ---------------------------------------------------------------------------
// Inference

// Columns are decode steps. Steps after an early stop have probability 0 and
// no members.
struct SelectionMatrix {
  std::size_t strokes = 0;
  std::size_t steps = 0;
  std::vector<double> prob;
  std::vector<std::uint8_t> member;
  std::vector<char> fallback;  // per stroke
  std::size_t steps_run = 0;

  SelectionMatrix() = default;
  SelectionMatrix(std::size_t s, std::size_t c)
      : strokes(s), steps(c), prob(s * c, 0.0), member(s * c, 0), fallback(s, 0) {}

  double p(std::size_t i, std::size_t j) const { return prob[i * steps + j]; }
  bool m(std::size_t i, std::size_t j) const { return member[i * steps + j] != 0; }
};

struct DecodeState {
  std::size_t step = 0;
  std::vector<char> assigned;
  std::vector<std::vector<char>> flag_history;  // mask in effect at each step < step
  std::vector<std::vector<int>> groups;         // members chosen at each step < step
};

template <typename T>
struct InferenceResult {
  SelectionMatrix selection;
  std::vector<std::size_t> labels;  // part index per stroke
};

// Group embedding callback: stroke ids -> embedding of their composed image.
template <typename T>
using GroupEmbedder = std::function<std::vector<T>(const std::vector<int>&)>;

namespace detail {

template <typename T>
ad::Tensor<T> rows_tensor(const std::vector<std::vector<T>>& rows, std::size_t d) {
  ad::Tensor<T> out({rows.size(), d});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != d) throw ShapeError("embedding has wrong dimension");
    std::copy(rows[r].begin(), rows[r].end(), out.data() + r * d);
  }
  return out;
}

}  // namespace detail

// Decode steps in order, freezing assignments; stop once every stroke is
// assigned, then give leftovers their argmax step.
template <typename T>
InferenceResult<T> infer_embedded(const SegFormer<T>& model, const ad::Tensor<T>& stroke_emb,
                                  const GroupEmbedder<T>& embed_group_fn, const PartVocabulary& vocab) {
  if (vocab.size() != model.parts()) throw DataError("vocabulary size does not match the segmenter");
  const std::size_t c = model.parts(), d = model.config().model_dim;
  const std::size_t s = stroke_emb.rank() == 2 ? stroke_emb.shape()[0] : 0;
  InferenceResult<T> res{SelectionMatrix(s, c), std::vector<std::size_t>(s, 0)};
  if (s == 0) return res;

  ad::Tape<T> t(false);
  DropoutStream drop;
  ad::Var<T> codes_var = model.encode_strokes(t, t.constant(model.normalize(stroke_emb)), drop);
  const ad::Tensor<T> codes = codes_var.value();
  std::vector<std::vector<T>> contexts{embed_group_fn({})};
  DecodeState st;
  st.assigned.assign(s, 0);
  for (; st.step < c; ++st.step) {
    st.flag_history.push_back(st.assigned);
    ad::Tape<T> tt(false);
    DropoutStream off;
    const auto g = model.decode_steps(tt, tt.constant(codes), tt.constant(model.normalize(detail::rows_tensor(contexts, d))),
                                      st.flag_history, off)
                       .value();
    const std::span<const T> last(g.data() + st.step * d, d);
    const auto sel = select_strokes(codes, last, model.config().threshold, st.assigned);
    for (std::size_t i = 0; i < s; ++i) res.selection.prob[i * c + st.step] = sel.prob[i];
    for (int i : sel.members) {
      st.assigned[static_cast<std::size_t>(i)] = 1;
      res.selection.member[static_cast<std::size_t>(i) * c + st.step] = 1;
    }
    st.groups.push_back(sel.members);
    res.selection.steps_run = st.step + 1;
    if (std::all_of(st.assigned.begin(), st.assigned.end(), [](char a) { return a != 0; })) break;
    if (st.step + 1 < c) contexts.push_back(embed_group_fn(sel.members));
  }
  for (std::size_t i = 0; i < s; ++i) {
    if (!st.assigned[i]) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < res.selection.steps_run; ++j)
        if (res.selection.p(i, j) > res.selection.p(i, best)) best = j;
      res.selection.member[i * c + best] = 1;
      res.selection.fallback[i] = 1;
    }
    for (std::size_t j = 0; j < c; ++j)
      if (res.selection.m(i, j)) res.labels[i] = vocab.part_at_step(j);
  }
  return res;
}

// Stroke embeddings [S, D] of a sketch.
template <typename T>
ad::Tensor<T> stroke_embeddings(const Sketch& sketch, const EmbedNet<T>& net) {
  std::vector<ImageGrid> imgs;
  imgs.reserve(sketch.strokes.size());
  for (const auto& st : sketch.strokes) imgs.push_back(rasterize(st, net.config().resolution));
  std::vector<const ImageGrid*> ptrs;
  for (const auto& im : imgs) ptrs.push_back(&im);
  if (ptrs.empty()) return {};
  return net.embed(ptrs);
}

template <typename T>
InferenceResult<T> infer(const Sketch& sketch, const EmbedNet<T>& net, const SegFormer<T>& model,
                         const PartVocabulary& vocab) {
  if (net.config().embed_dim != model.config().model_dim)
    throw ConfigError("embedding dim does not match segmenter model dim");
  const GroupEmbedder<T> fn = [&](const std::vector<int>& ids) { return embed_group(sketch, ids, net); };
  return infer_embedded(model, stroke_embeddings(sketch, net), fn, vocab);
}

// ---------------------------------------------------------------------------
// Training

struct SegEpochLog {
  int epoch;
  double loss;            // mean focal loss per sketch
  double schedule;        // teacher-forcing ratio used
  double gt_context;      // fraction of contexts drawn from ground truth
  double train_sacc;      // pass-1 stroke accuracy under ground-truth contexts
};

inline std::string seg_log_csv(const std::vector<SegEpochLog>& log) {
  std::string out = "epoch,L_focal,tf_ratio,gt_context_ratio,train_sacc\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.6g,%.6g,%.6g\n", e.epoch, e.loss, e.schedule, e.gt_context, e.train_sacc);
    out += buf;
  }
  return out;
}

// Frozen-encoder inputs for one training sketch.
template <typename T>
struct SegSample {
  const Sketch* sketch = nullptr;
  ad::Tensor<T> emb;                         // [S, D]
  std::vector<std::vector<int>> gt_groups;   // per decode step
  std::vector<std::vector<T>> gt_contexts;   // embedding per decode step
  std::vector<std::uint8_t> membership;      // [S, C] by decode step
};

template <typename T>
std::vector<SegSample<T>> build_seg_samples(std::span<const LabeledSketch> corpus, const PartVocabulary& vocab,
                                            const EmbedNet<T>& net) {
  std::vector<SegSample<T>> out;
  const std::size_t c = vocab.size();
  for (std::size_t n = 0; n < corpus.size(); ++n) {
    const auto& ls = corpus[n];
    if (!ls.is_labeled() || ls.labels.size() != ls.sketch.strokes.size())
      throw DataError("sketch " + std::to_string(n) + " is unlabeled");
    SegSample<T> smp;
    smp.sketch = &ls.sketch;
    const std::size_t s = ls.sketch.strokes.size();
    smp.gt_groups.resize(c);
    smp.membership.assign(s * c, 0);
    for (std::size_t i = 0; i < s; ++i) {
      const int l = ls.labels[i];
      if (l < 0 || static_cast<std::size_t>(l) >= c) throw DataError("label outside the vocabulary in sketch " + std::to_string(n));
      const std::size_t j = vocab.step_of_part(static_cast<std::size_t>(l));
      smp.gt_groups[j].push_back(static_cast<int>(i));
      smp.membership[i * c + j] = 1;
    }
    smp.emb = stroke_embeddings(ls.sketch, net);
    for (std::size_t j = 0; j < c; ++j) smp.gt_contexts.push_back(embed_group(ls.sketch, smp.gt_groups[j], net));
    out.push_back(std::move(smp));
  }
  return out;
}

class SegTrainer {
 public:
  SegTrainer(const SegConfig& cfg, const EmbedNet<float>& embed, PartVocabulary vocab)
      : embed_(&embed),
        vocab_(std::move(vocab)),
        model_(cfg, vocab_.size()),
        opt_(model_.params(), ad::AdamConfig{cfg.lr}) {
    if (embed.config().embed_dim != cfg.model_dim) throw ConfigError("embedding dim does not match segmenter model dim");
    vocab_.validate();
  }

  SegFormer<float>& model() { return model_; }
  const PartVocabulary& vocab() const { return vocab_; }
  const std::vector<SegEpochLog>& log() const { return log_; }
  ad::Adam<float>& optimizer() { return opt_; }
  int epochs_done() const { return epochs_done_; }

  // Restores a stopped run: parameters, optimizer state and normalization
  // must already be loaded into model() and optimizer().
  void resume(int epochs_done, std::vector<SegEpochLog> log) {
    epochs_done_ = epochs_done;
    log_ = std::move(log);
    normalization_fitted_ = true;
  }

  // Runs until cfg.epochs epochs are done. Shuffling, teacher-forcing draws
  // and dropout depend only on (seed, epoch), so resuming matches an
  // uninterrupted run.
  void train(std::span<const LabeledSketch> corpus, const std::function<void(const SegEpochLog&)>& on_epoch = {}) {
    if (corpus.empty()) throw DataError("segmenter training needs a nonempty corpus");
    auto samples = build_seg_samples(corpus, vocab_, *embed_);
    const auto& cfg = model_.config();
    const std::size_t c = vocab_.size(), d = cfg.model_dim;
    const std::vector<float> start = embed_group(Sketch{{}, {}, embed_->config().resolution}, {}, *embed_);
    if (!normalization_fitted_) {
      std::vector<const ad::Tensor<float>*> rows;
      for (const auto& smp : samples) rows.push_back(&smp.emb);
      model_.fit_input_normalization(rows);
      normalization_fitted_ = true;
    }
    for (auto& smp : samples) smp.emb = model_.normalize(std::move(smp.emb));
    std::vector<std::size_t> order(samples.size());
    for (int epoch = epochs_done_; epoch < cfg.epochs; ++epoch) {
      const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 1.0;
      const double ratio = schedule_ratio(progress, cfg.tf_start, cfg.tf_end);
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(cfg.seed * 7919ULL + static_cast<std::uint64_t>(epoch));
      std::shuffle(order.begin(), order.end(), rng);
      std::bernoulli_distribution take_gt(ratio);
      double loss_sum = 0;
      std::size_t draws = 0, gt_draws = 0, strokes = 0, correct = 0;
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - b);
        model_.params().zero_grad();
        for (std::size_t bi = 0; bi < n; ++bi) {
          const auto& smp = samples[order[b + bi]];
          const std::size_t s = smp.emb.shape()[0];

          // Pass 1: ground-truth contexts, no dropout.
          std::vector<std::vector<char>> gt_flags(c, std::vector<char>(s, 0));
          for (std::size_t j = 1; j < c; ++j) {
            gt_flags[j] = gt_flags[j - 1];
            for (int i : smp.gt_groups[j - 1]) gt_flags[j][static_cast<std::size_t>(i)] = 1;
          }
          std::vector<std::vector<int>> predicted(c);
          {
            ad::Tape<float> t(false);
            DropoutStream off;
            auto codes = model_.encode_strokes(t, t.constant(smp.emb), off);
            auto g = model_.decode_steps(t, codes, t.constant(model_.normalize(contexts_tensor(start, smp.gt_contexts, c, d))),
                                         gt_flags, off);
            const auto& cv = codes.value();
            for (std::size_t j = 0; j < c; ++j) {
              const auto sel = select_strokes(cv, std::span<const float>(g.value().data() + j * d, d), cfg.threshold,
                                              gt_flags[j]);
              predicted[j] = sel.members;
              for (std::size_t i = 0; i < s; ++i) correct += smp.membership[i * c + j] && sel.prob[i] > cfg.threshold;
            }
            strokes += s;
          }

          // Pass 2: per step, ground truth with probability `ratio`, else the pass-1 prediction.
          std::vector<std::vector<float>> ctx(c);
          std::vector<std::vector<char>> flags(c, std::vector<char>(s, 0));
          for (std::size_t j = 0; j + 1 < c; ++j) {
            const bool gt = take_gt(rng);
            ++draws;
            gt_draws += gt;
            const auto& members = gt ? smp.gt_groups[j] : predicted[j];
            ctx[j] = gt ? smp.gt_contexts[j] : cached_group_embedding(*smp.sketch, members);
            flags[j + 1] = flags[j];
            for (int i : members) flags[j + 1][static_cast<std::size_t>(i)] = 1;
          }
          ad::Tape<float> t;
          DropoutStream drop{true, cfg.seed ^ (static_cast<std::uint64_t>(epoch) << 32) ^ (b + bi), 0};
          auto codes = model_.encode_strokes(t, t.constant(smp.emb), drop);
          auto g = model_.decode_steps(t, codes, t.constant(model_.normalize(contexts_tensor(start, ctx, c, d))), flags, drop);
          auto loss = focal_loss_logits(SegFormer<float>::logits(codes, g), smp.membership, cfg.focal_gamma);
          loss_sum += loss.value()[0];
          t.backward(ad::scale(loss, 1.0f / static_cast<float>(n)));
        }
        opt_.step();
      }
      SegEpochLog entry{epoch + 1, loss_sum / static_cast<double>(samples.size()), ratio,
                        draws ? static_cast<double>(gt_draws) / static_cast<double>(draws) : 1.0,
                        strokes ? static_cast<double>(correct) / static_cast<double>(strokes) : 0.0};
      log_.push_back(entry);
      epochs_done_ = epoch + 1;
      if (on_epoch) on_epoch(entry);
    }
  }

 private:
  // Start token followed by the first c - 1 group embeddings.
  static ad::Tensor<float> contexts_tensor(const std::vector<float>& start, const std::vector<std::vector<float>>& groups,
                                           std::size_t c, std::size_t d) {
    std::vector<std::vector<float>> rows{start};
    for (std::size_t j = 0; j + 1 < c; ++j) rows.push_back(groups[j]);
    return detail::rows_tensor(rows, d);
  }

  const std::vector<float>& cached_group_embedding(const Sketch& sketch, const std::vector<int>& members) {
    auto key = std::make_pair(&sketch, members);
    auto it = group_cache_.find(key);
    if (it == group_cache_.end()) it = group_cache_.emplace(key, embed_group(sketch, members, *embed_)).first;
    return it->second;
  }

  const EmbedNet<float>* embed_;
  PartVocabulary vocab_;
  SegFormer<float> model_;
  ad::Adam<float> opt_;
  std::vector<SegEpochLog> log_;
  bool normalization_fitted_ = false;
  int epochs_done_ = 0;
  std::map<std::pair<const Sketch*, std::vector<int>>, std::vector<float>> group_cache_;
};

}  // namespace cseg
