#pragma once

// Stroke-embedding autoencoder: a strided conv encoder to a dense bottleneck,
// and two conv decoders (binary reconstruction and distance field) built from
// nearest-neighbour upsampling followed by a 3x3 conv at every level.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "contextseg/ad/adam.hpp"
#include "contextseg/ad/conv.hpp"
#include "contextseg/ad/ops.hpp"
#include "contextseg/ad/params.hpp"
#include "contextseg/raster.hpp"
#include "contextseg/sketch.hpp"

namespace cseg {

struct EmbedConfig {
  int resolution = 64;
  std::vector<std::size_t> widths{16, 32, 64, 128};
  std::size_t embed_dim = 64;
  double gamma = 0.5;
  bool coordconv = true;
  bool use_df = true;  // false trains with gamma = 0
  double field_k = kDefaultFieldK;
  int epochs = 6;
  std::size_t batch_size = 16;
  double lr = 1e-3;
  std::uint64_t seed = 1;

  static EmbedConfig full_scale() {
    EmbedConfig c;
    c.resolution = 256;
    c.widths = {64, 128, 256, 512};
    c.embed_dim = 256;
    c.batch_size = 64;
    c.lr = 1e-4;
    return c;
  }

  std::size_t input_channels() const { return coordconv ? 3 : 1; }
  std::size_t bottleneck_side() const { return static_cast<std::size_t>(resolution) >> widths.size(); }
  double effective_gamma() const { return use_df ? gamma : 0.0; }

  void validate() const {
    if (widths.empty()) throw ConfigError("embed widths must be nonempty");
    for (std::size_t i = 0; i < widths.size(); ++i) {
      if (widths[i] == 0) throw ConfigError("embed widths must be positive");
      if (i > 0 && widths[i] < widths[i - 1]) throw ConfigError("embed widths must be ascending");
    }
    if (embed_dim == 0) throw ConfigError("embedding dim must be > 0");
    if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
    if (resolution < 2 || resolution % (1 << widths.size()) != 0)
      throw ConfigError("resolution must be divisible by 2^(number of segments)");
    if (!(field_k > 0.0)) throw ConfigError("field k must be > 0");
    if (epochs < 0 || batch_size == 0 || !(lr > 0.0)) throw ConfigError("invalid embed training schedule");
  }
};

// Stroke channel plus, with coordconv, the x and y coordinate channels.
inline MultiChannelImage build_input(const ImageGrid& image, const EmbedConfig& cfg) {
  if (image.width != cfg.resolution || image.height != cfg.resolution)
    throw ShapeError("image is " + std::to_string(image.width) + "x" + std::to_string(image.height) +
                     ", config expects " + std::to_string(cfg.resolution));
  MultiChannelImage m;
  m.channels.push_back(image);
  if (cfg.coordconv) {
    auto [xs, ys] = coord_channels(cfg.resolution);
    m.channels.push_back(std::move(xs));
    m.channels.push_back(std::move(ys));
  }
  return m;
}

enum class DecoderHead { kReconstruction, kDistance };

template <typename T>
class EmbedNet {
 public:
  using Var = ad::Var<T>;
  using Tape = ad::Tape<T>;

  explicit EmbedNet(EmbedConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::mt19937_64 rng(cfg_.seed);
    const auto& w = cfg_.widths;
    std::size_t in = cfg_.input_channels();
    for (std::size_t s = 0; s < w.size(); ++s) {
      const std::string seg = "enc/seg" + std::to_string(s);
      conv_param(seg + "a", w[s], in, rng);
      conv_param(seg + "b", w[s], w[s], rng);
      in = w[s];
    }
    const std::size_t side = cfg_.bottleneck_side();
    const std::size_t flat = w.back() * side * side;
    dense_param("enc/fc", flat, cfg_.embed_dim, rng);
    for (const char* head : {"rec", "dis"}) {
      const std::string h = head;
      dense_param(h + "/fc", cfg_.embed_dim, flat, rng);
      for (std::size_t s = w.size(); s-- > 0;) conv_param(h + "/up" + std::to_string(s), s > 0 ? w[s - 1] : 1, w[s], rng);
    }
  }

  const EmbedConfig& config() const noexcept { return cfg_; }
  ad::ParameterStore<T>& params() noexcept { return params_; }
  const ad::ParameterStore<T>& params() const noexcept { return params_; }

  // [N, C, R, R] from single-channel images.
  ad::Tensor<T> batch_input(std::span<const ImageGrid* const> images) const {
    const std::size_t r = static_cast<std::size_t>(cfg_.resolution), plane = r * r;
    const std::size_t ch = cfg_.input_channels();
    ad::Tensor<T> out({images.size(), ch, r, r});
    std::vector<double> xs, ys;
    if (cfg_.coordconv) {
      auto [gx, gy] = coord_channels(cfg_.resolution);
      xs = std::move(gx.values);
      ys = std::move(gy.values);
    }
    for (std::size_t n = 0; n < images.size(); ++n) {
      const ImageGrid& g = *images[n];
      if (g.width != cfg_.resolution || g.height != cfg_.resolution)
        throw ShapeError("image resolution does not match the embed config");
      T* dst = out.data() + n * ch * plane;
      for (std::size_t i = 0; i < plane; ++i) dst[i] = static_cast<T>(g.values[i]);
      if (cfg_.coordconv)
        for (std::size_t i = 0; i < plane; ++i) {
          dst[plane + i] = static_cast<T>(xs[i]);
          dst[2 * plane + i] = static_cast<T>(ys[i]);
        }
    }
    return out;
  }

  ad::Tensor<T> batch_input(const MultiChannelImage& m) const {
    if (m.channel_count() != cfg_.input_channels()) throw ShapeError("input channel count does not match the config");
    const std::size_t r = static_cast<std::size_t>(cfg_.resolution), plane = r * r;
    ad::Tensor<T> out({1, m.channel_count(), r, r});
    for (std::size_t c = 0; c < m.channel_count(); ++c) {
      if (m.channels[c].width != cfg_.resolution || m.channels[c].height != cfg_.resolution)
        throw ShapeError("channel resolution does not match the embed config");
      for (std::size_t i = 0; i < plane; ++i) out[c * plane + i] = static_cast<T>(m.channels[c].values[i]);
    }
    return out;
  }

  // input [N, C, R, R] -> [N, D]
  Var encode(Tape& t, Var input) const {
    const auto& s = input.shape();
    if (s.size() != 4 || s[1] != cfg_.input_channels() || s[2] != static_cast<std::size_t>(cfg_.resolution) ||
        s[3] != static_cast<std::size_t>(cfg_.resolution))
      throw ShapeError("encode: expected [N," + std::to_string(cfg_.input_channels()) + "," +
                       std::to_string(cfg_.resolution) + "," + std::to_string(cfg_.resolution) + "], got " +
                       ad::shape_str(s));
    Var x = input;
    for (std::size_t seg = 0; seg < cfg_.widths.size(); ++seg) {
      const std::string p = "enc/seg" + std::to_string(seg);
      x = conv(t, x, p + "a", 1);
      x = conv(t, x, p + "b", 2);
    }
    x = ad::flatten(x);
    return ad::dense(x, t.parameter(params_.get("enc/fc/w")), t.parameter(params_.get("enc/fc/b")));
  }

  // e [N, D] -> [N, 1, R, R], values in (0, 1)
  Var decode(Tape& t, Var e, DecoderHead head) const {
    if (e.shape().size() != 2 || e.shape()[1] != cfg_.embed_dim)
      throw ShapeError("decode: expected [N," + std::to_string(cfg_.embed_dim) + "], got " + ad::shape_str(e.shape()));
    const std::string h = head == DecoderHead::kReconstruction ? "rec" : "dis";
    const std::size_t side = cfg_.bottleneck_side();
    Var x = act(ad::dense(e, t.parameter(params_.get(h + "/fc/w")), t.parameter(params_.get(h + "/fc/b"))));
    x = ad::reshape(x, {e.shape()[0], cfg_.widths.back(), side, side});
    for (std::size_t s = cfg_.widths.size(); s-- > 0;) {
      x = ad::upsample2x_nearest(x);
      const std::string name = h + "/up" + std::to_string(s);
      Var y = ad::add_channel_bias(ad::conv2d(x, t.parameter(params_.get(name + "/w")), 1, 1),
                                   t.parameter(params_.get(name + "/b")));
      x = s > 0 ? act(y) : ad::sigmoid(y);
    }
    return x;
  }

  // Embeddings [N, D] for the given images, without gradient tracking.
  ad::Tensor<T> embed(std::span<const ImageGrid* const> images, std::size_t chunk = 64) const {
    if (images.empty()) throw DataError("embed: no images");
    ad::Tensor<T> out({images.size(), cfg_.embed_dim});
    for (std::size_t b = 0; b < images.size(); b += chunk) {
      const auto part = images.subspan(b, std::min(chunk, images.size() - b));
      Tape t(false);
      const auto e = encode(t, t.constant(batch_input(part))).value();
      std::copy(e.storage().begin(), e.storage().end(), out.data() + b * cfg_.embed_dim);
    }
    return out;
  }

  std::vector<T> embed_one(const ImageGrid& image) const {
    const ImageGrid* p = &image;
    return embed(std::span<const ImageGrid* const>(&p, 1)).to_vector();
  }

 private:
  void conv_param(const std::string& name, std::size_t out, std::size_t in, std::mt19937_64& rng) {
    params_.add(name + "/w", {out, in, 3, 3}, ad::Init::kXavierUniform, rng);
    params_.add(name + "/b", {out}, ad::Init::kZeros, rng);
  }
  void dense_param(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
    params_.add(name + "/w", {in, out}, ad::Init::kXavierUniform, rng);
    params_.add(name + "/b", {out}, ad::Init::kZeros, rng);
  }
  // Leaky so that sparse targets cannot silence whole layers.
  static Var act(Var x) { return ad::leaky_relu(x, static_cast<T>(0.1)); }
  Var conv(Tape& t, Var x, const std::string& name, std::size_t stride) const {
    return act(ad::add_channel_bias(ad::conv2d(x, t.parameter(params_.get(name + "/w")), stride, 1),
                                         t.parameter(params_.get(name + "/b"))));
  }

  EmbedConfig cfg_;
  ad::ParameterStore<T> params_;
};

// ---------------------------------------------------------------------------
// Losses

template <typename T>
struct EmbedLossVars {
  ad::Var<T> em, recon, dis;
};

// L_em = L_recon + gamma * L_dis, both terms mean squared errors.
template <typename T>
EmbedLossVars<T> embed_loss(ad::Var<T> input, ad::Var<T> recon, ad::Var<T> df_target, ad::Var<T> df_pred, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  auto l_recon = ad::mse_loss(input, recon);
  auto l_dis = ad::mse_loss(df_target, df_pred);
  return {ad::add(l_recon, ad::scale(l_dis, static_cast<T>(gamma))), l_recon, l_dis};
}

inline double combine_embed_loss(double l_recon, double l_dis, double gamma) {
  if (!(gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  return l_recon + gamma * l_dis;
}

// ---------------------------------------------------------------------------
// Training data

struct EmbedSample {
  ImageGrid image;
  ImageGrid field;
};

// Every stroke image, plus each labeled part with two or more strokes as a
// group image. Distance-field targets are computed here, once.
inline std::vector<EmbedSample> build_embed_samples(std::span<const LabeledSketch> sketches, const EmbedConfig& cfg) {
  struct Job {
    const Sketch* sketch;
    std::vector<int> ids;
  };
  std::vector<Job> jobs;
  for (const auto& ls : sketches) {
    if (ls.sketch.resolution != cfg.resolution)
      throw DataError("sketch resolution " + std::to_string(ls.sketch.resolution) + " does not match embed resolution " +
                      std::to_string(cfg.resolution));
    for (std::size_t i = 0; i < ls.sketch.strokes.size(); ++i) jobs.push_back({&ls.sketch, {static_cast<int>(i)}});
    std::vector<int> parts(ls.labels.begin(), ls.labels.end());
    std::sort(parts.begin(), parts.end());
    parts.erase(std::unique(parts.begin(), parts.end()), parts.end());
    for (int p : parts) {
      if (p == kUnlabeled) continue;
      std::vector<int> ids;
      for (std::size_t i = 0; i < ls.labels.size(); ++i)
        if (ls.labels[i] == p) ids.push_back(static_cast<int>(i));
      if (ids.size() >= 2) jobs.push_back({&ls.sketch, std::move(ids)});
    }
  }
  std::vector<EmbedSample> out(jobs.size());
  for (std::size_t j = 0; j < jobs.size(); ++j) {
    out[j].image = compose_group_image(*jobs[j].sketch, jobs[j].ids, cfg.resolution);
    out[j].field = group_distance_field(*jobs[j].sketch, jobs[j].ids, cfg.resolution, cfg.field_k).grid;
  }
  return out;
}

struct EmbedEpochLog {
  int epoch;
  double l_em, l_recon, l_dis;
};

inline std::string embed_log_csv(const std::vector<EmbedEpochLog>& log) {
  std::string out = "epoch,L_em,L_recon,L_dis\n";
  char buf[128];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.9g\n", e.epoch, e.l_em, e.l_recon, e.l_dis);
    out += buf;
  }
  return out;
}

// Holds the network, optimizer and epoch counter so training can stop and resume.
class EmbedTrainer {
 public:
  explicit EmbedTrainer(const EmbedConfig& cfg) : net_(cfg), opt_(net_.params(), ad::AdamConfig{cfg.lr}) {}

  EmbedNet<float>& net() { return net_; }
  const EmbedNet<float>& net() const { return net_; }
  ad::Adam<float>& optimizer() { return opt_; }
  int epochs_done() const { return epochs_done_; }
  void set_epochs_done(int e) { epochs_done_ = e; }
  const std::vector<EmbedEpochLog>& log() const { return log_; }
  void set_log(std::vector<EmbedEpochLog> l) { log_ = std::move(l); }

  // Runs until cfg.epochs epochs are done. The sample order of epoch e
  // depends only on (seed, e), so a resumed run matches an uninterrupted one.
  void train(const std::vector<EmbedSample>& samples,
             const std::function<void(const EmbedEpochLog&)>& on_epoch = {}) {
    if (samples.empty()) throw DataError("embedding training needs a nonempty corpus");
    const auto& cfg = net_.config();
    const double gamma = cfg.effective_gamma();
    const std::size_t r = static_cast<std::size_t>(cfg.resolution), plane = r * r;
    if (epochs_done_ == 0) init_output_biases(samples);
    std::vector<std::size_t> order(samples.size());
    while (epochs_done_ < cfg.epochs) {
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::mt19937_64 rng(cfg.seed * 1000003ULL + static_cast<std::uint64_t>(epochs_done_));
      std::shuffle(order.begin(), order.end(), rng);
      double sum_em = 0, sum_rec = 0, sum_dis = 0;
      for (std::size_t b = 0; b < order.size(); b += cfg.batch_size) {
        const std::size_t n = std::min(cfg.batch_size, order.size() - b);
        std::vector<const ImageGrid*> imgs(n);
        ad::Tensor<float> stroke({n, 1, r, r}), field({n, 1, r, r});
        for (std::size_t i = 0; i < n; ++i) {
          const auto& s = samples[order[b + i]];
          imgs[i] = &s.image;
          for (std::size_t k = 0; k < plane; ++k) {
            stroke[i * plane + k] = static_cast<float>(s.image.values[k]);
            field[i * plane + k] = static_cast<float>(s.field.values[k]);
          }
        }
        net_.params().zero_grad();
        ad::Tape<float> t;
        auto e = net_.encode(t, t.constant(net_.batch_input(imgs)));
        auto rec = net_.decode(t, e, DecoderHead::kReconstruction);
        auto target = t.constant(field);
        auto pred = gamma > 0.0 ? net_.decode(t, e, DecoderHead::kDistance) : target;
        auto l = embed_loss(t.constant(stroke), rec, target, pred, gamma);
        t.backward(l.em);
        opt_.step();
        sum_em += l.em.value()[0] * static_cast<double>(n);
        sum_rec += l.recon.value()[0] * static_cast<double>(n);
        sum_dis += l.dis.value()[0] * static_cast<double>(n);
      }
      const double cnt = static_cast<double>(samples.size());
      EmbedEpochLog entry{++epochs_done_, sum_em / cnt, sum_rec / cnt, sum_dis / cnt};
      log_.push_back(entry);
      if (on_epoch) on_epoch(entry);
    }
  }

 private:
  // Start each sigmoid head at the logit of its mean target.
  void init_output_biases(const std::vector<EmbedSample>& samples) {
    double img = 0, fld = 0, n = 0;
    for (const auto& s : samples) {
      for (double v : s.image.values) img += v;
      for (double v : s.field.values) fld += v;
      n += static_cast<double>(s.image.values.size());
    }
    auto logit = [](double p) { return static_cast<float>(std::log(p / (1.0 - p))); };
    net_.params().get("rec/up0/b").value.fill(logit(std::clamp(img / n, 1e-4, 1 - 1e-4)));
    net_.params().get("dis/up0/b").value.fill(logit(std::clamp(fld / n, 1e-4, 1 - 1e-4)));
  }

  EmbedNet<float> net_;
  ad::Adam<float> opt_;
  int epochs_done_ = 0;
  std::vector<EmbedEpochLog> log_;
};

inline EmbedNet<float> train_embedding(const std::vector<EmbedSample>& samples, const EmbedConfig& cfg,
                                       std::vector<EmbedEpochLog>* log = nullptr) {
  EmbedTrainer tr(cfg);
  tr.train(samples);
  if (log) *log = tr.log();
  return std::move(tr.net());
}

// ---------------------------------------------------------------------------
// Evaluation

template <typename T>
std::vector<ad::Tensor<T>> reconstruct(const EmbedNet<T>& net, std::span<const EmbedSample> samples, DecoderHead head,
                                       std::size_t chunk = 64) {
  std::vector<ad::Tensor<T>> out;
  const std::size_t r = static_cast<std::size_t>(net.config().resolution);
  for (std::size_t b = 0; b < samples.size(); b += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - b);
    std::vector<const ImageGrid*> imgs(n);
    for (std::size_t i = 0; i < n; ++i) imgs[i] = &samples[b + i].image;
    ad::Tape<T> t(false);
    const auto& y = net.decode(t, net.encode(t, t.constant(net.batch_input(imgs))), head).value();
    for (std::size_t i = 0; i < n; ++i)
      out.emplace_back(ad::Shape{r, r}, std::vector<T>(y.data() + i * r * r, y.data() + (i + 1) * r * r));
  }
  return out;
}

// Mean over samples of the per-image reconstruction MSE.
template <typename T>
double reconstruction_mse(const EmbedNet<T>& net, std::span<const EmbedSample> samples) {
  if (samples.empty()) throw DataError("reconstruction_mse: no samples");
  const auto rec = reconstruct(net, samples, DecoderHead::kReconstruction);
  double total = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    double s = 0;
    for (std::size_t k = 0; k < rec[i].size(); ++k) {
      const double d = rec[i][k] - samples[i].image.values[k];
      s += d * d;
    }
    total += s / static_cast<double>(rec[i].size());
  }
  return total / static_cast<double>(samples.size());
}

// Fraction of stroke pixels whose reconstruction exceeds `threshold`.
template <typename T>
double stroke_pixel_recall(const EmbedNet<T>& net, std::span<const EmbedSample> samples, double threshold = 0.5) {
  const auto rec = reconstruct(net, samples, DecoderHead::kReconstruction);
  std::size_t on = 0, hit = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    for (std::size_t k = 0; k < rec[i].size(); ++k)
      if (samples[i].image.values[k] > 0.5) {
        ++on;
        hit += rec[i][k] > threshold;
      }
  return on == 0 ? 0.0 : static_cast<double>(hit) / static_cast<double>(on);
}

// encode(build_input(compose_group_image(sketch, ids))). An empty id set
// embeds the blank image.
template <typename T>
std::vector<T> embed_group(const Sketch& sketch, std::span<const int> member_ids, const EmbedNet<T>& net) {
  return net.embed_one(compose_group_image(sketch, member_ids, net.config().resolution));
}

}  // namespace cseg
