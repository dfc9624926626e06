#pragma once

// On-disk model bundles. A checkpoint file holds tensors (parameters,
// optimizer state, input normalization); a JSON sidecar at `<path>.json`
// holds configuration, vocabulary, progress and the training log.

#include <filesystem>
#include <fstream>
#include <memory>
#include <string>

#include <nlohmann/json.hpp>

#include "contextseg/ad/checkpoint.hpp"
#include "contextseg/config_io.hpp"
#include "contextseg/embednet.hpp"
#include "contextseg/segformer.hpp"

namespace cseg {

inline std::string sidecar_path(const std::string& ckpt) { return ckpt + ".json"; }

inline json read_json_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw DataError("cannot open '" + path + "'");
  try {
    return json::parse(f);
  } catch (const json::exception& e) {
    throw DataError("'" + path + "' is not valid JSON: " + e.what());
  }
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot open '" + path + "' for writing");
  f << text;
  if (!f) throw Error("write failed for '" + path + "'");
}

namespace detail {

inline json read_sidecar(const std::string& ckpt, const char* kind) {
  if (!std::filesystem::exists(ckpt)) throw DataError("checkpoint '" + ckpt + "' not found");
  json meta = read_json_file(sidecar_path(ckpt));
  if (meta.value("kind", "") != kind) throw DataError("'" + ckpt + "' is not a " + kind + " checkpoint");
  return meta;
}

inline ad::CheckpointView read_tensors(const std::string& ckpt) {
  try {
    return ad::CheckpointView(ad::decode_checkpoint(ad::read_file(ckpt)));
  } catch (const DataError&) {
    throw;
  } catch (const Error& e) {
    throw DataError(e.what());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Embedding network

inline void save_embed(const std::string& path, EmbedTrainer& tr) {
  ad::NamedTensors tensors;
  ad::append_params(tensors, tr.net().params(), "net/");
  ad::append_tensors(tensors, tr.optimizer().export_state("opt/"));
  ad::write_file(path, ad::encode_checkpoint(tensors));
  json meta{{"kind", "embed"},
            {"config", to_json(tr.net().config())},
            {"epochs_done", tr.epochs_done()},
            {"log", to_json(tr.log())}};
  write_text_file(sidecar_path(path), meta.dump(2) + "\n");
}

inline EmbedConfig load_embed_config(const std::string& path) {
  EmbedConfig cfg;
  read_config(detail::read_sidecar(path, "embed").at("config"), cfg);
  return cfg;
}

// Restores a trainer for resuming; `epochs` > 0 replaces the stored target.
inline std::unique_ptr<EmbedTrainer> load_embed_trainer(const std::string& path, int epochs = 0) {
  const json meta = detail::read_sidecar(path, "embed");
  EmbedConfig cfg;
  read_config(meta.at("config"), cfg);
  if (epochs > 0) cfg.epochs = epochs;
  auto tr = std::make_unique<EmbedTrainer>(cfg);
  const auto view = detail::read_tensors(path);
  view.load_params(tr->net().params(), "net/");
  tr->optimizer().import_state(view.lookup<float>(), "opt/");
  tr->set_epochs_done(meta.at("epochs_done").get<int>());
  tr->set_log(embed_log_from_json(meta.at("log")));
  return tr;
}

inline EmbedNet<float> load_embed_net(const std::string& path) {
  EmbedNet<float> net(load_embed_config(path));
  detail::read_tensors(path).load_params(net.params(), "net/");
  return net;
}

// ---------------------------------------------------------------------------
// Segmentation model

inline json vocab_to_json(const PartVocabulary& v) { return {{"names", v.names}, {"order", v.order}}; }

inline PartVocabulary vocab_from_json(const json& j) {
  PartVocabulary v;
  v.names = j.at("names").get<std::vector<std::string>>();
  v.order = j.at("order").get<std::vector<std::size_t>>();
  v.validate();
  return v;
}

inline void save_seg(const std::string& path, SegTrainer& tr, const std::string& embed_path) {
  auto& model = tr.model();
  ad::NamedTensors tensors;
  ad::append_params(tensors, model.params(), "seg/");
  const std::size_t d = model.config().model_dim;
  ad::Tensor<float> mean({d}), inv({d});
  for (std::size_t k = 0; k < d; ++k) {
    mean[k] = model.input_mean()[k];
    inv[k] = model.input_inv_std()[k];
  }
  tensors.emplace_back("norm/mean", mean);
  tensors.emplace_back("norm/inv_std", inv);
  ad::append_tensors(tensors, tr.optimizer().export_state("opt/"));
  ad::write_file(path, ad::encode_checkpoint(tensors));
  json meta{{"kind", "seg"},
            {"config", to_json(model.config())},
            {"vocab", vocab_to_json(tr.vocab())},
            {"embed_checkpoint", embed_path},
            {"epochs_done", tr.epochs_done()},
            {"log", to_json(tr.log())}};
  write_text_file(sidecar_path(path), meta.dump(2) + "\n");
}

namespace detail {

inline void load_normalization(const ad::CheckpointView& view, SegFormer<float>& model) {
  const auto* mean = view.find("norm/mean");
  const auto* inv = view.find("norm/inv_std");
  if (!mean || !inv) throw DataError("segmenter checkpoint lacks input normalization");
  model.set_input_normalization(mean->to_vector(), inv->to_vector());
}

// A relative embedding path is tried against the working directory, then
// against the directory holding the segmenter checkpoint.
inline std::string resolve_embed_path(const std::string& seg_path, const std::string& embed_path) {
  namespace fs = std::filesystem;
  if (fs::path(embed_path).is_absolute() || fs::exists(embed_path)) return embed_path;
  const auto alt = fs::path(seg_path).parent_path() / embed_path;
  return fs::exists(alt) ? alt.string() : embed_path;
}

}  // namespace detail

struct SegBundle {
  std::string embed_path;
  EmbedNet<float> embed;
  SegFormer<float> model;
  PartVocabulary vocab;
};

inline SegBundle load_seg_bundle(const std::string& path) {
  const json meta = detail::read_sidecar(path, "seg");
  SegConfig cfg;
  read_config(meta.at("config"), cfg);
  const auto vocab = vocab_from_json(meta.at("vocab"));
  const auto epath = detail::resolve_embed_path(path, meta.at("embed_checkpoint").get<std::string>());
  SegBundle b{epath, load_embed_net(epath), SegFormer<float>(cfg, vocab.size()), vocab};
  const auto view = detail::read_tensors(path);
  view.load_params(b.model.params(), "seg/");
  detail::load_normalization(view, b.model);
  return b;
}

// Restores training state into a trainer built from the stored config and
// vocabulary; `epochs` > 0 replaces the stored target.
struct SegResume {
  SegConfig config;
  PartVocabulary vocab;
  std::string embed_path;
};

inline SegResume read_seg_resume(const std::string& path, int epochs = 0) {
  const json meta = detail::read_sidecar(path, "seg");
  SegResume r;
  read_config(meta.at("config"), r.config);
  if (epochs > 0) r.config.epochs = epochs;
  r.vocab = vocab_from_json(meta.at("vocab"));
  r.embed_path = detail::resolve_embed_path(path, meta.at("embed_checkpoint").get<std::string>());
  return r;
}

inline void load_seg_state(const std::string& path, SegTrainer& tr) {
  const json meta = detail::read_sidecar(path, "seg");
  const auto view = detail::read_tensors(path);
  view.load_params(tr.model().params(), "seg/");
  detail::load_normalization(view, tr.model());
  tr.optimizer().import_state(view.lookup<float>(), "opt/");
  tr.resume(meta.at("epochs_done").get<int>(), seg_log_from_json(meta.at("log")));
}

}  // namespace cseg
