// cseg: command-line front end for corpus handling, training, evaluation,
// augmentation, invariance tests and rendering.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <omp.h>

#include "CLI11.hpp"

#include "contextseg/augment.hpp"
#include "contextseg/bundle.hpp"
#include "contextseg/config_io.hpp"
#include "contextseg/embednet.hpp"
#include "contextseg/metrics.hpp"
#include "contextseg/raster.hpp"
#include "contextseg/render.hpp"
#include "contextseg/segformer.hpp"
#include "contextseg/synth.hpp"

namespace {

using namespace cseg;

// Top-level config sections; each is validated strictly when present.
struct RunConfig {
  SynthConfig synth;
  EmbedConfig embed;
  SegConfig seg;
  AugmentConfig augment;
  std::optional<json> paste;
  int threads = 0;
};

RunConfig load_run_config(const std::string& path) {
  RunConfig rc;
  if (path.empty()) return rc;
  json j;
  try {
    j = read_json_file(path);
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
  JsonFields top(j, "config");
  top.read("threads", rc.threads).allow("synth").allow("embed").allow("seg").allow("augment").allow("paste").finish();
  if (j.contains("synth")) read_config(j["synth"], rc.synth);
  if (j.contains("embed")) read_config(j["embed"], rc.embed);
  if (j.contains("seg")) read_config(j["seg"], rc.seg);
  if (j.contains("augment")) read_config(j["augment"], rc.augment);
  if (j.contains("paste")) {
    read_paste_rules(j["paste"]);
    rc.paste = j["paste"];
  }
  return rc;
}

Corpus read_corpus(const std::string& path, CorpusFormat format = CorpusFormat::kNativeNdjson) {
  if (!std::filesystem::exists(path)) throw DataError("corpus '" + path + "' not found");
  try {
    return parse_corpus(ad::read_file(path), format);
  } catch (const DataError& e) {
    throw DataError(path + ": " + e.what());
  }
}

void write_corpus(const std::string& path, const Corpus& c) { write_text_file(path, serialize_corpus(c)); }

void require_labeled(const Corpus& c, const std::string& what) {
  for (std::size_t i = 0; i < c.size(); ++i)
    if (!c.sketches[i].is_labeled()) throw DataError(what + ": sketch " + std::to_string(i) + " is unlabeled");
}

// The corpus vocabulary must list the same part names as the model.
void check_vocab(const PartVocabulary& model, const PartVocabulary& corpus) {
  if (model.names == corpus.names) return;
  std::string m, c;
  for (const auto& n : model.names) m += (m.empty() ? "" : ",") + n;
  for (const auto& n : corpus.names) c += (c.empty() ? "" : ",") + n;
  throw DataError("vocabulary mismatch: model has [" + m + "], corpus has [" + c + "]");
}

Labeler model_labeler(const SegBundle& b) {
  return [&b](const Sketch& s) { return infer(s, b.embed, b.model, b.vocab).labels; };
}

template <typename T>
void override(const CLI::Option* opt, T& target, const T& value) {
  if (opt->count() > 0) target = value;
}

void info(const std::string& msg) { std::fprintf(stderr, "%s\n", msg.c_str()); }

// Thrown from an epoch callback to end a run early; the checkpoint written
// just before stays resumable.
struct StopTraining {};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stroke-level sketch segmentation toolkit"};
  app.require_subcommand(1);
  std::string config_path;
  int threads = 0;
  auto* threads_opt = app.add_option("--threads", threads, "Worker thread cap (also CSEG_THREADS)")->check(CLI::NonNegativeNumber);
  app.add_option("--config", config_path, "JSON run configuration");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic labeled corpus");
  std::string synth_template, synth_out;
  int synth_count = 0, synth_res = 0;
  std::uint64_t synth_seed = 0;
  std::vector<std::string> synth_presence;
  auto* o_tmpl = synth->add_option("--template", synth_template, "face or rocket");
  auto* o_count = synth->add_option("--count", synth_count, "Number of sketches");
  auto* o_sres = synth->add_option("--resolution", synth_res, "Canvas size");
  auto* o_sseed = synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--presence", synth_presence, "part=probability (repeatable)");
  synth->add_option("--out", synth_out, "Output NDJSON (default stdout)");

  // convert
  auto* convert = app.add_subcommand("convert", "Parse and normalize a corpus into the native format");
  std::string conv_in, conv_out, conv_format = "native";
  int conv_res = 64;
  convert->add_option("--in", conv_in, "Input NDJSON")->required();
  convert->add_option("--out", conv_out, "Output NDJSON")->required();
  convert->add_option("--format", conv_format, "native or quickdraw");
  convert->add_option("--resolution", conv_res, "Target canvas size")->check(CLI::PositiveNumber);

  // rasterize
  auto* rasterize_cmd = app.add_subcommand("rasterize", "Write a sketch image (and optionally its distance field) as PGM");
  std::string ras_in, ras_out;
  std::size_t ras_index = 0;
  bool ras_df = false;
  rasterize_cmd->add_option("--in", ras_in, "Corpus NDJSON")->required();
  rasterize_cmd->add_option("--index", ras_index, "Sketch index");
  rasterize_cmd->add_option("--out", ras_out, "Output prefix (writes <prefix>.pgm)")->required();
  rasterize_cmd->add_flag("--df", ras_df, "Also write <prefix>_df.pgm");

  // train-embed
  auto* train_embed = app.add_subcommand("train-embed", "Train the stroke embedding network");
  std::string te_corpus, te_out, te_log;
  int te_epochs = 0;
  std::uint64_t te_seed = 0;
  double te_gamma = 0;
  bool te_no_cc = false, te_no_df = false, te_resume = false;
  train_embed->add_option("--corpus", te_corpus, "Training corpus")->required();
  train_embed->add_option("--out", te_out, "Checkpoint path")->required();
  train_embed->add_option("--log", te_log, "CSV training log");
  auto* o_teep = train_embed->add_option("--epochs", te_epochs, "Epochs")->check(CLI::PositiveNumber);
  auto* o_tesd = train_embed->add_option("--seed", te_seed, "Random seed");
  auto* o_tegm = train_embed->add_option("--gamma", te_gamma, "Distance-field loss weight");
  train_embed->add_flag("--no-coordconv", te_no_cc, "Disable coordinate channels");
  train_embed->add_flag("--no-df", te_no_df, "Disable the distance-field head");
  train_embed->add_flag("--resume", te_resume, "Continue from the checkpoint at --out");
  int te_stop = 0;
  train_embed->add_option("--stop-after", te_stop, "End this invocation after N epochs")->check(CLI::PositiveNumber);

  // train-seg
  auto* train_seg = app.add_subcommand("train-seg", "Train the segmentation transformer");
  std::string ts_corpus, ts_embed, ts_out, ts_log, ts_order;
  int ts_epochs = 0;
  std::uint64_t ts_seed = 0;
  bool ts_resume = false;
  train_seg->add_option("--corpus", ts_corpus, "Labeled training corpus")->required();
  train_seg->add_option("--embed", ts_embed, "Embedding checkpoint");
  train_seg->add_option("--out", ts_out, "Checkpoint path")->required();
  train_seg->add_option("--log", ts_log, "CSV training log");
  auto* o_tsep = train_seg->add_option("--epochs", ts_epochs, "Epochs")->check(CLI::PositiveNumber);
  auto* o_tssd = train_seg->add_option("--seed", ts_seed, "Random seed");
  auto* o_tsor = train_seg->add_option("--order", ts_order, "Group order: freq-desc, freq-asc or random");
  train_seg->add_flag("--resume", ts_resume, "Continue from the checkpoint at --out");
  int ts_stop = 0;
  train_seg->add_option("--stop-after", ts_stop, "End this invocation after N epochs")->check(CLI::PositiveNumber);

  // eval
  auto* eval = app.add_subcommand("eval", "Score a model or a prediction file against a labeled corpus");
  std::string ev_model, ev_pred, ev_corpus, ev_out;
  eval->add_option("--corpus", ev_corpus, "Ground-truth corpus")->required();
  auto* o_evm = eval->add_option("--model", ev_model, "Segmenter checkpoint");
  auto* o_evp = eval->add_option("--predictions", ev_pred, "Corpus holding predicted labels");
  eval->add_option("--out", ev_out, "Output prefix (writes <prefix>.json and <prefix>.csv)")->required();
  o_evm->excludes(o_evp);

  // augment
  auto* augment = app.add_subcommand("augment", "Augment a labeled corpus");
  std::string au_in, au_out, au_mode = "stroke", au_log, au_rare, au_anchor;
  std::uint64_t au_seed = 1;
  double au_target = 0.5;
  augment->add_option("--in", au_in, "Input corpus")->required();
  augment->add_option("--out", au_out, "Output corpus")->required();
  augment->add_option("--mode", au_mode, "stroke, sketch or paste")->check(CLI::IsMember({"stroke", "sketch", "paste"}));
  auto* o_ausd = augment->add_option("--seed", au_seed, "Random seed");
  auto* o_aur = augment->add_option("--rare", au_rare, "Rare part(s), comma separated (paste mode)");
  auto* o_aua = augment->add_option("--anchor", au_anchor, "Anchor part (paste mode)");
  auto* o_aut = augment->add_option("--target", au_target, "Target occurrence (paste mode)");
  augment->add_option("--log", au_log, "Paste log JSON (paste mode)");

  // invariance
  auto* invariance = app.add_subcommand("invariance", "Rotation or offset robustness of a model");
  std::string iv_model, iv_corpus, iv_out, iv_mode = "rotation", iv_dist = "gaussian";
  std::uint64_t iv_seed = 1;
  invariance->add_option("--model", iv_model, "Segmenter checkpoint")->required();
  invariance->add_option("--corpus", iv_corpus, "Labeled corpus")->required();
  invariance->add_option("--mode", iv_mode, "rotation or offset")->check(CLI::IsMember({"rotation", "offset"}));
  invariance->add_option("--offset-dist", iv_dist, "gaussian or uniform")->check(CLI::IsMember({"gaussian", "uniform"}));
  invariance->add_option("--seed", iv_seed, "Random seed for offsets");
  invariance->add_option("--out", iv_out, "Output prefix (writes <prefix>.json and <prefix>.csv)")->required();

  // render
  auto* render = app.add_subcommand("render", "Render a labeled sketch to PPM with one color per part");
  std::string rd_in, rd_model, rd_out;
  std::size_t rd_index = 0;
  int rd_scale = 4, rd_thick = 2;
  render->add_option("--in", rd_in, "Corpus NDJSON")->required();
  render->add_option("--index", rd_index, "Sketch index");
  render->add_option("--model", rd_model, "Segmenter checkpoint (labels come from the model)");
  render->add_option("--out", rd_out, "Output PPM")->required();
  render->add_option("--scale", rd_scale, "Upsampling factor")->check(CLI::PositiveNumber);
  render->add_option("--thickness", rd_thick, "Stroke thickness")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    RunConfig rc = load_run_config(config_path);
    if (const char* env = std::getenv("CSEG_THREADS"); env && threads_opt->count() == 0) {
      try {
        threads = std::stoi(env);
      } catch (const std::exception&) {
        throw ConfigError(std::string("CSEG_THREADS is not an integer: ") + env);
      }
      if (threads < 0) throw ConfigError("CSEG_THREADS must be >= 0");
    } else if (threads_opt->count() == 0) {
      threads = rc.threads;
    }
    if (threads > 0) omp_set_num_threads(threads);

    if (synth->parsed()) {
      auto cfg = rc.synth;
      override(o_tmpl, cfg.template_name, synth_template);
      override(o_count, cfg.count, synth_count);
      override(o_sres, cfg.resolution, synth_res);
      override(o_sseed, cfg.seed, synth_seed);
      for (const auto& kv : synth_presence) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw ConfigError("--presence expects part=probability, got '" + kv + "'");
        try {
          cfg.presence[kv.substr(0, eq)] = std::stod(kv.substr(eq + 1));
        } catch (const std::exception&) {
          throw ConfigError("--presence value is not a number in '" + kv + "'");
        }
      }
      cfg.validate();
      const auto text = serialize_corpus(synth_corpus(cfg));
      if (synth_out.empty())
        std::cout << text;
      else
        write_text_file(synth_out, text);
      return 0;
    }

    if (convert->parsed()) {
      const auto format = [&] {
        try {
          return parse_format_name(conv_format);
        } catch (const Error& e) {
          throw ConfigError(e.what());
        }
      }();
      auto corpus = read_corpus(conv_in, format);
      for (std::size_t i = 0; i < corpus.size(); ++i) {
        try {
          corpus.sketches[i].sketch = normalize_sketch(corpus.sketches[i].sketch, conv_res);
        } catch (const DataError& e) {
          throw DataError(conv_in + ": line " + std::to_string(i + 1) + ": " + e.what());
        }
      }
      write_corpus(conv_out, corpus);
      info("converted " + std::to_string(corpus.size()) + " sketches");
      return 0;
    }

    if (rasterize_cmd->parsed()) {
      const auto corpus = read_corpus(ras_in);
      if (ras_index >= corpus.size()) throw DataError("sketch index " + std::to_string(ras_index) + " out of range");
      const auto& sk = corpus.sketches[ras_index].sketch;
      write_pgm(ras_out + ".pgm", rasterize(sk));
      if (ras_df) write_field_pgm(ras_out + "_df.pgm", distance_field(sk.strokes, sk.resolution));
      return 0;
    }

    if (train_embed->parsed()) {
      auto cfg = rc.embed;
      override(o_teep, cfg.epochs, te_epochs);
      override(o_tesd, cfg.seed, te_seed);
      override(o_tegm, cfg.gamma, te_gamma);
      if (te_no_cc) cfg.coordconv = false;
      if (te_no_df) cfg.use_df = false;
      cfg.validate();
      const auto corpus = read_corpus(te_corpus);
      std::unique_ptr<EmbedTrainer> tr;
      if (te_resume && std::filesystem::exists(te_out))
        tr = load_embed_trainer(te_out, o_teep->count() ? te_epochs : 0);
      else
        tr = std::make_unique<EmbedTrainer>(cfg);
      const auto samples = build_embed_samples(corpus.sketches, tr->net().config());
      info("training embedding on " + std::to_string(samples.size()) + " samples");
      int ran = 0;
      try {
        tr->train(samples, [&](const EmbedEpochLog& e) {
          char buf[160];
          std::snprintf(buf, sizeof buf, "epoch %d L_em %.6f L_recon %.6f L_dis %.6f", e.epoch, e.l_em, e.l_recon, e.l_dis);
          info(buf);
          save_embed(te_out, *tr);
          if (te_stop > 0 && ++ran >= te_stop) throw StopTraining{};
        });
      } catch (const StopTraining&) {
        info("stopped after " + std::to_string(ran) + " epochs");
      }
      save_embed(te_out, *tr);
      if (!te_log.empty()) write_text_file(te_log, embed_log_csv(tr->log()));
      return 0;
    }

    if (train_seg->parsed()) {
      const bool resuming = ts_resume && std::filesystem::exists(ts_out);
      auto cfg = rc.seg;
      override(o_tsep, cfg.epochs, ts_epochs);
      override(o_tssd, cfg.seed, ts_seed);
      if (o_tsor->count()) {
        try {
          cfg.order_mode = parse_order_mode(ts_order);
        } catch (const Error& e) {
          throw ConfigError(e.what());
        }
      }
      cfg.validate();
      std::string embed_path = ts_embed;
      PartVocabulary vocab;
      Corpus corpus;
      if (resuming) {
        auto r = read_seg_resume(ts_out, o_tsep->count() ? ts_epochs : 0);
        cfg = r.config;
        vocab = r.vocab;
        if (embed_path.empty()) embed_path = r.embed_path;
      }
      if (embed_path.empty()) throw ConfigError("embedding checkpoint required (--embed)");
      if (!std::filesystem::exists(embed_path)) throw DataError("embedding checkpoint required: '" + embed_path + "' not found");
      corpus = read_corpus(ts_corpus);
      require_labeled(corpus, ts_corpus);
      if (resuming)
        check_vocab(vocab, corpus.vocab);
      else
        vocab = part_decode_order(corpus.sketches, corpus.vocab, cfg.order_mode, cfg.order_seed);
      const auto net = load_embed_net(embed_path);
      if (net.config().embed_dim != cfg.model_dim) {
        info("setting segmenter model_dim to the embedding dim " + std::to_string(net.config().embed_dim));
        cfg.model_dim = net.config().embed_dim;
        cfg.validate();
      }
      SegTrainer tr(cfg, net, vocab);
      if (resuming) load_seg_state(ts_out, tr);
      int ran = 0;
      try {
        tr.train(corpus.sketches, [&](const SegEpochLog& e) {
          char buf[200];
          std::snprintf(buf, sizeof buf, "epoch %d L_focal %.6f tf %.3f gt %.3f train_sacc %.4f", e.epoch, e.loss,
                        e.schedule, e.gt_context, e.train_sacc);
          info(buf);
          save_seg(ts_out, tr, embed_path);
          if (ts_stop > 0 && ++ran >= ts_stop) throw StopTraining{};
        });
      } catch (const StopTraining&) {
        info("stopped after " + std::to_string(ran) + " epochs");
      }
      save_seg(ts_out, tr, embed_path);
      if (!ts_log.empty()) write_text_file(ts_log, seg_log_csv(tr.log()));
      return 0;
    }

    if (eval->parsed()) {
      if (ev_model.empty() && ev_pred.empty()) throw ConfigError("eval needs --model or --predictions");
      const auto corpus = read_corpus(ev_corpus);
      require_labeled(corpus, ev_corpus);
      EvalReport report;
      PartVocabulary vocab = corpus.vocab;
      if (!ev_model.empty()) {
        const auto b = load_seg_bundle(ev_model);
        check_vocab(b.vocab, corpus.vocab);
        vocab = b.vocab;
        report = evaluate_labeler(model_labeler(b), corpus.sketches, vocab.size());
      } else {
        const auto pred = read_corpus(ev_pred);
        check_vocab(corpus.vocab, pred.vocab);
        if (pred.size() != corpus.size()) throw DataError("prediction file has a different number of sketches");
        require_labeled(pred, ev_pred);
        std::vector<LabelMatrix> g, p;
        for (std::size_t i = 0; i < corpus.size(); ++i) {
          if (pred.sketches[i].labels.size() != corpus.sketches[i].labels.size())
            throw DataError("prediction " + std::to_string(i) + " has a different stroke count");
          g.push_back(LabelMatrix::from_labels(std::span<const int>(corpus.sketches[i].labels), vocab.size()));
          p.push_back(LabelMatrix::from_labels(std::span<const int>(pred.sketches[i].labels), vocab.size()));
        }
        report = evaluate(g, p);
      }
      write_text_file(ev_out + ".json", report_json(report, &vocab).dump(2) + "\n");
      write_text_file(ev_out + ".csv", report_csv(report, &vocab));
      char buf[128];
      std::snprintf(buf, sizeof buf, "SAcc %.4f GAcc %.4f CAcc %.4f", report.sacc, report.gacc, report.cacc);
      std::cout << buf << "\n";
      return 0;
    }

    if (augment->parsed()) {
      if (au_mode != "paste" && (o_aur->count() || o_aua->count() || o_aut->count()))
        throw ConfigError("--rare/--anchor/--target apply to --mode paste only");
      std::vector<SemanticPasteRule> rules;
      if (au_mode == "paste") {
        json pj = rc.paste.value_or(json::object());
        if (o_aur->count()) pj["rare"] = au_rare;
        if (o_aua->count()) pj["anchor"] = au_anchor;
        if (o_aut->count()) pj["target_occurrence"] = au_target;
        rules = read_paste_rules(pj);
      }
      auto cfg = rc.augment;
      override(o_ausd, cfg.seed, au_seed);
      cfg.validate();
      auto corpus = read_corpus(au_in);
      if (au_mode == "paste") {
        require_labeled(corpus, au_in);
        json log = json::array();
        for (std::size_t r = 0; r < rules.size(); ++r) {
          auto res = semantic_copy_paste(corpus, rules[r], cfg.seed + r);
          const auto idx = *corpus.vocab.index_of(rules[r].rare);
          json entry{{"rare", rules[r].rare},
                     {"anchor", rules[r].anchor},
                     {"occurrence_before", res.before.sketch_occurrence[idx]},
                     {"occurrence_after", res.after.sketch_occurrence[idx]},
                     {"pastes", res.pastes.size()},
                     {"messages", res.log}};
          info(rules[r].rare + ": occurrence " + std::to_string(res.before.sketch_occurrence[idx]) + " -> " +
               std::to_string(res.after.sketch_occurrence[idx]));
          log.push_back(entry);
          corpus = std::move(res.corpus);
        }
        if (!au_log.empty()) write_text_file(au_log, log.dump(2) + "\n");
      } else {
        std::mt19937_64 rng(cfg.seed);
        for (auto& ls : corpus.sketches)
          ls = au_mode == "stroke" ? augment_stroke_level(ls, cfg, rng) : augment_sketch_level(ls, cfg, rng);
      }
      write_corpus(au_out, corpus);
      return 0;
    }

    if (invariance->parsed()) {
      const auto b = load_seg_bundle(iv_model);
      const auto corpus = read_corpus(iv_corpus);
      require_labeled(corpus, iv_corpus);
      check_vocab(b.vocab, corpus.vocab);
      const auto labeler = model_labeler(b);
      const auto report =
          iv_mode == "rotation"
              ? rotation_invariance_test(labeler, corpus.sketches, b.vocab.size())
              : offset_invariance_test(labeler, corpus.sketches, b.vocab.size(), iv_seed, default_offset_sigmas(),
                                       iv_dist == "uniform" ? OffsetMode::kUniform : OffsetMode::kGaussian);
      write_text_file(iv_out + ".json", invariance_json(report).dump(2) + "\n");
      write_text_file(iv_out + ".csv", invariance_csv(report));
      std::cout << invariance_csv(report);
      return 0;
    }

    if (render->parsed()) {
      const auto corpus = read_corpus(rd_in);
      if (rd_index >= corpus.size()) throw DataError("sketch index " + std::to_string(rd_index) + " out of range");
      const auto& ls = corpus.sketches[rd_index];
      std::vector<int> labels = ls.labels;
      PartVocabulary vocab = corpus.vocab;
      if (!rd_model.empty()) {
        const auto b = load_seg_bundle(rd_model);
        check_vocab(b.vocab, corpus.vocab);
        vocab = b.vocab;
        labels.clear();
        for (auto l : infer(ls.sketch, b.embed, b.model, b.vocab).labels) labels.push_back(static_cast<int>(l));
      }
      write_ppm(rd_out, render_labeled(ls.sketch, labels, make_palette(vocab), rd_scale, rd_thick));
      return 0;
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 1;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 3;
  }
  return 0;
}
