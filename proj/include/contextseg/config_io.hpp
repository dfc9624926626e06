#pragma once

// JSON (de)serialization of the run configurations. Readers reject unknown
// keys and wrongly typed values with ConfigError.

#include <cstdint>
#include <set>
#include <string>
#include <type_traits>
#include <vector>

#include <nlohmann/json.hpp>

#include "contextseg/augment.hpp"
#include "contextseg/embednet.hpp"
#include "contextseg/error.hpp"
#include "contextseg/segformer.hpp"
#include "contextseg/synth.hpp"

namespace cseg {

using nlohmann::json;

class JsonFields {
 public:
  JsonFields(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError("config section '" + section_ + "' must be an object");
  }

  template <typename T>
  JsonFields& read(const std::string& key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    const json& v = *it;
    bool ok;
    if constexpr (std::is_same_v<T, bool>) {
      ok = v.is_boolean();
    } else if constexpr (std::is_integral_v<T> && std::is_unsigned_v<T>) {
      ok = v.is_number_unsigned();
    } else if constexpr (std::is_integral_v<T>) {
      ok = v.is_number_integer();
    } else if constexpr (std::is_floating_point_v<T>) {
      ok = v.is_number();
    } else if constexpr (std::is_same_v<T, std::string>) {
      ok = v.is_string();
    } else {
      ok = v.is_array() && std::all_of(v.begin(), v.end(), [](const json& e) { return e.is_number_unsigned(); });
    }
    if (!ok) throw ConfigError("config key '" + section_ + "." + key + "' has the wrong type");
    out = v.get<T>();
    return *this;
  }

  JsonFields& read(const std::string& key, OrderMode& out) {
    std::string name = order_mode_name(out);
    read(key, name);
    try {
      out = parse_order_mode(name);
    } catch (const Error& e) {
      throw ConfigError(e.what());
    }
    return *this;
  }

  // Marks a key as known without reading it.
  JsonFields& allow(const std::string& key) {
    used_.insert(key);
    return *this;
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("unknown config key '" + section_ + "." + it.key() + "'");
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> used_;
};

inline void read_config(const json& j, EmbedConfig& c) {
  JsonFields f(j, "embed");
  f.read("resolution", c.resolution)
      .read("widths", c.widths)
      .read("embed_dim", c.embed_dim)
      .read("gamma", c.gamma)
      .read("coordconv", c.coordconv)
      .read("use_df", c.use_df)
      .read("field_k", c.field_k)
      .read("epochs", c.epochs)
      .read("batch_size", c.batch_size)
      .read("lr", c.lr)
      .read("seed", c.seed)
      .finish();
}

inline json to_json(const EmbedConfig& c) {
  return {{"resolution", c.resolution}, {"widths", c.widths},         {"embed_dim", c.embed_dim},
          {"gamma", c.gamma},           {"coordconv", c.coordconv},   {"use_df", c.use_df},
          {"field_k", c.field_k},       {"epochs", c.epochs},         {"batch_size", c.batch_size},
          {"lr", c.lr},                 {"seed", c.seed}};
}

inline void read_config(const json& j, SegConfig& c) {
  JsonFields f(j, "seg");
  f.read("layers", c.layers)
      .read("heads", c.heads)
      .read("dropout", c.dropout)
      .read("model_dim", c.model_dim)
      .read("ffn_mult", c.ffn_mult)
      .read("focal_gamma", c.focal_gamma)
      .read("threshold", c.threshold)
      .read("order_mode", c.order_mode)
      .read("order_seed", c.order_seed)
      .read("tf_start", c.tf_start)
      .read("tf_end", c.tf_end)
      .read("epochs", c.epochs)
      .read("batch_size", c.batch_size)
      .read("lr", c.lr)
      .read("seed", c.seed)
      .finish();
}

inline json to_json(const SegConfig& c) {
  return {{"layers", c.layers},
          {"heads", c.heads},
          {"dropout", c.dropout},
          {"model_dim", c.model_dim},
          {"ffn_mult", c.ffn_mult},
          {"focal_gamma", c.focal_gamma},
          {"threshold", c.threshold},
          {"order_mode", order_mode_name(c.order_mode)},
          {"order_seed", c.order_seed},
          {"tf_start", c.tf_start},
          {"tf_end", c.tf_end},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"seed", c.seed}};
}

inline void read_config(const json& j, SynthConfig& c) {
  JsonFields f(j, "synth");
  f.read("template", c.template_name)
      .read("count", c.count)
      .read("resolution", c.resolution)
      .read("position_jitter", c.position_jitter)
      .read("size_jitter", c.size_jitter)
      .read("point_noise", c.point_noise)
      .read("seed", c.seed)
      .allow("presence")
      .finish();
  if (auto it = j.find("presence"); it != j.end()) {
    if (!it->is_object()) throw ConfigError("config key 'synth.presence' must be an object");
    for (auto p = it->begin(); p != it->end(); ++p) {
      if (!p->is_number()) throw ConfigError("presence of '" + p.key() + "' must be a number");
      c.presence[p.key()] = p->get<double>();
    }
  }
}

inline void read_config(const json& j, AugmentConfig& c) {
  JsonFields f(j, "augment");
  f.read("stroke_rotation_deg", c.stroke_rotation_deg)
      .read("stroke_scale_lo", c.stroke_scale_lo)
      .read("stroke_scale_hi", c.stroke_scale_hi)
      .read("stroke_perturb_px", c.stroke_perturb_px)
      .read("stroke_fraction", c.stroke_fraction)
      .read("sketch_rotation_deg", c.sketch_rotation_deg)
      .read("sketch_scale_lo", c.sketch_scale_lo)
      .read("sketch_scale_hi", c.sketch_scale_hi)
      .read("drop_probability", c.drop_probability)
      .read("seed", c.seed)
      .finish();
}

// `rare` may list several parts separated by commas; one rule per part.
inline std::vector<SemanticPasteRule> read_paste_rules(const json& j) {
  SemanticPasteRule base;
  std::string rare;
  JsonFields f(j, "paste");
  f.read("rare", rare)
      .read("anchor", base.anchor)
      .read("inner_fraction", base.inner_fraction)
      .read("scale_lo", base.scale_lo)
      .read("scale_hi", base.scale_hi)
      .read("rotation_jitter_deg", base.rotation_jitter_deg)
      .read("offset_jitter_px", base.offset_jitter_px)
      .read("target_occurrence", base.target_occurrence)
      .finish();
  std::vector<SemanticPasteRule> rules;
  std::size_t pos = 0;
  while (pos <= rare.size()) {
    const auto comma = rare.find(',', pos);
    std::string name = rare.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
    if (!name.empty()) {
      auto r = base;
      r.rare = name;
      r.validate();
      rules.push_back(r);
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (rules.empty()) throw ConfigError("paste rule needs at least one rare part");
  return rules;
}

inline json to_json(const std::vector<EmbedEpochLog>& log) {
  json a = json::array();
  for (const auto& e : log) a.push_back({e.epoch, e.l_em, e.l_recon, e.l_dis});
  return a;
}

inline json to_json(const std::vector<SegEpochLog>& log) {
  json a = json::array();
  for (const auto& e : log) a.push_back({e.epoch, e.loss, e.schedule, e.gt_context, e.train_sacc});
  return a;
}

inline std::vector<EmbedEpochLog> embed_log_from_json(const json& a) {
  std::vector<EmbedEpochLog> out;
  for (const auto& e : a) out.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>()});
  return out;
}

inline std::vector<SegEpochLog> seg_log_from_json(const json& a) {
  std::vector<SegEpochLog> out;
  for (const auto& e : a)
    out.push_back({e.at(0).get<int>(), e.at(1).get<double>(), e.at(2).get<double>(), e.at(3).get<double>(),
                   e.at(4).get<double>()});
  return out;
}

}  // namespace cseg
