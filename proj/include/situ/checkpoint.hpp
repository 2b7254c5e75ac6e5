#pragma once

// Binary (CBOR) checkpoints: model kind, configuration, lexicon hash, every
// parameter with its Adam moments, and model-specific extras.

#include <fstream>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "situ/crf.hpp"
#include "situ/data.hpp"
#include "situ/models.hpp"

namespace situ::checkpoint {

using numeric::ParameterStore;
using numeric::Tensor;

inline constexpr const char* kFormat = "situ-checkpoint";
inline constexpr int kVersion = 1;

template <class Real>
constexpr const char* precision_name() {
  return sizeof(Real) == sizeof(float) ? "float32" : "float64";
}

template <class Real>
json tensor_json(const Tensor<Real>& t) {
  return std::vector<double>(t.values().begin(), t.values().end());
}

template <class Real>
void tensor_from_json(Tensor<Real>& t, const json& j, const std::string& what) {
  auto xs = j.get<std::vector<double>>();
  if (xs.size() != t.size()) throw ValidationError("checkpoint: size mismatch for " + what);
  for (std::size_t i = 0; i < xs.size(); ++i) t[i] = Real(xs[i]);
}

template <class Real>
json parameters_json(const ParameterStore<Real>& store) {
  json out = json::array();
  for (const auto& p : store)
    out.push_back({{"name", p.name},
                   {"group", p.group},
                   {"shape", p.value.shape()},
                   {"value", tensor_json(p.value)},
                   {"m", tensor_json(p.m)},
                   {"v", tensor_json(p.v)}});
  return out;
}

/// The store must already hold the same parameters (by name and shape).
template <class Real>
void load_parameters(ParameterStore<Real>& store, const json& params) {
  if (params.size() != store.size()) throw ValidationError("checkpoint: parameter count mismatch");
  for (const auto& j : params) {
    auto name = j.at("name").get<std::string>();
    if (!store.contains(name)) throw ValidationError("checkpoint: unknown parameter '" + name + "'");
    auto& p = store.at(name);
    if (j.at("shape").get<numeric::Shape>() != p.value.shape())
      throw ValidationError("checkpoint: shape mismatch for '" + name + "'");
    tensor_from_json(p.value, j.at("value"), name);
    tensor_from_json(p.m, j.at("m"), name);
    tensor_from_json(p.v, j.at("v"), name);
  }
}

using ModelHandle = std::variant<std::unique_ptr<models::SituationModel<double>>, std::unique_ptr<crf::CrfModel<double>>,
                                 std::unique_ptr<crf::DiscreteClassifier<double>>>;

inline std::string kind_name(const ModelHandle& h) {
  if (auto m = std::get_if<0>(&h)) return models::to_string((*m)->config().kind);
  return h.index() == 1 ? "crf" : "discrete";
}

inline json frame_table_json(const Lexicon& lex, const crf::FrameTable& table) {
  json out = json::array();
  for (const auto& frames : table) {
    json per_verb = json::array();
    for (const auto& [sit, count] : frames) per_verb.push_back({{"roles", situation_to_json(lex, sit)}, {"count", count}});
    out.push_back(per_verb);
  }
  return out;
}

inline crf::FrameTable frame_table_from_json(const Lexicon& lex, const json& j) {
  if (j.size() != lex.verb_count()) throw ValidationError("checkpoint: frame table size mismatch");
  crf::FrameTable table(lex.verb_count());
  for (std::size_t v = 0; v < lex.verb_count(); ++v)
    for (const auto& f : j[v])
      table[v].push_back({situation_from_json(lex, v, f.at("roles"), false), f.at("count").get<std::size_t>()});
  return table;
}

inline json encode(const ModelHandle& h, std::size_t iteration) {
  json doc{{"format", kFormat}, {"version", kVersion}, {"model", kind_name(h)}, {"precision", precision_name<double>()},
           {"iteration", iteration}};
  std::visit(
      [&](const auto& m) {
        doc["lexicon_hash"] = data::hash_string(m->lexicon().hash());
        doc["adam_step"] = m->store().step;
        doc["params"] = parameters_json(m->store());
      },
      h);
  if (auto m = std::get_if<0>(&h)) doc["config"] = (*m)->config().to_json();
  if (auto m = std::get_if<1>(&h)) doc["config"] = {{"feature_dim", (*m)->feature_dim()}};
  if (auto m = std::get_if<2>(&h)) {
    doc["config"] = {{"feature_dim", (*m)->feature_dim()}};
    doc["extra"] = {{"frames", frame_table_json((*m)->lexicon(), (*m)->table())}};
  }
  return doc;
}

inline ModelHandle decode(const json& doc, std::shared_ptr<const Lexicon> lex) {
  try {
    if (doc.at("format") != kFormat || doc.at("version") != kVersion) throw ValidationError("checkpoint: unsupported format");
    if (doc.at("lexicon_hash").get<std::string>() != data::hash_string(lex->hash()))
      throw ValidationError("checkpoint was trained against a different lexicon");
    auto kind = doc.at("model").get<std::string>();
    const auto& cfg = doc.at("config");
    ModelHandle h;
    if (kind == "crf") {
      h = std::make_unique<crf::CrfModel<double>>(lex, cfg.at("feature_dim").get<std::size_t>(), 0);
    } else if (kind == "discrete") {
      h = std::make_unique<crf::DiscreteClassifier<double>>(lex, frame_table_from_json(*lex, doc.at("extra").at("frames")),
                                                             cfg.at("feature_dim").get<std::size_t>(), 0);
    } else {
      h = std::make_unique<models::SituationModel<double>>(models::ModelConfig::from_json(cfg), lex, 0);
    }
    std::visit(
        [&](auto& m) {
          load_parameters(m->store(), doc.at("params"));
          m->store().step = doc.at("adam_step").get<std::uint64_t>();
        },
        h);
    return h;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("checkpoint: ") + e.what());
  }
}

inline void save(const std::string& path, const json& doc) {
  auto bytes = json::to_cbor(doc);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline json load(const std::string& path) {
  auto bytes = data::read_text(path);
  try {
    return json::from_cbor(bytes);
  } catch (const json::exception& e) {
    throw ValidationError("checkpoint " + path + ": " + e.what());
  }
}

}  // namespace situ::checkpoint
