#pragma once

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "situ/situ.hpp"

namespace testing_support {

using situ::Lexicon;

/// Random lexicon with verbs 0..V-1 each taking 1..max_roles roles drawn from
/// `roles` names, and every noun valid for every (verb, role).
inline std::shared_ptr<const Lexicon> random_lexicon(std::mt19937_64& rng, std::size_t verbs, std::size_t max_roles,
                                                     std::size_t nouns, std::size_t roles = 4, std::size_t min_roles = 1) {
  Lexicon::Document doc;
  std::vector<std::string> role_names;
  for (std::size_t r = 0; r < roles; ++r) role_names.push_back("role" + std::to_string(r));
  for (std::size_t n = 1; n <= nouns; ++n) doc.nouns.push_back("noun" + std::to_string(n));
  for (std::size_t v = 0; v < verbs; ++v) {
    std::size_t k = std::uniform_int_distribution<std::size_t>(min_roles, max_roles)(rng);
    auto names = role_names;
    std::shuffle(names.begin(), names.end(), rng);
    names.resize(k);
    doc.verbs.push_back({"verb" + std::to_string(v), names});
    doc.verb_freq["verb" + std::to_string(v)] = 1 + v;
    for (const auto& r : names)
      for (const auto& n : doc.nouns) doc.valid_tuples.push_back({"verb" + std::to_string(v), r, n});
  }
  return std::make_shared<const Lexicon>(Lexicon::from_document(doc));
}

inline situ::Situation random_situation(const Lexicon& lex, std::mt19937_64& rng, std::optional<std::size_t> verb = {}) {
  std::size_t v = verb ? *verb : std::uniform_int_distribution<std::size_t>(0, lex.verb_count() - 1)(rng);
  situ::Situation s{v, {}};
  for (std::size_t i = 0; i < lex.frame(v).size(); ++i)
    s.fillers.push_back(std::uniform_int_distribution<std::size_t>(0, lex.noun_count() - 1)(rng));
  return s;
}

inline situ::features::FeatureRecord random_record(const situ::features::FeatureDims& dims, std::mt19937_64& rng,
                                                   std::size_t regions = 1, bool grid = true, double scale = 1.0) {
  std::normal_distribution<float> g(0, float(scale));
  situ::features::FeatureRecord rec;
  for (std::size_t i = 0; i < dims.global; ++i) rec.global.push_back(g(rng));
  for (std::size_t r = 0; r < regions; ++r) {
    rec.regions.emplace_back();
    for (std::size_t i = 0; i < dims.region; ++i) rec.regions.back().push_back(g(rng));
  }
  if (grid && dims.grid) {
    rec.grid.emplace();
    for (std::size_t i = 0; i < dims.cells() * dims.cell; ++i) rec.grid->push_back(g(rng));
  }
  return rec;
}

/// Scales every parameter so toy models have peaked, tie-free distributions.
template <class Store>
void perturb(Store& store, std::mt19937_64& rng, double scale) {
  std::normal_distribution<double> g(0, scale);
  for (auto& p : store)
    for (auto& x : p.value.span()) x = static_cast<std::remove_reference_t<decltype(x)>>(g(rng));
}

}  // namespace testing_support
