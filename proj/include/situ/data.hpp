#pragma once

// Datasets on disk (one JSON example per line plus a feature file), the
// manifest that ties splits to a lexicon, and the planted-signal generator.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <numeric>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "situ/features.hpp"
#include "situ/schema.hpp"

namespace situ::data {

using features::FeatureDims;
using features::FeatureRecord;
using features::FeatureSet;

struct Dataset {
  std::string split;
  std::shared_ptr<const Lexicon> lexicon;
  std::vector<AnnotatedExample> examples;
  FeatureSet features;

  const FeatureRecord& record(const AnnotatedExample& ex) const { return features.records.at(ex.feature_index); }
};

inline json example_to_json(const Lexicon& lex, const AnnotatedExample& ex) {
  json anns = json::array();
  for (const auto& a : ex.annotations) anns.push_back(situation_to_json(lex, a));
  return {{"example_id", ex.example_id},
          {"verb", lex.verb_id(ex.verb)},
          {"annotations", anns},
          {"feature_index", ex.feature_index}};
}

inline AnnotatedExample example_from_json(const Lexicon& lex, const json& j, bool allow_unknown) {
  try {
    AnnotatedExample ex;
    ex.example_id = j.at("example_id").get<std::string>();
    auto verb = j.at("verb").get<std::string>();
    auto v = lex.find_verb(verb);
    if (!v) throw ValidationError("example '" + ex.example_id + "': unknown verb '" + verb + "'");
    ex.verb = *v;
    const auto& anns = j.at("annotations");
    if (!anns.is_array() || anns.size() != 3)
      throw ValidationError("example '" + ex.example_id + "': exactly 3 annotations required");
    for (std::size_t a = 0; a < 3; ++a) ex.annotations[a] = situation_from_json(lex, ex.verb, anns[a], allow_unknown);
    ex.feature_index = j.at("feature_index").get<std::size_t>();
    validate(lex, ex, allow_unknown);
    return ex;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed example record: ") + e.what());
  }
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
}

inline std::string encode_examples(const Lexicon& lex, std::span<const AnnotatedExample> examples) {
  std::string out;
  for (const auto& ex : examples) out += example_to_json(lex, ex).dump() + "\n";
  return out;
}

inline std::vector<AnnotatedExample> decode_examples(const Lexicon& lex, const std::string& text, bool allow_unknown) {
  std::vector<AnnotatedExample> out;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError("dataset line " + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(example_from_json(lex, j, allow_unknown));
    if (!ids.insert(out.back().example_id).second)
      throw ValidationError("dataset: duplicate example id '" + out.back().example_id + "'");
  }
  return out;
}

/// Held-out splits may carry nouns outside the lexicon.
inline bool allows_unknown(const std::string& split) { return split != "train"; }

inline void save_dataset(const Dataset& d, const std::string& examples_path, const std::string& features_path) {
  write_text(examples_path, encode_examples(*d.lexicon, d.examples));
  features::write_features(features_path, d.features);
}

inline Dataset load_dataset(std::shared_ptr<const Lexicon> lex, const std::string& examples_path,
                            const std::string& features_path, const std::string& split) {
  Dataset d{split, lex, decode_examples(*lex, read_text(examples_path), allows_unknown(split)), {}};
  try {
    d.features = features::read_features(features_path);
  } catch (const features::TruncatedFeatures& e) {
    for (const auto& ex : d.examples)
      if (ex.feature_index == e.index)
        throw ValidationError("features for example '" + ex.example_id + "' are truncated in " + features_path);
    throw ValidationError(std::string(e.what()) + " in " + features_path);
  }
  for (const auto& ex : d.examples)
    if (ex.feature_index >= d.features.records.size())
      throw ValidationError("example '" + ex.example_id + "' references missing feature record " +
                            std::to_string(ex.feature_index));
  return d;
}

inline std::string hash_string(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Paths are relative to the manifest's directory.
struct Manifest {
  std::filesystem::path root;
  std::string lexicon;
  std::string lexicon_hash;
  std::map<std::string, std::pair<std::string, std::string>> splits;  // name -> (examples, features)

  json to_json() const {
    json s = json::object();
    for (const auto& [name, files] : splits) s[name] = {{"dataset", files.first}, {"features", files.second}};
    return {{"lexicon", lexicon}, {"lexicon_hash", lexicon_hash}, {"splits", s}};
  }

  static Manifest load(const std::string& path) {
    Manifest m;
    m.root = std::filesystem::path(path).parent_path();
    try {
      auto j = json::parse(read_text(path));
      m.lexicon = j.at("lexicon").get<std::string>();
      m.lexicon_hash = j.at("lexicon_hash").get<std::string>();
      for (const auto& [name, files] : j.at("splits").items())
        m.splits[name] = {files.at("dataset").get<std::string>(), files.at("features").get<std::string>()};
    } catch (const json::exception& e) {
      throw ValidationError("manifest " + path + ": " + e.what());
    }
    return m;
  }

  std::string resolve(const std::string& rel) const { return (root / rel).string(); }

  std::shared_ptr<const Lexicon> load_lexicon() const {
    auto lex = std::make_shared<const Lexicon>(Lexicon::parse(read_text(resolve(lexicon))));
    if (hash_string(lex->hash()) != lexicon_hash)
      throw ValidationError("lexicon hash mismatch: manifest has " + lexicon_hash + ", file hashes to " +
                            hash_string(lex->hash()));
    return lex;
  }

  Dataset open(std::shared_ptr<const Lexicon> lex, const std::string& split) const {
    auto it = splits.find(split);
    if (it == splits.end()) throw ValidationError("manifest has no split '" + split + "'");
    if (hash_string(lex->hash()) != lexicon_hash) throw ValidationError("dataset lexicon does not match the manifest");
    return load_dataset(std::move(lex), resolve(it->second.first), resolve(it->second.second), split);
  }
};

struct SyntheticSpec {
  std::size_t verbs = 20;
  std::size_t roles = 8;       // role inventory
  std::size_t min_roles = 2;   // per verb
  std::size_t max_roles = 4;
  std::size_t nouns = 50;      // excluding the null filler
  std::size_t pool = 6;        // nouns per role
  bool disjoint_role_pools = true;
  FeatureDims dims{96, 96, 16, 3};
  bool grid = true;
  std::size_t max_regions = 2;
  double sigma = 0.05;
  double annotation_noise = 0.15;
  double canonical_filler_prob = 0;  // chance a filler is the verb's fixed choice for that slot
  double null_rate = 0;
  std::size_t train = 2000;
  std::size_t dev = 300;
  std::size_t test = 300;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("synthetic spec: " + m); };
    if (!verbs || !roles || !nouns || !pool || !min_roles) fail("sizes must be positive");
    if (min_roles > max_roles) fail("min_roles exceeds max_roles");
    if (max_roles > roles) fail("max_roles exceeds the role inventory");
    if (pool > nouns) fail("role pool larger than the noun set");
    if (disjoint_role_pools && roles * pool > nouns) fail("disjoint pools need roles * pool <= nouns");
    if (!dims.global) fail("global feature dimension must be positive");
    if (max_regions && dims.region != dims.global) fail("region dimension must equal the global dimension");
    if (grid && (!dims.grid || !dims.cell)) fail("grid needs positive G and cell dimension");
    if (!(sigma >= 0)) fail("sigma must be non-negative");
    for (double p : {annotation_noise, canonical_filler_prob, null_rate})
      if (!(p >= 0 && p <= 1)) fail("probabilities must lie in [0, 1]");
    if (train < verbs) fail("train split must cover every verb");
  }

  json to_json() const {
    return {{"verbs", verbs},
            {"roles", roles},
            {"min_roles", min_roles},
            {"max_roles", max_roles},
            {"nouns", nouns},
            {"pool", pool},
            {"disjoint_role_pools", disjoint_role_pools},
            {"dims", {dims.global, dims.region, dims.cell, dims.grid}},
            {"grid", grid},
            {"max_regions", max_regions},
            {"sigma", sigma},
            {"annotation_noise", annotation_noise},
            {"canonical_filler_prob", canonical_filler_prob},
            {"null_rate", null_rate},
            {"train", train},
            {"dev", dev},
            {"test", test},
            {"seed", seed}};
  }

  /// Missing keys keep their defaults.
  static SyntheticSpec from_json(const json& j) {
    SyntheticSpec s;
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    try {
      take("verbs", s.verbs);
      take("roles", s.roles);
      take("min_roles", s.min_roles);
      take("max_roles", s.max_roles);
      take("nouns", s.nouns);
      take("pool", s.pool);
      take("disjoint_role_pools", s.disjoint_role_pools);
      if (j.contains("dims")) {
        auto d = j.at("dims");
        s.dims = {d.at(0).get<std::uint32_t>(), d.at(1).get<std::uint32_t>(), d.at(2).get<std::uint32_t>(),
                  d.at(3).get<std::uint32_t>()};
      }
      take("grid", s.grid);
      take("max_regions", s.max_regions);
      take("sigma", s.sigma);
      take("annotation_noise", s.annotation_noise);
      take("canonical_filler_prob", s.canonical_filler_prob);
      take("null_rate", s.null_rate);
      take("train", s.train);
      take("dev", s.dev);
      take("test", s.test);
      take("seed", s.seed);
    } catch (const json::exception& e) {
      throw UsageError(std::string("synthetic spec: ") + e.what());
    }
    return s;
  }
};

/// Hidden generator state kept for tests: which nouns each role may take.
struct SyntheticTruth {
  std::vector<std::vector<std::size_t>> role_pools;  // generator role -> nouns
  std::vector<std::vector<std::size_t>> frames;      // verb -> generator roles, in order
  std::vector<std::vector<std::size_t>> canonical;   // verb -> filler per position
};

struct SyntheticData {
  std::shared_ptr<const Lexicon> lexicon;
  std::map<std::string, Dataset> splits;
  SyntheticTruth truth;

  /// Whether noun n may fill position i of verb v.
  bool in_pool(std::size_t verb, std::size_t position, std::size_t noun) const {
    const auto& pool = truth.role_pools.at(truth.frames.at(verb).at(position));
    return std::find(pool.begin(), pool.end(), noun) != pool.end();
  }
};

inline std::string padded(const std::string& prefix, std::size_t i, std::size_t width = 3) {
  std::string n = std::to_string(i);
  return prefix + std::string(n.size() < width ? width - n.size() : 0, '0') + n;
}

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  auto uniform_index = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  auto bernoulli = [&](double p) { return p > 0 && std::uniform_real_distribution<double>(0, 1)(rng) < p; };
  std::normal_distribution<double> gauss(0, 1);

  SyntheticTruth truth;
  std::vector<std::size_t> all_nouns(spec.nouns);
  std::iota(all_nouns.begin(), all_nouns.end(), 1);
  if (spec.disjoint_role_pools) {
    auto shuffled = all_nouns;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (std::size_t r = 0; r < spec.roles; ++r) {
      truth.role_pools.emplace_back(shuffled.begin() + r * spec.pool, shuffled.begin() + (r + 1) * spec.pool);
      std::sort(truth.role_pools.back().begin(), truth.role_pools.back().end());
    }
  } else {
    for (std::size_t r = 0; r < spec.roles; ++r) {
      auto shuffled = all_nouns;
      std::shuffle(shuffled.begin(), shuffled.end(), rng);
      truth.role_pools.emplace_back(shuffled.begin(), shuffled.begin() + spec.pool);
      std::sort(truth.role_pools.back().begin(), truth.role_pools.back().end());
    }
  }
  std::vector<std::size_t> role_ids(spec.roles);
  std::iota(role_ids.begin(), role_ids.end(), 0);
  for (std::size_t v = 0; v < spec.verbs; ++v) {
    std::size_t k = spec.min_roles + uniform_index(spec.max_roles - spec.min_roles + 1);
    std::shuffle(role_ids.begin(), role_ids.end(), rng);
    truth.frames.emplace_back(role_ids.begin(), role_ids.begin() + k);
    std::vector<std::size_t> canon;
    for (std::size_t r : truth.frames.back()) canon.push_back(truth.role_pools[r][uniform_index(spec.pool)]);
    truth.canonical.push_back(std::move(canon));
  }

  // Planting matrix over [verbs | nouns incl. null], and one code per noun
  // for the grid.
  const std::size_t Dg = spec.dims.global, Dc = spec.dims.cell;
  std::vector<double> plant(Dg * (spec.verbs + spec.nouns + 1));
  for (auto& w : plant) w = gauss(rng);
  std::vector<double> noun_code((spec.nouns + 1) * Dc);
  for (auto& w : noun_code) w = gauss(rng);

  struct Raw {
    std::size_t verb;
    std::array<std::vector<std::size_t>, 3> annotations;
    FeatureRecord features;
  };
  auto sample = [&](std::optional<std::size_t> forced_verb) {
    Raw x;
    x.verb = forced_verb ? *forced_verb : uniform_index(spec.verbs);
    const auto& frame = truth.frames[x.verb];
    std::vector<std::size_t> gt;
    for (std::size_t i = 0; i < frame.size(); ++i) {
      const auto& pool = truth.role_pools[frame[i]];
      if (bernoulli(spec.canonical_filler_prob))
        gt.push_back(truth.canonical[x.verb][i]);
      else if (bernoulli(spec.null_rate))
        gt.push_back(Lexicon::kNull);
      else
        gt.push_back(pool[uniform_index(pool.size())]);
    }
    x.annotations[0] = gt;
    for (std::size_t a = 1; a < 3; ++a) {
      auto copy = gt;
      for (std::size_t i = 0; i < copy.size(); ++i) {
        if (!bernoulli(spec.annotation_noise)) continue;
        std::vector<std::size_t> alternatives;
        for (std::size_t n : truth.role_pools[frame[i]])
          if (n != copy[i]) alternatives.push_back(n);
        if (!alternatives.empty()) copy[i] = alternatives[uniform_index(alternatives.size())];
      }
      x.annotations[a] = std::move(copy);
    }
    std::vector<double> global(Dg, 0.0);
    auto add_column = [&](std::size_t col) {
      for (std::size_t d = 0; d < Dg; ++d) global[d] += plant[col * Dg + d];
    };
    add_column(x.verb);
    for (std::size_t n : gt) add_column(spec.verbs + n);
    for (auto& g : global) g += spec.sigma * gauss(rng);
    x.features.global.assign(global.begin(), global.end());
    std::size_t regions = spec.max_regions ? uniform_index(spec.max_regions + 1) : 0;
    for (std::size_t r = 0; r < regions; ++r) {
      std::vector<float> reg(Dg);
      for (std::size_t d = 0; d < Dg; ++d) reg[d] = float(global[d] + spec.sigma * gauss(rng));
      x.features.regions.push_back(std::move(reg));
    }
    if (spec.grid) {
      const std::size_t cells = spec.dims.cells();
      std::vector<double> grid(cells * Dc);
      for (std::size_t c = 0; c < cells; ++c)
        for (std::size_t d = 0; d < Dc; ++d) grid[c * Dc + d] = global[(c * Dc + d) % Dg] + spec.sigma * gauss(rng);
      for (std::size_t n : gt) {
        std::size_t c = uniform_index(cells);
        for (std::size_t d = 0; d < Dc; ++d) grid[c * Dc + d] += noun_code[n * Dc + d];
      }
      x.features.grid.emplace(grid.begin(), grid.end());
    }
    return x;
  };

  const std::vector<std::pair<std::string, std::size_t>> sizes{{"train", spec.train}, {"dev", spec.dev}, {"test", spec.test}};
  std::map<std::string, std::vector<Raw>> raw;
  for (const auto& [split, n] : sizes) {
    auto& xs = raw[split];
    for (std::size_t i = 0; i < n; ++i)
      xs.push_back(sample(split == "train" && i < spec.verbs ? std::optional<std::size_t>(i) : std::nullopt));
  }

  Lexicon::Document doc;
  auto verb_id = [](std::size_t v) { return padded("v", v + 1); };
  auto role_id = [](std::size_t r) { return padded("r", r + 1, 2); };
  auto noun_id = [](std::size_t n) { return n == Lexicon::kNull ? std::string(Lexicon::kNullId) : padded("n", n); };
  for (std::size_t v = 0; v < spec.verbs; ++v) {
    Lexicon::VerbEntry e{verb_id(v), {}};
    for (std::size_t r : truth.frames[v]) e.roles.push_back(role_id(r));
    doc.verbs.push_back(std::move(e));
  }
  for (std::size_t n = 1; n <= spec.nouns; ++n) doc.nouns.push_back(noun_id(n));
  std::map<std::array<std::string, 3>, std::size_t> tuples;
  for (const auto& x : raw["train"]) {
    ++doc.verb_freq[verb_id(x.verb)];
    for (const auto& a : x.annotations)
      for (std::size_t i = 0; i < a.size(); ++i) ++tuples[{verb_id(x.verb), role_id(truth.frames[x.verb][i]), noun_id(a[i])}];
  }
  for (const auto& [t, c] : tuples) {
    doc.valid_tuples.push_back(t);
    doc.tuple_freq.push_back({t, c});
  }
  SyntheticData out;
  out.lexicon = std::make_shared<const Lexicon>(Lexicon::from_document(doc));
  for (const auto& [split, n] : sizes) {
    Dataset d{split, out.lexicon, {}, {spec.dims, {}}};
    if (!spec.grid) d.features.dims.grid = d.features.dims.cell = 0;
    if (!spec.max_regions) d.features.dims.region = 0;
    std::size_t i = 0;
    for (auto& x : raw[split]) {
      AnnotatedExample ex;
      ex.example_id = padded(split + "-", i, 5);
      ex.verb = x.verb;
      for (std::size_t a = 0; a < 3; ++a) ex.annotations[a] = Situation{x.verb, x.annotations[a]};
      ex.feature_index = i++;
      validate(*out.lexicon, ex);
      d.examples.push_back(std::move(ex));
      d.features.records.push_back(std::move(x.features));
    }
    out.splits.emplace(split, std::move(d));
  }
  out.truth = std::move(truth);
  return out;
}

/// Writes lexicon.json, <split>.jsonl, <split>.feat and manifest.json.
inline Manifest write_synthetic(const SyntheticData& data, const std::string& dir) {
  std::filesystem::create_directories(dir);
  Manifest m;
  m.root = dir;
  m.lexicon = "lexicon.json";
  m.lexicon_hash = hash_string(data.lexicon->hash());
  write_text(m.resolve(m.lexicon), data.lexicon->serialize());
  for (const auto& [split, d] : data.splits) {
    m.splits[split] = {split + ".jsonl", split + ".feat"};
    save_dataset(d, m.resolve(split + ".jsonl"), m.resolve(split + ".feat"));
  }
  write_text(m.resolve("manifest.json"), m.to_json().dump(2) + "\n");
  return m;
}

}  // namespace situ::data
