#pragma once

// Frame lexicon: verbs, nouns, per-verb ordered semantic roles and the
// (verb, role, noun) tuples observed in training.

#include <algorithm>
#include <array>
#include <compare>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "situ/error.hpp"

namespace situ {

using nlohmann::json;

enum class Direction { Forward, Reversed };

inline std::string to_string(Direction d) { return d == Direction::Forward ? "forward" : "reversed"; }

inline Direction parse_direction(const std::string& s) {
  if (s == "forward") return Direction::Forward;
  if (s == "reversed") return Direction::Reversed;
  throw UsageError("unknown direction '" + s + "' (expected forward|reversed)");
}

struct TupleKey {
  std::size_t verb = 0;
  std::size_t role = 0;
  std::size_t noun = 0;
  auto operator<=>(const TupleKey&) const = default;
};

/// Immutable after construction. Noun index 0 is the null filler; its
/// identifier in every file format is the empty string.
class Lexicon {
 public:
  static constexpr std::size_t kNull = 0;
  static constexpr const char* kNullId = "";

  struct VerbEntry {
    std::string id;
    std::vector<std::string> roles;
  };

  struct Document {
    std::vector<VerbEntry> verbs;
    std::vector<std::string> nouns;  // without the null filler
    std::vector<std::array<std::string, 3>> valid_tuples;
    std::map<std::string, std::size_t> verb_freq;
    std::vector<std::pair<std::array<std::string, 3>, std::size_t>> tuple_freq;
  };

  static Lexicon from_document(const Document& doc) {
    Lexicon lex;
    for (const auto& n : doc.nouns) {
      if (n == kNullId) throw ValidationError("lexicon: the empty noun id is reserved for the null filler");
    }
    lex.nouns_.push_back(kNullId);
    lex.noun_index_.emplace(kNullId, kNull);
    for (const auto& n : doc.nouns) {
      if (!lex.noun_index_.emplace(n, lex.nouns_.size()).second)
        throw ValidationError("lexicon: duplicate noun '" + n + "'");
      lex.nouns_.push_back(n);
    }
    for (const auto& v : doc.verbs) {
      if (!lex.verb_index_.emplace(v.id, lex.verbs_.size()).second)
        throw ValidationError("lexicon: duplicate verb '" + v.id + "'");
      if (v.roles.empty()) throw ValidationError("lexicon: verb '" + v.id + "' has an empty role list");
      std::vector<std::size_t> frame;
      for (const auto& r : v.roles) {
        auto [it, inserted] = lex.role_index_.emplace(r, lex.roles_.size());
        if (inserted) lex.roles_.push_back(r);
        if (std::find(frame.begin(), frame.end(), it->second) != frame.end())
          throw ValidationError("lexicon: verb '" + v.id + "' repeats role '" + r + "'");
        frame.push_back(it->second);
      }
      lex.verbs_.push_back(v.id);
      lex.frames_.push_back(std::move(frame));
    }
    for (std::size_t v = 0; v < lex.verbs_.size(); ++v) {
      for (std::size_t r : lex.frames_[v]) lex.valid_.insert({v, r, kNull});
    }
    for (const auto& t : doc.valid_tuples) lex.valid_.insert(lex.resolve_tuple(t));
    lex.verb_freq_.assign(lex.verbs_.size(), 0);
    for (const auto& [verb, count] : doc.verb_freq) {
      auto v = lex.find_verb(verb);
      if (!v) throw ValidationError("lexicon: verb_freq names unknown verb '" + verb + "'");
      lex.verb_freq_[*v] = count;
    }
    for (const auto& [t, count] : doc.tuple_freq) lex.tuple_freq_[lex.resolve_tuple(t)] = count;
    return lex;
  }

  static Lexicon parse(const std::string& text) {
    json j;
    try {
      j = json::parse(text);
    } catch (const json::exception& e) {
      throw ValidationError(std::string("lexicon: malformed document: ") + e.what());
    }
    return from_json(j);
  }

  static Lexicon from_json(const json& j) {
    Document doc;
    try {
      for (const auto& v : j.at("verbs")) doc.verbs.push_back({v.at("id").get<std::string>(), v.at("roles").get<std::vector<std::string>>()});
      doc.nouns = j.at("nouns").get<std::vector<std::string>>();
      if (j.contains("valid_tuples"))
        for (const auto& t : j.at("valid_tuples")) doc.valid_tuples.push_back(t.get<std::array<std::string, 3>>());
      if (j.contains("verb_freq")) doc.verb_freq = j.at("verb_freq").get<std::map<std::string, std::size_t>>();
      if (j.contains("tuple_freq"))
        for (const auto& t : j.at("tuple_freq"))
          doc.tuple_freq.push_back({{t.at(0).get<std::string>(), t.at(1).get<std::string>(), t.at(2).get<std::string>()},
                                    t.at(3).get<std::size_t>()});
    } catch (const json::exception& e) {
      throw ValidationError(std::string("lexicon: ") + e.what());
    }
    return from_document(doc);
  }

  json to_json() const {
    json verbs = json::array();
    for (std::size_t v = 0; v < verbs_.size(); ++v) {
      json roles = json::array();
      for (std::size_t r : frames_[v]) roles.push_back(roles_[r]);
      verbs.push_back({{"id", verbs_[v]}, {"roles", roles}});
    }
    json tuples = json::array();
    for (const auto& t : valid_) {
      if (t.noun == kNull) continue;
      tuples.push_back({verbs_[t.verb], roles_[t.role], nouns_[t.noun]});
    }
    json vf = json::object();
    for (std::size_t v = 0; v < verbs_.size(); ++v) vf[verbs_[v]] = verb_freq_[v];
    json tf = json::array();
    for (const auto& [t, c] : tuple_freq_) tf.push_back({verbs_[t.verb], roles_[t.role], nouns_[t.noun], c});
    return {{"verbs", verbs},
            {"nouns", std::vector<std::string>(nouns_.begin() + 1, nouns_.end())},
            {"valid_tuples", tuples},
            {"verb_freq", vf},
            {"tuple_freq", tf}};
  }

  std::string serialize() const { return to_json().dump(2); }

  // FNV-1a over the compact canonical form; ties checkpoints and datasets
  // to the lexicon they were built against.
  std::uint64_t hash() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : to_json().dump()) {
      h ^= ch;
      h *= 0x100000001b3ULL;
    }
    return h;
  }

  std::size_t verb_count() const { return verbs_.size(); }
  std::size_t noun_count() const { return nouns_.size(); }
  std::size_t role_count() const { return roles_.size(); }

  // Reserved index for nouns absent from the lexicon (held-out data only);
  // outside every decoder's output range, so it never matches a prediction.
  std::size_t unknown_noun() const { return nouns_.size(); }

  const std::string& verb_id(std::size_t v) const { return verbs_.at(v); }
  const std::string& role_id(std::size_t r) const { return roles_.at(r); }
  const std::string& noun_id(std::size_t n) const {
    static const std::string unk = "<unk>";
    return n == unknown_noun() ? unk : nouns_.at(n);
  }
  std::string noun_label(std::size_t n) const { return n == kNull ? "\xE2\x88\x85" : noun_id(n); }

  std::optional<std::size_t> find_verb(const std::string& id) const { return lookup(verb_index_, id); }
  std::optional<std::size_t> find_noun(const std::string& id) const { return lookup(noun_index_, id); }
  std::optional<std::size_t> find_role(const std::string& id) const { return lookup(role_index_, id); }

  std::size_t verb_index(const std::string& id) const {
    if (auto v = find_verb(id)) return *v;
    throw ValidationError("unknown verb '" + id + "'");
  }

  std::span<const std::size_t> frame(std::size_t verb) const {
    if (verb >= verbs_.size()) throw ValidationError("verb index " + std::to_string(verb) + " out of range");
    return frames_[verb];
  }

  std::size_t max_frame_size() const {
    std::size_t m = 0;
    for (const auto& f : frames_) m = std::max(m, f.size());
    return m;
  }

  bool is_valid(std::size_t verb, std::size_t role, std::size_t noun) const {
    return noun == kNull ? in_frame(verb, role) : valid_.count({verb, role, noun}) > 0;
  }
  bool in_frame(std::size_t verb, std::size_t role) const {
    auto f = frame(verb);
    return std::find(f.begin(), f.end(), role) != f.end();
  }

  const std::set<TupleKey>& valid_tuples() const { return valid_; }
  std::size_t verb_freq(std::size_t v) const { return verb_freq_.at(v); }
  std::span<const std::size_t> verb_frequencies() const { return verb_freq_; }
  std::size_t tuple_freq(const TupleKey& t) const {
    auto it = tuple_freq_.find(t);
    return it == tuple_freq_.end() ? 0 : it->second;
  }

 private:
  static std::optional<std::size_t> lookup(const std::unordered_map<std::string, std::size_t>& m, const std::string& id) {
    auto it = m.find(id);
    if (it == m.end()) return std::nullopt;
    return it->second;
  }

  TupleKey resolve_tuple(const std::array<std::string, 3>& t) const {
    auto v = find_verb(t[0]);
    auto r = find_role(t[1]);
    auto n = find_noun(t[2]);
    std::string desc = "[" + t[0] + ", " + t[1] + ", " + t[2] + "]";
    if (!v || !r || !n) throw ValidationError("lexicon: tuple " + desc + " references an unknown id");
    if (!in_frame(*v, *r)) throw ValidationError("lexicon: tuple " + desc + " uses a role outside the verb's frame");
    return {*v, *r, *n};
  }

  std::vector<std::string> verbs_;
  std::vector<std::string> nouns_;
  std::vector<std::string> roles_;
  std::unordered_map<std::string, std::size_t> verb_index_, noun_index_, role_index_;
  std::vector<std::vector<std::size_t>> frames_;
  std::set<TupleKey> valid_;
  std::vector<std::size_t> verb_freq_;
  std::map<TupleKey, std::size_t> tuple_freq_;
};

/// A verb plus one filler per role of its frame, in frame order.
struct Situation {
  std::size_t verb = 0;
  std::vector<std::size_t> fillers;
  bool operator==(const Situation&) const = default;
};

inline void validate(const Lexicon& lex, const Situation& s, bool allow_unknown = false) {
  if (s.verb >= lex.verb_count()) throw ValidationError("situation: verb index out of range");
  auto frame = lex.frame(s.verb);
  if (s.fillers.size() != frame.size())
    throw ValidationError("situation: verb '" + lex.verb_id(s.verb) + "' needs " + std::to_string(frame.size()) +
                          " fillers, got " + std::to_string(s.fillers.size()));
  for (std::size_t n : s.fillers) {
    if (n < lex.noun_count()) continue;
    if (allow_unknown && n == lex.unknown_noun()) continue;
    throw ValidationError("situation: noun index " + std::to_string(n) + " out of range");
  }
}

struct AnnotatedExample {
  std::string example_id;
  std::size_t verb = 0;
  std::array<Situation, 3> annotations;
  std::size_t feature_index = 0;
  bool operator==(const AnnotatedExample&) const = default;
};

inline void validate(const Lexicon& lex, const AnnotatedExample& ex, bool allow_unknown = false) {
  for (const auto& a : ex.annotations) {
    if (a.verb != ex.verb) throw ValidationError("example '" + ex.example_id + "': annotations disagree on the verb");
    validate(lex, a, allow_unknown);
  }
}

inline std::vector<std::size_t> role_order(const Lexicon& lex, std::size_t verb, Direction dir) {
  auto f = lex.frame(verb);
  std::vector<std::size_t> out(f.begin(), f.end());
  if (dir == Direction::Reversed) std::reverse(out.begin(), out.end());
  return out;
}

/// Noun indices in decoding order.
inline std::vector<std::size_t> encode_targets(const Lexicon& lex, const Situation& s, Direction dir) {
  validate(lex, s);
  std::vector<std::size_t> out = s.fillers;
  if (dir == Direction::Reversed) std::reverse(out.begin(), out.end());
  return out;
}

inline Situation decode_tokens(const Lexicon& lex, std::size_t verb, std::span<const std::size_t> tokens, Direction dir) {
  auto f = lex.frame(verb);
  if (tokens.size() != f.size())
    throw ValidationError("decode_tokens: expected " + std::to_string(f.size()) + " tokens, got " + std::to_string(tokens.size()));
  Situation s{verb, {tokens.begin(), tokens.end()}};
  if (dir == Direction::Reversed) std::reverse(s.fillers.begin(), s.fillers.end());
  for (std::size_t n : s.fillers)
    if (n >= lex.noun_count()) throw ValidationError("decode_tokens: noun index " + std::to_string(n) + " out of range");
  return s;
}

/// [[role, noun], ...] in frame order.
inline json situation_to_json(const Lexicon& lex, const Situation& s) {
  json roles = json::array();
  auto f = lex.frame(s.verb);
  for (std::size_t i = 0; i < f.size(); ++i) roles.push_back({lex.role_id(f[i]), lex.noun_id(s.fillers[i])});
  return roles;
}

inline Situation situation_from_json(const Lexicon& lex, std::size_t verb, const json& roles, bool allow_unknown) {
  auto f = lex.frame(verb);
  if (!roles.is_array() || roles.size() != f.size())
    throw ValidationError("annotation for verb '" + lex.verb_id(verb) + "' must list " + std::to_string(f.size()) + " roles");
  Situation s{verb, std::vector<std::size_t>(f.size(), Lexicon::kNull)};
  std::vector<bool> seen(f.size(), false);
  for (const auto& pair : roles) {
    auto role_id = pair.at(0).get<std::string>();
    auto noun_id = pair.at(1).get<std::string>();
    auto r = lex.find_role(role_id);
    auto pos = r ? std::find(f.begin(), f.end(), *r) - f.begin() : static_cast<std::ptrdiff_t>(f.size());
    if (pos == static_cast<std::ptrdiff_t>(f.size()) || seen[pos])
      throw ValidationError("annotation role '" + role_id + "' invalid for verb '" + lex.verb_id(verb) + "'");
    seen[pos] = true;
    auto n = lex.find_noun(noun_id);
    if (!n && !allow_unknown) throw ValidationError("annotation noun '" + noun_id + "' not in lexicon");
    s.fillers[pos] = n ? *n : lex.unknown_noun();
  }
  return s;
}

}  // namespace situ
