#pragma once

// Verb / value / value-all under top-1, top-5 and ground-truth verbs, the
// mean column, the rare subset and per-verb accuracy.

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "situ/decode.hpp"
#include "situ/features.hpp"
#include "situ/schema.hpp"

namespace situ::eval {

using decode::ScoredSituation;
using features::FeatureRecord;

enum class Setting { Top1, Top5, GtVerb };

inline std::string to_string(Setting s) {
  switch (s) {
    case Setting::Top1: return "top1";
    case Setting::Top5: return "top5";
    case Setting::GtVerb: return "gtverb";
  }
  return "?";
}

/// PerPair: each role may match a different annotation. SingleAnnotation:
/// value-all needs the whole frame to equal one annotation.
enum class ValueAllMode { PerPair, SingleAnnotation };

struct ExampleScore {
  bool verb_correct = false;
  double value = 0;
  bool value_all = false;
  bool operator==(const ExampleScore&) const = default;
};

namespace detail {

inline ExampleScore score_frame(const Situation& pred, const AnnotatedExample& gt, ValueAllMode mode) {
  const std::size_t R = pred.fillers.size();
  std::size_t matched = 0;
  for (std::size_t i = 0; i < R; ++i) {
    bool hit = false;
    for (const auto& a : gt.annotations) hit = hit || a.fillers.at(i) == pred.fillers[i];
    matched += hit;
  }
  ExampleScore s{true, R ? double(matched) / double(R) : 1.0, matched == R};
  if (mode == ValueAllMode::SingleAnnotation) {
    s.value_all = false;
    for (const auto& a : gt.annotations) s.value_all = s.value_all || a.fillers == pred.fillers;
  }
  return s;
}

}  // namespace detail

/// `ranked` is the verb-ranked prediction list (top1/top5); for gtverb its
/// first entry must be the decode conditioned on the ground-truth verb.
inline ExampleScore score_example(const Lexicon& lex, std::span<const Situation> ranked, const AnnotatedExample& gt,
                                  Setting setting, ValueAllMode mode = ValueAllMode::PerPair) {
  for (const auto& p : ranked) validate(lex, p);
  if (setting == Setting::GtVerb) {
    if (ranked.empty() || ranked.front().verb != gt.verb)
      throw UsageError("score_example: gtverb needs a prediction conditioned on the ground-truth verb");
    return detail::score_frame(ranked.front(), gt, mode);
  }
  const std::size_t depth = setting == Setting::Top1 ? 1 : 5;
  for (std::size_t i = 0; i < std::min(depth, ranked.size()); ++i)
    if (ranked[i].verb == gt.verb) return detail::score_frame(ranked[i], gt, mode);
  return {};
}

/// Everything one example contributes; top1/top5 are absent for models that
/// cannot predict verbs, gt when no conditioned decode was run.
struct ExampleRecord {
  std::string example_id;
  std::size_t verb = 0;
  std::optional<ExampleScore> top1;
  std::optional<ExampleScore> top5;
  std::optional<ExampleScore> gt;
};

inline const std::vector<std::string>& metric_keys() {
  static const std::vector<std::string> keys{"verb@1", "value@1", "value_all@1", "verb@5",
                                             "value@5", "value_all@5", "value@gt", "value_all@gt"};
  return keys;
}

/// Percentages keyed as in metric_keys(); `mean` exists only when all eight do.
struct Metrics {
  std::map<std::string, double> entries;
  std::size_t examples = 0;

  bool has(const std::string& key) const { return entries.count(key) || (key == "mean" && mean()); }

  std::optional<double> mean() const {
    double s = 0;
    for (const auto& k : metric_keys()) {
      auto it = entries.find(k);
      if (it == entries.end()) return std::nullopt;
      s += it->second;
    }
    return s / double(metric_keys().size());
  }

  double get(const std::string& key) const {
    if (key == "mean") {
      if (auto m = mean()) return *m;
    } else if (auto it = entries.find(key); it != entries.end()) {
      return it->second;
    }
    throw UsageError("metric '" + key + "' is not available");
  }

  json to_json() const {
    json j = json::object();
    for (const auto& k : metric_keys()) j[k] = entries.count(k) ? json(entries.at(k)) : json(nullptr);
    j["mean"] = mean() ? json(*mean()) : json(nullptr);
    j["examples"] = examples;
    return j;
  }

  static Metrics from_json(const json& j) {
    Metrics m;
    for (const auto& k : metric_keys()) {
      const auto& v = j.at(k);
      if (!v.is_null()) {
        double x = v.get<double>();
        if (!(x >= 0 && x <= 100)) throw ValidationError("metrics: '" + k + "' outside [0, 100]");
        m.entries[k] = x;
      }
    }
    m.examples = j.at("examples").get<std::size_t>();
    return m;
  }

  std::string table() const {
    std::ostringstream out;
    char buf[64];
    for (const auto& k : metric_keys()) {
      std::snprintf(buf, sizeof buf, "%-12s ", k.c_str());
      out << buf;
    }
    out << "mean\n";
    for (const auto& k : metric_keys()) {
      if (entries.count(k))
        std::snprintf(buf, sizeof buf, "%-12.2f ", entries.at(k));
      else
        std::snprintf(buf, sizeof buf, "%-12s ", "-");
      out << buf;
    }
    if (auto m = mean())
      std::snprintf(buf, sizeof buf, "%.2f", *m);
    else
      std::snprintf(buf, sizeof buf, "-");
    out << buf << "\n";
    return out.str();
  }
};

inline Metrics aggregate(std::span<const ExampleRecord> records) {
  if (records.empty()) throw ValidationError("aggregate: no examples");
  Metrics m;
  m.examples = records.size();
  auto fold = [&](auto member, const std::string& verb_key, const std::string& value_key, const std::string& all_key) {
    double verb = 0, value = 0, all = 0;
    for (const auto& r : records) {
      const auto& s = r.*member;
      if (!s) return;
      verb += s->verb_correct;
      value += s->value;
      all += s->value_all;
    }
    const double n = double(records.size());
    if (!verb_key.empty()) m.entries[verb_key] = 100.0 * verb / n;
    m.entries[value_key] = 100.0 * value / n;
    m.entries[all_key] = 100.0 * all / n;
  };
  fold(&ExampleRecord::top1, "verb@1", "value@1", "value_all@1");
  fold(&ExampleRecord::top5, "verb@5", "value@5", "value_all@5");
  fold(&ExampleRecord::gt, "", "value@gt", "value_all@gt");
  return m;
}

/// Examples whose verb occurs at most `threshold` times in training.
inline std::vector<AnnotatedExample> rare_filter(const Lexicon& lex, std::span<const AnnotatedExample> examples,
                                                 std::size_t threshold = 10) {
  std::vector<AnnotatedExample> out;
  for (const auto& ex : examples)
    if (lex.verb_freq(ex.verb) <= threshold) out.push_back(ex);
  return out;
}

struct VerbAccuracy {
  std::size_t verb = 0;
  double accuracy = 0;  // percent, top-1
  std::size_t count = 0;
  bool operator==(const VerbAccuracy&) const = default;
};

/// Top-1 verb accuracy per ground-truth verb, ascending (ties by verb index).
inline std::vector<VerbAccuracy> per_verb_report(std::span<const ExampleRecord> records) {
  std::map<std::size_t, std::pair<std::size_t, std::size_t>> tally;
  for (const auto& r : records) {
    if (!r.top1) throw UsageError("per_verb_report: records lack top-1 scores");
    auto& [hit, n] = tally[r.verb];
    hit += r.top1->verb_correct;
    ++n;
  }
  std::vector<VerbAccuracy> out;
  for (const auto& [v, t] : tally) out.push_back({v, 100.0 * double(t.first) / double(t.second), t.second});
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.accuracy < b.accuracy; });
  return out;
}

struct Prediction {
  std::string example_id;
  std::vector<ScoredSituation> ranked;   // verb-ranked, up to 5
  std::optional<ScoredSituation> given;  // conditioned on the ground-truth verb
};

inline json scored_to_json(const Lexicon& lex, const ScoredSituation& s) {
  return {{"verb", lex.verb_id(s.situation.verb)},
          {"roles", situation_to_json(lex, s.situation)},
          {"verb_score", s.verb_score},
          {"noun_score", s.noun_score}};
}

inline json prediction_to_json(const Lexicon& lex, const Prediction& p) {
  json j{{"example_id", p.example_id}, {"ranked", json::array()}};
  for (const auto& s : p.ranked) j["ranked"].push_back(scored_to_json(lex, s));
  if (p.given) j["gtverb"] = scored_to_json(lex, *p.given);
  return j;
}

/// Runs a predictor (rank / given_verb / predicts_verbs) over examples whose
/// feature records are looked up by feature_index.
template <class Predictor>
std::vector<Prediction> predict(const Predictor& model, std::span<const AnnotatedExample> examples,
                                std::span<const FeatureRecord> records, bool ranked = true, bool given = true) {
  std::vector<Prediction> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) {
    const auto& rec = records[ex.feature_index];
    Prediction p{ex.example_id, {}, std::nullopt};
    if (ranked && model.predicts_verbs()) p.ranked = model.rank(rec, 5);
    if (given) p.given = model.given_verb(rec, ex.verb);
    out.push_back(std::move(p));
  }
  return out;
}

inline std::vector<ExampleRecord> score_predictions(const Lexicon& lex, std::span<const AnnotatedExample> examples,
                                                    std::span<const Prediction> preds,
                                                    ValueAllMode mode = ValueAllMode::PerPair) {
  if (examples.size() != preds.size()) throw UsageError("score_predictions: size mismatch");
  std::vector<ExampleRecord> out;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    const auto& ex = examples[i];
    ExampleRecord r{ex.example_id, ex.verb, std::nullopt, std::nullopt, std::nullopt};
    if (!preds[i].ranked.empty()) {
      std::vector<Situation> ranked;
      for (const auto& s : preds[i].ranked) ranked.push_back(s.situation);
      r.top1 = score_example(lex, ranked, ex, Setting::Top1, mode);
      r.top5 = score_example(lex, ranked, ex, Setting::Top5, mode);
    }
    if (preds[i].given) {
      std::vector<Situation> one{preds[i].given->situation};
      r.gt = score_example(lex, one, ex, Setting::GtVerb, mode);
    }
    out.push_back(std::move(r));
  }
  return out;
}

template <class Predictor>
Metrics evaluate(const Predictor& model, const Lexicon& lex, std::span<const AnnotatedExample> examples,
                 std::span<const FeatureRecord> records, ValueAllMode mode = ValueAllMode::PerPair) {
  auto preds = predict(model, examples, records);
  auto scored = score_predictions(lex, examples, preds, mode);
  return aggregate(scored);
}

}  // namespace situ::eval
