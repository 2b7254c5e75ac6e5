#pragma once

// Log-linear CRF over situations,
//   p(S | x) = exp(w_v . x + sum_i w_(v, r_i, n_i) . x) / Z(x),
// with Z computed exactly through the per-role factorization, and the
// top-10-frames discrete classifier baseline.

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <random>
#include <vector>

#include "situ/decode.hpp"
#include "situ/features.hpp"
#include "situ/rnn.hpp"
#include "situ/schema.hpp"

namespace situ::crf {

using decode::ScoredSituation;
using features::FeatureRecord;
using numeric::Graph;
using numeric::ParameterStore;
using numeric::Tensor;
using numeric::Var;

namespace detail {

template <class Real>
Real log_sum_exp(std::span<const Real> xs) {
  Real mx = *std::max_element(xs.begin(), xs.end());
  Real s = 0;
  for (Real x : xs) s += std::exp(x - mx);
  return mx + std::log(s);
}

}  // namespace detail

template <class Real>
class CrfModel {
 public:
  using real_type = Real;

  /// (noun, row in tuple_weights) for every valid filler of one role slot.
  struct Slot {
    std::vector<std::pair<std::size_t, std::size_t>> fillers;
  };

  CrfModel(std::shared_ptr<const Lexicon> lex, std::size_t feature_dim, std::uint64_t seed)
      : lex_(std::move(lex)), dim_(feature_dim) {
    std::size_t row = 0;
    for (const auto& t : lex_->valid_tuples()) rows_.emplace(t, row++);
    slots_.resize(lex_->verb_count());
    for (std::size_t v = 0; v < lex_->verb_count(); ++v) {
      auto frame = lex_->frame(v);
      slots_[v].resize(frame.size());
      for (std::size_t p = 0; p < frame.size(); ++p) {
        // valid_tuples is ordered by (verb, role, noun) so fillers come out
        // in ascending noun order.
        for (auto it = lex_->valid_tuples().lower_bound({v, frame[p], 0});
             it != lex_->valid_tuples().end() && it->verb == v && it->role == frame[p]; ++it)
          slots_[v][p].fillers.push_back({it->noun, rows_.at(*it)});
      }
    }
    verb_weights_ = store_.create("crf.verb_weights", models::kGroupVerb, {lex_->verb_count(), dim_});
    tuple_weights_ = store_.create("crf.tuple_weights", models::kGroupVerb, {rows_.size(), dim_});
    std::mt19937_64 rng(seed);
    rnn::init_uniform(store_[verb_weights_], rng);
    rnn::init_uniform(store_[tuple_weights_], rng);
  }

  const Lexicon& lexicon() const { return *lex_; }
  const std::shared_ptr<const Lexicon>& lexicon_ptr() const { return lex_; }
  ParameterStore<Real>& store() { return store_; }
  const ParameterStore<Real>& store() const { return store_; }
  std::size_t feature_dim() const { return dim_; }
  std::size_t tuple_row(const TupleKey& t) const {
    auto it = rows_.find(t);
    if (it == rows_.end()) throw ValidationError("crf: tuple outside the valid set");
    return it->second;
  }
  const std::vector<Slot>& slots(std::size_t verb) const { return slots_.at(verb); }

  Tensor<Real>& verb_weights() { return store_[verb_weights_].value; }
  Tensor<Real>& tuple_weights() { return store_[tuple_weights_].value; }

  /// Log-potentials for one feature vector: verbs [V] and tuples [T].
  std::pair<std::vector<Real>, std::vector<Real>> potentials(const FeatureRecord& rec) const {
    check(rec);
    auto matvec = [&](const Tensor<Real>& W) {
      std::vector<Real> out(W.rows(), Real(0));
      for (std::size_t r = 0; r < W.rows(); ++r)
        for (std::size_t c = 0; c < dim_; ++c) out[r] += W.at(r, c) * Real(rec.global[c]);
      return out;
    };
    return {matvec(store_[verb_weights_].value), matvec(store_[tuple_weights_].value)};
  }

  /// Unnormalized log-score log psi_v + sum_i log psi_r.
  Real score(const FeatureRecord& rec, const Situation& sit) const {
    validate(*lex_, sit);
    auto [vp, tp] = potentials(rec);
    auto frame = lex_->frame(sit.verb);
    Real s = vp[sit.verb];
    for (std::size_t i = 0; i < frame.size(); ++i) s += tp[tuple_row({sit.verb, frame[i], sit.fillers[i]})];
    return s;
  }

  Real log_partition(const FeatureRecord& rec) const {
    auto [vp, tp] = potentials(rec);
    std::vector<Real> per_verb;
    for (std::size_t v = 0; v < lex_->verb_count(); ++v) {
      Real s = vp[v];
      for (const auto& slot : slots_[v]) {
        std::vector<Real> xs;
        for (auto [n, row] : slot.fillers) xs.push_back(tp[row]);
        s += detail::log_sum_exp<Real>(xs);
      }
      per_verb.push_back(s);
    }
    return detail::log_sum_exp<Real>(per_verb);
  }

  /// Best situation per verb (per-role argmax, lowest noun on ties), verbs
  /// ranked by max score, lowest verb index on ties. Scores are log-probs.
  std::vector<ScoredSituation> infer(const FeatureRecord& rec, std::size_t k) const {
    if (k < 1) throw UsageError("crf_infer: k must be at least 1");
    auto [vp, tp] = potentials(rec);
    const Real logz = log_partition(rec);
    std::vector<std::pair<Real, Situation>> best;
    for (std::size_t v = 0; v < lex_->verb_count(); ++v) best.push_back(best_for_verb(v, vp, tp));
    std::vector<std::size_t> order(best.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return best[a].first > best[b].first; });
    std::vector<ScoredSituation> out;
    for (std::size_t i = 0; i < std::min(k, order.size()); ++i) {
      auto& [s, sit] = best[order[i]];
      out.push_back({sit, double(vp[sit.verb] - logz), double(s - vp[sit.verb])});
    }
    return out;
  }

  /// Negative log-likelihood of one annotation, built on the graph.
  Var<Real> example_loss(Graph<Real>& g, const AnnotatedExample& ex, const FeatureRecord& rec, std::size_t annotation,
                         std::span<const Real> = {}) const {
    using namespace numeric;
    check(rec);
    const Situation& sit = ex.annotations.at(annotation);
    validate(*lex_, sit);
    auto x = g.constant(features::to_tensor<Real>(rec.global));
    auto vp = matmul(g.param(verb_weights_), x);
    auto tp = matmul(g.param(tuple_weights_), x);
    std::vector<Var<Real>> per_verb;
    for (std::size_t v = 0; v < lex_->verb_count(); ++v) {
      Var<Real> s = pick(vp, v);
      for (const auto& slot : slots_[v]) {
        std::vector<std::size_t> rows;
        for (auto [n, row] : slot.fillers) rows.push_back(row);
        s = add(s, logsumexp(gather(tp, rows)));
      }
      per_verb.push_back(s);
    }
    auto logz = logsumexp(concat(per_verb));
    auto frame = lex_->frame(sit.verb);
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < frame.size(); ++i) rows.push_back(tuple_row({sit.verb, frame[i], sit.fillers[i]}));
    auto gold = add(pick(vp, sit.verb), sum(gather(tp, rows)));
    return sub(logz, gold);
  }

  bool predicts_verbs() const { return true; }
  std::vector<ScoredSituation> rank(const FeatureRecord& rec, std::size_t k) const { return infer(rec, k); }
  ScoredSituation given_verb(const FeatureRecord& rec, std::size_t verb) const {
    auto [vp, tp] = potentials(rec);
    auto [s, sit] = best_for_verb(verb, vp, tp);
    return {sit, 0.0, double(s - vp[verb])};
  }

 private:
  void check(const FeatureRecord& rec) const {
    if (rec.global.size() != dim_) throw NumericError("crf: feature dimension mismatch");
  }

  std::pair<Real, Situation> best_for_verb(std::size_t v, const std::vector<Real>& vp, const std::vector<Real>& tp) const {
    Situation sit{v, {}};
    Real s = vp[v];
    for (const auto& slot : slots_.at(v)) {
      std::size_t arg = slot.fillers.front().first;
      Real best = tp[slot.fillers.front().second];
      for (auto [n, row] : slot.fillers)
        if (tp[row] > best) {
          best = tp[row];
          arg = n;
        }
      sit.fillers.push_back(arg);
      s += best;
    }
    return {s, sit};
  }

  std::shared_ptr<const Lexicon> lex_;
  std::size_t dim_;
  std::map<TupleKey, std::size_t> rows_;
  std::vector<std::vector<Slot>> slots_;
  ParameterStore<Real> store_;
  std::size_t verb_weights_ = 0;
  std::size_t tuple_weights_ = 0;
};

template <class Real>
const CrfModel<Real>& as_predictor(const CrfModel<Real>& m) {
  return m;
}

/// Per-verb frequency table of complete realized frames.
using FrameTable = std::vector<std::vector<std::pair<Situation, std::size_t>>>;

/// Counts every annotation of every example; keeps the `top` most frequent
/// frames per verb, ties broken by ascending filler indices.
inline FrameTable frame_table(const Lexicon& lex, std::span<const AnnotatedExample> train, std::size_t top = 10) {
  std::vector<std::map<std::vector<std::size_t>, std::size_t>> counts(lex.verb_count());
  for (const auto& ex : train)
    for (const auto& a : ex.annotations) ++counts.at(a.verb)[a.fillers];
  FrameTable table(lex.verb_count());
  for (std::size_t v = 0; v < lex.verb_count(); ++v) {
    if (counts[v].empty()) throw ValidationError("discrete classifier: verb '" + lex.verb_id(v) + "' has no training frames");
    for (const auto& [fillers, c] : counts[v]) table[v].push_back({Situation{v, fillers}, c});
    std::stable_sort(table[v].begin(), table[v].end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (table[v].size() > top) table[v].resize(top);
  }
  return table;
}

/// Softmax over the union of kept frames, linear in the global feature.
template <class Real>
class DiscreteClassifier {
 public:
  using real_type = Real;

  DiscreteClassifier(std::shared_ptr<const Lexicon> lex, FrameTable table, std::size_t feature_dim, std::uint64_t seed)
      : lex_(std::move(lex)), table_(std::move(table)), dim_(feature_dim) {
    for (std::size_t v = 0; v < table_.size(); ++v) {
      for (const auto& [sit, c] : table_[v]) {
        validate(*lex_, sit);
        class_of_.emplace(sit.fillers.size() ? std::make_pair(v, sit.fillers) : std::make_pair(v, sit.fillers),
                          classes_.size());
        verb_classes_.resize(table_.size());
        verb_classes_[v].push_back(classes_.size());
        classes_.push_back(sit);
      }
    }
    std::mt19937_64 rng(seed);
    layer_ = rnn::Affine::create(store_, "discrete", dim_, classes_.size(), models::kGroupVerb, rng);
  }

  const Lexicon& lexicon() const { return *lex_; }
  const std::shared_ptr<const Lexicon>& lexicon_ptr() const { return lex_; }
  ParameterStore<Real>& store() { return store_; }
  const ParameterStore<Real>& store() const { return store_; }
  const FrameTable& table() const { return table_; }
  const std::vector<Situation>& classes() const { return classes_; }
  std::size_t feature_dim() const { return dim_; }

  std::optional<std::size_t> class_of(const Situation& s) const {
    auto it = class_of_.find({s.verb, s.fillers});
    if (it == class_of_.end()) return std::nullopt;
    return it->second;
  }

  /// Cross-entropy toward the requested annotation's frame, falling back to
  /// the other annotations; zero when none of them is a kept frame.
  Var<Real> example_loss(Graph<Real>& g, const AnnotatedExample& ex, const FeatureRecord& rec, std::size_t annotation,
                         std::span<const Real> = {}) const {
    for (std::size_t k = 0; k < 3; ++k) {
      if (auto c = class_of(ex.annotations[(annotation + k) % 3]))
        return numeric::cross_entropy(logits(g, rec), *c);
    }
    return g.constant(Tensor<Real>::scalar(0));
  }

  Var<Real> logits(Graph<Real>& g, const FeatureRecord& rec) const {
    if (rec.global.size() != dim_) throw NumericError("discrete classifier: feature dimension mismatch");
    return layer_(g, g.constant(features::to_tensor<Real>(rec.global)));
  }

  bool predicts_verbs() const { return true; }

  /// Best kept frame per verb, verbs ranked by that frame's log-probability.
  std::vector<ScoredSituation> rank(const FeatureRecord& rec, std::size_t k) const {
    Graph<Real> g(&store_);
    auto logp = numeric::log_softmax(logits(g, rec)).value();
    std::vector<std::pair<Real, std::size_t>> per_verb;
    for (std::size_t v = 0; v < verb_classes_.size(); ++v) per_verb.push_back({best_class(logp, v).first, v});
    std::stable_sort(per_verb.begin(), per_verb.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<ScoredSituation> out;
    for (std::size_t i = 0; i < std::min(k, per_verb.size()); ++i) {
      auto [s, c] = best_class(logp, per_verb[i].second);
      out.push_back({classes_[c], 0.0, double(s)});
    }
    return out;
  }

  ScoredSituation given_verb(const FeatureRecord& rec, std::size_t verb) const {
    Graph<Real> g(&store_);
    auto logp = numeric::log_softmax(logits(g, rec)).value();
    auto [s, c] = best_class(logp, verb);
    return {classes_[c], 0.0, double(s)};
  }

 private:
  std::pair<Real, std::size_t> best_class(const Tensor<Real>& logp, std::size_t verb) const {
    const auto& ids = verb_classes_.at(verb);
    std::size_t arg = ids.front();
    for (std::size_t c : ids)
      if (logp[c] > logp[arg]) arg = c;
    return {logp[arg], arg};
  }

  std::shared_ptr<const Lexicon> lex_;
  FrameTable table_;
  std::size_t dim_;
  std::vector<Situation> classes_;
  std::vector<std::vector<std::size_t>> verb_classes_;
  std::map<std::pair<std::size_t, std::vector<std::size_t>>, std::size_t> class_of_;
  ParameterStore<Real> store_;
  rnn::Affine layer_;
};

template <class Real>
const DiscreteClassifier<Real>& as_predictor(const DiscreteClassifier<Real>& m) {
  return m;
}

}  // namespace situ::crf
