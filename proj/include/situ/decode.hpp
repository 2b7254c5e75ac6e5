#pragma once

// Inference over SituationModel: greedy decoding, top-k verb expansion and
// length-synchronized beam search. All ties break toward the lowest index.

#include <algorithm>
#include <optional>
#include <vector>

#include "situ/models.hpp"

namespace situ::decode {

using features::FeatureRecord;
using models::SituationModel;
using models::TargetKind;
using numeric::Graph;

/// A situation with its model scores: verb_score is log p(v) from the action
/// path (0 when the verb was given), noun_score the summed noun log-probs.
struct ScoredSituation {
  Situation situation;
  double verb_score = 0;
  double noun_score = 0;
  double total() const { return verb_score + noun_score; }
};

namespace detail {

template <class Real>
std::size_t argmax_shifted(const numeric::Tensor<Real>& logp, Real base, Real& best) {
  std::size_t arg = 0;
  best = base + logp[0];
  for (std::size_t t = 1; t < logp.size(); ++t) {
    Real s = base + logp[t];
    if (s > best) {
      best = s;
      arg = t;
    }
  }
  return arg;
}

/// Verb log-probabilities from the action path; for kind B also returns the
/// cursor positioned after the verb step.
template <class Real>
numeric::Tensor<Real> verb_log_probs(const SituationModel<Real>& m, Graph<Real>& g,
                                     const typename SituationModel<Real>::Context& ctx,
                                     std::optional<typename SituationModel<Real>::Cursor>& after_verb) {
  if (m.config().kind == models::ModelKind::SharedRnn) {
    auto cur = m.start(g, m.plan(std::nullopt));
    auto logp = m.advance(g, ctx, cur).value();
    after_verb = std::move(cur);
    return logp;
  }
  if (!m.has_verb_classifier()) throw UsageError("model kind a cannot predict verbs");
  return numeric::log_softmax(m.verb_logits(g, *ctx.record)).value();
}

template <class Real>
ScoredSituation greedy_nouns(const SituationModel<Real>& m, Graph<Real>& g,
                             const typename SituationModel<Real>::Context& ctx,
                             typename SituationModel<Real>::Cursor cur, double verb_score) {
  std::vector<std::size_t> tokens;
  Real score = 0;
  while (!m.finished(cur)) {
    auto logp = m.advance(g, ctx, cur).value();
    Real best;
    std::size_t t = argmax_shifted(logp, score, best);
    score = best;
    tokens.push_back(t);
    m.commit(cur, t);
  }
  return {decode_tokens(m.lexicon(), *cur.plan.verb, tokens, m.config().direction), verb_score, double(score)};
}

/// Cursor with the verb fixed: kind B runs and commits its verb step.
template <class Real>
typename SituationModel<Real>::Cursor cursor_for_verb(const SituationModel<Real>& m, Graph<Real>& g,
                                                      const typename SituationModel<Real>::Context& ctx,
                                                      std::size_t verb, double* verb_score = nullptr) {
  auto cur = m.start(g, m.plan(verb));
  if (m.config().kind == models::ModelKind::SharedRnn) {
    auto logp = m.advance(g, ctx, cur);
    if (verb_score) *verb_score = logp.value()[verb];
    m.commit(cur, verb);
  }
  return cur;
}

}  // namespace detail

/// Most likely token at each step. Without a verb, kinds B/C/D take the
/// argmax verb from their action path; kind A requires one.
template <class Real>
ScoredSituation greedy_decode(const SituationModel<Real>& m, const FeatureRecord& rec, std::optional<std::size_t> verb) {
  Graph<Real> g(&m.store());
  auto ctx = m.context(g, rec);
  if (!verb) {
    std::optional<typename SituationModel<Real>::Cursor> after;
    auto vlogp = detail::verb_log_probs(m, g, ctx, after);
    Real best;
    std::size_t v = detail::argmax_shifted(vlogp, Real(0), best);
    if (after) {
      m.commit(*after, v);
      return detail::greedy_nouns(m, g, ctx, std::move(*after), double(best));
    }
    return detail::greedy_nouns(m, g, ctx, detail::cursor_for_verb(m, g, ctx, v), double(best));
  }
  return detail::greedy_nouns(m, g, ctx, detail::cursor_for_verb(m, g, ctx, *verb), 0.0);
}

/// Top-k verbs from the action path, each completed greedily. Ordered by
/// verb score descending, ties by verb index.
template <class Real>
std::vector<ScoredSituation> topk_verb_decode(const SituationModel<Real>& m, const FeatureRecord& rec, std::size_t k) {
  if (k < 1) throw UsageError("topk_verb_decode: k must be at least 1");
  Graph<Real> g(&m.store());
  auto ctx = m.context(g, rec);
  std::optional<typename SituationModel<Real>::Cursor> after;
  auto vlogp = detail::verb_log_probs(m, g, ctx, after);
  std::vector<std::size_t> order(vlogp.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return vlogp[a] > vlogp[b]; });
  order.resize(std::min(k, order.size()));
  std::vector<ScoredSituation> out;
  for (std::size_t v : order) {
    if (after) {
      auto cur = *after;
      m.commit(cur, v);
      out.push_back(detail::greedy_nouns(m, g, ctx, std::move(cur), double(vlogp[v])));
    } else {
      out.push_back(detail::greedy_nouns(m, g, ctx, detail::cursor_for_verb(m, g, ctx, v), double(vlogp[v])));
    }
  }
  return out;
}

template <class Real>
struct BeamHypothesis {
  std::vector<std::size_t> tokens;  // decoding order
  Real score = 0;
};

struct BeamResult {
  ScoredSituation best;
  std::vector<ScoredSituation> beam;  // final beam, best first
};

/// Beam over the noun steps for a fixed verb, scoring cumulative
/// log-probability; candidates are ordered by (score desc, tokens asc).
template <class Real>
BeamResult beam_search(const SituationModel<Real>& m, const FeatureRecord& rec, std::size_t verb, std::size_t width) {
  if (width < 1) throw UsageError("beam_search: width must be at least 1");
  using Cursor = typename SituationModel<Real>::Cursor;
  Graph<Real> g(&m.store());
  auto ctx = m.context(g, rec);
  struct Hyp {
    BeamHypothesis<Real> h;
    Cursor cur;
  };
  std::vector<Hyp> beam;
  beam.push_back({{}, detail::cursor_for_verb(m, g, ctx, verb)});
  while (!m.finished(beam.front().cur)) {
    struct Cand {
      std::size_t parent;
      std::size_t token;
      Real score;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < beam.size(); ++i) {
      auto logp = m.advance(g, ctx, beam[i].cur).value();
      for (std::size_t t = 0; t < logp.size(); ++t) cands.push_back({i, t, beam[i].h.score + logp[t]});
    }
    auto less_tokens = [&](const Cand& a, const Cand& b) {
      const auto& ta = beam[a.parent].h.tokens;
      const auto& tb = beam[b.parent].h.tokens;
      if (ta != tb) return ta < tb;
      return a.token < b.token;
    };
    std::sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      return less_tokens(a, b);
    });
    cands.resize(std::min(width, cands.size()));
    std::vector<Hyp> next;
    next.reserve(cands.size());
    for (const auto& c : cands) {
      Hyp h = beam[c.parent];
      h.h.tokens.push_back(c.token);
      h.h.score = c.score;
      m.commit(h.cur, c.token);
      next.push_back(std::move(h));
    }
    beam = std::move(next);
  }
  BeamResult result;
  for (const auto& h : beam)
    result.beam.push_back({decode_tokens(m.lexicon(), verb, h.h.tokens, m.config().direction), 0.0, double(h.h.score)});
  result.best = result.beam.front();
  return result;
}

/// Adapter giving SituationModel the predictor surface used by evaluation.
template <class Real>
class SequencePredictor {
 public:
  explicit SequencePredictor(const SituationModel<Real>& m) : m_(&m) {}
  bool predicts_verbs() const { return m_->predicts_verbs(); }
  std::vector<ScoredSituation> rank(const FeatureRecord& rec, std::size_t k) const { return topk_verb_decode(*m_, rec, k); }
  ScoredSituation given_verb(const FeatureRecord& rec, std::size_t verb) const { return greedy_decode(*m_, rec, verb); }

 private:
  const SituationModel<Real>* m_;
};

template <class Real>
SequencePredictor<Real> as_predictor(const SituationModel<Real>& m) {
  return SequencePredictor<Real>(m);
}

}  // namespace situ::decode
