#pragma once

// The four sequence architectures. Each is an LSTM over a step plan: a list
// of (input source, prediction target) pairs derived from the model kind and
// the verb's frame.
//
//   A  no vision        verb -> n1 -> n2 ... (ground-truth verb given)
//   B  shared RNN       image -> v, v -> n1 -> n2 ...   (verb is a token)
//   C  classifier + RNN verb, image -> n1 -> n2 ...     (affine verb classifier)
//   D  separate + RNN   verb, image -> n1 -> n2 ...     (fusion verb scorer)
//
// With attention (C/D only) the image step is dropped and every step's input
// is the token embedding concatenated with an attention context over the grid.

#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "situ/features.hpp"
#include "situ/rnn.hpp"
#include "situ/schema.hpp"

namespace situ::models {

using features::FeatureRecord;
using numeric::Graph;
using numeric::ParameterStore;
using numeric::Shape;
using numeric::Tensor;
using numeric::Var;

enum class ModelKind { NoVision, SharedRnn, ClassifierPlusRnn, SeparatePlusRnn };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::NoVision: return "a";
    case ModelKind::SharedRnn: return "b";
    case ModelKind::ClassifierPlusRnn: return "c";
    case ModelKind::SeparatePlusRnn: return "d";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "a") return ModelKind::NoVision;
  if (s == "b") return ModelKind::SharedRnn;
  if (s == "c") return ModelKind::ClassifierPlusRnn;
  if (s == "d") return ModelKind::SeparatePlusRnn;
  throw UsageError("unknown model kind '" + s + "'");
}

// Parameter groups, toggled per training phase.
inline constexpr const char* kGroupRnn = "rnn";
inline constexpr const char* kGroupFeature = "feature";
inline constexpr const char* kGroupVerb = "verb";

struct ModelConfig {
  ModelKind kind = ModelKind::SeparatePlusRnn;
  bool use_attention = false;
  Direction direction = Direction::Forward;
  std::size_t embed = 64;
  std::size_t hidden = 64;
  std::size_t attention_width = 32;
  features::FeatureDims dims;

  void validate() const {
    if (use_attention && (kind == ModelKind::NoVision || kind == ModelKind::SharedRnn))
      throw UsageError("attention is only available for model kinds c and d");
    if (use_attention && (dims.grid < 1 || dims.cell < 1)) throw UsageError("attention requires grid features");
    if (embed == 0 || hidden == 0) throw UsageError("model sizes must be positive");
    if (kind != ModelKind::NoVision && dims.global == 0) throw UsageError("model needs global features");
  }

  json to_json() const {
    return {{"kind", to_string(kind)},
            {"attention", use_attention},
            {"direction", situ::to_string(direction)},
            {"embed", embed},
            {"hidden", hidden},
            {"attention_width", attention_width},
            {"dims", {dims.global, dims.region, dims.cell, dims.grid}}};
  }

  static ModelConfig from_json(const json& j) {
    ModelConfig c;
    c.kind = parse_model_kind(j.at("kind").get<std::string>());
    c.use_attention = j.at("attention").get<bool>();
    c.direction = parse_direction(j.at("direction").get<std::string>());
    c.embed = j.at("embed").get<std::size_t>();
    c.hidden = j.at("hidden").get<std::size_t>();
    c.attention_width = j.at("attention_width").get<std::size_t>();
    auto d = j.at("dims");
    c.dims = {d.at(0).get<std::uint32_t>(), d.at(1).get<std::uint32_t>(), d.at(2).get<std::uint32_t>(),
              d.at(3).get<std::uint32_t>()};
    return c;
  }
};

enum class InputSource { VerbEmbedding, ImageFeature, PreviousToken };
enum class TargetKind { None, Verb, Noun };

struct PlanStep {
  InputSource input = InputSource::VerbEmbedding;
  bool attend = false;
  TargetKind target = TargetKind::None;
  std::size_t position = 0;  // noun targets: index into the decoding order
  std::size_t role = 0;      // noun targets: lexicon role id
  bool operator==(const PlanStep&) const = default;
};

struct StepPlan {
  std::optional<std::size_t> verb;
  std::vector<std::size_t> roles;  // decoding order
  std::vector<PlanStep> steps;

  std::size_t noun_targets() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.target == TargetKind::Noun;
    return n;
  }
  std::size_t verb_targets() const {
    std::size_t n = 0;
    for (const auto& s : steps) n += s.target == TargetKind::Verb;
    return n;
  }
};

/// For kind B the verb may be unknown; the plan then holds only the verb
/// step and is completed once a verb is chosen.
inline StepPlan build_plan(const ModelConfig& cfg, const Lexicon& lex, std::optional<std::size_t> verb) {
  StepPlan plan;
  plan.verb = verb;
  if (!verb && cfg.kind != ModelKind::SharedRnn) throw UsageError("model kind " + to_string(cfg.kind) + " needs a verb");
  if (cfg.use_attention && (cfg.kind == ModelKind::NoVision || cfg.kind == ModelKind::SharedRnn))
    throw UsageError("attention is only available for model kinds c and d");
  if (cfg.kind == ModelKind::SharedRnn) {
    plan.steps.push_back({InputSource::ImageFeature, false, TargetKind::Verb});
    if (!verb) return plan;
  }
  plan.roles = role_order(lex, *verb, cfg.direction);
  auto noun_step = [&](InputSource in, bool attend, std::size_t k) {
    plan.steps.push_back({in, attend, TargetKind::Noun, k, plan.roles[k]});
  };
  const std::size_t R = plan.roles.size();
  switch (cfg.kind) {
    case ModelKind::NoVision:
      noun_step(InputSource::VerbEmbedding, false, 0);
      for (std::size_t k = 1; k < R; ++k) noun_step(InputSource::PreviousToken, false, k);
      plan.steps.push_back({InputSource::PreviousToken, false, TargetKind::None});
      break;
    case ModelKind::SharedRnn:
      noun_step(InputSource::VerbEmbedding, false, 0);
      for (std::size_t k = 1; k < R; ++k) noun_step(InputSource::PreviousToken, false, k);
      break;
    case ModelKind::ClassifierPlusRnn:
    case ModelKind::SeparatePlusRnn:
      if (cfg.use_attention) {
        noun_step(InputSource::VerbEmbedding, true, 0);
        for (std::size_t k = 1; k < R; ++k) noun_step(InputSource::PreviousToken, true, k);
      } else {
        plan.steps.push_back({InputSource::VerbEmbedding, false, TargetKind::None});
        noun_step(InputSource::ImageFeature, false, 0);
        for (std::size_t k = 1; k < R; ++k) noun_step(InputSource::PreviousToken, false, k);
      }
      break;
  }
  return plan;
}

template <class Real>
class SituationModel {
 public:
  using real_type = Real;

  /// Per-example values shared by every step of one graph.
  struct Context {
    const FeatureRecord* record = nullptr;
    std::optional<Var<Real>> image;
    std::optional<features::AttentionKeys<Real>> keys;
  };

  /// Decoding position: the plan, the next step to run, the LSTM state and
  /// the embedding index of the most recent target token.
  struct Cursor {
    StepPlan plan;
    std::size_t step = 0;
    rnn::LstmState<Real> state;
    std::optional<std::size_t> last_token;
  };

  SituationModel(ModelConfig cfg, std::shared_ptr<const Lexicon> lex, std::uint64_t seed)
      : cfg_(std::move(cfg)), lex_(std::move(lex)) {
    cfg_.validate();
    std::mt19937_64 rng(seed);
    const std::size_t N = lex_->noun_count(), V = lex_->verb_count();
    embedding_ = rnn::Embedding::create(store_, "embed", N + V, cfg_.embed, kGroupRnn, rng);
    std::size_t lstm_in = cfg_.embed;
    if (cfg_.use_attention) {
      attention_ = features::AttentionParams::create(store_, "attention", cfg_.hidden, cfg_.dims.cell,
                                                     cfg_.attention_width, kGroupFeature, rng);
      lstm_in += cfg_.dims.cell;
    } else if (cfg_.kind != ModelKind::NoVision) {
      image_ = rnn::Affine::create(store_, "image_embed", cfg_.dims.global, cfg_.embed, kGroupFeature, rng);
    }
    lstm_ = rnn::LstmParams::create(store_, "lstm", lstm_in, cfg_.hidden, kGroupRnn, rng);
    output_ = rnn::Affine::create(store_, "output", cfg_.hidden, output_size(), kGroupRnn, rng);
    if (cfg_.kind == ModelKind::ClassifierPlusRnn)
      classifier_ = rnn::Affine::create(store_, "verb_classifier", cfg_.dims.global, V, kGroupVerb, rng);
    if (cfg_.kind == ModelKind::SeparatePlusRnn)
      fusion_ = features::FusionParams::create(store_, "fusion", cfg_.dims, V, kGroupVerb, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  const Lexicon& lexicon() const { return *lex_; }
  const std::shared_ptr<const Lexicon>& lexicon_ptr() const { return lex_; }
  ParameterStore<Real>& store() { return store_; }
  const ParameterStore<Real>& store() const { return store_; }

  std::size_t noun_count() const { return lex_->noun_count(); }
  std::size_t verb_count() const { return lex_->verb_count(); }
  /// LSTM output vocabulary: nouns, plus verbs for kind B.
  std::size_t output_size() const { return noun_count() + (cfg_.kind == ModelKind::SharedRnn ? verb_count() : 0); }
  bool predicts_verbs() const { return cfg_.kind != ModelKind::NoVision; }
  bool has_verb_classifier() const {
    return cfg_.kind == ModelKind::ClassifierPlusRnn || cfg_.kind == ModelKind::SeparatePlusRnn;
  }

  StepPlan plan(std::optional<std::size_t> verb) const { return build_plan(cfg_, *lex_, verb); }

  Context context(Graph<Real>& g, const FeatureRecord& rec) const {
    Context ctx;
    ctx.record = &rec;
    if (image_) ctx.image = (*image_)(g, g.constant(features::to_tensor<Real>(rec.global)));
    if (attention_) ctx.keys = features::attention_keys(g, *attention_, g.constant(features::grid_tensor<Real>(cfg_.dims, rec)));
    return ctx;
  }

  Cursor start(Graph<Real>& g, StepPlan plan) const { return Cursor{std::move(plan), 0, rnn::zero_state(g, cfg_.hidden), {}}; }

  bool finished(const Cursor& cur) const {
    for (std::size_t s = cur.step; s < cur.plan.steps.size(); ++s)
      if (cur.plan.steps[s].target != TargetKind::None) return false;
    return true;
  }

  TargetKind next_target(const Cursor& cur) const {
    for (std::size_t s = cur.step; s < cur.plan.steps.size(); ++s)
      if (cur.plan.steps[s].target != TargetKind::None) return cur.plan.steps[s].target;
    return TargetKind::None;
  }

  /// First output index and size of the admissible token range for a target.
  std::pair<std::size_t, std::size_t> admissible(TargetKind t) const {
    if (t == TargetKind::Verb) return {noun_count(), verb_count()};
    return {0, noun_count()};
  }

  /// Runs steps up to and including the next target step; returns
  /// log-probabilities over that step's admissible tokens (relative indices).
  Var<Real> advance(Graph<Real>& g, const Context& ctx, Cursor& cur) const {
    const auto& steps = cur.plan.steps;
    while (cur.step < steps.size()) {
      const PlanStep& s = steps[cur.step];
      Var<Real> x;
      switch (s.input) {
        case InputSource::VerbEmbedding:
          if (!cur.plan.verb) throw UsageError("plan step needs a verb");
          x = embedding_(g, noun_count() + *cur.plan.verb);
          break;
        case InputSource::ImageFeature:
          if (!ctx.image) throw UsageError("model has no image input");
          x = *ctx.image;
          break;
        case InputSource::PreviousToken:
          if (!cur.last_token) throw UsageError("plan step needs a previous token");
          x = embedding_(g, *cur.last_token);
          break;
      }
      if (s.attend) {
        if (!ctx.keys) throw UsageError("attention requires grid features");
        auto att = features::attention_context(g, *attention_, *ctx.keys, cur.state.h);
        x = numeric::concat<Real>({x, att.context});
      }
      cur.state = rnn::lstm_step(g, lstm_, cur.state, x);
      ++cur.step;
      if (s.target != TargetKind::None) {
        auto [begin, len] = admissible(s.target);
        return numeric::log_softmax_range(rnn::project(g, output_, cur.state.h), begin, len);
      }
    }
    throw UsageError("advance: plan has no further targets");
  }

  /// Records the token chosen at the step advance() just ran.
  void commit(Cursor& cur, std::size_t token) const {
    if (cur.step == 0) throw UsageError("commit before advance");
    const PlanStep& s = cur.plan.steps[cur.step - 1];
    if (s.target == TargetKind::Verb) {
      if (token >= verb_count()) throw ValidationError("verb token out of range");
      cur.last_token = noun_count() + token;
      if (!cur.plan.verb) {
        std::size_t step = cur.step;
        cur.plan = plan(token);
        cur.step = step;
      } else if (*cur.plan.verb != token) {
        throw ValidationError("committed verb disagrees with the plan");
      }
    } else {
      if (token >= noun_count()) throw ValidationError("noun token out of range");
      cur.last_token = token;
    }
  }

  /// Verb logits from the dedicated action path (kinds C and D).
  Var<Real> verb_logits(Graph<Real>& g, const FeatureRecord& rec) const {
    if (classifier_) return (*classifier_)(g, g.constant(features::to_tensor<Real>(rec.global)));
    if (fusion_) return features::fusion_verb_logits(g, *fusion_, rec);
    throw UsageError("model kind " + to_string(cfg_.kind) + " has no verb classifier");
  }

  /// Sum of per-step cross-entropies with teacher forcing. For kind B the
  /// verb step is scaled by verb_weights[verb] when weights are given.
  Var<Real> sequence_loss(Graph<Real>& g, const Context& ctx, const Situation& sit,
                          std::span<const Real> verb_weights = {}) const {
    auto targets = encode_targets(*lex_, sit, cfg_.direction);
    auto cur = start(g, plan(sit.verb));
    std::optional<Var<Real>> total;
    auto accumulate = [&](Var<Real> term) { total = total ? numeric::add(*total, term) : term; };
    if (cfg_.kind == ModelKind::SharedRnn) {
      auto logp = advance(g, ctx, cur);
      Real w = verb_weights.empty() ? Real(1) : verb_weights[sit.verb];
      accumulate(numeric::scale(numeric::pick(logp, sit.verb), -w));
      commit(cur, sit.verb);
    }
    for (std::size_t t : targets) {
      auto logp = advance(g, ctx, cur);
      accumulate(numeric::scale(numeric::pick(logp, t), Real(-1)));
      commit(cur, t);
    }
    return *total;
  }

  /// Training objective for one annotation: the sequence loss plus, for
  /// kinds C and D, the (optionally class-weighted) verb classification loss.
  Var<Real> example_loss(Graph<Real>& g, const AnnotatedExample& ex, const FeatureRecord& rec, std::size_t annotation,
                         std::span<const Real> verb_weights = {}) const {
    const Situation& sit = ex.annotations.at(annotation);
    validate(*lex_, sit);
    auto ctx = context(g, rec);
    auto loss = sequence_loss(g, ctx, sit, verb_weights);
    if (has_verb_classifier()) {
      auto logits = verb_logits(g, rec);
      auto verb_loss = verb_weights.empty() ? numeric::cross_entropy(logits, sit.verb)
                                            : numeric::weighted_cross_entropy(logits, sit.verb, verb_weights);
      loss = numeric::add(loss, verb_loss);
    }
    return loss;
  }

  /// Distribution over the full output vocabulary for the next target after
  /// `prefix` (admissible-relative tokens; for kind B the first is the verb).
  /// Inadmissible entries are exactly zero.
  Tensor<Real> step_probabilities(const FeatureRecord& rec, const StepPlan& p, std::span<const std::size_t> prefix) const {
    Graph<Real> g(&store_);
    auto ctx = context(g, rec);
    auto cur = start(g, p);
    for (std::size_t tok : prefix) {
      advance(g, ctx, cur);
      commit(cur, tok);
    }
    auto kind = next_target(cur);
    auto logp = advance(g, ctx, cur);
    auto [begin, len] = admissible(kind);
    Tensor<Real> out(Shape{output_size()});
    for (std::size_t i = 0; i < len; ++i) out[begin + i] = std::exp(logp.value()[i]);
    return out;
  }

 private:
  ModelConfig cfg_;
  std::shared_ptr<const Lexicon> lex_;
  ParameterStore<Real> store_;
  rnn::Embedding embedding_;
  rnn::LstmParams lstm_;
  rnn::Affine output_;
  std::optional<rnn::Affine> image_;
  std::optional<features::AttentionParams> attention_;
  std::optional<rnn::Affine> classifier_;
  std::optional<features::FusionParams> fusion_;
};

}  // namespace situ::models
