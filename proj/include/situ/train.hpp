#pragma once

// Minibatch training: Adam with step decay, optional class-weighted verb
// loss, phases that restrict which parameter groups move, and dev-set model
// selection.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "situ/crf.hpp"
#include "situ/data.hpp"
#include "situ/decode.hpp"
#include "situ/eval.hpp"

namespace situ::train {

using numeric::Graph;
using numeric::ParameterStore;
using numeric::Tensor;

struct Phase {
  std::string name;
  std::size_t iterations = 0;
  std::vector<std::string> groups;  // empty: every group
  bool operator==(const Phase&) const = default;
};

struct TrainConfig {
  double lr_initial = 4e-4;
  double lr_decay_factor = 0.1;
  std::size_t lr_decay_every = 2000;
  std::size_t batch_size = 32;
  std::size_t max_iters = 5000;
  std::vector<Phase> phases;  // empty: a single phase over every group
  std::uint64_t seed = 0;
  bool weighted_verb_loss = true;
  std::size_t eval_every = 500;
  std::size_t eval_limit = 0;  // dev examples per evaluation, 0 for all
  std::string select_metric = "mean";
  double clip_norm = 5.0;  // global gradient norm, 0 disables
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    auto fail = [](const std::string& m) { throw UsageError("train config: " + m); };
    if (!(lr_initial > 0)) fail("lr_initial must be positive");
    if (!(lr_decay_factor > 0 && lr_decay_factor <= 1)) fail("lr_decay_factor must lie in (0, 1]");
    if (!lr_decay_every || !batch_size || !eval_every) fail("lr_decay_every, batch_size and eval_every must be positive");
    if (!(clip_norm >= 0)) fail("clip_norm must be non-negative");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) fail("bad Adam constants");
    for (const auto& p : phases)
      if (!p.iterations) fail("phase '" + p.name + "' has no iterations");
  }

  std::vector<Phase> schedule() const {
    if (!phases.empty()) return phases;
    return {Phase{"all", max_iters, {}}};
  }

  std::size_t total_iterations() const {
    std::size_t n = 0;
    for (const auto& p : schedule()) n += p.iterations;
    return n;
  }

  json to_json() const {
    json ph = json::array();
    for (const auto& p : phases) ph.push_back({{"name", p.name}, {"iterations", p.iterations}, {"groups", p.groups}});
    return {{"lr_initial", lr_initial},       {"lr_decay_factor", lr_decay_factor},
            {"lr_decay_every", lr_decay_every}, {"batch_size", batch_size},
            {"max_iters", max_iters},           {"phases", ph},
            {"seed", seed},                     {"weighted_verb_loss", weighted_verb_loss},
            {"eval_every", eval_every},         {"eval_limit", eval_limit},
            {"select_metric", select_metric},   {"clip_norm", clip_norm},
            {"beta1", beta1},                   {"beta2", beta2},
            {"epsilon", epsilon}};
  }

  /// Overlays the keys present in `j`.
  void merge(const json& j) {
    auto take = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    try {
      take("lr_initial", lr_initial);
      take("lr_decay_factor", lr_decay_factor);
      take("lr_decay_every", lr_decay_every);
      take("batch_size", batch_size);
      take("max_iters", max_iters);
      take("seed", seed);
      take("weighted_verb_loss", weighted_verb_loss);
      take("eval_every", eval_every);
      take("eval_limit", eval_limit);
      take("select_metric", select_metric);
      take("clip_norm", clip_norm);
      take("beta1", beta1);
      take("beta2", beta2);
      take("epsilon", epsilon);
      if (j.contains("phases")) {
        phases.clear();
        for (const auto& p : j.at("phases"))
          phases.push_back({p.value("name", std::string("phase") + std::to_string(phases.size())),
                            p.at("iterations").get<std::size_t>(),
                            p.value("groups", std::vector<std::string>{})});
      }
    } catch (const json::exception& e) {
      throw UsageError(std::string("train config: ") + e.what());
    }
  }
};

/// w_v = (1/f_v) |V| / sum_u (1/f_u) over verbs seen in training; unseen
/// verbs get the largest weight.
template <class Real = double>
std::vector<Real> class_weights(std::span<const std::size_t> verb_freq) {
  if (verb_freq.empty()) throw ValidationError("class_weights: no verbs");
  double inv_sum = 0;
  std::size_t seen = 0;
  for (std::size_t f : verb_freq)
    if (f) {
      inv_sum += 1.0 / double(f);
      ++seen;
    }
  if (!seen) throw ValidationError("class_weights: every verb has zero frequency");
  std::vector<Real> w(verb_freq.size());
  Real max_w = 0;
  for (std::size_t v = 0; v < w.size(); ++v)
    if (verb_freq[v]) {
      w[v] = Real((1.0 / double(verb_freq[v])) * double(seen) / inv_sum);
      max_w = std::max(max_w, w[v]);
    }
  for (std::size_t v = 0; v < w.size(); ++v)
    if (!verb_freq[v]) w[v] = max_w;
  return w;
}

/// lr_initial * decay^floor(iteration / decay_every), iteration 0-based.
inline double effective_lr(const TrainConfig& cfg, std::size_t iteration) {
  return cfg.lr_initial * std::pow(cfg.lr_decay_factor, double(iteration / cfg.lr_decay_every));
}

inline bool group_active(const std::vector<std::string>& groups, const std::string& g) {
  return groups.empty() || std::find(groups.begin(), groups.end(), g) != groups.end();
}

/// One Adam update from the gradients held in the store. Returns false, and
/// leaves everything untouched, when an active gradient is not finite.
template <class Real>
bool adam_step(ParameterStore<Real>& store, const TrainConfig& cfg, double lr, const std::vector<std::string>& groups = {}) {
  double sq = 0;
  for (const auto& p : store) {
    if (!group_active(groups, p.group)) continue;
    if (p.grad.shape() != p.value.shape()) throw NumericError("adam_step: gradient shape mismatch for '" + p.name + "'");
    for (Real g : p.grad.values()) {
      if (!std::isfinite(double(g))) return false;
      sq += double(g) * double(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = cfg.clip_norm > 0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
  ++store.step;
  const double t = double(store.step);
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  const Real b1 = Real(cfg.beta1), b2 = Real(cfg.beta2), eps = Real(cfg.epsilon);
  for (auto& p : store) {
    if (!group_active(groups, p.group)) continue;
    auto value = p.value.span();
    auto grad = p.grad.span();
    auto m = p.m.span();
    auto v = p.v.span();
    for (std::size_t i = 0; i < value.size(); ++i) {
      Real g = grad[i] * Real(clip);
      m[i] = b1 * m[i] + (Real(1) - b1) * g;
      v[i] = b2 * v[i] + (Real(1) - b2) * g * g;
      Real mhat = m[i] / Real(c1);
      Real vhat = v[i] / Real(c2);
      value[i] -= Real(lr) * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return true;
}

struct LogRecord {
  std::size_t iteration = 0;  // 1-based, after the update
  double loss = 0;
  double lr = 0;
  std::string phase;
  std::optional<json> metrics;
  std::optional<std::string> event;

  json to_json() const {
    json j{{"iteration", iteration}, {"loss", loss}, {"lr", lr}, {"phase", phase}};
    if (metrics) j["metrics"] = *metrics;
    if (event) j["event"] = *event;
    return j;
  }
};

struct TrainResult {
  std::vector<LogRecord> log;
  std::optional<eval::Metrics> best_metrics;
  std::size_t best_iteration = 0;
  std::string selected_by;
};

namespace detail {

template <class Real>
std::vector<Tensor<Real>> snapshot(const ParameterStore<Real>& store) {
  std::vector<Tensor<Real>> out;
  for (const auto& p : store) out.push_back(p.value);
  return out;
}

template <class Real>
void restore(ParameterStore<Real>& store, const std::vector<Tensor<Real>>& values) {
  std::size_t i = 0;
  for (auto& p : store) p.value = values[i++];
}

template <class Model>
eval::Metrics dev_metrics(const Model& model, const data::Dataset& dev, std::size_t limit) {
  using decode::as_predictor;
  using crf::as_predictor;
  std::span<const AnnotatedExample> examples = dev.examples;
  if (limit && limit < examples.size()) examples = examples.first(limit);
  return eval::evaluate(as_predictor(model), *dev.lexicon, examples, dev.features.records);
}

}  // namespace detail

/// Mean loss over one batch of (example, annotation) pairs; accumulates
/// gradients into the store when `backward` is set.
template <class Model, class Real = typename Model::real_type>
double batch_loss(Model& model, const data::Dataset& train, std::span<const std::size_t> batch, std::size_t annotation,
                  std::span<const Real> weights, bool backward) {
  Graph<Real> g(model.store());
  std::optional<numeric::Var<Real>> total;
  for (std::size_t i : batch) {
    const auto& ex = train.examples.at(i);
    auto l = model.example_loss(g, ex, train.record(ex), annotation, weights);
    total = total ? numeric::add(*total, l) : l;
  }
  auto loss = numeric::scale(*total, Real(1) / Real(batch.size()));
  if (backward) g.backward(loss);
  return double(loss.item());
}

/// Trains in place. With a dev set the model ends holding the parameters of
/// the best evaluation (strict improvement of cfg.select_metric, falling back
/// to value@gt when the model cannot predict verbs).
template <class Model, class Real = typename Model::real_type>
TrainResult train_loop(Model& model, const data::Dataset& train, const data::Dataset* dev, const TrainConfig& cfg,
                       const std::function<void(const LogRecord&)>& sink = {}) {
  cfg.validate();
  if (train.examples.empty()) throw ValidationError("train_loop: empty training set");
  if (dev && dev->examples.empty()) throw ValidationError("train_loop: empty dev set");
  if (dev && dev->lexicon->hash() != train.lexicon->hash()) throw ValidationError("train_loop: splits use different lexicons");

  std::vector<Real> weights;
  if (cfg.weighted_verb_loss) weights = class_weights<Real>(model.lexicon().verb_frequencies());

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.examples.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t cursor = 0, epoch = 0;

  TrainResult result;
  std::vector<Tensor<Real>> best;
  double best_score = -1;
  auto emit = [&](LogRecord r) {
    if (sink) sink(r);
    result.log.push_back(std::move(r));
  };
  auto evaluate = [&](LogRecord& rec) {
    auto m = detail::dev_metrics(model, *dev, cfg.eval_limit);
    std::string key = m.has(cfg.select_metric) ? cfg.select_metric : "value@gt";
    double score = m.get(key);
    rec.metrics = m.to_json();
    if (best.empty() || score > best_score) {
      best_score = score;
      best = detail::snapshot(model.store());
      result.best_metrics = m;
      result.best_iteration = rec.iteration;
      result.selected_by = key;
      rec.event = "best";
    }
  };

  std::size_t iteration = 0, nonfinite_run = 0;
  const auto schedule = cfg.schedule();
  for (const auto& phase : schedule) {
    for (std::size_t k = 0; k < phase.iterations; ++k) {
      std::vector<std::size_t> batch;
      while (batch.size() < std::min(cfg.batch_size, order.size())) {
        if (cursor == order.size()) {
          std::shuffle(order.begin(), order.end(), rng);
          cursor = 0;
          ++epoch;
        }
        batch.push_back(order[cursor++]);
      }
      const double lr = effective_lr(cfg, iteration);
      ++iteration;
      LogRecord rec{iteration, 0.0, lr, phase.name, std::nullopt, std::nullopt};
      model.store().zero_grad();
      bool finite = true;
      try {
        rec.loss = batch_loss<Model, Real>(model, train, batch, epoch % 3, weights, true);
        finite = std::isfinite(rec.loss);
      } catch (const NumericError&) {
        finite = false;
      }
      if (!finite) {
        rec.loss = std::nan("");
        rec.event = "nonfinite_loss";
        if (++nonfinite_run >= 2) {
          emit(rec);
          throw NumericError("training loss was non-finite twice in a row at iteration " + std::to_string(iteration));
        }
      } else {
        nonfinite_run = 0;
        if (!adam_step(model.store(), cfg, lr, phase.groups)) rec.event = "skipped_nonfinite_gradient";
      }
      const bool last = iteration == cfg.total_iterations();
      if (dev && (iteration % cfg.eval_every == 0 || last)) evaluate(rec);
      emit(std::move(rec));
    }
  }
  if (!best.empty()) detail::restore(model.store(), best);
  return result;
}

}  // namespace situ::train
