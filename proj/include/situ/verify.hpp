#pragma once

// Finite-difference gradient suite over every differentiable op, the LSTM,
// attention, fusion and each full model loss. Shared by the gradcheck
// command and the test binaries.

#include <functional>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "situ/crf.hpp"
#include "situ/models.hpp"
#include "situ/numeric/gradcheck.hpp"

namespace situ::verify {

using numeric::Graph;
using numeric::GradCheckResult;
using numeric::ParameterStore;
using numeric::Shape;
using numeric::Tensor;
using numeric::Var;

struct CheckReport {
  std::string module;
  std::string name;
  double max_rel_error = 0;
  std::size_t seeds = 0;
  std::size_t coordinates = 0;

  json to_json() const {
    return {{"module", module}, {"name", name}, {"max_rel_error", max_rel_error}, {"seeds", seeds}, {"coordinates", coordinates}};
  }
};

namespace detail {

using Rng = std::mt19937_64;
using Fn = std::function<Var<double>(Graph<double>&, Var<double>)>;

/// Normal entries kept at least `gap` away from zero, so kinks stay outside
/// the finite-difference stencil.
inline Tensor<double> away_from_zero(Shape shape, Rng& rng, double gap = 1e-2) {
  auto t = Tensor<double>::normal(std::move(shape), 1.0, rng);
  for (auto& x : t.span())
    if (std::abs(x) < gap) x = x < 0 ? -gap : gap;
  return t;
}

/// Reduces any output to a scalar with fixed random weights.
inline Var<double> project(Graph<double>& g, Var<double> y, Rng& rng) {
  auto w = Tensor<double>::normal(y.shape(), 1.0, rng);
  return numeric::sum(numeric::elementwise_mul(y, g.constant(w)));
}

struct OpCase {
  std::string name;
  std::function<std::pair<Tensor<double>, Fn>(Rng&)> make;
};

inline std::vector<OpCase> op_cases() {
  using namespace numeric;
  auto unary_case = [](std::string name, Shape shape, auto op) {
    return OpCase{name, [shape, op](Rng& rng) {
                    auto x = away_from_zero(shape, rng);
                    auto seed = rng();
                    Fn fn = [op, seed](Graph<double>& g, Var<double> v) {
                      Rng r(seed);
                      return project(g, op(g, v, r), r);
                    };
                    return std::make_pair(x, fn);
                  }};
  };
  auto with_const = [](Graph<double>& g, Shape s, Rng& r) { return g.constant(Tensor<double>::normal(s, 1.0, r)); };
  std::vector<OpCase> cases;
  cases.push_back(unary_case("add", {3, 4}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return add(x, with_const(g, {3, 4}, r));
  }));
  cases.push_back(unary_case("add_row_broadcast", {4}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return add(with_const(g, {3, 4}, r), x);
  }));
  cases.push_back(unary_case("sub", {5}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return sub(with_const(g, {5}, r), x);
  }));
  cases.push_back(unary_case("elementwise_mul", {2, 3}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return elementwise_mul(x, add(x, with_const(g, {2, 3}, r)));
  }));
  cases.push_back(unary_case("scale", {4}, [](Graph<double>&, Var<double> x, Rng&) { return scale(x, -1.7); }));
  cases.push_back(unary_case("matmul_matrix", {3, 4}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return matmul(x, matmul(transpose(x), with_const(g, {3, 2}, r)));
  }));
  cases.push_back(unary_case("matmul_vector", {4}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return matmul(with_const(g, {3, 4}, r), x);
  }));
  cases.push_back(unary_case("transpose", {2, 5}, [](Graph<double>&, Var<double> x, Rng&) { return transpose(x); }));
  cases.push_back(unary_case("concat", {3}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return concat<double>({x, with_const(g, {2}, r), scale(x, 2.0)});
  }));
  cases.push_back(unary_case("slice", {6}, [](Graph<double>&, Var<double> x, Rng&) { return slice(x, 2, 3); }));
  cases.push_back(unary_case("sigmoid", {6}, [](Graph<double>&, Var<double> x, Rng&) { return sigmoid(x); }));
  cases.push_back(unary_case("tanh", {6}, [](Graph<double>&, Var<double> x, Rng&) { return numeric::tanh(x); }));
  cases.push_back(unary_case("relu", {6}, [](Graph<double>&, Var<double> x, Rng&) { return relu(x); }));
  cases.push_back(unary_case("softmax", {5}, [](Graph<double>&, Var<double> x, Rng&) { return softmax(x); }));
  cases.push_back(unary_case("softmax_rows", {3, 4}, [](Graph<double>&, Var<double> x, Rng&) { return softmax(x); }));
  cases.push_back(unary_case("log_softmax", {5}, [](Graph<double>&, Var<double> x, Rng&) { return log_softmax(x); }));
  cases.push_back(unary_case("log_softmax_rows", {2, 4}, [](Graph<double>&, Var<double> x, Rng&) { return log_softmax(x); }));
  cases.push_back(unary_case("log_softmax_range", {7}, [](Graph<double>&, Var<double> x, Rng&) {
    return log_softmax_range(x, 2, 4);
  }));
  cases.push_back(unary_case("embedding_lookup", {4, 3}, [](Graph<double>&, Var<double> x, Rng&) {
    return add(embedding_lookup(x, 2), embedding_lookup(x, 0));
  }));
  cases.push_back(unary_case("mean_pool", {3}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return mean_pool<double>({x, with_const(g, {3}, r), elementwise_mul(x, x)});
  }));
  cases.push_back(OpCase{"max_pool", [](Rng& rng) {
                           // Distinct per-coordinate maxima with a wide margin.
                           auto x = away_from_zero({4}, rng);
                           Tensor<double> other(Shape{4});
                           for (std::size_t i = 0; i < 4; ++i) other[i] = x[i] + (i % 2 ? 0.5 : -0.5);
                           Fn fn = [other](Graph<double>& g, Var<double> v) {
                             Rng r(5);
                             return project(g, max_pool<double>({v, g.constant(other)}), r);
                           };
                           return std::make_pair(x, fn);
                         }});
  cases.push_back(unary_case("sum", {2, 3}, [](Graph<double>&, Var<double> x, Rng&) { return sum(x); }));
  cases.push_back(unary_case("dot", {4}, [=](Graph<double>& g, Var<double> x, Rng& r) {
    return dot(x, add(x, with_const(g, {4}, r)));
  }));
  cases.push_back(unary_case("pick", {5}, [](Graph<double>&, Var<double> x, Rng&) { return pick(x, 3); }));
  cases.push_back(unary_case("gather", {6}, [](Graph<double>&, Var<double> x, Rng&) {
    return gather(x, std::vector<std::size_t>{4, 1, 4});
  }));
  cases.push_back(unary_case("logsumexp", {5}, [](Graph<double>&, Var<double> x, Rng&) { return logsumexp(x); }));
  cases.push_back(unary_case("cross_entropy", {5}, [](Graph<double>&, Var<double> x, Rng&) { return cross_entropy(x, 2); }));
  cases.push_back(unary_case("weighted_cross_entropy", {5}, [](Graph<double>&, Var<double> x, Rng&) {
    static const std::vector<double> w{0.5, 1.5, 2.0, 0.25, 0.75};
    return weighted_cross_entropy(x, 1, std::span<const double>(w));
  }));
  return cases;
}

/// Small random lexicon for model-level checks.
inline std::shared_ptr<const Lexicon> toy_lexicon(Rng& rng) {
  Lexicon::Document doc;
  for (int n = 1; n <= 4; ++n) doc.nouns.push_back("n" + std::to_string(n));
  std::vector<std::string> roles{"agent", "item", "tool", "place"};
  for (int v = 0; v < 3; ++v) {
    std::shuffle(roles.begin(), roles.end(), rng);
    std::size_t k = 1 + rng() % 3;
    doc.verbs.push_back({"v" + std::to_string(v), {roles.begin(), roles.begin() + k}});
    doc.verb_freq["v" + std::to_string(v)] = 1 + rng() % 5;
    for (std::size_t r = 0; r < k; ++r)
      for (const auto& n : doc.nouns)
        if (rng() % 3) doc.valid_tuples.push_back({"v" + std::to_string(v), roles[r], n});
  }
  return std::make_shared<const Lexicon>(Lexicon::from_document(doc));
}

inline features::FeatureRecord toy_record(const features::FeatureDims& dims, Rng& rng, std::size_t regions) {
  std::normal_distribution<float> g(0, 1);
  features::FeatureRecord rec;
  for (std::size_t i = 0; i < dims.global; ++i) rec.global.push_back(g(rng));
  for (std::size_t r = 0; r < regions; ++r) {
    rec.regions.emplace_back();
    for (std::size_t i = 0; i < dims.region; ++i) rec.regions.back().push_back(g(rng));
  }
  rec.grid.emplace();
  for (std::size_t i = 0; i < dims.cells() * dims.cell; ++i) rec.grid->push_back(g(rng));
  return rec;
}

inline AnnotatedExample toy_example(const Lexicon& lex, Rng& rng) {
  AnnotatedExample ex;
  ex.example_id = "toy";
  ex.verb = rng() % lex.verb_count();
  for (auto& a : ex.annotations) {
    a.verb = ex.verb;
    for (std::size_t r : lex.frame(ex.verb)) {
      std::vector<std::size_t> options;
      for (std::size_t n = 0; n < lex.noun_count(); ++n)
        if (lex.is_valid(ex.verb, r, n)) options.push_back(n);
      a.fillers.push_back(options[rng() % options.size()]);
    }
  }
  return ex;
}

inline void spread(ParameterStore<double>& store, Rng& rng, double scale = 0.5) {
  std::normal_distribution<double> g(0, scale);
  for (auto& p : store)
    for (auto& x : p.value.span()) x = g(rng);
}

inline const features::FeatureDims kToyDims{4, 4, 3, 2};

inline void fold(CheckReport& rep, const GradCheckResult<double>& r) {
  rep.max_rel_error = std::max(rep.max_rel_error, r.max_rel_error);
  rep.coordinates += r.checked;
  ++rep.seeds;
}

}  // namespace detail

inline std::vector<CheckReport> numeric_suite(std::size_t seeds, double eps) {
  std::vector<CheckReport> out;
  for (const auto& c : detail::op_cases()) {
    CheckReport rep{"numeric", c.name};
    for (std::size_t s = 0; s < seeds; ++s) {
      detail::Rng rng(1000 + s);
      auto [x, fn] = c.make(rng);
      detail::fold(rep, numeric::finite_diff_check<double>(fn, x, eps));
    }
    out.push_back(rep);
  }
  return out;
}

inline std::vector<CheckReport> rnn_suite(std::size_t seeds, double eps) {
  using namespace numeric;
  CheckReport step_inputs{"rnn", "lstm_step_inputs"}, step_params{"rnn", "lstm_step_params"},
      unroll_params{"rnn", "lstm_unroll4_params"};
  for (std::size_t s = 0; s < seeds; ++s) {
    detail::Rng rng(2000 + s);
    ParameterStore<double> store;
    auto p = rnn::LstmParams::create(store, "lstm", 3, 4, "rnn", rng);
    detail::spread(store, rng);
    // d/d[x, h, c] through one step, packed into a single input vector.
    auto w_h = Tensor<double>::normal({4}, 1.0, rng), w_c = Tensor<double>::normal({4}, 1.0, rng);
    auto point = Tensor<double>::normal({11}, 1.0, rng);
    auto step_loss = [&](Graph<double>& g, Var<double> xhc) {
      rnn::LstmState<double> st{slice(xhc, 3, 4), slice(xhc, 7, 4)};
      auto next = rnn::lstm_step(g, p, st, slice(xhc, 0, 3));
      return add(dot(next.h, g.constant(w_h)), dot(next.c, g.constant(w_c)));
    };
    {
      // finite_diff_check builds store-less graphs, so the input check is
      // spelled out here against graphs that can read the parameters.
      GradCheckResult<double> r;
      Tensor<double> analytic;
      {
        Graph<double> g(store);
        auto x = g.input(point);
        auto y = step_loss(g, x);
        g.backward(y);
        analytic = g.grad(x);
        store.zero_grad();
      }
      Tensor<double> pt = point;
      for (std::size_t i = 0; i < pt.size(); ++i) {
        const double orig = pt[i];
        auto eval = [&] {
          Graph<double> g(&std::as_const(store));
          return step_loss(g, g.constant(pt)).item();
        };
        pt[i] = orig + eps;
        double fp = eval();
        pt[i] = orig - eps;
        double fm = eval();
        pt[i] = orig;
        numeric::detail::record(r, i, analytic[i], (fp - fm) / (2 * eps));
      }
      detail::fold(step_inputs, r);
    }
    auto x0 = Tensor<double>::normal({3}, 1.0, rng), h0 = Tensor<double>::normal({4}, 1.0, rng),
         c0 = Tensor<double>::normal({4}, 1.0, rng);
    detail::fold(step_params, numeric::finite_diff_check_params<double>(
                                  store,
                                  [&](Graph<double>& g) {
                                    rnn::LstmState<double> st{g.constant(h0), g.constant(c0)};
                                    auto next = rnn::lstm_step(g, p, st, g.constant(x0));
                                    return add(dot(next.h, g.constant(w_h)), dot(next.c, g.constant(w_c)));
                                  },
                                  eps));
    std::vector<Tensor<double>> xs;
    for (int t = 0; t < 4; ++t) xs.push_back(Tensor<double>::normal({3}, 1.0, rng));
    detail::fold(unroll_params, numeric::finite_diff_check_params<double>(
                                    store,
                                    [&](Graph<double>& g) {
                                      std::vector<Var<double>> in;
                                      for (const auto& x : xs) in.push_back(g.constant(x));
                                      auto hs = rnn::unroll(g, p, in);
                                      Var<double> total = dot(hs[0], g.constant(w_h));
                                      for (std::size_t t = 1; t < hs.size(); ++t) total = add(total, dot(hs[t], g.constant(w_h)));
                                      return total;
                                    },
                                    eps));
  }
  return {step_inputs, step_params, unroll_params};
}

inline std::vector<CheckReport> features_suite(std::size_t seeds, double eps) {
  using namespace numeric;
  CheckReport att{"features", "attention_context"}, fusion{"features", "fusion_verb_logits"},
      fusion_global{"features", "fusion_verb_logits_no_regions"};
  for (std::size_t s = 0; s < seeds; ++s) {
    detail::Rng rng(3000 + s);
    const auto& dims = detail::kToyDims;
    ParameterStore<double> store;
    auto ap = features::AttentionParams::create(store, "attention", 4, dims.cell, 3, "feature", rng);
    auto fp = features::FusionParams::create(store, "fusion", dims, 3, "verb", rng);
    detail::spread(store, rng);
    auto rec = detail::toy_record(dims, rng, 2);
    auto h = Tensor<double>::normal({4}, 1.0, rng);
    auto w = Tensor<double>::normal({dims.cell}, 1.0, rng);
    auto wv = Tensor<double>::normal({3}, 1.0, rng);
    detail::fold(att, finite_diff_check_params<double>(
                          store,
                          [&](Graph<double>& g) {
                            auto cells = g.constant(features::grid_tensor<double>(dims, rec));
                            auto r = features::attention_context(g, ap, g.constant(h), cells);
                            return dot(r.context, g.constant(w));
                          },
                          eps, "attention"));
    detail::fold(fusion, finite_diff_check_params<double>(
                             store, [&](Graph<double>& g) { return dot(features::fusion_verb_logits(g, fp, rec), g.constant(wv)); },
                             eps, "fusion"));
    auto bare = rec;
    bare.regions.clear();
    detail::fold(fusion_global,
                 finite_diff_check_params<double>(
                     store, [&](Graph<double>& g) { return dot(features::fusion_verb_logits(g, fp, bare), g.constant(wv)); },
                     eps, "fusion.global"));
  }
  return {att, fusion, fusion_global};
}

inline std::vector<CheckReport> models_suite(std::size_t seeds, double eps) {
  struct Variant {
    std::string name;
    models::ModelKind kind;
    bool attention;
    Direction direction;
  };
  const std::vector<Variant> variants{
      {"model_a", models::ModelKind::NoVision, false, Direction::Forward},
      {"model_b", models::ModelKind::SharedRnn, false, Direction::Forward},
      {"model_c", models::ModelKind::ClassifierPlusRnn, false, Direction::Forward},
      {"model_d", models::ModelKind::SeparatePlusRnn, false, Direction::Forward},
      {"model_c_attention", models::ModelKind::ClassifierPlusRnn, true, Direction::Forward},
      {"model_d_attention", models::ModelKind::SeparatePlusRnn, true, Direction::Forward},
      {"model_d_reversed", models::ModelKind::SeparatePlusRnn, false, Direction::Reversed},
  };
  std::vector<CheckReport> out;
  for (const auto& var : variants) {
    CheckReport rep{"models", var.name};
    for (std::size_t s = 0; s < seeds; ++s) {
      detail::Rng rng(4000 + s);
      auto lex = detail::toy_lexicon(rng);
      models::ModelConfig cfg;
      cfg.kind = var.kind;
      cfg.use_attention = var.attention;
      cfg.direction = var.direction;
      cfg.embed = 3;
      cfg.hidden = 4;
      cfg.attention_width = 3;
      cfg.dims = detail::kToyDims;
      models::SituationModel<double> m(cfg, lex, rng());
      detail::spread(m.store(), rng);
      auto rec = detail::toy_record(cfg.dims, rng, s % 3);
      auto ex = detail::toy_example(*lex, rng);
      std::vector<double> weights{0.5, 1.25, 2.0};
      detail::fold(rep, numeric::finite_diff_check_params<double>(
                            m.store(), [&](Graph<double>& g) { return m.example_loss(g, ex, rec, s % 3, weights); }, eps));
    }
    out.push_back(rep);
  }
  CheckReport crf_rep{"models", "crf"}, discrete_rep{"models", "discrete_classifier"};
  for (std::size_t s = 0; s < seeds; ++s) {
    detail::Rng rng(5000 + s);
    auto lex = detail::toy_lexicon(rng);
    crf::CrfModel<double> m(lex, 4, rng());
    detail::spread(m.store(), rng);
    auto rec = detail::toy_record(detail::kToyDims, rng, 0);
    auto ex = detail::toy_example(*lex, rng);
    detail::fold(crf_rep, numeric::finite_diff_check_params<double>(
                              m.store(), [&](Graph<double>& g) { return m.example_loss(g, ex, rec, 0); }, eps));
    std::vector<AnnotatedExample> train;
    for (int i = 0; i < 6; ++i) train.push_back(detail::toy_example(*lex, rng));
    for (std::size_t v = 0; v < lex->verb_count(); ++v) {
      auto e = detail::toy_example(*lex, rng);
      while (e.verb != v) e = detail::toy_example(*lex, rng);
      train.push_back(e);
    }
    crf::DiscreteClassifier<double> d(lex, crf::frame_table(*lex, train), 4, rng());
    detail::spread(d.store(), rng);
    detail::fold(discrete_rep, numeric::finite_diff_check_params<double>(
                                   d.store(), [&](Graph<double>& g) { return d.example_loss(g, train[0], rec, 0); }, eps));
  }
  out.push_back(crf_rep);
  out.push_back(discrete_rep);
  return out;
}

/// module: all | numeric | rnn | features | models.
inline std::vector<CheckReport> gradient_suite(const std::string& module, std::size_t seeds = 20, double eps = 1e-5) {
  if (module != "all" && module != "numeric" && module != "rnn" && module != "features" && module != "models")
    throw UsageError("unknown gradcheck module '" + module + "'");
  std::vector<CheckReport> out;
  auto append = [&](std::vector<CheckReport> xs) { out.insert(out.end(), xs.begin(), xs.end()); };
  if (module == "all" || module == "numeric") append(numeric_suite(seeds, eps));
  if (module == "all" || module == "rnn") append(rnn_suite(seeds, eps));
  if (module == "all" || module == "features") append(features_suite(seeds, eps));
  if (module == "all" || module == "models") append(models_suite(seeds, eps));
  return out;
}

}  // namespace situ::verify
