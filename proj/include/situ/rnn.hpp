#pragma once

// Single-layer LSTM (four gates, no peepholes), token embeddings and the
// affine output projection shared by all sequence models.

#include <random>
#include <string>
#include <vector>

#include "situ/numeric/ops.hpp"

namespace situ::rnn {

using numeric::Graph;
using numeric::ParameterStore;
using numeric::Shape;
using numeric::Tensor;
using numeric::Var;

inline constexpr double kInitRange = 0.08;

template <class Real, class Rng>
void init_uniform(numeric::Parameter<Real>& p, Rng& rng, Real range = Real(kInitRange)) {
  p.value = Tensor<Real>::uniform(p.value.shape(), -range, range, rng);
}

/// y = W x + b. Weight [out x in], bias [out].
struct Affine {
  std::size_t weight = 0;
  std::size_t bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;

  template <class Real, class Rng>
  static Affine create(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out,
                       const std::string& group, Rng& rng) {
    Affine a{store.create(name + ".weight", group, {out, in}), store.create(name + ".bias", group, {out}), in, out};
    init_uniform(store[a.weight], rng);
    return a;
  }

  template <class Real>
  Var<Real> operator()(Graph<Real>& g, Var<Real> x) const {
    if (x.size() != in)
      throw NumericError("affine: input size " + std::to_string(x.size()) + " != " + std::to_string(in));
    return numeric::add(numeric::matmul(g.param(weight), x), g.param(bias));
  }
};

/// Logits over an output vocabulary of size K from hidden state h.
template <class Real>
Var<Real> project(Graph<Real>& g, const Affine& output, Var<Real> h) {
  return output(g, h);
}

struct Embedding {
  std::size_t table = 0;
  std::size_t vocab = 0;
  std::size_t dim = 0;

  template <class Real, class Rng>
  static Embedding create(ParameterStore<Real>& store, const std::string& name, std::size_t vocab, std::size_t dim,
                          const std::string& group, Rng& rng) {
    Embedding e{store.create(name + ".table", group, {vocab, dim}), vocab, dim};
    init_uniform(store[e.table], rng);
    return e;
  }

  template <class Real>
  Var<Real> operator()(Graph<Real>& g, std::size_t token) const {
    return numeric::embedding_lookup(g.param(table), token);
  }
};

/// Gate layout in the stacked weights: [input, forget, output, candidate].
struct LstmParams {
  std::size_t input_weight = 0;   // [4H x D]
  std::size_t hidden_weight = 0;  // [4H x H]
  std::size_t bias = 0;           // [4H]
  std::size_t input_size = 0;
  std::size_t hidden_size = 0;

  template <class Real, class Rng>
  static LstmParams create(ParameterStore<Real>& store, const std::string& name, std::size_t input, std::size_t hidden,
                           const std::string& group, Rng& rng) {
    LstmParams p{store.create(name + ".input_weight", group, {4 * hidden, input}),
                 store.create(name + ".hidden_weight", group, {4 * hidden, hidden}),
                 store.create(name + ".bias", group, {4 * hidden}), input, hidden};
    init_uniform(store[p.input_weight], rng);
    init_uniform(store[p.hidden_weight], rng);
    auto& b = store[p.bias].value;
    for (std::size_t i = hidden; i < 2 * hidden; ++i) b[i] = Real(1);
    return p;
  }
};

template <class Real>
struct LstmState {
  Var<Real> h;
  Var<Real> c;
};

template <class Real>
LstmState<Real> zero_state(Graph<Real>& g, std::size_t hidden) {
  return {g.constant(Tensor<Real>(Shape{hidden})), g.constant(Tensor<Real>(Shape{hidden}))};
}

template <class Real>
LstmState<Real> lstm_step(Graph<Real>& g, const LstmParams& p, const LstmState<Real>& state, Var<Real> x) {
  using namespace numeric;
  if (x.size() != p.input_size)
    throw NumericError("lstm_step: input size " + std::to_string(x.size()) + " != " + std::to_string(p.input_size));
  if (state.h.size() != p.hidden_size || state.c.size() != p.hidden_size)
    throw NumericError("lstm_step: state size mismatch");
  const std::size_t H = p.hidden_size;
  auto gates = add(add(matmul(g.param(p.input_weight), x), matmul(g.param(p.hidden_weight), state.h)), g.param(p.bias));
  auto i = sigmoid(slice(gates, 0, H));
  auto f = sigmoid(slice(gates, H, H));
  auto o = sigmoid(slice(gates, 2 * H, H));
  auto cand = numeric::tanh(slice(gates, 3 * H, H));
  auto c = add(elementwise_mul(f, state.c), elementwise_mul(i, cand));
  auto h = elementwise_mul(o, numeric::tanh(c));
  return {h, c};
}

/// Runs lstm_step over `inputs` from the zero state; returns every hidden state.
template <class Real>
std::vector<Var<Real>> unroll(Graph<Real>& g, const LstmParams& p, const std::vector<Var<Real>>& inputs) {
  auto state = zero_state(g, p.hidden_size);
  std::vector<Var<Real>> hs;
  hs.reserve(inputs.size());
  for (auto x : inputs) {
    state = lstm_step(g, p, state, x);
    hs.push_back(state.h);
  }
  return hs;
}

}  // namespace situ::rnn
