// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <string>

#include "oracles.hpp"
#include "situ/verify.hpp"

using namespace situ;
using models::ModelConfig;
using models::ModelKind;
using models::SituationModel;
namespace ts = testing_support;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void run(int number, const std::string& title, const std::function<Outcome()>& body) {
  auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (!o.pass) ++failures;
  std::printf("%s criterion %d: %s (%s; %.1fs)\n", o.pass ? "PASS" : "FAIL", number, title.c_str(), o.detail.c_str(), secs);
  std::fflush(stdout);
}

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

Outcome gradient_suite() {
  auto t0 = std::chrono::steady_clock::now();
  auto reports = verify::gradient_suite("all", 20, 1e-5);
  double worst = 0;
  std::string worst_name;
  for (const auto& r : reports)
    if (r.max_rel_error >= worst) {
      worst = r.max_rel_error;
      worst_name = r.module + "/" + r.name;
    }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120,
          std::to_string(reports.size()) + " checks x 20 seeds, worst " + fmt("%.2e", worst) + " at " + worst_name};
}

// ---------------------------------------------------------------- 2

Outcome crf_exactness() {
  auto t0 = std::chrono::steady_clock::now();
  double worst_logz = 0, worst_sum = 0;
  int argmax_misses = 0;
  const int toys = 60;
  for (int trial = 0; trial < toys; ++trial) {
    std::mt19937_64 rng(7000 + trial);
    auto lex = ts::sparse_lexicon(rng);
    crf::CrfModel<double> m(lex, 4, rng());
    ts::perturb(m.store(), rng, 1.5);
    auto rec = ts::random_record({4, 0, 0, 0}, rng, 0, false);
    auto all = ts::enumerate_situations(*lex);
    std::vector<double> scores;
    for (const auto& s : all) scores.push_back(m.score(rec, s));
    const double brute = ts::brute_log_sum(scores), logz = m.log_partition(rec);
    worst_logz = std::max(worst_logz, std::abs(logz - brute) / std::max(1.0, std::abs(brute)));
    double total = 0;
    for (double s : scores) total += std::exp(s - logz);
    worst_sum = std::max(worst_sum, std::abs(total - 1.0));
    std::size_t arg = 0;
    for (std::size_t i = 1; i < all.size(); ++i)
      if (scores[i] > scores[arg]) arg = i;
    if (m.infer(rec, 1).front().situation != all[arg]) ++argmax_misses;
  }
  const double secs = seconds_since(t0);
  return {worst_logz < 1e-10 && worst_sum < 1e-9 && argmax_misses == 0 && secs < 60,
          std::to_string(toys) + " toys, logZ rel err " + fmt("%.1e", worst_logz) + ", |sum-1| " + fmt("%.1e", worst_sum) +
              ", argmax misses " + std::to_string(argmax_misses)};
}

// ---------------------------------------------------------------- 3

ModelConfig toy_config(ModelKind kind) {
  ModelConfig c;
  c.kind = kind;
  c.embed = 5;
  c.hidden = 6;
  c.dims = {5, 5, 3, 2};
  return c;
}

double sequence_logp(const SituationModel<double>& m, const features::FeatureRecord& rec, std::size_t verb,
                     const std::vector<std::size_t>& tokens) {
  auto plan = m.plan(verb);
  std::vector<std::size_t> prefix;
  if (m.config().kind == ModelKind::SharedRnn) prefix.push_back(verb);
  double lp = 0;
  for (std::size_t t : tokens) {
    lp += std::log(m.step_probabilities(rec, plan, prefix)[t]);
    prefix.push_back(t);
  }
  return lp;
}

Outcome decoding_oracles() {
  const std::vector<ModelKind> kinds{ModelKind::NoVision, ModelKind::SharedRnn, ModelKind::ClassifierPlusRnn,
                                     ModelKind::SeparatePlusRnn};
  int exhaustive_bad = 0, greedy_bad = 0, monotone_bad = 0;
  const int models = 100;
  for (int trial = 0; trial < models; ++trial) {
    std::mt19937_64 rng(9000 + trial);
    auto lex = ts::random_lexicon(rng, 3, 2, 3, 4, 2);  // 2 roles, 3 nouns plus the null filler
    SituationModel<double> m(toy_config(kinds[trial % 4]), lex, rng());
    ts::perturb(m.store(), rng, 1.5);
    auto rec = ts::random_record(m.config().dims, rng, 1);
    const std::size_t verb = rng() % lex->verb_count(), K = lex->noun_count();
    double best = -1e300;
    std::vector<std::size_t> arg;
    for (std::size_t a = 0; a < K; ++a)
      for (std::size_t b = 0; b < K; ++b)
        if (double lp = sequence_logp(m, rec, verb, {a, b}); lp > best) {
          best = lp;
          arg = {a, b};
        }
    auto full = decode::beam_search(m, rec, verb, K * K);
    if (full.best.situation != decode_tokens(*lex, verb, arg, Direction::Forward) ||
        std::abs(full.best.noun_score - best) > 1e-12)
      ++exhaustive_bad;
    auto greedy = decode::greedy_decode(m, rec, verb);
    auto one = decode::beam_search(m, rec, verb, 1);
    if (one.best.situation != greedy.situation || one.best.noun_score != greedy.noun_score) ++greedy_bad;
    double prev = -1e300;
    for (std::size_t w = 1; w <= K * K; ++w) {
      double s = decode::beam_search(m, rec, verb, w).best.noun_score;
      if (s < prev) {
        ++monotone_bad;
        break;
      }
      prev = s;
    }
  }
  return {exhaustive_bad == 0 && greedy_bad == 0 && monotone_bad == 0,
          std::to_string(models) + " models; exhaustive mismatches " + std::to_string(exhaustive_bad) +
              ", beam(1)!=greedy " + std::to_string(greedy_bad) + ", non-monotone " + std::to_string(monotone_bad)};
}

// ---------------------------------------------------------------- 4

Outcome model_a_memorizes() {
  auto t0 = std::chrono::steady_clock::now();
  data::SyntheticSpec spec;
  spec.disjoint_role_pools = true;
  spec.sigma = 0.05;
  spec.canonical_filler_prob = 1.0;
  spec.seed = 11;
  auto data = data::generate_synthetic(spec);
  const auto& train = data.splits.at("train");
  ModelConfig c;
  c.kind = ModelKind::NoVision;
  c.embed = 32;
  c.hidden = 32;
  c.dims = train.features.dims;
  SituationModel<double> m(c, data.lexicon, 1);
  train::TrainConfig tc;
  tc.max_iters = 400;
  tc.eval_every = 100;
  tc.lr_initial = 5e-3;
  tc.seed = 1;
  train::train_loop(m, train, &data.splits.at("dev"), tc);
  const auto& test = data.splits.at("test");
  auto preds = eval::predict(decode::as_predictor(m), test.examples, test.features.records, false, true);
  auto metrics = eval::aggregate(eval::score_predictions(*data.lexicon, test.examples, preds));
  std::size_t consistent = 0, slots = 0;
  for (const auto& p : preds) {
    const auto& s = p.given->situation;
    for (std::size_t i = 0; i < s.fillers.size(); ++i, ++slots) consistent += data.in_pool(s.verb, i, s.fillers[i]);
  }
  const double value = metrics.get("value@gt"), consistency = 100.0 * double(consistent) / double(slots);
  const double secs = seconds_since(t0);
  return {value >= 95 && consistency >= 95 && secs < 300,
          "test value@gt " + fmt("%.2f", value) + ", role-position consistency " + fmt("%.2f", consistency)};
}

// ---------------------------------------------------------------- 5, 6, 9

struct DRun {
  data::SyntheticData data;
  std::unique_ptr<SituationModel<double>> model;
  eval::Metrics test;
};

data::SyntheticSpec planted_spec(std::uint64_t seed) {
  data::SyntheticSpec spec;
  spec.verbs = 20;
  spec.min_roles = 3;
  spec.max_roles = 4;
  spec.nouns = 50;
  spec.train = 2000;
  spec.seed = seed;
  return spec;
}

train::TrainConfig planted_train_config(std::uint64_t seed) {
  train::TrainConfig tc;
  tc.max_iters = 600;
  tc.eval_every = 200;
  tc.eval_limit = 150;
  tc.lr_initial = 3e-3;
  tc.lr_decay_every = 400;
  tc.seed = seed;
  return tc;
}

DRun train_model_d(std::uint64_t seed, Direction dir) {
  DRun r{data::generate_synthetic(planted_spec(seed)), nullptr, {}};
  const auto& train = r.data.splits.at("train");
  ModelConfig c;
  c.kind = ModelKind::SeparatePlusRnn;
  c.direction = dir;
  c.embed = 64;
  c.hidden = 64;
  c.dims = train.features.dims;
  r.model = std::make_unique<SituationModel<double>>(c, r.data.lexicon, seed);
  train::train_loop(*r.model, train, &r.data.splits.at("dev"), planted_train_config(seed));
  const auto& test = r.data.splits.at("test");
  r.test = eval::evaluate(decode::as_predictor(*r.model), *r.data.lexicon, test.examples, test.features.records);
  return r;
}

std::string describe(const eval::Metrics& m) {
  return "verb@1 " + fmt("%.2f", m.get("verb@1")) + " value@gt " + fmt("%.2f", m.get("value@gt"));
}

Outcome end_to_end(const std::vector<DRun>& fwd, const std::vector<DRun>& rev) {
  auto ok = [](const eval::Metrics& m) { return m.get("verb@1") >= 90 && m.get("value@gt") >= 85; };
  return {ok(fwd[0].test) && ok(rev[0].test),
          "forward " + describe(fwd[0].test) + "; reversed " + describe(rev[0].test)};
}

Outcome ordering_sanity(const std::vector<DRun>& fwd, const std::vector<DRun>& rev) {
  double worst = 0;
  std::string detail;
  for (std::size_t s = 0; s < fwd.size(); ++s) {
    double gap = std::abs(fwd[s].test.get("value@gt") - rev[s].test.get("value@gt"));
    worst = std::max(worst, gap);
    detail += (s ? ", " : "") + std::string("seed ") + std::to_string(s) + " gap " + fmt("%.2f", gap);
  }
  return {worst <= 5.0, detail};
}

Outcome determinism_and_persistence(const DRun& reference) {
  // Bit-identical logs from identical seeds.
  data::SyntheticSpec spec = planted_spec(5);
  spec.train = 200;
  spec.dev = 50;
  auto data = data::generate_synthetic(spec);
  const auto& train = data.splits.at("train");
  auto log_of = [&](std::uint64_t seed) {
    ModelConfig c;
    c.embed = 16;
    c.hidden = 16;
    c.use_attention = true;
    c.attention_width = 8;
    c.dims = train.features.dims;
    SituationModel<double> m(c, data.lexicon, seed);
    auto tc = planted_train_config(seed);
    tc.max_iters = 30;
    tc.eval_every = 10;
    std::string log;
    train::train_loop(m, train, &data.splits.at("dev"), tc, [&](const train::LogRecord& r) { log += r.to_json().dump() + "\n"; });
    return log;
  };
  const bool same_log = log_of(3) == log_of(3);

  // Checkpoint round trip on 100 held-out examples.
  const auto& test = reference.data.splits.at("test");
  std::span<const AnnotatedExample> hundred(test.examples.data(), 100);
  auto path = (std::filesystem::temp_directory_path() / "situ_acceptance.ckpt").string();
  checkpoint::ModelHandle handle = std::make_unique<SituationModel<double>>(*reference.model);
  checkpoint::save(path, checkpoint::encode(handle, 600));
  auto loaded = checkpoint::decode(checkpoint::load(path), reference.data.lexicon);
  std::filesystem::remove(path);
  const auto& back = *std::get<0>(loaded);
  auto a = eval::predict(decode::as_predictor(*reference.model), hundred, test.features.records);
  auto b = eval::predict(decode::as_predictor(back), hundred, test.features.records);
  std::size_t same = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    same += eval::prediction_to_json(*reference.data.lexicon, a[i]) == eval::prediction_to_json(*reference.data.lexicon, b[i]);
  return {same_log && same == 100,
          std::string("logs ") + (same_log ? "identical" : "differ") + ", " + std::to_string(same) +
              "/100 predictions identical after reload"};
}

// ---------------------------------------------------------------- 7

Outcome metric_oracle() {
  std::mt19937_64 rng(31337);
  for (int i = 0; i < 1000; ++i) {
    auto f = ts::random_metric_fixture(rng);
    if (auto err = ts::check_metric_fixture(f); !err.empty()) return {false, "fixture " + std::to_string(i) + ": " + err};
  }
  return {true, "1000 fixtures, both value-all modes, exact equality"};
}

// ---------------------------------------------------------------- 8

Outcome fusion_pooling() {
  int perm_bad = 0, fallback_bad = 0;
  for (int c = 0; c < 100; ++c) {
    std::mt19937_64 rng(500 + c);
    features::FeatureDims dims{6, 6, 2, 2};
    numeric::ParameterStore<double> store;
    auto fp = features::FusionParams::create(store, "fusion", dims, 7, "verb", rng);
    ts::perturb(store, rng, 1.0);
    auto rec = ts::random_record(dims, rng, 1 + c % 5, false);
    numeric::Graph<double> g(&std::as_const(store));
    auto base = features::fusion_verb_logits(g, fp, rec).value();
    auto shuffled = rec;
    std::shuffle(shuffled.regions.begin(), shuffled.regions.end(), rng);
    if (features::fusion_verb_logits(g, fp, shuffled).value() != base) ++perm_bad;
    auto bare = rec;
    bare.regions.clear();
    auto global = g.constant(features::to_tensor<double>(rec.global));
    if (features::fusion_verb_logits(g, fp, bare).value() != fp.global_path(g, global).value()) ++fallback_bad;
  }
  return {perm_bad == 0 && fallback_bad == 0, "100 cases; permutation mismatches " + std::to_string(perm_bad) +
                                                  ", empty-region mismatches " + std::to_string(fallback_bad)};
}

// ---------------------------------------------------------------- 10

Outcome weighted_loss_invariance() {
  data::SyntheticSpec spec = planted_spec(21);
  spec.train = 400;
  spec.dev = 20;
  auto data = data::generate_synthetic(spec);
  auto doc = data.lexicon->to_json();
  for (auto& count : doc["verb_freq"]) count = 100;
  auto uniform = std::make_shared<const Lexicon>(Lexicon::from_json(doc));
  auto train = data.splits.at("train");
  train.lexicon = uniform;
  auto weights = train::class_weights<double>(uniform->verb_frequencies());

  double worst = 0;
  std::size_t batches = 0;
  for (auto kind : {ModelKind::NoVision, ModelKind::SharedRnn, ModelKind::ClassifierPlusRnn, ModelKind::SeparatePlusRnn}) {
    ModelConfig c;
    c.kind = kind;
    c.embed = 16;
    c.hidden = 16;
    c.dims = train.features.dims;
    // Fixed parameters, many batches.
    SituationModel<double> m(c, uniform, 4);
    for (std::size_t b = 0; b + 32 <= train.examples.size(); b += 32, ++batches) {
      std::vector<std::size_t> batch(32);
      std::iota(batch.begin(), batch.end(), b);
      double w = train::batch_loss<SituationModel<double>>(m, train, batch, b % 3, std::span<const double>(weights), false);
      double u = train::batch_loss<SituationModel<double>>(m, train, batch, b % 3, std::span<const double>{}, false);
      worst = std::max(worst, std::abs(w - u));
    }
    // Whole training trajectories.
    auto losses = [&](bool weighted) {
      SituationModel<double> model(c, uniform, 4);
      auto tc = planted_train_config(2);
      tc.max_iters = 25;
      tc.weighted_verb_loss = weighted;
      std::vector<double> out;
      for (const auto& r : train::train_loop(model, train, nullptr, tc).log) out.push_back(r.loss);
      return out;
    };
    auto lw = losses(true), lu = losses(false);
    for (std::size_t i = 0; i < lw.size(); ++i, ++batches) worst = std::max(worst, std::abs(lw[i] - lu[i]));
  }
  return {worst <= 1e-12, std::to_string(batches) + " batches, max |weighted - unweighted| " + fmt("%.1e", worst)};
}

}  // namespace

int main() {
  run(1, "finite-difference gradient suite", gradient_suite);
  run(2, "CRF partition and inference against enumeration", crf_exactness);
  run(3, "decoding oracles (exhaustive beam, beam(1) vs greedy, width monotonicity)", decoding_oracles);
  run(4, "Model A memorizes role ordering on planted data", model_a_memorizes);

  std::vector<DRun> fwd, rev;
  auto t0 = std::chrono::steady_clock::now();
  std::string training_error;
  try {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      fwd.push_back(train_model_d(seed, Direction::Forward));
      rev.push_back(train_model_d(seed, Direction::Reversed));
    }
  } catch (const std::exception& e) {
    training_error = e.what();
  }
  std::printf("(trained %zu Model D runs in %.1fs)\n", fwd.size() + rev.size(), seconds_since(t0));
  auto need_runs = [&](auto body) {
    return [&, body]() -> Outcome {
      if (!training_error.empty()) return {false, "training failed: " + training_error};
      return body();
    };
  };
  run(5, "Model D planted-signal end to end, forward and reversed", need_runs([&] { return end_to_end(fwd, rev); }));
  run(6, "forward vs reversed value@gt gap across 3 seeds", need_runs([&] { return ordering_sanity(fwd, rev); }));
  run(7, "metric aggregation against brute-force scorer", metric_oracle);
  run(8, "fusion pooling invariance and global fallback", fusion_pooling);
  run(9, "determinism and checkpoint persistence",
      need_runs([&] { return determinism_and_persistence(fwd.front()); }));
  run(10, "uniform class weights leave losses unchanged", weighted_loss_invariance);

  std::printf("%s: %d of 10 criteria failed\n", failures ? "FAILED" : "ALL PASSED", failures);
  return failures ? 1 : 0;
}
