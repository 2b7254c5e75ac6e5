#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"

using namespace situ;
using namespace situ::crf;

using testing_support::brute_log_sum;
using testing_support::enumerate_situations;
using testing_support::sparse_lexicon;

TEST(Crf, ZeroWeightsCountSituations) {
  std::mt19937_64 rng(1);
  auto lex = sparse_lexicon(rng);
  CrfModel<double> m(lex, 3, 0);
  for (auto& p : m.store()) p.value.fill(0);
  auto rec = testing_support::random_record({3, 0, 0, 0}, rng, 0, false);
  double count = 0;
  for (std::size_t v = 0; v < lex->verb_count(); ++v) {
    double prod = 1;
    for (const auto& slot : m.slots(v)) prod *= double(slot.fillers.size());
    count += prod;
  }
  EXPECT_NEAR(m.log_partition(rec), std::log(count), 1e-12);
  EXPECT_EQ(double(enumerate_situations(*lex).size()), count);
  for (const auto& s : enumerate_situations(*lex)) EXPECT_EQ(m.score(rec, s), 0.0);
  auto top = m.infer(rec, 1);
  EXPECT_EQ(top[0].situation, (Situation{0, std::vector<std::size_t>(lex->frame(0).size(), 0)}));
}

TEST(Crf, HandComputedTwoVerbInstance) {
  auto lex = std::make_shared<const Lexicon>(Lexicon::parse(R"({
    "verbs": [{"id": "v0", "roles": ["r"]}, {"id": "v1", "roles": ["r"]}],
    "nouns": ["a", "b"],
    "valid_tuples": [["v0", "r", "a"], ["v0", "r", "b"], ["v1", "r", "a"]]})"));
  CrfModel<double> m(lex, 2, 0);
  m.verb_weights() = numeric::Tensor<double>::matrix(2, 2, {1.0, 0.0, 0.0, 2.0});
  // Rows in (verb, role, noun) order: v0-null, v0-a, v0-b, v1-null, v1-a.
  m.tuple_weights() = numeric::Tensor<double>::matrix(5, 2, {0, 0, 0.5, 0, 0, 1, 0, 0, 1, 1});
  features::FeatureRecord rec{{1.0f, 0.5f}, {}, std::nullopt};
  EXPECT_NEAR(m.score(rec, Situation{0, {2}}), 1.0 + 0.5, 1e-15);
  EXPECT_NEAR(m.score(rec, Situation{1, {1}}), 1.0 + 1.5, 1e-15);
  double z = std::exp(1.0) * (1 + std::exp(0.5) + std::exp(0.5)) + std::exp(1.0) * (1 + std::exp(1.5));
  EXPECT_NEAR(m.log_partition(rec), std::log(z), 1e-14);
  EXPECT_THROW(m.score(rec, Situation{1, {2}}), ValidationError);
}

TEST(Crf, ScoreFactorizesOverTuples) {
  std::mt19937_64 rng(2);
  auto lex = testing_support::random_lexicon(rng, 3, 3, 4);
  CrfModel<double> m(lex, 4, 1);
  testing_support::perturb(m.store(), rng, 1.0);
  auto rec = testing_support::random_record({4, 0, 0, 0}, rng, 0, false);
  auto [vp, tp] = m.potentials(rec);
  for (int i = 0; i < 50; ++i) {
    auto s = testing_support::random_situation(*lex, rng);
    auto t = s;
    std::size_t pos = rng() % s.fillers.size();
    t.fillers[pos] = (t.fillers[pos] + 1) % lex->noun_count();
    auto role = lex->frame(s.verb)[pos];
    double expected = tp[m.tuple_row({s.verb, role, t.fillers[pos]})] - tp[m.tuple_row({s.verb, role, s.fillers[pos]})];
    EXPECT_NEAR(m.score(rec, t) - m.score(rec, s), expected, 1e-12);
  }
}

TEST(Crf, MatchesEnumerationOnRandomToys) {
  for (int trial = 0; trial < 60; ++trial) {
    std::mt19937_64 rng(100 + trial);
    auto lex = sparse_lexicon(rng);
    CrfModel<double> m(lex, 3, rng());
    testing_support::perturb(m.store(), rng, 1.0);
    auto rec = testing_support::random_record({3, 0, 0, 0}, rng, 0, false);
    auto all = enumerate_situations(*lex);
    std::vector<double> scores;
    for (const auto& s : all) scores.push_back(m.score(rec, s));
    const double logz = m.log_partition(rec);
    const double brute = brute_log_sum(scores);
    EXPECT_LE(std::abs(logz - brute), 1e-10 * std::max(1.0, std::abs(brute)));
    double total = 0;
    for (double s : scores) total += std::exp(s - logz);
    EXPECT_NEAR(total, 1.0, 1e-9);
    std::size_t arg = 0;
    for (std::size_t i = 1; i < all.size(); ++i)
      if (scores[i] > scores[arg]) arg = i;
    auto ranked = m.infer(rec, lex->verb_count() + 3);
    ASSERT_EQ(ranked.size(), lex->verb_count());
    EXPECT_EQ(ranked[0].situation, all[arg]);
    // Each verb's entry is its own enumeration argmax.
    for (const auto& r : ranked) {
      double best = -1e300;
      Situation best_s;
      for (std::size_t i = 0; i < all.size(); ++i)
        if (all[i].verb == r.situation.verb && scores[i] > best) {
          best = scores[i];
          best_s = all[i];
        }
      EXPECT_EQ(r.situation, best_s);
      EXPECT_NEAR(r.total(), best - logz, 1e-10);
    }
  }
}

TEST(Crf, LossIsNegativeLogProbability) {
  std::mt19937_64 rng(3);
  auto lex = sparse_lexicon(rng);
  CrfModel<double> m(lex, 3, 4);
  testing_support::perturb(m.store(), rng, 1.0);
  auto rec = testing_support::random_record({3, 0, 0, 0}, rng, 0, false);
  auto all = enumerate_situations(*lex);
  AnnotatedExample ex{"e", all.back().verb, {all.back(), all.back(), all.back()}, 0};
  numeric::Graph<double> g(&std::as_const(m.store()));
  EXPECT_NEAR(m.example_loss(g, ex, rec, 0).item(), m.log_partition(rec) - m.score(rec, all.back()), 1e-12);
  EXPECT_THROW(m.infer(rec, 0), UsageError);
}

TEST(Crf, PartitionInvariantToLexiconOrder) {
  // Same model content, verbs listed in the opposite order.
  auto lex1 = std::make_shared<const Lexicon>(Lexicon::parse(R"({
    "verbs": [{"id": "x", "roles": ["r", "s"]}, {"id": "y", "roles": ["s"]}], "nouns": ["a", "b"],
    "valid_tuples": [["x", "r", "a"], ["x", "s", "b"], ["y", "s", "a"], ["y", "s", "b"]]})"));
  auto lex2 = std::make_shared<const Lexicon>(Lexicon::parse(R"({
    "verbs": [{"id": "y", "roles": ["s"]}, {"id": "x", "roles": ["r", "s"]}], "nouns": ["b", "a"],
    "valid_tuples": [["x", "r", "a"], ["x", "s", "b"], ["y", "s", "a"], ["y", "s", "b"]]})"));
  CrfModel<double> m1(lex1, 2, 0), m2(lex2, 2, 0);
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0, 1);
  auto key = [](const Lexicon& lex, const TupleKey& t) {
    return lex.verb_id(t.verb) + "/" + lex.role_id(t.role) + "/" + lex.noun_id(t.noun);
  };
  std::map<std::string, std::vector<double>> tuple_w;
  for (const auto& t : lex1->valid_tuples()) tuple_w[key(*lex1, t)] = {g(rng), g(rng)};
  std::map<std::string, std::vector<double>> verb_w{{"x", {g(rng), g(rng)}}, {"y", {g(rng), g(rng)}}};
  auto load = [&](CrfModel<double>& m, const Lexicon& lex) {
    for (std::size_t v = 0; v < 2; ++v)
      for (std::size_t c = 0; c < 2; ++c) m.verb_weights().at(v, c) = verb_w[lex.verb_id(v)][c];
    for (const auto& t : lex.valid_tuples())
      for (std::size_t c = 0; c < 2; ++c) m.tuple_weights().at(m.tuple_row(t), c) = tuple_w[key(lex, t)][c];
  };
  load(m1, *lex1);
  load(m2, *lex2);
  features::FeatureRecord rec{{0.3f, -1.1f}, {}, std::nullopt};
  EXPECT_NEAR(m1.log_partition(rec), m2.log_partition(rec), 1e-13);
}

TEST(Discrete, FrameTableCountsAndTies) {
  auto lex = std::make_shared<const Lexicon>(Lexicon::parse(R"({
    "verbs": [{"id": "v", "roles": ["r"]}, {"id": "w", "roles": ["r", "s"]}], "nouns": ["a", "b", "c"]})"));
  auto ex = [](std::size_t verb, std::vector<std::vector<std::size_t>> anns) {
    AnnotatedExample e{"e", verb, {}, 0};
    for (std::size_t a = 0; a < 3; ++a) e.annotations[a] = Situation{verb, anns[a]};
    return e;
  };
  // Verb v: fillers a, b, c each observed twice.
  std::vector<AnnotatedExample> train{ex(0, {{3}, {3}, {1}}), ex(0, {{2}, {2}, {1}}), ex(1, {{1, 2}, {1, 2}, {0, 0}})};
  auto table = frame_table(*lex, train);
  ASSERT_EQ(table[0].size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(table[0][i].first.fillers, (std::vector<std::size_t>{i + 1}));
    EXPECT_EQ(table[0][i].second, 2u);
  }
  ASSERT_EQ(table[1].size(), 2u);
  EXPECT_EQ(table[1][0].first.fillers, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(table[1][0].second, 2u);
  EXPECT_EQ(table[1][1].first.fillers, (std::vector<std::size_t>{0, 0}));
  auto truncated = frame_table(*lex, train, 1);
  EXPECT_EQ(truncated[0].size(), 1u);
  std::vector<AnnotatedExample> missing{ex(0, {{1}, {1}, {1}})};
  EXPECT_THROW(frame_table(*lex, missing), ValidationError);
}

TEST(Discrete, PredictsOnlyKeptFrames) {
  std::mt19937_64 rng(6);
  auto lex = testing_support::random_lexicon(rng, 3, 2, 5);
  std::vector<AnnotatedExample> train;
  for (int i = 0; i < 30; ++i) {
    AnnotatedExample e{"e" + std::to_string(i), std::size_t(i % 3), {}, 0};
    for (auto& a : e.annotations) a = testing_support::random_situation(*lex, rng, e.verb);
    train.push_back(e);
  }
  auto table = frame_table(*lex, train);
  for (const auto& frames : table) EXPECT_LE(frames.size(), 10u);
  DiscreteClassifier<double> d(lex, table, 4, 1);
  testing_support::perturb(d.store(), rng, 1.0);
  for (int i = 0; i < 20; ++i) {
    auto rec = testing_support::random_record({4, 0, 0, 0}, rng, 0, false);
    auto ranked = d.rank(rec, 3);
    ASSERT_EQ(ranked.size(), 3u);
    for (const auto& r : ranked) EXPECT_TRUE(d.class_of(r.situation).has_value());
    EXPECT_GE(ranked[0].noun_score, ranked[1].noun_score);
    EXPECT_EQ(d.given_verb(rec, 2).situation.verb, 2u);
  }
}
