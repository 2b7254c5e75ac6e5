#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "support.hpp"
#include "situ/verify.hpp"

using namespace situ;
using namespace situ::features;
using numeric::Graph;
using numeric::ParameterStore;
using numeric::Tensor;

namespace {

FeatureSet sample_set(std::mt19937_64& rng) {
  FeatureSet set{{5, 5, 2, 2}, {}};
  for (std::size_t k = 0; k < 4; ++k) set.records.push_back(testing_support::random_record(set.dims, rng, k % 3, k != 1));
  return set;
}

}  // namespace

TEST(FeatureFile, RoundTripsExactly) {
  std::mt19937_64 rng(1);
  auto set = sample_set(rng);
  EXPECT_EQ(decode_features(encode_features(set)), set);
}

TEST(FeatureFile, TruncationNamesTheRecord) {
  std::mt19937_64 rng(2);
  auto set = sample_set(rng);
  auto bytes = encode_features(set);
  auto upto_two = encode_features(FeatureSet{set.dims, {set.records[0], set.records[1]}});
  // Cut inside record 2 (header count still says 4).
  auto cut = bytes.substr(0, upto_two.size() + 6);
  try {
    decode_features(cut);
    FAIL() << "expected truncation error";
  } catch (const TruncatedFeatures& e) {
    EXPECT_EQ(e.index, 2u);
  }
}

TEST(FeatureFile, RejectsCorruptHeadersAndTrailingBytes) {
  std::mt19937_64 rng(3);
  auto bytes = encode_features(sample_set(rng));
  auto bad = bytes;
  bad[0] = 'X';
  EXPECT_THROW(decode_features(bad), ValidationError);
  EXPECT_THROW(decode_features(bytes + "z"), ValidationError);
  EXPECT_THROW(decode_features(bytes.substr(0, 10)), ValidationError);
}

TEST(FeatureRecord, ValidatesDimensions) {
  FeatureDims dims{3, 3, 2, 2};
  FeatureRecord ok{{1, 2, 3}, {}, std::nullopt};
  EXPECT_NO_THROW(validate(dims, ok));
  FeatureRecord short_global{{1, 2}, {}, std::nullopt};
  EXPECT_THROW(validate(dims, short_global), ValidationError);
  FeatureRecord bad_grid{{1, 2, 3}, {}, std::vector<float>(7, 0.f)};
  EXPECT_THROW(validate(dims, bad_grid), ValidationError);
  FeatureRecord nan{{1, std::nanf(""), 3}, {}, std::nullopt};
  EXPECT_THROW(validate(dims, nan), ValidationError);
}

TEST(Fusion, PermutationInvariantAndGlobalFallback) {
  for (int c = 0; c < 100; ++c) {
    std::mt19937_64 rng(100 + c);
    FeatureDims dims{4, 3, 1, 1};
    ParameterStore<double> store;
    auto fp = FusionParams::create(store, "fusion", dims, 5, "verb", rng);
    testing_support::perturb(store, rng, 1.0);
    auto rec = testing_support::random_record(dims, rng, 1 + c % 4, false);
    Graph<double> g(&std::as_const(store));
    auto base = fusion_verb_logits(g, fp, rec).value();
    auto shuffled = rec;
    std::shuffle(shuffled.regions.begin(), shuffled.regions.end(), rng);
    EXPECT_EQ(fusion_verb_logits(g, fp, shuffled).value(), base);
    // Oracle: elementwise max over independently computed box-path logits.
    for (std::size_t v = 0; v < 5; ++v) {
      double best = -1e300;
      for (const auto& r : rec.regions) {
        double s = store[fp.box_path.bias].value[v];
        for (std::size_t i = 0; i < 3; ++i) s += store[fp.box_path.weight].value.at(v, i) * r[i];
        for (std::size_t i = 0; i < 4; ++i) s += store[fp.box_path.weight].value.at(v, 3 + i) * rec.global[i];
        best = std::max(best, s);
      }
      EXPECT_NEAR(base[v], best, 1e-12);
    }
    auto bare = rec;
    bare.regions.clear();
    auto global_x = g.constant(to_tensor<double>(rec.global));
    EXPECT_EQ(fusion_verb_logits(g, fp, bare).value(), fp.global_path(g, global_x).value());
  }
}

TEST(Attention, WeightsFormADistributionAndContextIsTheirMixture) {
  std::mt19937_64 rng(7);
  FeatureDims dims{2, 0, 3, 3};
  ParameterStore<double> store;
  auto ap = AttentionParams::create(store, "attention", 4, 3, 5, "feature", rng);
  testing_support::perturb(store, rng, 1.0);
  auto rec = testing_support::random_record(dims, rng, 0, true);
  Graph<double> g(&std::as_const(store));
  auto cells = grid_tensor<double>(dims, rec);
  auto h = Tensor<double>::normal({4}, 1.0, rng);
  auto r = attention_context(g, ap, g.constant(h), g.constant(cells));
  const auto& w = r.weights.value();
  ASSERT_EQ(w.size(), 9u);
  double total = 0;
  for (double x : w.values()) {
    EXPECT_GT(x, 0);
    total += x;
  }
  EXPECT_NEAR(total, 1.0, 1e-14);
  // Independent score computation.
  const auto& Wh = store[ap.hidden_weight].value;
  const auto& Wa = store[ap.cell_weight].value;
  const auto& b = store[ap.bias].value;
  const auto& u = store[ap.score].value;
  std::vector<double> scores(9);
  for (std::size_t c = 0; c < 9; ++c) {
    for (std::size_t k = 0; k < 5; ++k) {
      double pre = b[k];
      for (std::size_t j = 0; j < 4; ++j) pre += Wh.at(k, j) * h[j];
      for (std::size_t j = 0; j < 3; ++j) pre += Wa.at(k, j) * cells.at(c, j);
      scores[c] += u[k] * std::tanh(pre);
    }
  }
  double mx = *std::max_element(scores.begin(), scores.end()), z = 0;
  for (double s : scores) z += std::exp(s - mx);
  for (std::size_t c = 0; c < 9; ++c) EXPECT_NEAR(w[c], std::exp(scores[c] - mx) / z, 1e-14);
  for (std::size_t j = 0; j < 3; ++j) {
    double ctx = 0;
    for (std::size_t c = 0; c < 9; ++c) ctx += w[c] * cells.at(c, j);
    EXPECT_NEAR(r.context.value()[j], ctx, 1e-14);
  }
}

TEST(Attention, RequiresGrid) {
  FeatureDims dims{2, 0, 3, 3};
  FeatureRecord rec{{1, 2}, {}, std::nullopt};
  EXPECT_THROW(grid_tensor<double>(dims, rec), ValidationError);
}

TEST(Features, GradientsPassFiniteDifferences) {
  for (const auto& rep : verify::features_suite(20, 1e-5)) EXPECT_LT(rep.max_rel_error, 1e-4) << rep.name;
}
