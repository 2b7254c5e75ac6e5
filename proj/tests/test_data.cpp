#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace situ;
using namespace situ::data;
namespace fs = std::filesystem;

namespace {

SyntheticSpec small_spec(std::uint64_t seed = 1) {
  SyntheticSpec s;
  s.verbs = 6;
  s.roles = 5;
  s.nouns = 20;
  s.pool = 3;
  s.dims = {24, 24, 4, 2};
  s.train = 120;
  s.dev = 30;
  s.test = 30;
  s.seed = seed;
  return s;
}

fs::path scratch(const std::string& name) {
  auto p = fs::path(::testing::TempDir()) / ("situ_data_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) { return read_text(p.string()); }

}  // namespace

TEST(Examples, JsonRoundTripAndExactlyThreeAnnotations) {
  auto data = generate_synthetic(small_spec());
  const auto& lex = *data.lexicon;
  for (const auto& ex : data.splits.at("dev").examples) EXPECT_EQ(example_from_json(lex, example_to_json(lex, ex), true), ex);
  auto j = example_to_json(lex, data.splits.at("train").examples[0]);
  j["annotations"].erase(j["annotations"].size() - 1);
  EXPECT_THROW(example_from_json(lex, j, false), ValidationError);
}

TEST(Examples, DuplicateIdsRejected) {
  auto data = generate_synthetic(small_spec());
  const auto& d = data.splits.at("train");
  std::vector<AnnotatedExample> twice{d.examples[0], d.examples[0]};
  EXPECT_THROW(decode_examples(*d.lexicon, encode_examples(*d.lexicon, twice), false), ValidationError);
}

TEST(Dataset, SaveLoadRoundTrip) {
  auto data = generate_synthetic(small_spec());
  auto dir = scratch("roundtrip");
  for (const auto& [name, d] : data.splits) {
    save_dataset(d, (dir / (name + ".jsonl")).string(), (dir / (name + ".feat")).string());
    auto back = load_dataset(data.lexicon, (dir / (name + ".jsonl")).string(), (dir / (name + ".feat")).string(), name);
    EXPECT_EQ(back.examples, d.examples);
    EXPECT_EQ(back.features, d.features);
  }
}

TEST(Dataset, TruncatedFeaturesNameTheExample) {
  auto data = generate_synthetic(small_spec());
  auto dir = scratch("truncated");
  const auto& d = data.splits.at("dev");
  save_dataset(d, (dir / "dev.jsonl").string(), (dir / "dev.feat").string());
  auto bytes = slurp(dir / "dev.feat");
  write_text((dir / "dev.feat").string(), bytes.substr(0, bytes.size() - 5));
  try {
    load_dataset(data.lexicon, (dir / "dev.jsonl").string(), (dir / "dev.feat").string(), "dev");
    FAIL() << "expected a truncation error";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("'" + d.examples.back().example_id + "'"), std::string::npos) << e.what();
  }
}

TEST(Synthetic, DeterministicFiles) {
  auto a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  write_synthetic(generate_synthetic(small_spec(7)), a.string());
  write_synthetic(generate_synthetic(small_spec(7)), b.string());
  write_synthetic(generate_synthetic(small_spec(8)), c.string());
  std::size_t files = 0;
  for (const auto& entry : fs::directory_iterator(a)) {
    ++files;
    EXPECT_EQ(slurp(entry.path()), slurp(b / entry.path().filename())) << entry.path();
  }
  EXPECT_EQ(files, 8u);
  EXPECT_NE(slurp(a / "train.feat"), slurp(c / "train.feat"));
}

TEST(Synthetic, SplitsValidateAndAreDisjoint) {
  auto data = generate_synthetic(small_spec());
  std::set<std::string> ids;
  std::size_t total = 0;
  for (const auto& [name, d] : data.splits) {
    for (const auto& ex : d.examples) {
      EXPECT_NO_THROW(validate(*data.lexicon, ex, allows_unknown(name)));
      EXPECT_NO_THROW(features::validate(d.features.dims, d.record(ex)));
      ids.insert(ex.example_id);
      ++total;
    }
  }
  EXPECT_EQ(ids.size(), total);
  // Frequencies come from train only.
  std::vector<std::size_t> counts(data.lexicon->verb_count());
  for (const auto& ex : data.splits.at("train").examples) ++counts[ex.verb];
  for (std::size_t v = 0; v < counts.size(); ++v) EXPECT_EQ(data.lexicon->verb_freq(v), counts[v]);
}

TEST(Synthetic, DisjointPoolsFixRolePositions) {
  auto data = generate_synthetic(small_spec());
  for (const auto& ex : data.splits.at("train").examples)
    for (const auto& a : ex.annotations)
      for (std::size_t i = 0; i < a.fillers.size(); ++i) EXPECT_TRUE(data.in_pool(ex.verb, i, a.fillers[i]));
  std::set<std::size_t> seen;
  for (const auto& pool : data.truth.role_pools)
    for (std::size_t n : pool) EXPECT_TRUE(seen.insert(n).second) << "noun " << n << " in two pools";
}

TEST(Synthetic, NoAnnotationNoiseGivesIdenticalAnnotations) {
  auto spec = small_spec();
  spec.annotation_noise = 0;
  auto data = generate_synthetic(spec);
  for (const auto& [name, d] : data.splits)
    for (const auto& ex : d.examples) {
      EXPECT_EQ(ex.annotations[0], ex.annotations[1]);
      EXPECT_EQ(ex.annotations[0], ex.annotations[2]);
    }
  spec.annotation_noise = 0.9;
  auto noisy = generate_synthetic(spec);
  std::size_t differing = 0;
  for (const auto& ex : noisy.splits.at("train").examples) differing += ex.annotations[0] != ex.annotations[1];
  EXPECT_GT(differing, 0u);
}

TEST(Synthetic, NoiselessFeaturesAreLinearlySeparableByVerb) {
  auto spec = small_spec(3);
  spec.sigma = 0;
  auto data = generate_synthetic(spec);
  const auto& train = data.splits.at("train");
  const std::size_t V = data.lexicon->verb_count(), D = spec.dims.global;
  // Multiclass perceptron on the global feature: converges iff separable.
  std::vector<std::vector<double>> w(V, std::vector<double>(D + 1, 0.0));
  auto predict = [&](const FeatureRecord& r) {
    std::size_t best = 0;
    double best_s = -1e300;
    for (std::size_t v = 0; v < V; ++v) {
      double s = w[v][D];
      for (std::size_t i = 0; i < D; ++i) s += w[v][i] * r.global[i];
      if (s > best_s) best_s = s, best = v;
    }
    return best;
  };
  std::size_t errors = 1;
  for (int epoch = 0; epoch < 500 && errors; ++epoch) {
    errors = 0;
    for (const auto& ex : train.examples) {
      const auto& r = train.record(ex);
      std::size_t p = predict(r);
      if (p == ex.verb) continue;
      ++errors;
      for (std::size_t i = 0; i < D; ++i) {
        w[ex.verb][i] += r.global[i];
        w[p][i] -= r.global[i];
      }
      w[ex.verb][D] += 1;
      w[p][D] -= 1;
    }
  }
  EXPECT_EQ(errors, 0u);
}

TEST(Synthetic, InfeasibleSpecsAreRejected) {
  auto s = small_spec();
  s.pool = 5;  // 5 roles * 5 > 20 nouns
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = small_spec();
  s.max_roles = 9;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = small_spec();
  s.sigma = -1;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = small_spec();
  s.dims.region = 3;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
  s = small_spec();
  s.train = 3;
  EXPECT_THROW(generate_synthetic(s), ValidationError);
}

TEST(Synthetic, SpecJsonRoundTrip) {
  auto s = small_spec(11);
  s.canonical_filler_prob = 0.5;
  EXPECT_EQ(SyntheticSpec::from_json(s.to_json()).to_json(), s.to_json());
  EXPECT_EQ(SyntheticSpec::from_json(json::object()).to_json(), SyntheticSpec{}.to_json());
}

TEST(Manifest, OpensSplitsAndRefusesHashMismatch) {
  auto dir = scratch("manifest");
  auto data = generate_synthetic(small_spec());
  write_synthetic(data, dir.string());
  auto m = Manifest::load((dir / "manifest.json").string());
  auto lex = m.load_lexicon();
  auto dev = m.open(lex, "dev");
  EXPECT_EQ(dev.examples, data.splits.at("dev").examples);
  EXPECT_THROW(m.open(lex, "nope"), ValidationError);

  auto other = generate_synthetic(small_spec(99)).lexicon;
  EXPECT_THROW(m.open(other, "dev"), ValidationError);
  write_text((dir / "lexicon.json").string(), other->serialize());
  EXPECT_THROW(m.load_lexicon(), ValidationError);
}
