#include <gtest/gtest.h>

#include <filesystem>

#include "support.hpp"

using namespace situ;
using models::ModelConfig;
using models::ModelKind;

namespace {

data::SyntheticData small_data(std::uint64_t seed) {
  data::SyntheticSpec s;
  s.verbs = 5;
  s.roles = 4;
  s.nouns = 16;
  s.pool = 3;
  s.max_roles = 3;
  s.dims = {12, 12, 3, 2};
  s.train = 60;
  s.dev = 100;
  s.test = 5;
  s.seed = seed;
  return data::generate_synthetic(s);
}

std::string predictions_of(const checkpoint::ModelHandle& h, const data::Dataset& d) {
  std::string out;
  std::visit(
      [&](const auto& m) {
        using decode::as_predictor;
        using crf::as_predictor;
        for (const auto& p : eval::predict(as_predictor(*m), d.examples, d.features.records))
          out += eval::prediction_to_json(*d.lexicon, p).dump() + "\n";
      },
      h);
  return out;
}

std::vector<checkpoint::ModelHandle> trained_models(const data::SyntheticData& data) {
  const auto& train = data.splits.at("train");
  std::vector<checkpoint::ModelHandle> out;
  for (auto [kind, attention] : std::vector<std::pair<ModelKind, bool>>{{ModelKind::NoVision, false},
                                                                         {ModelKind::SharedRnn, false},
                                                                         {ModelKind::ClassifierPlusRnn, true},
                                                                         {ModelKind::SeparatePlusRnn, false}}) {
    ModelConfig c;
    c.kind = kind;
    c.use_attention = attention;
    c.embed = 6;
    c.hidden = 7;
    c.attention_width = 3;
    c.dims = train.features.dims;
    out.push_back(std::make_unique<models::SituationModel<double>>(c, data.lexicon, 3));
  }
  out.push_back(std::make_unique<crf::CrfModel<double>>(data.lexicon, train.features.dims.global, 3));
  out.push_back(std::make_unique<crf::DiscreteClassifier<double>>(
      data.lexicon, crf::frame_table(*data.lexicon, train.examples, 4), train.features.dims.global, 3));
  train::TrainConfig cfg;
  cfg.max_iters = 8;
  cfg.batch_size = 8;
  cfg.lr_initial = 1e-2;
  for (auto& h : out) std::visit([&](auto& m) { train::train_loop(*m, train, nullptr, cfg); }, h);
  return out;
}

}  // namespace

TEST(Checkpoint, SaveLoadGivesIdenticalPredictions) {
  auto data = small_data(1);
  const auto& dev = data.splits.at("dev");
  ASSERT_EQ(dev.examples.size(), 100u);
  auto dir = std::filesystem::path(::testing::TempDir()) / "situ_ckpt";
  std::filesystem::create_directories(dir);
  for (const auto& h : trained_models(data)) {
    auto path = (dir / (checkpoint::kind_name(h) + ".ckpt")).string();
    checkpoint::save(path, checkpoint::encode(h, 8));
    auto back = checkpoint::decode(checkpoint::load(path), data.lexicon);
    EXPECT_EQ(checkpoint::kind_name(back), checkpoint::kind_name(h));
    EXPECT_EQ(predictions_of(back, dev), predictions_of(h, dev)) << checkpoint::kind_name(h);
    std::visit(
        [&](const auto& a) {
          std::visit(
              [&](const auto& b) {
                EXPECT_EQ(checkpoint::parameters_json(a->store()), checkpoint::parameters_json(b->store()));
                EXPECT_EQ(a->store().step, b->store().step);
              },
              back);
        },
        h);
  }
}

TEST(Checkpoint, RefusesOtherLexiconsAndFormats) {
  auto data = small_data(1);
  auto models = trained_models(data);
  auto doc = checkpoint::encode(models.front(), 8);
  auto other = small_data(2).lexicon;
  EXPECT_THROW(checkpoint::decode(doc, other), ValidationError);
  auto bad = doc;
  bad["format"] = "something-else";
  EXPECT_THROW(checkpoint::decode(bad, data.lexicon), ValidationError);
  bad = doc;
  bad["params"].erase(0);
  EXPECT_THROW(checkpoint::decode(bad, data.lexicon), ValidationError);
  auto path = (std::filesystem::path(::testing::TempDir()) / "situ_garbage.ckpt").string();
  data::write_text(path, "\xff\x01not cbor");
  EXPECT_THROW(checkpoint::load(path), ValidationError);
}
