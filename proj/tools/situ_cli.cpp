// Command-line entry point: gen, train, eval, predict, gradcheck, inspect.
//
// Exit codes: 0 success, 2 usage error, 3 data/validation error, 4 numeric
// failure. Failures print one line: error kind=<kind> message=<json string>.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "situ/situ.hpp"
#include "situ/verify.hpp"

#ifndef SITU_VERSION
#define SITU_VERSION "unknown"
#endif

using namespace situ;
namespace fs = std::filesystem;

namespace {

enum Exit { kOk = 0, kUsage = 2, kValidation = 3, kNumeric = 4 };

int fail(const char* kind, const std::string& message, int code) {
  std::cerr << "error kind=" << kind << " message=" << json(message).dump() << "\n";
  return code;
}

/// Output tree shared by every command; config.json echoes the resolved run.
struct OutDir {
  fs::path root;

  fs::path sub(const std::string& dir) const {
    fs::create_directories(root / dir);
    return root / dir;
  }

  void echo(const std::string& command, json resolved) const {
    fs::create_directories(root);
    resolved["command"] = command;
    resolved["version"] = SITU_VERSION;
    data::write_text((root / "config.json").string(), resolved.dump(2) + "\n");
  }
};

json read_json_file(const std::string& path) {
  try {
    return json::parse(data::read_text(path));
  } catch (const json::exception& e) {
    throw ValidationError("config " + path + ": " + e.what());
  }
}

/// Fills fields from an echoed config.json unless the matching flag was given.
class Replay {
 public:
  Replay(const CLI::App* sub, const std::string& path)
      : sub_(sub), doc_(path.empty() ? json::object() : read_json_file(path)) {}

  template <class T>
  void operator()(const std::string& key, T& field) const {
    if (!doc_.contains(key)) return;
    std::string flag = "--" + key;
    std::replace(flag.begin(), flag.end(), '_', '-');
    if (!sub_->get_option(flag)->count()) field = doc_.at(key).get<T>();
  }

 private:
  const CLI::App* sub_;
  json doc_;
};

void require(const std::string& value, const char* flag) {
  if (value.empty()) throw UsageError(std::string(flag) + " is required");
}

template <class T>
void override_if(const CLI::Option* opt, T& field, const T& value) {
  if (opt->count()) field = value;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string config, out = "out";
  std::uint64_t seed = 0;
  data::SyntheticSpec spec;
  bool shared_pools = false, no_grid = false;
};

int run_gen(const GenArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
  data::SyntheticSpec spec;
  if (!a.config.empty()) {
    json j = read_json_file(a.config);
    spec = data::SyntheticSpec::from_json(j.contains("spec") ? j.at("spec") : j);  // echoed config or bare spec
  }
  override_if(opts.at("seed"), spec.seed, a.seed);
  override_if(opts.at("verbs"), spec.verbs, a.spec.verbs);
  override_if(opts.at("roles"), spec.roles, a.spec.roles);
  override_if(opts.at("min-roles"), spec.min_roles, a.spec.min_roles);
  override_if(opts.at("max-roles"), spec.max_roles, a.spec.max_roles);
  override_if(opts.at("nouns"), spec.nouns, a.spec.nouns);
  override_if(opts.at("pool"), spec.pool, a.spec.pool);
  override_if(opts.at("global-dim"), spec.dims.global, a.spec.dims.global);
  override_if(opts.at("region-dim"), spec.dims.region, a.spec.dims.region);
  override_if(opts.at("cell-dim"), spec.dims.cell, a.spec.dims.cell);
  override_if(opts.at("grid-size"), spec.dims.grid, a.spec.dims.grid);
  override_if(opts.at("max-regions"), spec.max_regions, a.spec.max_regions);
  override_if(opts.at("sigma"), spec.sigma, a.spec.sigma);
  override_if(opts.at("annotation-noise"), spec.annotation_noise, a.spec.annotation_noise);
  override_if(opts.at("canonical-filler-prob"), spec.canonical_filler_prob, a.spec.canonical_filler_prob);
  override_if(opts.at("null-rate"), spec.null_rate, a.spec.null_rate);
  override_if(opts.at("train"), spec.train, a.spec.train);
  override_if(opts.at("dev"), spec.dev, a.spec.dev);
  override_if(opts.at("test"), spec.test, a.spec.test);
  if (a.shared_pools) spec.disjoint_role_pools = false;
  if (a.no_grid) spec.grid = false;
  spec.validate();

  OutDir out{a.out};
  auto manifest = data::write_synthetic(data::generate_synthetic(spec), out.sub("data").string());
  out.echo("gen", {{"seed", spec.seed}, {"spec", spec.to_json()}});
  std::cout << "wrote " << (out.root / "data" / "manifest.json").string() << " (lexicon " << manifest.lexicon_hash << ")\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string data, config, model = "d", direction = "forward", out = "out";
  bool attention = false;
  std::uint64_t seed = 0;
  std::size_t embed = 64, hidden = 64, attention_width = 32, frames = 10;
  std::size_t iters = 0, batch = 0, eval_every = 0, eval_limit = 0;
  double lr = 0;
  bool unweighted = false;
};

/// The resolved configuration: defaults, then the config file, then flags.
json resolve_train(const TrainArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
  json file = a.config.empty() ? json::object() : read_json_file(a.config);
  json model{{"kind", "d"}, {"attention", false}, {"direction", "forward"}, {"embed", 64},
             {"hidden", 64}, {"attention_width", 32}, {"frames", 10}};
  if (file.contains("model")) model.update(file.at("model"));
  train::TrainConfig tc;
  if (file.contains("train")) tc.merge(file.at("train"));
  std::string data_path = file.value("data", std::string());
  std::uint64_t seed = file.value("seed", std::uint64_t(0));

  if (opts.at("data")->count()) data_path = a.data;
  if (opts.at("seed")->count()) seed = a.seed;
  if (opts.at("model")->count()) model["kind"] = a.model;
  if (opts.at("attention")->count()) model["attention"] = a.attention;
  if (opts.at("direction")->count()) model["direction"] = a.direction;
  if (opts.at("embed")->count()) model["embed"] = a.embed;
  if (opts.at("hidden")->count()) model["hidden"] = a.hidden;
  if (opts.at("attention-width")->count()) model["attention_width"] = a.attention_width;
  if (opts.at("frames")->count()) model["frames"] = a.frames;
  override_if(opts.at("iters"), tc.max_iters, a.iters);
  override_if(opts.at("batch-size"), tc.batch_size, a.batch);
  override_if(opts.at("eval-every"), tc.eval_every, a.eval_every);
  override_if(opts.at("eval-limit"), tc.eval_limit, a.eval_limit);
  override_if(opts.at("lr"), tc.lr_initial, a.lr);
  if (a.unweighted) tc.weighted_verb_loss = false;
  tc.seed = seed;
  tc.validate();
  if (data_path.empty()) throw UsageError("train needs --data (a dataset manifest)");
  return {{"data", data_path}, {"seed", seed}, {"model", model}, {"train", tc.to_json()}};
}

checkpoint::ModelHandle build_model(const json& model, const data::Dataset& train, std::uint64_t seed) {
  const std::string kind = model.at("kind").get<std::string>();
  const auto dims = train.features.dims;
  if (kind == "crf") return std::make_unique<crf::CrfModel<double>>(train.lexicon, dims.global, seed);
  if (kind == "discrete")
    return std::make_unique<crf::DiscreteClassifier<double>>(
        train.lexicon, crf::frame_table(*train.lexicon, train.examples, model.at("frames").get<std::size_t>()), dims.global,
        seed);
  models::ModelConfig c;
  c.kind = models::parse_model_kind(kind);
  c.use_attention = model.at("attention").get<bool>();
  c.direction = parse_direction(model.at("direction").get<std::string>());
  c.embed = model.at("embed").get<std::size_t>();
  c.hidden = model.at("hidden").get<std::size_t>();
  c.attention_width = model.at("attention_width").get<std::size_t>();
  c.dims = dims;
  return std::make_unique<models::SituationModel<double>>(c, train.lexicon, seed);
}

int run_train(const TrainArgs& a, const std::map<std::string, const CLI::Option*>& opts) {
  json resolved = resolve_train(a, opts);
  train::TrainConfig tc;
  tc.merge(resolved.at("train"));
  auto manifest = data::Manifest::load(resolved.at("data").get<std::string>());
  auto lex = manifest.load_lexicon();
  auto train_set = manifest.open(lex, "train");
  std::optional<data::Dataset> dev;
  if (manifest.splits.count("dev")) dev = manifest.open(lex, "dev");
  auto handle = build_model(resolved.at("model"), train_set, resolved.at("seed").get<std::uint64_t>());

  OutDir out{a.out};
  out.echo("train", resolved);
  std::ofstream log(out.sub("logs") / "train.jsonl");
  train::TrainResult result;
  std::visit(
      [&](auto& m) {
        result = train::train_loop(*m, train_set, dev ? &*dev : nullptr, tc,
                                   [&](const train::LogRecord& r) { log << r.to_json().dump() << "\n" << std::flush; });
      },
      handle);
  const std::size_t iteration = result.best_metrics ? result.best_iteration : tc.total_iterations();
  checkpoint::save((out.sub("checkpoints") / "model.ckpt").string(), checkpoint::encode(handle, iteration));
  if (result.best_metrics) {
    json m = result.best_metrics->to_json();
    data::write_text((out.sub("metrics") / "dev.json").string(), m.dump(2) + "\n");
    std::cout << "best dev " << result.selected_by << " at iteration " << result.best_iteration << "\n"
              << result.best_metrics->table();
  }
  std::cout << "wrote " << (out.root / "checkpoints" / "model.ckpt").string() << "\n";
  return kOk;
}

// ---------------------------------------------------------------- eval / predict

struct Loaded {
  data::Manifest manifest;
  std::shared_ptr<const Lexicon> lex;
  checkpoint::ModelHandle model;
};

Loaded load_model(const std::string& checkpoint_path, const std::string& data_path) {
  auto manifest = data::Manifest::load(data_path);
  auto lex = manifest.load_lexicon();
  auto model = checkpoint::decode(checkpoint::load(checkpoint_path), lex);
  return {manifest, lex, std::move(model)};
}

template <class F>
auto with_predictor(const checkpoint::ModelHandle& h, F&& f) {
  return std::visit(
      [&](const auto& m) {
        using crf::as_predictor;
        using decode::as_predictor;
        return f(as_predictor(*m));
      },
      h);
}

struct EvalArgs {
  std::string config;
  std::string checkpoint, data, split = "dev", setting = "all", value_all = "per-pair", out = "out";
  bool rare = false;
  std::size_t rare_threshold = 10;
};

int run_eval(EvalArgs a, const CLI::App* sub) {
  Replay replay(sub, a.config);
  replay("checkpoint", a.checkpoint), replay("data", a.data), replay("split", a.split), replay("setting", a.setting);
  replay("rare", a.rare), replay("rare_threshold", a.rare_threshold), replay("value_all", a.value_all);
  require(a.checkpoint, "--checkpoint");
  require(a.data, "--data");
  if (a.setting != "all" && a.setting != "top1" && a.setting != "top5" && a.setting != "gtverb")
    throw UsageError("unknown setting '" + a.setting + "'");
  if (a.value_all != "per-pair" && a.value_all != "single") throw UsageError("unknown value-all mode '" + a.value_all + "'");
  auto loaded = load_model(a.checkpoint, a.data);
  auto split = loaded.manifest.open(loaded.lex, a.split);
  std::vector<AnnotatedExample> examples = a.rare ? eval::rare_filter(*loaded.lex, split.examples, a.rare_threshold)
                                                  : split.examples;
  if (examples.empty()) throw ValidationError("no examples to evaluate in split '" + a.split + "'");
  const bool ranked = a.setting != "gtverb", given = a.setting == "all" || a.setting == "gtverb";
  auto preds = with_predictor(loaded.model, [&](const auto& p) {
    if (ranked && !p.predicts_verbs() && a.setting != "all")
      throw UsageError("model kind " + checkpoint::kind_name(loaded.model) + " cannot predict verbs");
    return eval::predict(p, examples, split.features.records, ranked, given);
  });
  auto mode = a.value_all == "single" ? eval::ValueAllMode::SingleAnnotation : eval::ValueAllMode::PerPair;
  auto records = eval::score_predictions(*loaded.lex, examples, preds, mode);
  auto metrics = eval::aggregate(records);
  if (a.setting == "top1")
    for (const char* k : {"verb@5", "value@5", "value_all@5"}) metrics.entries.erase(k);
  if (a.setting == "top5")
    for (const char* k : {"verb@1", "value@1", "value_all@1"}) metrics.entries.erase(k);

  OutDir out{a.out};
  out.echo("eval", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"split", a.split}, {"setting", a.setting},
                    {"rare", a.rare}, {"rare_threshold", a.rare_threshold}, {"value_all", a.value_all}});
  const std::string stem = a.split + (a.rare ? "-rare" : "");
  data::write_text((out.sub("metrics") / (stem + ".json")).string(), metrics.to_json().dump(2) + "\n");
  std::string lines;
  for (const auto& p : preds) lines += eval::prediction_to_json(*loaded.lex, p).dump() + "\n";
  data::write_text((out.sub("predictions") / (stem + ".jsonl")).string(), lines);
  if (!records.empty() && records.front().top1) {
    json report = json::array();
    for (const auto& r : eval::per_verb_report(records))
      report.push_back({{"verb", loaded.lex->verb_id(r.verb)}, {"accuracy", r.accuracy}, {"count", r.count}});
    data::write_text((out.sub("metrics") / (stem + "-per-verb.json")).string(), report.dump(2) + "\n");
  }
  std::cout << metrics.table();
  return kOk;
}

struct PredictArgs {
  std::string config;
  std::string checkpoint, data, split = "dev", example_id, out = "out";
  std::size_t topk = 5, beam = 1;
};

int run_predict(PredictArgs a, const CLI::App* sub) {
  Replay replay(sub, a.config);
  replay("checkpoint", a.checkpoint), replay("data", a.data), replay("split", a.split);
  replay("example_id", a.example_id), replay("topk", a.topk), replay("beam", a.beam);
  require(a.checkpoint, "--checkpoint");
  require(a.data, "--data");
  require(a.example_id, "--example-id");
  if (a.topk < 1) throw UsageError("--topk must be at least 1");
  if (a.beam < 1) throw UsageError("--beam must be at least 1");
  auto loaded = load_model(a.checkpoint, a.data);
  auto split = loaded.manifest.open(loaded.lex, a.split);
  auto it = std::find_if(split.examples.begin(), split.examples.end(),
                         [&](const auto& ex) { return ex.example_id == a.example_id; });
  if (it == split.examples.end()) throw ValidationError("no example '" + a.example_id + "' in split '" + a.split + "'");
  const auto& rec = split.record(*it);
  eval::Prediction p{it->example_id, {}, std::nullopt};
  with_predictor(loaded.model, [&](const auto& pred) {
    if (pred.predicts_verbs()) p.ranked = pred.rank(rec, a.topk);
    p.given = pred.given_verb(rec, it->verb);
    return 0;
  });
  json j = eval::prediction_to_json(*loaded.lex, p);
  if (a.beam > 1) {
    auto* seq = std::get_if<0>(&loaded.model);
    if (!seq) throw UsageError("--beam applies to sequence models only");
    auto r = decode::beam_search(**seq, rec, it->verb, a.beam);
    j["beam"] = json::array();
    for (const auto& s : r.beam) j["beam"].push_back(eval::scored_to_json(*loaded.lex, s));
  }
  j["ground_truth"] = json::array();
  for (const auto& ann : it->annotations) j["ground_truth"].push_back(situation_to_json(*loaded.lex, ann));

  OutDir out{a.out};
  out.echo("predict", {{"checkpoint", a.checkpoint}, {"data", a.data}, {"split", a.split}, {"example_id", a.example_id},
                       {"topk", a.topk}, {"beam", a.beam}});
  data::write_text((out.sub("predictions") / (a.example_id + ".json")).string(), j.dump(2) + "\n");
  std::cout << j.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- gradcheck / inspect

struct GradArgs {
  std::string config;
  std::string module = "all", out = "out";
  std::size_t seeds = 20;
  double eps = 1e-5, tolerance = 1e-4;
};

int run_gradcheck(GradArgs a, const CLI::App* sub) {
  Replay replay(sub, a.config);
  replay("module", a.module), replay("seeds", a.seeds), replay("eps", a.eps), replay("tolerance", a.tolerance);
  auto reports = verify::gradient_suite(a.module, a.seeds, a.eps);
  json j{{"module", a.module}, {"seeds", a.seeds}, {"eps", a.eps}, {"tolerance", a.tolerance}, {"checks", json::array()}};
  bool ok = true;
  for (const auto& r : reports) {
    j["checks"].push_back(r.to_json());
    ok = ok && r.max_rel_error < a.tolerance;
    std::printf("%-10s %-32s %.3e %s\n", r.module.c_str(), r.name.c_str(), r.max_rel_error,
                r.max_rel_error < a.tolerance ? "ok" : "FAIL");
  }
  j["passed"] = ok;
  OutDir out{a.out};
  out.echo("gradcheck", {{"module", a.module}, {"seeds", a.seeds}, {"eps", a.eps}, {"tolerance", a.tolerance}});
  data::write_text((out.sub("metrics") / "gradcheck.json").string(), j.dump(2) + "\n");
  if (!ok) return fail("numeric", "gradient check above tolerance", kNumeric);
  return kOk;
}

struct InspectArgs {
  std::string config;
  std::string lexicon, dataset, out = "out";
};

json lexicon_summary(const Lexicon& lex) {
  std::size_t total_roles = 0;
  for (std::size_t v = 0; v < lex.verb_count(); ++v) total_roles += lex.frame(v).size();
  std::size_t rare = 0;
  for (std::size_t v = 0; v < lex.verb_count(); ++v) rare += lex.verb_freq(v) <= 10;
  return {{"hash", data::hash_string(lex.hash())},
          {"verbs", lex.verb_count()},
          {"nouns", lex.noun_count() - 1},
          {"roles", lex.role_count()},
          {"max_frame", lex.max_frame_size()},
          {"mean_frame", lex.verb_count() ? double(total_roles) / double(lex.verb_count()) : 0.0},
          {"valid_tuples", lex.valid_tuples().size()},
          {"rare_verbs", rare}};
}

int run_inspect(InspectArgs a, const CLI::App* sub) {
  Replay replay(sub, a.config);
  replay("lexicon", a.lexicon), replay("dataset", a.dataset);
  if (a.lexicon.empty() == a.dataset.empty()) throw UsageError("inspect needs exactly one of --lexicon or --dataset");
  json j;
  if (!a.lexicon.empty()) {
    j = lexicon_summary(Lexicon::parse(data::read_text(a.lexicon)));
  } else {
    auto m = data::Manifest::load(a.dataset);
    auto lex = m.load_lexicon();
    j = {{"lexicon", lexicon_summary(*lex)}, {"splits", json::object()}};
    for (const auto& [name, files] : m.splits) {
      auto d = m.open(lex, name);
      std::size_t unknown = 0, differing = 0;
      for (const auto& ex : d.examples) {
        differing += ex.annotations[0] != ex.annotations[1] || ex.annotations[0] != ex.annotations[2];
        for (const auto& ann : ex.annotations)
          for (std::size_t n : ann.fillers) unknown += n == lex->unknown_noun();
      }
      const auto& dims = d.features.dims;
      j["splits"][name] = {{"examples", d.examples.size()},
                           {"feature_records", d.features.records.size()},
                           {"dims", {dims.global, dims.region, dims.cell, dims.grid}},
                           {"annotations_disagree", differing},
                           {"unknown_fillers", unknown}};
    }
  }
  OutDir out{a.out};
  out.echo("inspect", {{"lexicon", a.lexicon}, {"dataset", a.dataset}});
  std::cout << j.dump(2) << "\n";
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Situation recognition: synthetic data, RNN/CRF models, training and evaluation"};
  app.set_version_flag("--version", std::string(SITU_VERSION));
  app.require_subcommand(1);

  std::map<std::string, const CLI::Option*> gen_opts, train_opts;

  GenArgs ga;
  auto* gen = app.add_subcommand("gen", "generate a planted-signal synthetic dataset");
  gen->add_option("--out", ga.out, "output directory")->capture_default_str();
  gen->add_option("--config", ga.config, "JSON synthetic spec; flags override it");
  gen_opts["seed"] = gen->add_option("--seed", ga.seed, "random seed");
  gen_opts["verbs"] = gen->add_option("--verbs", ga.spec.verbs);
  gen_opts["roles"] = gen->add_option("--roles", ga.spec.roles, "role inventory size");
  gen_opts["min-roles"] = gen->add_option("--min-roles", ga.spec.min_roles);
  gen_opts["max-roles"] = gen->add_option("--max-roles", ga.spec.max_roles);
  gen_opts["nouns"] = gen->add_option("--nouns", ga.spec.nouns);
  gen_opts["pool"] = gen->add_option("--pool", ga.spec.pool, "nouns per role");
  gen_opts["global-dim"] = gen->add_option("--global-dim", ga.spec.dims.global);
  gen_opts["region-dim"] = gen->add_option("--region-dim", ga.spec.dims.region);
  gen_opts["cell-dim"] = gen->add_option("--cell-dim", ga.spec.dims.cell);
  gen_opts["grid-size"] = gen->add_option("--grid-size", ga.spec.dims.grid, "grid side G (G x G cells)");
  gen_opts["max-regions"] = gen->add_option("--max-regions", ga.spec.max_regions);
  gen_opts["sigma"] = gen->add_option("--sigma", ga.spec.sigma, "feature noise");
  gen_opts["annotation-noise"] = gen->add_option("--annotation-noise", ga.spec.annotation_noise);
  gen_opts["canonical-filler-prob"] = gen->add_option("--canonical-filler-prob", ga.spec.canonical_filler_prob);
  gen_opts["null-rate"] = gen->add_option("--null-rate", ga.spec.null_rate);
  gen_opts["train"] = gen->add_option("--train", ga.spec.train, "train split size");
  gen_opts["dev"] = gen->add_option("--dev", ga.spec.dev, "dev split size");
  gen_opts["test"] = gen->add_option("--test", ga.spec.test, "test split size");
  gen->add_flag("--shared-pools", ga.shared_pools, "let roles share nouns");
  gen->add_flag("--no-grid", ga.no_grid, "omit grid features");

  TrainArgs ta;
  auto* tr = app.add_subcommand("train", "train a model and keep the best dev checkpoint");
  tr->add_option("--out", ta.out, "output directory")->capture_default_str();
  tr->add_option("--config", ta.config, "JSON run config (same shape as config.json); flags override it");
  train_opts["data"] = tr->add_option("--data", ta.data, "dataset manifest");
  train_opts["seed"] = tr->add_option("--seed", ta.seed);
  train_opts["model"] = tr->add_option("--model", ta.model, "a|b|c|d|crf|discrete")
                            ->check(CLI::IsMember({"a", "b", "c", "d", "crf", "discrete"}));
  train_opts["attention"] = tr->add_flag("--attention", ta.attention, "attend over grid cells (c, d)");
  train_opts["direction"] =
      tr->add_option("--direction", ta.direction, "role order")->check(CLI::IsMember({"forward", "reversed"}));
  train_opts["embed"] = tr->add_option("--embed", ta.embed);
  train_opts["hidden"] = tr->add_option("--hidden", ta.hidden);
  train_opts["attention-width"] = tr->add_option("--attention-width", ta.attention_width);
  train_opts["frames"] = tr->add_option("--frames", ta.frames, "frames kept per verb (discrete)");
  train_opts["iters"] = tr->add_option("--iters", ta.iters, "iterations (single phase)");
  train_opts["batch-size"] = tr->add_option("--batch-size", ta.batch);
  train_opts["eval-every"] = tr->add_option("--eval-every", ta.eval_every);
  train_opts["eval-limit"] = tr->add_option("--eval-limit", ta.eval_limit, "dev examples per evaluation");
  train_opts["lr"] = tr->add_option("--lr", ta.lr, "initial learning rate");
  tr->add_flag("--unweighted", ta.unweighted, "plain verb cross-entropy");

  EvalArgs ea;
  auto* ev = app.add_subcommand("eval", "score a checkpoint on a split");
  ev->add_option("--config", ea.config, "echoed config.json to replay; flags override it");
  ev->add_option("--checkpoint", ea.checkpoint);
  ev->add_option("--data", ea.data, "dataset manifest");
  ev->add_option("--split", ea.split)->capture_default_str();
  ev->add_option("--setting", ea.setting, "all|top1|top5|gtverb")->capture_default_str();
  ev->add_flag("--rare", ea.rare, "only verbs with few training examples");
  ev->add_option("--rare-threshold", ea.rare_threshold)->capture_default_str();
  ev->add_option("--value-all", ea.value_all, "per-pair|single")->capture_default_str();
  ev->add_option("--out", ea.out)->capture_default_str();

  PredictArgs pa;
  auto* pr = app.add_subcommand("predict", "show predictions for one example");
  pr->add_option("--config", pa.config, "echoed config.json to replay; flags override it");
  pr->add_option("--checkpoint", pa.checkpoint);
  pr->add_option("--data", pa.data, "dataset manifest");
  pr->add_option("--split", pa.split)->capture_default_str();
  pr->add_option("--example-id", pa.example_id);
  pr->add_option("--topk", pa.topk)->capture_default_str();
  pr->add_option("--beam", pa.beam, "beam width for the ground-truth verb decode")->capture_default_str();
  pr->add_option("--out", pa.out)->capture_default_str();

  GradArgs gr;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--module", gr.module, "all|numeric|rnn|features|models")
      ->check(CLI::IsMember({"all", "numeric", "rnn", "features", "models"}))
      ->capture_default_str();
  gc->add_option("--config", gr.config, "echoed config.json to replay; flags override it");
  gc->add_option("--seeds", gr.seeds)->capture_default_str();
  gc->add_option("--eps", gr.eps)->capture_default_str();
  gc->add_option("--tolerance", gr.tolerance)->capture_default_str();
  gc->add_option("--out", gr.out)->capture_default_str();

  InspectArgs ia;
  auto* in = app.add_subcommand("inspect", "summarize a lexicon or dataset");
  in->add_option("--config", ia.config, "echoed config.json to replay; flags override it");
  in->add_option("--lexicon", ia.lexicon);
  in->add_option("--dataset", ia.dataset, "dataset manifest");
  in->add_option("--out", ia.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), kUsage);
  }

  try {
    if (*gen) return run_gen(ga, gen_opts);
    if (*tr) return run_train(ta, train_opts);
    if (*ev) return run_eval(ea, ev);
    if (*pr) return run_predict(pa, pr);
    if (*gc) return run_gradcheck(gr, gc);
    if (*in) return run_inspect(ia, in);
  } catch (const UsageError& e) {
    return fail("usage", e.what(), kUsage);
  } catch (const ValidationError& e) {
    return fail("validation", e.what(), kValidation);
  } catch (const NumericError& e) {
    return fail("numeric", e.what(), kNumeric);
  } catch (const json::exception& e) {
    return fail("validation", e.what(), kValidation);
  } catch (const fs::filesystem_error& e) {
    return fail("validation", e.what(), kValidation);
  }
  return kUsage;
}
