#include "pivotmt/experiment.hpp"

#include <set>

#include "pivotmt/errors.hpp"
#include "pivotmt/hash.hpp"

namespace pivotmt {

ExperimentConfig ExperimentConfig::with_seed(std::uint64_t seed) const {
  ExperimentConfig c = *this;
  c.corpus.seed = seed;
  c.model.seed = seed;
  c.train.seed = seed;
  return c;
}

nlohmann::ordered_json ExperimentConfig::to_json() const {
  nlohmann::ordered_json j;
  j["corpus"] = nlohmann::ordered_json::parse(corpus.to_json());
  j["model"] = model_config_to_json(model);
  j["train"] = train_config_to_json(train);
  j["ks"] = ks;
  j["test_limit"] = test_limit;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("experiment config must be a JSON object");
  static const std::set<std::string> known{"corpus", "model", "train", "ks", "test_limit"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ParseError("unknown experiment config key '" + key + "'");
  ExperimentConfig c;
  if (j.contains("corpus")) c.corpus = SynthSpec::from_json(j["corpus"].dump());
  if (j.contains("model")) c.model = model_config_from_json(j["model"]);
  if (j.contains("train")) c.train = train_config_from_json(j["train"]);
  try {
    c.ks = j.value("ks", c.ks);
    c.test_limit = j.value("test_limit", c.test_limit);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("experiment config: ") + e.what());
  }
  if (c.ks.empty() || std::find(c.ks.begin(), c.ks.end(), 0) != c.ks.end()) {
    throw ConfigError("experiment ks must be a nonempty list of positive values");
  }
  return c;
}

std::vector<Role> experiment_roles(const SynthSpec& spec) {
  std::vector<Role> roles{{"direct", {spec.source_name}, spec.target_name}};
  for (const auto& p : spec.pivot_names) roles.push_back({"s2p-" + p, {spec.source_name}, p});
  for (const auto& p : spec.pivot_names) roles.push_back({"p2t-" + p, {p}, spec.target_name});
  roles.push_back({"p2t-multi", spec.pivot_names, spec.target_name});
  return roles;
}

const Vocab& ExperimentVocabs::of(const SynthSpec& spec, const std::string& language) const {
  if (language == spec.source_name) return source;
  if (language == spec.target_name) return target;
  for (const auto& p : spec.pivot_names)
    if (language == p) return pivot;
  throw ConfigError("language '" + language + "' is not part of the experiment");
}

ExperimentVocabs experiment_vocabs(const ParallelCorpus& corpus, const SynthSpec& spec) {
  const auto src = corpus.side(spec.source_name, Split::Train);
  const auto tgt = corpus.side(spec.target_name, Split::Train);
  std::vector<std::vector<Sentence>> pivots;
  for (const auto& p : spec.pivot_names) pivots.push_back(corpus.side(p, Split::Train));
  std::vector<const std::vector<Sentence>*> pivot_sides;
  for (const auto& p : pivots) pivot_sides.push_back(&p);
  return {build_vocab({&src}), build_vocab(pivot_sides), build_vocab({&tgt})};
}

namespace {

ModelConfig role_model_config(const ExperimentConfig& config, const ExperimentVocabs& vocabs, const Role& role) {
  ModelConfig mc = config.model;
  mc.num_encoders = role.sources.size();
  mc.src_vocab = vocabs.of(config.corpus, role.sources.front()).size();
  mc.tgt_vocab = vocabs.of(config.corpus, role.target).size();
  mc.seed = fnv1a(role.name, config.model.seed);
  return mc;
}

std::string role_hash(const ExperimentConfig& config, const ModelConfig& mc, const Role& role) {
  nlohmann::ordered_json key;
  key["corpus"] = nlohmann::ordered_json::parse(config.corpus.to_json());
  key["model"] = model_config_to_json(mc);
  key["train"] = train_config_to_json(config.train);
  key["role"] = {{"name", role.name}, {"sources", role.sources}, {"target", role.target}};
  return hex64(fnv1a(key.dump()));
}

}  // namespace

ModelBundle train_role(const ExperimentConfig& config, const ParallelCorpus& corpus, const ExperimentVocabs& vocabs,
                       const Role& role, const std::filesystem::path& cache_dir, const ProgressLog& log) {
  const auto mc = role_model_config(config, vocabs, role);
  const auto hash = role_hash(config, mc, role);
  const auto path = cache_dir / (role.name + "-" + hash + ".ckpt");
  const Vocab& sv = vocabs.of(config.corpus, role.sources.front());
  const Vocab& tv = vocabs.of(config.corpus, role.target);

  if (std::filesystem::exists(path)) {
    auto b = load_checkpoint(path);
    if (b.metadata.value("hash", std::string()) == hash && b.src_vocab == sv && b.tgt_vocab == tv) {
      if (log) log(role.name + ": loaded " + path.string());
      return b;
    }
  }

  auto data = make_train_data(corpus, role.sources, role.target, sv, tv);
  Model model(mc);
  if (log) {
    log(role.name + ": training " + std::to_string(model.parameter_count()) + " parameters on " +
        std::to_string(data.train.size()) + " examples");
  }
  auto observer = [&](const CurvePoint& p) {
    if (log && p.dev_bleu) {
      log(role.name + ": step " + std::to_string(p.step) + " loss " + std::to_string(p.loss) + " dev BLEU " +
          std::to_string(*p.dev_bleu));
    }
  };
  auto result = train(model, data, config.train, observer);

  double best = 0.0;
  for (const auto& c : result.history) best = std::max(best, c.dev_bleu);
  nlohmann::ordered_json meta;
  meta["hash"] = hash;
  meta["role"] = role.name;
  meta["sources"] = role.sources;
  meta["target"] = role.target;
  meta["steps"] = result.steps;
  meta["early_stopped"] = result.early_stopped;
  meta["best_dev_bleu"] = best;
  meta["train"] = train_config_to_json(config.train);

  std::filesystem::create_directories(cache_dir);
  save_checkpoint(path, result.model, sv, tv, meta);
  auto curve_path = path;
  curve_path.replace_extension(".curve.csv");
  write_curve_csv(curve_path, result.curve);
  if (log) log(role.name + ": saved " + path.string());
  return ModelBundle{std::move(result.model), sv, tv, meta};
}

std::map<std::string, ModelBundle> train_all_roles(const ExperimentConfig& config, const ParallelCorpus& corpus,
                                                   const std::filesystem::path& cache_dir, const ProgressLog& log) {
  const auto vocabs = experiment_vocabs(corpus, config.corpus);
  std::map<std::string, ModelBundle> out;
  for (const auto& role : experiment_roles(config.corpus))
    out.emplace(role.name, train_role(config, corpus, vocabs, role, cache_dir, log));
  return out;
}

EvalSet test_set(const ParallelCorpus& corpus, const ExperimentVocabs& vocabs, const SynthSpec& spec,
                 std::size_t limit) {
  const auto src = corpus.side(spec.source_name, Split::Test);
  const auto tgt = corpus.side(spec.target_name, Split::Test);
  const std::size_t n = limit == 0 ? src.size() : std::min(limit, src.size());
  EvalSet set;
  for (std::size_t i = 0; i < n; ++i) {
    set.sources.push_back(vocabs.source.encode(src[i]));
    set.references.push_back(vocabs.target.encode(tgt[i]));
  }
  return set;
}

GridModels grid_models(const std::map<std::string, ModelBundle>& bundles, const SynthSpec& spec) {
  auto get = [&](const std::string& name) -> const Model* {
    auto it = bundles.find(name);
    return it == bundles.end() ? nullptr : &it->second.model;
  };
  GridModels g;
  g.direct = get("direct");
  PivotSetup multi{"multi", {}, get("p2t-multi")};
  for (const auto& p : spec.pivot_names) {
    g.setups.push_back({p, {get("s2p-" + p)}, get("p2t-" + p)});
    multi.s2p.push_back(get("s2p-" + p));
  }
  g.setups.push_back(multi);
  return g;
}

}  // namespace pivotmt
