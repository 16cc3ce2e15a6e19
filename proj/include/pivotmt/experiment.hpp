#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "pivotmt/checkpoint.hpp"
#include "pivotmt/corpus.hpp"
#include "pivotmt/grid.hpp"
#include "pivotmt/training.hpp"

namespace pivotmt {

// Everything needed to train and evaluate the direct, single-pivot and
// multi-pivot systems on one synthetic corpus.
struct ExperimentConfig {
  SynthSpec corpus;
  ModelConfig model;  // vocabulary sizes and encoder counts are set per role
  TrainConfig train;
  std::vector<std::size_t> ks{1, 2, 4, 6, 8};
  std::size_t test_limit = 0;  // 0: whole test split

  // Copy with every seed derived from `seed`.
  ExperimentConfig with_seed(std::uint64_t seed) const;
  nlohmann::ordered_json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
};

// One trainable system: sources -> target.
struct Role {
  std::string name;  // "direct", "s2p-fr", "p2t-fr", "p2t-multi"
  std::vector<std::string> sources;
  std::string target;
};

// direct, s2p per pivot, p2t per pivot, then p2t-multi over all pivots.
std::vector<Role> experiment_roles(const SynthSpec& spec);

// Source, shared pivot and target vocabularies. Every pivot language uses
// the shared pivot vocabulary so any s2p model can feed any p2t model.
struct ExperimentVocabs {
  Vocab source, pivot, target;
  const Vocab& of(const SynthSpec& spec, const std::string& language) const;
};
ExperimentVocabs experiment_vocabs(const ParallelCorpus& corpus, const SynthSpec& spec);

using ProgressLog = std::function<void(const std::string&)>;

// Trains one role, or loads it from <cache_dir>/<role>-<hash>.ckpt when the
// same configuration was trained before. The hash covers the corpus spec,
// model and train configs and the role.
ModelBundle train_role(const ExperimentConfig& config, const ParallelCorpus& corpus, const ExperimentVocabs& vocabs,
                       const Role& role, const std::filesystem::path& cache_dir, const ProgressLog& log = {});

std::map<std::string, ModelBundle> train_all_roles(const ExperimentConfig& config, const ParallelCorpus& corpus,
                                                   const std::filesystem::path& cache_dir, const ProgressLog& log = {});

// Test split encoded for evaluation: source column to target column.
EvalSet test_set(const ParallelCorpus& corpus, const ExperimentVocabs& vocabs, const SynthSpec& spec,
                 std::size_t limit = 0);

// Grid wiring of trained roles: direct plus one setup per pivot and "multi".
GridModels grid_models(const std::map<std::string, ModelBundle>& bundles, const SynthSpec& spec);

}  // namespace pivotmt
