#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pivotmt/pipeline.hpp"
#include "pivotmt/tokens.hpp"

namespace pivotmt {

struct EvalSet {
  std::vector<TokenIds> sources;
  std::vector<TokenIds> references;
};

struct Score {
  double bleu = 0.0;
  double al = 0.0;  // mean over sentences with nonempty source and output
  bool operator==(const Score&) const = default;
};

// One pivot configuration: rows are k_s2p, columns k_p2t.
struct GridResult {
  std::string label;
  std::vector<std::size_t> ks;
  std::vector<std::vector<Score>> cells;
  std::optional<Score> full;  // both stages full-sentence
  bool operator==(const GridResult&) const = default;
};

struct DirectResult {
  std::vector<std::size_t> ks;
  std::vector<Score> cells;
  std::optional<Score> full;
  bool operator==(const DirectResult&) const = default;
};

struct GridReport {
  std::optional<DirectResult> direct;
  std::vector<GridResult> grids;
  bool operator==(const GridReport&) const = default;
};

struct PivotSetup {
  std::string label;  // "fr", "es", "multi"
  std::vector<const Model*> s2p;
  const Model* p2t = nullptr;
};

struct GridModels {
  const Model* direct = nullptr;
  std::vector<PivotSetup> setups;
};

// Scores of a single model decoded with wait-k (nullopt: full sentence).
Score direct_score(const Model& model, const EvalSet& set, StageK k, std::size_t max_steps = 256);

// Scores of a chained configuration; both stages full or both wait-k.
Score pipeline_score(const PipelineConfig& config, const EvalSet& set);

// Every (k_s2p, k_p2t) pair per setup, the direct wait-k row, and the
// full-sentence cells when include_full. ConfigError naming the stage when a
// model is missing.
GridReport run_grid(const GridModels& models, const EvalSet& set, const std::vector<std::size_t>& ks,
                    bool include_full = true);

// CSV "config,k_s2p,k_p2t,bleu,al" with "full" for full-sentence stages; the
// direct model's wait-k cells use k_s2p = full. Markdown holds the
// full-sentence table, one k_s2p x k_p2t table per setup with each row's
// maximum in bold, and the direct wait-k row. IoError on write failure.
void emit_report(const GridReport& report, const std::filesystem::path& csv_path,
                 const std::filesystem::path& markdown_path);

// Inverse of the CSV form. ParseError on malformed rows.
GridReport parse_report_csv(const std::filesystem::path& path);

}  // namespace pivotmt
