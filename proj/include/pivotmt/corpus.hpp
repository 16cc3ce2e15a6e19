#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "pivotmt/tokens.hpp"

namespace pivotmt {

using Sentence = std::vector<std::string>;

// Whitespace tokenization and its inverse.
Sentence tokenize(std::string_view line);
std::string detokenize(const Sentence& sentence);

class Vocab {
 public:
  // Only the reserved tokens.
  Vocab();
  // Reserved tokens followed by `tokens` in order; duplicates are rejected.
  explicit Vocab(const std::vector<std::string>& tokens);

  std::size_t size() const { return tokens_.size(); }
  bool contains(std::string_view token) const;
  // UNK for unknown tokens.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  TokenIds encode(const Sentence& sentence) const;
  // Stops at the first EOS; PAD and BOS are dropped.
  Sentence decode(std::span<const int> ids) const;

  bool operator==(const Vocab& other) const { return tokens_ == other.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

// Frequency-ordered vocabulary (ties by token text) over every sentence of
// every given side.
Vocab build_vocab(const std::vector<const std::vector<Sentence>*>& sides);

enum class Split { Train, Dev, Test };
const char* split_name(Split split);
Split parse_split(std::string_view name);

struct Example {
  std::vector<Sentence> sides;  // one per language, in corpus order
  Split split = Split::Train;
  bool operator==(const Example&) const = default;
};

struct ParallelCorpus {
  std::vector<std::string> languages;
  std::vector<Example> examples;

  // Column index of a language; ConfigError if absent.
  std::size_t column(std::string_view language) const;
  // All sentences of one language in a split (or every split).
  std::vector<Sentence> side(std::string_view language, std::optional<Split> split = std::nullopt) const;
  ParallelCorpus subset(Split split) const;
  std::size_t count(Split split) const;
  bool operator==(const ParallelCorpus&) const = default;
};

// Deterministic many-to-one and invertible transforms that define the
// synthetic task. Token ids here are base ids in [0, base_vocab).
struct SynthSpec {
  std::size_t base_vocab = 40;
  std::size_t min_len = 3;
  std::size_t max_len = 12;
  std::size_t train_size = 18000;
  std::size_t dev_size = 1000;
  std::size_t test_size = 1000;
  std::uint64_t seed = 1;

  std::string source_name = "ar";
  std::vector<std::string> pivot_names{"fr", "es"};
  std::string target_name = "en";

  // Per pivot: groups of base ids collapsed to their lowest member.
  std::vector<std::vector<std::vector<int>>> confusions{
      {{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}},
      {{10, 11}, {12, 13}, {14, 15}, {16, 17}, {18, 19}, {20, 21}, {22, 23}}};

  // A token whose id is in swap_triggers trades places with its successor in
  // the source; the moved successor takes a marked surface form.
  std::vector<int> swap_triggers{24, 25, 26, 27, 28, 29, 30, 31, 32, 33};
  std::uint64_t source_perm_seed = 99;

  // Members of a confusable lemma agree with the lemma cue_distance
  // positions later with probability cue_strength; otherwise uniform.
  std::size_t cue_distance = 3;
  double cue_strength = 0.85;

  // Throws SpecError when ranges are empty, ids fall outside the base
  // vocabulary, groups overlap within a pivot, or some pair of tokens is
  // merged by every pivot.
  void validate() const;
  std::string to_json() const;
  static SynthSpec from_json(std::string_view text);
  // FNV-1a of the canonical JSON form.
  std::uint64_t hash() const;
  bool operator==(const SynthSpec&) const = default;
};

// The transforms of a validated spec, exposed for oracles and tests.
class SynthTransforms {
 public:
  explicit SynthTransforms(const SynthSpec& spec);

  std::size_t pivots() const { return pivot_rep_.size(); }
  std::size_t base_vocab() const { return lemma_.size(); }
  int pivot_rep(std::size_t pivot, int base) const { return pivot_rep_.at(pivot).at(base); }
  // Base ids mapping to `rep` in the given pivot.
  const std::vector<int>& preimage(std::size_t pivot, int rep) const;
  // Connected component of the union of all pivots' merges.
  int lemma(int base) const { return lemma_.at(base); }
  const std::vector<int>& lemma_members(int lemma) const { return members_.at(lemma); }
  std::size_t lemma_count() const { return members_.size(); }
  // Member index selected by a cue lemma.
  std::size_t cue_index(int cue_lemma, std::size_t members) const;

  std::vector<int> pivot_of(std::span<const int> target, std::size_t pivot) const;
  Sentence source_surface(std::span<const int> target) const;
  // Inverse of source_surface; nullopt on malformed input.
  std::optional<std::vector<int>> target_from_source(const Sentence& source) const;

  static std::string target_token(int base);
  static std::optional<int> parse_target_token(std::string_view token);

 private:
  const SynthSpec* spec_;
  std::vector<std::vector<int>> pivot_rep_;
  std::vector<std::vector<std::vector<int>>> preimage_;
  std::vector<int> lemma_;
  std::vector<std::vector<int>> members_;
  std::vector<int> perm_;
  std::vector<int> inverse_perm_;
  std::vector<bool> trigger_;
};

// Columns: source, pivots in order, target.
ParallelCorpus generate_synthetic_nway(const SynthSpec& spec);

// Brute-force recovery of the target from pivot sentences: enumerates every
// target sequence consistent with all given pivots. Succeeds only when that
// set has exactly one element.
std::optional<Sentence> oracle_recover(const SynthTransforms& transforms, std::span<const std::size_t> pivot_ids,
                                       const std::vector<const Sentence*>& pivot_sentences);

struct OracleReport {
  std::size_t examples = 0;
  std::size_t recovered = 0;
  double accuracy() const { return examples ? static_cast<double>(recovered) / examples : 0.0; }
};
OracleReport oracle_accuracy(const SynthSpec& spec, const ParallelCorpus& corpus,
                             std::span<const std::size_t> pivot_ids);

// TSV with a header row of language names and an optional "split" column.
ParallelCorpus load_tsv(const std::filesystem::path& path, const std::vector<std::string>& columns = {});
void write_tsv(const std::filesystem::path& path, const ParallelCorpus& corpus);

// Generated corpora cached as <dir>/synth-<hash>.tsv.
ParallelCorpus cached_synthetic(const SynthSpec& spec, const std::filesystem::path& dir);

struct Batch {
  std::vector<std::size_t> indices;
  std::vector<std::vector<TokenIds>> columns;  // [column][example], unpadded
  // Column rows right-padded with PAD to the batch maximum.
  std::vector<TokenIds> padded(std::size_t column) const;
};

// One epoch of batches over examples[i][column]. Examples are shuffled by
// (seed, epoch), sorted by length within buckets of 32 batches, and every
// example appears exactly once; only the last batch may be short.
std::vector<Batch> make_batches(const std::vector<std::vector<TokenIds>>& examples, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch);

}  // namespace pivotmt
