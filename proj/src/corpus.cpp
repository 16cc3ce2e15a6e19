#include "pivotmt/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "pivotmt/errors.hpp"
#include "pivotmt/hash.hpp"
#include "pivotmt/rng.hpp"

namespace pivotmt {

namespace {

const std::vector<std::string> kReserved{"<pad>", "<s>", "</s>", "<unk>"};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::optional<int> parse_prefixed(std::string_view token, char prefix) {
  if (token.size() < 2 || token[0] != prefix) return std::nullopt;
  int v = 0;
  for (char c : token.substr(1)) {
    if (c < '0' || c > '9') return std::nullopt;
    v = v * 10 + (c - '0');
    if (v > 1'000'000) return std::nullopt;
  }
  return v;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    cells.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cells;
}

}  // namespace

Sentence tokenize(std::string_view line) {
  Sentence out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    const std::size_t start = i;
    while (i < line.size() && line[i] != ' ' && line[i] != '\t' && line[i] != '\r') ++i;
    if (i > start) out.emplace_back(line.substr(start, i - start));
  }
  return out;
}

std::string detokenize(const Sentence& sentence) {
  std::string out;
  for (std::size_t i = 0; i < sentence.size(); ++i) {
    if (i) out += ' ';
    out += sentence[i];
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocab::Vocab() : Vocab(std::vector<std::string>{}) {}

Vocab::Vocab(const std::vector<std::string>& tokens) : tokens_(kReserved) {
  for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], static_cast<int>(i));
  for (const auto& t : tokens) {
    if (t.empty()) throw ContractError("empty vocabulary token");
    if (!index_.emplace(t, static_cast<int>(tokens_.size())).second) {
      throw ContractError("duplicate vocabulary token '" + t + "'");
    }
    tokens_.push_back(t);
  }
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

int Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of size " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

TokenIds Vocab::encode(const Sentence& sentence) const {
  TokenIds ids;
  ids.reserve(sentence.size());
  for (const auto& t : sentence) ids.push_back(id(t));
  return ids;
}

Sentence Vocab::decode(std::span<const int> ids) const {
  Sentence out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kPad || id == kBos) continue;
    out.push_back(token(id));
  }
  return out;
}

Vocab build_vocab(const std::vector<const std::vector<Sentence>*>& sides) {
  std::map<std::string, std::size_t> counts;
  for (const auto* side : sides)
    for (const auto& s : *side)
      for (const auto& t : s) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens;
  for (auto& [t, c] : items)
    if (std::find(kReserved.begin(), kReserved.end(), t) == kReserved.end()) tokens.push_back(t);
  return Vocab(tokens);
}

const char* split_name(Split split) {
  switch (split) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view name) {
  if (name == "train") return Split::Train;
  if (name == "dev") return Split::Dev;
  if (name == "test") return Split::Test;
  throw ParseError("unknown split '" + std::string(name) + "'");
}

std::size_t ParallelCorpus::column(std::string_view language) const {
  for (std::size_t i = 0; i < languages.size(); ++i)
    if (languages[i] == language) return i;
  std::string names;
  for (const auto& l : languages) names += (names.empty() ? "" : ", ") + l;
  throw ConfigError("corpus has no language '" + std::string(language) + "' (available: " + names + ")");
}

std::vector<Sentence> ParallelCorpus::side(std::string_view language, std::optional<Split> split) const {
  const std::size_t c = column(language);
  std::vector<Sentence> out;
  for (const auto& ex : examples)
    if (!split || ex.split == *split) out.push_back(ex.sides[c]);
  return out;
}

ParallelCorpus ParallelCorpus::subset(Split split) const {
  ParallelCorpus out{languages, {}};
  for (const auto& ex : examples)
    if (ex.split == split) out.examples.push_back(ex);
  return out;
}

std::size_t ParallelCorpus::count(Split split) const {
  return static_cast<std::size_t>(
      std::count_if(examples.begin(), examples.end(), [&](const Example& e) { return e.split == split; }));
}

// ---------------------------------------------------------------------------

void SynthSpec::validate() const {
  if (base_vocab < 2) throw SpecError("base_vocab must be at least 2");
  if (min_len < 1 || min_len > max_len) throw SpecError("sentence length range must satisfy 1 <= min_len <= max_len");
  if (train_size < 1) throw SpecError("train_size must be positive");
  if (pivot_names.empty()) throw SpecError("at least one pivot is required");
  if (confusions.size() != pivot_names.size()) {
    throw SpecError("confusions lists " + std::to_string(confusions.size()) + " pivots but pivot_names has " +
                    std::to_string(pivot_names.size()));
  }
  std::set<std::string> names{source_name, target_name};
  names.insert(pivot_names.begin(), pivot_names.end());
  if (names.size() != pivot_names.size() + 2 || names.count("split")) {
    throw SpecError("language names must be distinct and not 'split'");
  }
  auto in_range = [&](int id) { return id >= 0 && static_cast<std::size_t>(id) < base_vocab; };
  for (std::size_t p = 0; p < confusions.size(); ++p) {
    std::set<int> seen;
    for (const auto& group : confusions[p]) {
      if (group.size() < 2) throw SpecError("confusion groups need at least two members");
      for (int id : group) {
        if (!in_range(id)) throw SpecError("confusion id " + std::to_string(id) + " outside base vocabulary");
        if (!seen.insert(id).second) {
          throw SpecError("id " + std::to_string(id) + " appears twice in pivot " + pivot_names[p]);
        }
      }
    }
  }
  for (int id : swap_triggers)
    if (!in_range(id)) throw SpecError("swap trigger " + std::to_string(id) + " outside base vocabulary");
  if (cue_distance < 1) throw SpecError("cue_distance must be positive");
  if (!(cue_strength >= 0.0 && cue_strength <= 1.0)) throw SpecError("cue_strength must lie in [0, 1]");

  // Complementarity: the per-pivot representatives identify every token.
  SynthTransforms t(*this);
  std::map<std::vector<int>, int> signature;
  for (int b = 0; b < static_cast<int>(base_vocab); ++b) {
    std::vector<int> sig;
    for (std::size_t p = 0; p < t.pivots(); ++p) sig.push_back(t.pivot_rep(p, b));
    auto [it, fresh] = signature.emplace(sig, b);
    if (!fresh) {
      throw SpecError("tokens " + std::to_string(it->second) + " and " + std::to_string(b) +
                      " are merged in every pivot; partitions are not complementary");
    }
  }
}

std::string SynthSpec::to_json() const {
  nlohmann::ordered_json j;
  j["base_vocab"] = base_vocab;
  j["min_len"] = min_len;
  j["max_len"] = max_len;
  j["train_size"] = train_size;
  j["dev_size"] = dev_size;
  j["test_size"] = test_size;
  j["seed"] = seed;
  j["source_name"] = source_name;
  j["pivot_names"] = pivot_names;
  j["target_name"] = target_name;
  j["confusions"] = confusions;
  j["swap_triggers"] = swap_triggers;
  j["source_perm_seed"] = source_perm_seed;
  j["cue_distance"] = cue_distance;
  j["cue_strength"] = cue_strength;
  return j.dump(2);
}

SynthSpec SynthSpec::from_json(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("synthetic spec: ") + e.what());
  }
  if (!j.is_object()) throw ParseError("synthetic spec must be a JSON object");
  SynthSpec s;
  static const std::set<std::string> known{"base_vocab",  "min_len",          "max_len",      "train_size",
                                           "dev_size",    "test_size",        "seed",         "source_name",
                                           "pivot_names", "target_name",      "confusions",   "swap_triggers",
                                           "source_perm_seed", "cue_distance", "cue_strength"};
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key())) throw ConfigError("unknown synthetic spec key '" + it.key() + "'");
  try {
    s.base_vocab = j.value("base_vocab", s.base_vocab);
    s.min_len = j.value("min_len", s.min_len);
    s.max_len = j.value("max_len", s.max_len);
    s.train_size = j.value("train_size", s.train_size);
    s.dev_size = j.value("dev_size", s.dev_size);
    s.test_size = j.value("test_size", s.test_size);
    s.seed = j.value("seed", s.seed);
    s.source_name = j.value("source_name", s.source_name);
    s.pivot_names = j.value("pivot_names", s.pivot_names);
    s.target_name = j.value("target_name", s.target_name);
    s.confusions = j.value("confusions", s.confusions);
    s.swap_triggers = j.value("swap_triggers", s.swap_triggers);
    s.source_perm_seed = j.value("source_perm_seed", s.source_perm_seed);
    s.cue_distance = j.value("cue_distance", s.cue_distance);
    s.cue_strength = j.value("cue_strength", s.cue_strength);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

std::uint64_t SynthSpec::hash() const { return fnv1a(to_json()); }

// ---------------------------------------------------------------------------

SynthTransforms::SynthTransforms(const SynthSpec& spec) : spec_(&spec) {
  const std::size_t n = spec.base_vocab;
  std::vector<int> parent(n);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const auto& groups : spec.confusions) {
    std::vector<int> rep(n);
    std::iota(rep.begin(), rep.end(), 0);
    for (const auto& g : groups) {
      const int lo = *std::min_element(g.begin(), g.end());
      for (int id : g) {
        rep.at(id) = lo;
        parent[find(id)] = find(lo);
      }
    }
    std::vector<std::vector<int>> pre(n);
    for (std::size_t b = 0; b < n; ++b) pre[rep[b]].push_back(static_cast<int>(b));
    pivot_rep_.push_back(std::move(rep));
    preimage_.push_back(std::move(pre));
  }
  lemma_.assign(n, -1);
  std::map<int, int> root_to_lemma;
  for (std::size_t b = 0; b < n; ++b) {
    const int r = find(static_cast<int>(b));
    auto [it, fresh] = root_to_lemma.emplace(r, static_cast<int>(members_.size()));
    if (fresh) members_.emplace_back();
    lemma_[b] = it->second;
    members_[it->second].push_back(static_cast<int>(b));
  }
  perm_.resize(n);
  std::iota(perm_.begin(), perm_.end(), 0);
  Rng rng(spec.source_perm_seed);
  rng.shuffle(perm_);
  inverse_perm_.resize(n);
  for (std::size_t b = 0; b < n; ++b) inverse_perm_[perm_[b]] = static_cast<int>(b);
  trigger_.assign(n, false);
  for (int id : spec.swap_triggers) trigger_.at(id) = true;
}

const std::vector<int>& SynthTransforms::preimage(std::size_t pivot, int rep) const {
  return preimage_.at(pivot).at(rep);
}

std::size_t SynthTransforms::cue_index(int cue_lemma, std::size_t members) const {
  return static_cast<std::size_t>(splitmix64(static_cast<std::uint64_t>(cue_lemma) * 0x2545f4914f6cdd1dULL ^
                                             spec_->seed) %
                                  members);
}

std::vector<int> SynthTransforms::pivot_of(std::span<const int> target, std::size_t pivot) const {
  std::vector<int> out;
  for (int b : target) out.push_back(pivot_rep(pivot, b));
  return out;
}

std::string SynthTransforms::target_token(int base) { return "w" + std::to_string(base); }

std::optional<int> SynthTransforms::parse_target_token(std::string_view token) {
  return parse_prefixed(token, 'w');
}

Sentence SynthTransforms::source_surface(std::span<const int> target) const {
  Sentence out;
  std::size_t t = 0;
  while (t < target.size()) {
    if (trigger_.at(target[t]) && t + 1 < target.size()) {
      out.push_back("y" + std::to_string(perm_.at(target[t + 1])));
      out.push_back("x" + std::to_string(perm_.at(target[t])));
      t += 2;
    } else {
      out.push_back("x" + std::to_string(perm_.at(target[t])));
      t += 1;
    }
  }
  return out;
}

std::optional<std::vector<int>> SynthTransforms::target_from_source(const Sentence& source) const {
  const int n = static_cast<int>(spec_->base_vocab);
  std::vector<int> target;
  for (std::size_t i = 0; i < source.size(); ++i) {
    if (auto y = parse_prefixed(source[i], 'y')) {
      if (i + 1 >= source.size()) return std::nullopt;
      auto x = parse_prefixed(source[i + 1], 'x');
      if (!x || *x >= n || *y >= n) return std::nullopt;
      target.push_back(inverse_perm_[*x]);
      target.push_back(inverse_perm_[*y]);
      ++i;
    } else if (auto x = parse_prefixed(source[i], 'x')) {
      if (*x >= n) return std::nullopt;
      target.push_back(inverse_perm_[*x]);
    } else {
      return std::nullopt;
    }
  }
  if (source_surface(target) != source) return std::nullopt;
  return target;
}

ParallelCorpus generate_synthetic_nway(const SynthSpec& spec) {
  spec.validate();
  SynthTransforms tf(spec);
  ParallelCorpus corpus;
  corpus.languages.push_back(spec.source_name);
  corpus.languages.insert(corpus.languages.end(), spec.pivot_names.begin(), spec.pivot_names.end());
  corpus.languages.push_back(spec.target_name);

  Rng rng(spec.seed);
  const std::size_t lemmas = tf.lemma_count();
  auto make = [&](Split split) {
    const std::size_t len = spec.min_len + rng.below(spec.max_len - spec.min_len + 1);
    std::vector<int> lemma_seq(len);
    for (auto& l : lemma_seq) l = static_cast<int>(rng.below(lemmas));
    std::vector<int> target(len);
    for (std::size_t t = 0; t < len; ++t) {
      const auto& members = tf.lemma_members(lemma_seq[t]);
      if (members.size() == 1) {
        target[t] = members[0];
      } else if (t + spec.cue_distance < len && rng.bernoulli(spec.cue_strength)) {
        target[t] = members[tf.cue_index(lemma_seq[t + spec.cue_distance], members.size())];
      } else {
        target[t] = members[rng.below(members.size())];
      }
    }
    Example ex;
    ex.split = split;
    ex.sides.push_back(tf.source_surface(target));
    for (std::size_t p = 0; p < tf.pivots(); ++p) {
      Sentence s;
      for (int r : tf.pivot_of(target, p)) s.push_back(SynthTransforms::target_token(r));
      ex.sides.push_back(std::move(s));
    }
    Sentence tgt;
    for (int b : target) tgt.push_back(SynthTransforms::target_token(b));
    ex.sides.push_back(std::move(tgt));
    corpus.examples.push_back(std::move(ex));
  };
  for (std::size_t i = 0; i < spec.train_size; ++i) make(Split::Train);
  for (std::size_t i = 0; i < spec.dev_size; ++i) make(Split::Dev);
  for (std::size_t i = 0; i < spec.test_size; ++i) make(Split::Test);
  return corpus;
}

// ---------------------------------------------------------------------------

std::optional<Sentence> oracle_recover(const SynthTransforms& tf, std::span<const std::size_t> pivot_ids,
                                       const std::vector<const Sentence*>& pivot_sentences) {
  if (pivot_ids.empty() || pivot_ids.size() != pivot_sentences.size()) {
    throw ContractError("oracle needs one sentence per pivot id");
  }
  const std::size_t len = pivot_sentences[0]->size();
  std::vector<std::vector<int>> reps(pivot_ids.size());
  for (std::size_t p = 0; p < pivot_ids.size(); ++p) {
    if (pivot_sentences[p]->size() != len) return std::nullopt;
    for (const auto& tok : *pivot_sentences[p]) {
      auto r = SynthTransforms::parse_target_token(tok);
      if (!r || static_cast<std::size_t>(*r) >= tf.base_vocab()) return std::nullopt;
      reps[p].push_back(*r);
    }
  }
  // Exhaustive search over the preimages of the first pivot, pruned by
  // consistency with the others; stops after a second solution.
  std::vector<int> current(len);
  std::vector<std::vector<int>> solutions;
  auto consistent = [&](std::size_t pos, int base) {
    for (std::size_t p = 1; p < pivot_ids.size(); ++p)
      if (tf.pivot_rep(pivot_ids[p], base) != reps[p][pos]) return false;
    return true;
  };
  auto search = [&](auto&& self, std::size_t pos) -> void {
    if (solutions.size() > 1) return;
    if (pos == len) {
      solutions.push_back(current);
      return;
    }
    for (int base : tf.preimage(pivot_ids[0], reps[0][pos])) {
      if (!consistent(pos, base)) continue;
      current[pos] = base;
      self(self, pos + 1);
    }
  };
  search(search, 0);
  if (solutions.size() != 1) return std::nullopt;
  Sentence out;
  for (int b : solutions[0]) out.push_back(SynthTransforms::target_token(b));
  return out;
}

OracleReport oracle_accuracy(const SynthSpec& spec, const ParallelCorpus& corpus,
                             std::span<const std::size_t> pivot_ids) {
  SynthTransforms tf(spec);
  const std::size_t target_col = corpus.column(spec.target_name);
  std::vector<std::size_t> cols;
  for (std::size_t p : pivot_ids) cols.push_back(corpus.column(spec.pivot_names.at(p)));
  OracleReport report;
  for (const auto& ex : corpus.examples) {
    std::vector<const Sentence*> pivots;
    for (std::size_t c : cols) pivots.push_back(&ex.sides[c]);
    auto rec = oracle_recover(tf, pivot_ids, pivots);
    ++report.examples;
    if (rec && *rec == ex.sides[target_col]) ++report.recovered;
  }
  return report;
}

// ---------------------------------------------------------------------------

ParallelCorpus load_tsv(const std::filesystem::path& path, const std::vector<std::string>& columns) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": missing header row");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split_tabs(line);
  std::optional<std::size_t> split_col;
  std::vector<std::size_t> picked;
  ParallelCorpus corpus;
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == "split") split_col = i;
  }
  if (columns.empty()) {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (!split_col || i != *split_col) {
        picked.push_back(i);
        corpus.languages.push_back(header[i]);
      }
  } else {
    for (const auto& name : columns) {
      auto it = std::find(header.begin(), header.end(), name);
      if (it == header.end()) throw ParseError(path.string() + ": header has no column '" + name + "'");
      picked.push_back(static_cast<std::size_t>(it - header.begin()));
      corpus.languages.push_back(name);
    }
  }
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split_tabs(line);
    if (cells.size() != header.size()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(header.size()) + " columns, found " + std::to_string(cells.size()));
    }
    Example ex;
    if (split_col) {
      try {
        ex.split = parse_split(cells[*split_col]);
      } catch (const ParseError& e) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
      }
    }
    for (std::size_t c : picked) ex.sides.push_back(tokenize(cells[c]));
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

void write_tsv(const std::filesystem::path& path, const ParallelCorpus& corpus) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write corpus file " + path.string());
  out << "split";
  for (const auto& l : corpus.languages) out << '\t' << l;
  out << '\n';
  for (const auto& ex : corpus.examples) {
    if (ex.sides.size() != corpus.languages.size()) throw ContractError("example does not cover every language");
    out << split_name(ex.split);
    for (const auto& s : ex.sides) out << '\t' << detokenize(s);
    out << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing corpus file " + path.string());
}

ParallelCorpus cached_synthetic(const SynthSpec& spec, const std::filesystem::path& dir) {
  spec.validate();
  const auto stem = "synth-" + hex64(spec.hash());
  const auto tsv = dir / (stem + ".tsv");
  if (std::filesystem::exists(tsv)) return load_tsv(tsv);
  auto corpus = generate_synthetic_nway(spec);
  std::filesystem::create_directories(dir);
  const auto tmp = dir / (stem + ".tsv.tmp");
  write_tsv(tmp, corpus);
  std::ofstream(dir / (stem + ".json")) << spec.to_json() << '\n';
  std::filesystem::rename(tmp, tsv);
  return corpus;
}

// ---------------------------------------------------------------------------

std::vector<TokenIds> Batch::padded(std::size_t column) const {
  const auto& rows = columns.at(column);
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.size());
  std::vector<TokenIds> out;
  for (const auto& r : rows) {
    TokenIds p = r;
    p.resize(width, kPad);
    out.push_back(std::move(p));
  }
  return out;
}

std::vector<Batch> make_batches(const std::vector<std::vector<TokenIds>>& examples, std::size_t batch_size,
                                std::uint64_t seed, std::size_t epoch) {
  if (batch_size < 1) throw ContractError("batch size must be at least 1");
  if (examples.empty()) throw ContractError("cannot batch an empty corpus");
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(splitmix64(seed) ^ splitmix64(epoch + 0x51ed270b27ULL));
  rng.shuffle(order);

  auto length = [&](std::size_t i) {
    std::size_t m = 0;
    for (const auto& col : examples[i]) m = std::max(m, col.size());
    return m;
  };
  const std::size_t bucket = 32 * batch_size;
  for (std::size_t start = 0; start < order.size(); start += bucket) {
    const auto end = std::min(order.size(), start + bucket);
    std::stable_sort(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end),
                     [&](std::size_t a, std::size_t b) { return length(a) < length(b); });
  }

  std::vector<std::vector<std::size_t>> groups;
  for (std::size_t start = 0; start < order.size(); start += batch_size) {
    const auto end = std::min(order.size(), start + batch_size);
    groups.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  const bool short_tail = groups.back().size() < batch_size;
  const std::size_t full = groups.size() - (short_tail ? 1 : 0);
  for (std::size_t i = full; i > 1; --i) std::swap(groups[i - 1], groups[rng.below(i)]);

  std::vector<Batch> batches;
  const std::size_t num_cols = examples[0].size();
  for (auto& g : groups) {
    Batch b;
    b.columns.resize(num_cols);
    for (std::size_t i : g) {
      if (examples[i].size() != num_cols) throw ContractError("examples have differing column counts");
      for (std::size_t c = 0; c < num_cols; ++c) b.columns[c].push_back(examples[i][c]);
    }
    b.indices = std::move(g);
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace pivotmt
