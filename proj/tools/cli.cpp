#include "cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "pivotmt/checkpoint.hpp"
#include "pivotmt/corpus.hpp"
#include "pivotmt/errors.hpp"
#include "pivotmt/experiment.hpp"
#include "pivotmt/grid.hpp"
#include "pivotmt/hash.hpp"
#include "pivotmt/metrics.hpp"
#include "pivotmt/pipeline.hpp"
#include "pivotmt/training.hpp"
#include "pivotmt/waitk.hpp"

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace pivotmt::cli {
namespace {

constexpr const char* kFooter =
    "Precedence: command-line flags override config-file values, which override built-in defaults.\n"
    "PIVOTMT_OUT_DIR sets the default output directory when --out is not given.";

// ---------------------------------------------------------------------------
// Parsed flags, one struct per subcommand.

struct GenCorpusArgs {
  std::string spec;
  std::optional<std::uint64_t> seed;
  std::string out;
};

struct TrainArgs {
  std::string config, corpus, out;
  std::vector<std::string> sources, src_vocab_from, tgt_vocab_from;
  std::string target;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> max_steps, warmup, batch_size, eval_every, patience, avg_last, dev_limit;
  std::optional<std::size_t> hidden, layers, heads, ff;
  std::optional<double> lr, dropout;
  std::vector<std::size_t> train_wait_k;
};

struct TranslateArgs {
  std::string model;
  std::string k = "full";
  std::size_t max_steps = 256;
  std::string manifest;
};

struct PipelineArgs {
  std::string pipeline;
  std::optional<std::string> k_s2p, k_p2t;
  std::optional<std::size_t> max_steps;
  bool trace = false;
  bool show_pivots = false;
  std::string manifest;
};

struct EvaluateArgs {
  std::string hyp, ref;
  bool no_smooth = false;
  std::string manifest;
};

struct GridArgs {
  std::string experiment, cache, models, corpus, out;
  std::optional<std::uint64_t> seed;
  std::vector<std::size_t> ks;
  std::optional<std::size_t> test_limit;
  bool no_full = false;
};

struct ReportArgs {
  std::vector<std::string> csvs;
  std::string out;
};

struct Args {
  GenCorpusArgs gen;
  TrainArgs train;
  TranslateArgs translate;
  PipelineArgs pipeline;
  EvaluateArgs evaluate;
  GridArgs grid;
  ReportArgs report;
};

std::unique_ptr<CLI::App> build_app(Args& a) {
  auto app = std::make_unique<CLI::App>("Simultaneous multi-pivot NMT on synthetic N-way corpora", "pivotmt");
  app->require_subcommand(1);
  app->footer(kFooter);

  auto* gen = app->add_subcommand("gen-corpus", "Generate a synthetic N-way corpus and check its pivot oracles");
  gen->add_option("--spec", a.gen.spec, "Corpus spec JSON (defaults when omitted)");
  gen->add_option("--seed", a.gen.seed, "Generation seed, overrides the spec");
  gen->add_option("--out", a.gen.out, "Output directory for corpus.tsv, spec.json, manifest.json");

  auto* tr = app->add_subcommand("train", "Train one model (direct, s2p, p2t or multi-source p2t)");
  tr->add_option("--config", a.train.config, "JSON with optional \"model\" and \"train\" sections");
  tr->add_option("--corpus", a.train.corpus, "Corpus TSV with a split column")->required();
  tr->add_option("--source", a.train.sources, "Source language; repeat for a multi-source model")->required();
  tr->add_option("--target", a.train.target, "Target language")->required();
  tr->add_option("--src-vocab-from", a.train.src_vocab_from,
                 "Languages whose training side builds the source vocabulary (default: the sources)");
  tr->add_option("--tgt-vocab-from", a.train.tgt_vocab_from,
                 "Languages whose training side builds the target vocabulary (default: the target)");
  tr->add_option("--out", a.train.out, "Checkpoint path (default: <out dir>/model.ckpt)");
  tr->add_option("--seed", a.train.seed, "Seed for initialization, batching and dropout");
  tr->add_option("--max-steps", a.train.max_steps, "Training step limit");
  tr->add_option("--lr", a.train.lr, "Peak learning rate");
  tr->add_option("--warmup", a.train.warmup, "Warmup steps");
  tr->add_option("--batch-size", a.train.batch_size, "Sentences per batch");
  tr->add_option("--eval-every", a.train.eval_every, "Steps between dev evaluations");
  tr->add_option("--patience", a.train.patience, "Stagnant evaluations before stopping");
  tr->add_option("--avg-last", a.train.avg_last, "Checkpoints averaged into the final model");
  tr->add_option("--dev-limit", a.train.dev_limit, "Dev sentences scored per evaluation (0: all)");
  tr->add_option("--train-wait-k", a.train.train_wait_k, "Comma list of training wait-k values (0: full)")
      ->delimiter(',');
  tr->add_option("--hidden", a.train.hidden, "Model width");
  tr->add_option("--layers", a.train.layers, "Encoder and decoder layers");
  tr->add_option("--heads", a.train.heads, "Attention heads");
  tr->add_option("--ff", a.train.ff, "Feed-forward width");
  tr->add_option("--dropout", a.train.dropout, "Dropout rate");

  auto* tl = app->add_subcommand("translate", "Translate stdin lines with one model; tabs separate source streams");
  tl->add_option("--model", a.translate.model, "Checkpoint path")->required();
  tl->add_option("--k", a.translate.k, "Wait-k value or 'full'")->capture_default_str();
  tl->add_option("--max-steps", a.translate.max_steps, "Output token limit")->capture_default_str();
  tl->add_option("--manifest", a.translate.manifest, "Write a run manifest to this path");

  auto* pt = app->add_subcommand("pipeline-translate", "Translate stdin lines through source-pivot-target chains");
  pt->add_option("--pipeline", a.pipeline.pipeline,
                 "JSON with \"s2p\" (checkpoint list), \"p2t\", \"k_s2p\", \"k_p2t\", \"max_steps\"")
      ->required();
  pt->add_option("--k-s2p", a.pipeline.k_s2p, "Source-to-pivot wait-k or 'full'");
  pt->add_option("--k-p2t", a.pipeline.k_p2t, "Pivot-to-target wait-k or 'full'");
  pt->add_option("--max-steps", a.pipeline.max_steps, "Output token limit per stage");
  pt->add_flag("--trace", a.pipeline.trace, "Print READ/WRITE events to stderr");
  pt->add_flag("--show-pivots", a.pipeline.show_pivots, "Append pivot outputs as tab-separated columns");
  pt->add_option("--manifest", a.pipeline.manifest, "Write a run manifest to this path");

  auto* ev = app->add_subcommand("evaluate", "Corpus BLEU of a hypothesis file against a reference file");
  ev->add_option("--hyp", a.evaluate.hyp, "Hypotheses, one sentence per line")->required();
  ev->add_option("--ref", a.evaluate.ref, "References, one sentence per line")->required();
  ev->add_flag("--no-smooth", a.evaluate.no_smooth, "Disable add-one smoothing for n >= 2");
  ev->add_option("--manifest", a.evaluate.manifest, "Write a run manifest to this path");

  auto* gr = app->add_subcommand("grid", "Wait-k grid over every (k_s2p, k_p2t) pair plus the direct row");
  gr->add_option("--experiment", a.grid.experiment, "Experiment JSON; trains or loads every role");
  gr->add_option("--cache", a.grid.cache, "Corpus and checkpoint cache for --experiment (default: <out>/cache)");
  gr->add_option("--seed", a.grid.seed, "Seed for corpus, models and training with --experiment");
  gr->add_option("--models", a.grid.models, "JSON naming the direct model and pivot setups by checkpoint");
  gr->add_option("--corpus", a.grid.corpus, "Corpus TSV whose test split is scored with --models");
  gr->add_option("--k", a.grid.ks, "Comma list of k values (default 1,2,4,6,8)")->delimiter(',');
  gr->add_option("--test-limit", a.grid.test_limit, "Test sentences scored (0: all)");
  gr->add_flag("--no-full", a.grid.no_full, "Skip the full-sentence cells");
  gr->add_option("--out", a.grid.out, "Output directory for grid.csv, report.md, manifest.json");

  auto* rp = app->add_subcommand("report", "Merge grid CSVs (cell means) into report.csv and report.md");
  rp->add_option("--csv", a.report.csvs, "Grid CSV; repeat to average several runs")->required();
  rp->add_option("--out", a.report.out, "Output directory");
  return app;
}

// ---------------------------------------------------------------------------
// Helpers.

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

nlohmann::json read_json(const fs::path& p) {
  try {
    return nlohmann::json::parse(read_text(p));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(p.string() + ": " + e.what());
  }
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_text(p))); }

fs::path default_out_dir() {
  const char* env = std::getenv("PIVOTMT_OUT_DIR");
  return env && *env ? fs::path(env) : fs::path(".");
}

fs::path out_dir_or_default(const std::string& flag) { return flag.empty() ? default_out_dir() : fs::path(flag); }

StageK parse_k(const std::string& text, const std::string& what) {
  if (text == "full") return std::nullopt;
  std::size_t pos = 0;
  unsigned long v = 0;
  try {
    v = std::stoul(text, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != text.size() || text.empty() || v == 0 || text[0] == '-')
    throw ConfigError(what + " must be a positive integer or 'full', got '" + text + "'");
  return v;
}

StageK json_k(const nlohmann::json& j, const std::string& what) {
  if (j.is_string()) return parse_k(j.get<std::string>(), what);
  if (j.is_number_unsigned() && j.get<std::size_t>() > 0) return j.get<std::size_t>();
  throw ConfigError(what + " must be a positive integer or \"full\"");
}

std::string k_text(StageK k) { return k ? std::to_string(*k) : "full"; }

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  while (true) {
    auto tab = line.find('\t', start);
    cols.push_back(line.substr(start, tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return cols;
}

std::vector<std::string> read_lines(std::istream& in) {
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

std::vector<std::string> read_lines(const fs::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot read " + p.string());
  return read_lines(f);
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string s;
  for (const auto& l : lines) s += l + '\n';
  return s;
}

// Command name, arguments, resolved config, seed and content hashes of
// every input and output.
class Manifest {
 public:
  Manifest(const std::vector<std::string>& args) {
    j_["command"] = args.empty() ? "" : args.front();
    j_["args"] = args;
    j_["config"] = ojson::object();
    j_["seed"] = nullptr;
    j_["inputs"] = ojson::object();
    j_["outputs"] = ojson::object();
  }
  void config(ojson c) { j_["config"] = std::move(c); }
  void seed(std::uint64_t s) { j_["seed"] = s; }
  void input(const fs::path& p) { j_["inputs"][p.string()] = file_hash(p); }
  void input_bytes(const std::string& name, const std::string& bytes) { j_["inputs"][name] = hex64(fnv1a(bytes)); }
  void output(const fs::path& p) { j_["outputs"][p.string()] = file_hash(p); }
  void output_bytes(const std::string& name, const std::string& bytes) {
    j_["outputs"][name] = hex64(fnv1a(bytes));
  }
  void result(const std::string& key, ojson v) { j_["results"][key] = std::move(v); }
  void write(const fs::path& p) const {
    std::ofstream f(p, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write manifest " + p.string());
    f << j_.dump(2) << '\n';
    if (!f) throw IoError("failed writing manifest " + p.string());
  }

 private:
  ojson j_;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

// ---------------------------------------------------------------------------
// gen-corpus

int cmd_gen_corpus(const GenCorpusArgs& a, Manifest& m, std::ostream& out) {
  SynthSpec spec;
  if (!a.spec.empty()) {
    spec = SynthSpec::from_json(read_text(a.spec));
    m.input(a.spec);
  }
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  m.config(ojson::parse(spec.to_json()));
  m.seed(spec.seed);

  const auto dir = out_dir_or_default(a.out);
  ensure_dir(dir);
  const auto corpus = generate_synthetic_nway(spec);
  write_tsv(dir / "corpus.tsv", corpus);
  {
    std::ofstream f(dir / "spec.json", std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + (dir / "spec.json").string());
    f << spec.to_json() << '\n';
  }
  m.output(dir / "corpus.tsv");
  m.output(dir / "spec.json");

  out << "examples: train " << corpus.count(Split::Train) << ", dev " << corpus.count(Split::Dev) << ", test "
      << corpus.count(Split::Test) << '\n';
  auto report = [&](const std::vector<std::size_t>& ids) {
    std::string label;
    for (auto i : ids) label += (label.empty() ? "" : "+") + spec.pivot_names[i];
    const auto r = oracle_accuracy(spec, corpus, ids);
    out << "oracle " << label << ": " << r.recovered << "/" << r.examples << " recovered\n";
    m.result("oracle " + label, {{"recovered", r.recovered}, {"examples", r.examples}});
  };
  std::vector<std::size_t> all;
  for (std::size_t i = 0; i < spec.pivot_names.size(); ++i) {
    report({i});
    all.push_back(i);
  }
  if (all.size() > 1) report(all);
  m.write(dir / "manifest.json");
  return 0;
}

// ---------------------------------------------------------------------------
// train

Vocab vocab_from(const ParallelCorpus& corpus, const std::vector<std::string>& languages) {
  std::vector<std::vector<Sentence>> sides;
  for (const auto& l : languages) sides.push_back(corpus.side(l, Split::Train));
  std::vector<const std::vector<Sentence>*> ptrs;
  for (const auto& s : sides) ptrs.push_back(&s);
  return build_vocab(ptrs);
}

int cmd_train(const TrainArgs& a, Manifest& m, std::ostream& err) {
  ModelConfig mc;
  TrainConfig tc;
  if (!a.config.empty()) {
    const auto j = read_json(a.config);
    if (!j.is_object()) throw ParseError("train config must be a JSON object");
    for (const auto& [key, value] : j.items())
      if (key != "model" && key != "train") throw ParseError("unknown train config key '" + key + "'");
    if (j.contains("model")) mc = model_config_from_json(j["model"]);
    if (j.contains("train")) tc = train_config_from_json(j["train"]);
    m.input(a.config);
  }
  if (a.seed) mc.seed = tc.seed = *a.seed;
  if (a.max_steps) tc.max_steps = *a.max_steps;
  if (a.lr) tc.peak_lr = *a.lr;
  if (a.warmup) tc.warmup_steps = *a.warmup;
  if (a.batch_size) tc.batch_size = *a.batch_size;
  if (a.eval_every) tc.eval_every = *a.eval_every;
  if (a.patience) tc.patience = *a.patience;
  if (a.avg_last) tc.avg_last = *a.avg_last;
  if (a.dev_limit) tc.dev_limit = *a.dev_limit;
  if (!a.train_wait_k.empty()) tc.train_wait_k = a.train_wait_k;
  if (a.hidden) mc.hidden = *a.hidden;
  if (a.layers) mc.layers = *a.layers;
  if (a.heads) mc.heads = *a.heads;
  if (a.ff) mc.ff = *a.ff;
  if (a.dropout) mc.dropout = *a.dropout;

  const auto corpus = load_tsv(a.corpus);
  m.input(a.corpus);
  const Vocab src = vocab_from(corpus, a.src_vocab_from.empty() ? a.sources : a.src_vocab_from);
  const Vocab tgt = vocab_from(corpus, a.tgt_vocab_from.empty() ? std::vector<std::string>{a.target} : a.tgt_vocab_from);
  mc.num_encoders = a.sources.size();
  mc.src_vocab = src.size();
  mc.tgt_vocab = tgt.size();
  mc.validate();
  tc.validate();

  ojson resolved;
  resolved["model"] = model_config_to_json(mc);
  resolved["train"] = train_config_to_json(tc);
  resolved["sources"] = a.sources;
  resolved["target"] = a.target;
  m.config(resolved);
  m.seed(tc.seed);

  const fs::path out = a.out.empty() ? default_out_dir() / "model.ckpt" : fs::path(a.out);
  if (out.has_parent_path()) ensure_dir(out.parent_path());

  auto data = make_train_data(corpus, a.sources, a.target, src, tgt);
  Model model(mc);
  err << "training " << model.parameter_count() << " parameters on " << data.train.size() << " examples\n";
  auto result = train(model, data, tc, [&](const CurvePoint& p) {
    if (p.dev_bleu) err << "step " << p.step << " loss " << p.loss << " dev BLEU " << *p.dev_bleu << '\n';
  });

  double best = 0.0;
  for (const auto& c : result.history) best = std::max(best, c.dev_bleu);
  ojson meta;
  meta["sources"] = a.sources;
  meta["target"] = a.target;
  meta["steps"] = result.steps;
  meta["early_stopped"] = result.early_stopped;
  meta["best_dev_bleu"] = best;
  meta["train"] = train_config_to_json(tc);
  save_checkpoint(out, result.model, src, tgt, meta);
  auto curve = out;
  curve.replace_extension(".curve.csv");
  write_curve_csv(curve, result.curve);
  m.output(out);
  m.output(curve);
  m.result("steps", result.steps);
  m.result("early_stopped", result.early_stopped);
  m.result("best_dev_bleu", best);
  auto manifest = out;
  manifest.replace_extension(".manifest.json");
  m.write(manifest);
  err << "saved " << out.string() << " after " << result.steps << " steps\n";
  return 0;
}

// ---------------------------------------------------------------------------
// translate

std::string translate_line(const ModelBundle& b, const std::string& line, StageK k, std::size_t max_steps,
                           std::size_t line_no) {
  const auto cols = split_tabs(line);
  const auto n = b.model.config().num_encoders;
  if (cols.size() != n) {
    throw ParseError("line " + std::to_string(line_no) + ": expected " + std::to_string(n) +
                     " tab-separated source(s), got " + std::to_string(cols.size()));
  }
  std::vector<TokenIds> srcs;
  bool any = false;
  for (const auto& c : cols) {
    srcs.push_back(b.src_vocab.encode(tokenize(c)));
    any = any || !srcs.back().empty();
  }
  if (!any) return "";
  TokenIds out;
  if (!k) {
    std::vector<EncoderStates> enc;
    for (std::size_t s = 0; s < n; ++s) enc.push_back(encode(b.model, srcs[s], s));
    out = greedy_decode(b.model, enc, max_steps).tokens;
  } else {
    std::vector<VectorStream> streams;
    for (auto& s : srcs) streams.emplace_back(s);
    std::vector<TokenStream*> ptrs;
    for (auto& s : streams) ptrs.push_back(&s);
    out = multi_source_simultaneous_decode(b.model, ptrs, *k, max_steps).tokens;
  }
  return detokenize(b.tgt_vocab.decode(out));
}

int cmd_translate(const TranslateArgs& a, Manifest& m, std::istream& in, std::ostream& out) {
  const StageK k = parse_k(a.k, "--k");
  const auto bundle = load_checkpoint(a.model);
  m.input(a.model);
  m.config({{"k", k_text(k)}, {"max_steps", a.max_steps}});
  const auto lines = read_lines(in);
  std::vector<std::string> results;
  for (std::size_t i = 0; i < lines.size(); ++i) results.push_back(translate_line(bundle, lines[i], k, a.max_steps, i + 1));
  const auto text = join_lines(results);
  out << text;
  if (!a.manifest.empty()) {
    m.input_bytes("<stdin>", join_lines(lines));
    m.output_bytes("<stdout>", text);
    m.write(a.manifest);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// pipeline-translate

struct LoadedPipeline {
  std::vector<ModelBundle> s2p;
  std::unique_ptr<ModelBundle> p2t;
  StageK k_s2p, k_p2t;
  std::size_t max_steps = 256;
};

LoadedPipeline load_pipeline(const PipelineArgs& a, Manifest& m) {
  const fs::path cfg_path(a.pipeline);
  const auto j = read_json(cfg_path);
  m.input(cfg_path);
  if (!j.is_object()) throw ParseError("pipeline config must be a JSON object");
  static const std::set<std::string> known{"s2p", "p2t", "k_s2p", "k_p2t", "max_steps"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ParseError("unknown pipeline config key '" + key + "'");
  if (!j.contains("s2p") || !j["s2p"].is_array() || j["s2p"].empty())
    throw ConfigError("pipeline config needs a nonempty \"s2p\" list");
  if (!j.contains("p2t") || !j["p2t"].is_string()) throw ConfigError("pipeline config needs a \"p2t\" checkpoint");

  auto resolve = [&](const nlohmann::json& v) {
    if (!v.is_string()) throw ParseError("checkpoint paths must be strings");
    fs::path p(v.get<std::string>());
    return p.is_absolute() ? p : cfg_path.parent_path() / p;
  };
  LoadedPipeline lp;
  for (const auto& p : j["s2p"]) {
    const auto path = resolve(p);
    lp.s2p.push_back(load_checkpoint(path));
    m.input(path);
  }
  const auto p2t_path = resolve(j["p2t"]);
  lp.p2t = std::make_unique<ModelBundle>(load_checkpoint(p2t_path));
  m.input(p2t_path);

  lp.k_s2p = j.contains("k_s2p") ? json_k(j["k_s2p"], "k_s2p") : std::nullopt;
  lp.k_p2t = j.contains("k_p2t") ? json_k(j["k_p2t"], "k_p2t") : std::nullopt;
  if (a.k_s2p) lp.k_s2p = parse_k(*a.k_s2p, "--k-s2p");
  if (a.k_p2t) lp.k_p2t = parse_k(*a.k_p2t, "--k-p2t");
  if (j.contains("max_steps")) {
    if (!j["max_steps"].is_number_unsigned()) throw ParseError("max_steps must be a nonnegative integer");
    lp.max_steps = j["max_steps"].get<std::size_t>();
  }
  if (a.max_steps) lp.max_steps = *a.max_steps;
  if (lp.k_s2p.has_value() != lp.k_p2t.has_value())
    throw ConfigError("k_s2p and k_p2t must both be wait-k values or both 'full'");
  for (std::size_t i = 1; i < lp.s2p.size(); ++i) {
    if (!(lp.s2p[i].src_vocab == lp.s2p[0].src_vocab))
      throw ConfigError("s2p[" + std::to_string(i) + "] uses a different source vocabulary than s2p[0]");
  }
  m.config({{"s2p_count", lp.s2p.size()},
            {"k_s2p", k_text(lp.k_s2p)},
            {"k_p2t", k_text(lp.k_p2t)},
            {"max_steps", lp.max_steps}});
  return lp;
}

std::string event_text(const TraceEvent& e, const LoadedPipeline& lp) {
  std::ostringstream s;
  s << "tick " << e.tick << ' ';
  auto word = [](const Vocab& v, int id) { return id == kEos ? std::string("</s>") : v.token(id); };
  switch (e.kind) {
    case TraceEvent::Kind::SourceRead:
      s << "READ " << lp.s2p[0].src_vocab.token(e.token);
      break;
    case TraceEvent::Kind::SourceEnd:
      s << "END";
      break;
    case TraceEvent::Kind::PivotWrite:
      s << "PIVOT[" << e.stream << "] " << word(lp.s2p[e.stream].tgt_vocab, e.token);
      break;
    case TraceEvent::Kind::TargetWrite:
      s << "WRITE " << word(lp.p2t->tgt_vocab, e.token);
      break;
  }
  return s.str();
}

int cmd_pipeline_translate(const PipelineArgs& a, Manifest& m, std::istream& in, std::ostream& out,
                           std::ostream& err) {
  auto lp = load_pipeline(a, m);
  PipelineConfig pc;
  for (const auto& b : lp.s2p) {
    pc.s2p.push_back(&b.model);
    pc.s2p_target_vocabs.push_back(&b.tgt_vocab);
  }
  pc.p2t = &lp.p2t->model;
  pc.p2t_source_vocab = &lp.p2t->src_vocab;
  pc.k_s2p = lp.k_s2p;
  pc.k_p2t = lp.k_p2t;
  pc.max_steps = lp.max_steps;
  pc.validate();
  if (pc.k_s2p) err << "effective wait-k " << effective_wait_k(pc) << '\n';

  const auto lines = read_lines(in);
  std::vector<std::string> results;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto src = lp.s2p[0].src_vocab.encode(tokenize(lines[i]));
    PipelineRun run;
    if (pc.k_s2p) {
      VectorStream stream(src);
      run = simultaneous_pipeline(pc, stream);
    } else {
      run = full_sentence_pipeline(pc, src);
    }
    std::string line = detokenize(lp.p2t->tgt_vocab.decode(run.target));
    if (a.show_pivots) {
      for (std::size_t p = 0; p < run.pivots.size(); ++p) line += '\t' + detokenize(lp.s2p[p].tgt_vocab.decode(run.pivots[p]));
    }
    results.push_back(line);
    if (a.trace) {
      err << "sentence " << i + 1 << '\n';
      for (const auto& e : run.trace) err << "  " << event_text(e, lp) << '\n';
      if (run.latency_log.writes() > 0)
        err << "  first target write after " << run.latency_log.reads_before_write(1) << " source reads\n";
    }
  }
  const auto text = join_lines(results);
  out << text;
  if (!a.manifest.empty()) {
    m.input_bytes("<stdin>", join_lines(lines));
    m.output_bytes("<stdout>", text);
    m.write(a.manifest);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// evaluate

int cmd_evaluate(const EvaluateArgs& a, Manifest& m, std::ostream& out) {
  const auto hyp_lines = read_lines(a.hyp);
  const auto ref_lines = read_lines(a.ref);
  if (hyp_lines.size() != ref_lines.size()) {
    throw ContractError("hypothesis and reference files differ in line count (" + std::to_string(hyp_lines.size()) +
                        " vs " + std::to_string(ref_lines.size()) + ")");
  }
  std::map<std::string, int> ids;
  auto to_ids = [&](const std::string& line) {
    TokenIds t;
    for (const auto& w : tokenize(line)) t.push_back(ids.emplace(w, static_cast<int>(ids.size())).first->second);
    return t;
  };
  std::vector<TokenIds> hyps, refs;
  for (const auto& l : hyp_lines) hyps.push_back(to_ids(l));
  for (const auto& l : ref_lines) refs.push_back(to_ids(l));
  const auto r = bleu(hyps, refs, !a.no_smooth);

  ojson j;
  j["bleu"] = r.bleu;
  j["precisions"] = r.precisions;
  j["matches"] = r.matches;
  j["totals"] = r.totals;
  j["brevity_penalty"] = r.brevity_penalty;
  j["hyp_tokens"] = r.hyp_tokens;
  j["ref_tokens"] = r.ref_tokens;
  j["sentences"] = hyps.size();
  j["smoothing"] = !a.no_smooth;
  const auto text = j.dump(2) + '\n';
  out << text;
  if (!a.manifest.empty()) {
    m.config({{"smoothing", !a.no_smooth}});
    m.input(a.hyp);
    m.input(a.ref);
    m.output_bytes("<stdout>", text);
    m.write(a.manifest);
  }
  return 0;
}

// ---------------------------------------------------------------------------
// grid

struct ModelsFile {
  std::string source, target;
  std::unique_ptr<ModelBundle> direct;
  std::vector<std::string> labels;
  std::vector<std::vector<std::unique_ptr<ModelBundle>>> s2p;
  std::vector<std::unique_ptr<ModelBundle>> p2t;
};

ModelsFile load_models_file(const fs::path& path, Manifest& m) {
  const auto j = read_json(path);
  m.input(path);
  if (!j.is_object()) throw ParseError("models file must be a JSON object");
  static const std::set<std::string> known{"source", "target", "direct", "setups"};
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ParseError("unknown models file key '" + key + "'");
  auto str = [&](const nlohmann::json& obj, const char* key) -> std::string {
    if (!obj.contains(key) || obj[key].is_null()) return "";
    if (!obj[key].is_string()) throw ParseError(std::string("models file: '") + key + "' must be a string");
    return obj[key].get<std::string>();
  };
  auto load = [&](const std::string& p) -> std::unique_ptr<ModelBundle> {
    if (p.empty()) return nullptr;
    fs::path full(p);
    if (full.is_relative()) full = path.parent_path() / full;
    m.input(full);
    return std::make_unique<ModelBundle>(load_checkpoint(full));
  };
  ModelsFile mf;
  mf.source = str(j, "source");
  mf.target = str(j, "target");
  if (mf.source.empty() || mf.target.empty()) throw ConfigError("models file needs \"source\" and \"target\"");
  mf.direct = load(str(j, "direct"));
  if (j.contains("setups")) {
    if (!j["setups"].is_array()) throw ParseError("models file: 'setups' must be a list");
    for (const auto& s : j["setups"]) {
      if (!s.is_object()) throw ParseError("models file: each setup must be an object");
      mf.labels.push_back(str(s, "label"));
      std::vector<std::unique_ptr<ModelBundle>> stage;
      if (s.contains("s2p")) {
        if (!s["s2p"].is_array()) throw ParseError("models file: 's2p' must be a list");
        for (const auto& p : s["s2p"]) {
          if (!p.is_string() && !p.is_null()) throw ParseError("models file: s2p entries must be paths");
          stage.push_back(p.is_null() ? nullptr : load(p.get<std::string>()));
        }
      }
      mf.s2p.push_back(std::move(stage));
      mf.p2t.push_back(load(str(s, "p2t")));
    }
  }
  return mf;
}

void check_vocab(bool ok, const std::string& what) {
  if (!ok) throw ConfigError(what + ": vocabulary does not match the rest of the grid");
}

int cmd_grid(const GridArgs& a, Manifest& m, std::ostream& out, std::ostream& err) {
  if (a.experiment.empty() == a.models.empty()) throw ConfigError("grid needs exactly one of --experiment or --models");
  const auto dir = out_dir_or_default(a.out);
  ensure_dir(dir);
  const bool full = !a.no_full;
  GridReport report;

  if (!a.experiment.empty()) {
    auto config = ExperimentConfig::from_json(read_json(a.experiment));
    m.input(a.experiment);
    if (a.seed) config = config.with_seed(*a.seed);
    if (!a.ks.empty()) config.ks = a.ks;
    if (a.test_limit) config.test_limit = *a.test_limit;
    if (std::find(config.ks.begin(), config.ks.end(), 0) != config.ks.end())
      throw ConfigError("--k values must be positive");
    m.config(config.to_json());
    m.seed(config.corpus.seed);
    const fs::path cache = a.cache.empty() ? dir / "cache" : fs::path(a.cache);
    const auto corpus = cached_synthetic(config.corpus, cache);
    const auto vocabs = experiment_vocabs(corpus, config.corpus);
    const auto bundles = train_all_roles(config, corpus, cache, [&](const std::string& s) { err << s << '\n'; });
    const auto set = test_set(corpus, vocabs, config.corpus, config.test_limit);
    err << "scoring " << set.sources.size() << " test sentences\n";
    report = run_grid(grid_models(bundles, config.corpus), set, config.ks, full);
  } else {
    if (a.corpus.empty()) throw ConfigError("--models needs --corpus");
    const auto mf = load_models_file(a.models, m);
    const auto corpus = load_tsv(a.corpus);
    m.input(a.corpus);
    const std::vector<std::size_t> ks = a.ks.empty() ? std::vector<std::size_t>{1, 2, 4, 6, 8} : a.ks;
    if (std::find(ks.begin(), ks.end(), 0) != ks.end()) throw ConfigError("--k values must be positive");
    m.config({{"ks", ks}, {"test_limit", a.test_limit.value_or(0)}, {"full", full}});

    // Source and target vocabularies come from the first model that has them.
    const Vocab* src = mf.direct ? &mf.direct->src_vocab : nullptr;
    const Vocab* tgt = mf.direct ? &mf.direct->tgt_vocab : nullptr;
    for (std::size_t i = 0; i < mf.labels.size(); ++i) {
      for (const auto& s : mf.s2p[i])
        if (!src && s) src = &s->src_vocab;
      if (!tgt && mf.p2t[i]) tgt = &mf.p2t[i]->tgt_vocab;
    }
    if (!src || !tgt) throw ConfigError("models file names no usable checkpoints");

    GridModels gm;
    gm.direct = mf.direct ? &mf.direct->model : nullptr;
    if (mf.direct) {
      check_vocab(mf.direct->src_vocab == *src && mf.direct->tgt_vocab == *tgt, "direct");
    }
    for (std::size_t i = 0; i < mf.labels.size(); ++i) {
      PivotSetup setup{mf.labels[i], {}, mf.p2t[i] ? &mf.p2t[i]->model : nullptr};
      for (std::size_t p = 0; p < mf.s2p[i].size(); ++p) {
        const auto& s = mf.s2p[i][p];
        setup.s2p.push_back(s ? &s->model : nullptr);
        if (!s) continue;
        const auto name = "s2p[" + std::to_string(p) + "] of '" + mf.labels[i] + "'";
        check_vocab(s->src_vocab == *src, name);
        if (mf.p2t[i]) check_vocab(s->tgt_vocab == mf.p2t[i]->src_vocab, name);
      }
      if (mf.p2t[i]) check_vocab(mf.p2t[i]->tgt_vocab == *tgt, "p2t of '" + mf.labels[i] + "'");
      gm.setups.push_back(std::move(setup));
    }

    EvalSet set;
    const auto srcs = corpus.side(mf.source, Split::Test);
    const auto tgts = corpus.side(mf.target, Split::Test);
    const std::size_t limit = a.test_limit.value_or(0);
    const std::size_t n = limit == 0 ? srcs.size() : std::min(limit, srcs.size());
    for (std::size_t i = 0; i < n; ++i) {
      set.sources.push_back(src->encode(srcs[i]));
      set.references.push_back(tgt->encode(tgts[i]));
    }
    err << "scoring " << n << " test sentences\n";
    report = run_grid(gm, set, ks, full);
  }

  emit_report(report, dir / "grid.csv", dir / "report.md");
  m.output(dir / "grid.csv");
  m.output(dir / "report.md");
  m.write(dir / "manifest.json");
  out << "wrote " << (dir / "grid.csv").string() << " and " << (dir / "report.md").string() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// report

Score mean_score(const std::vector<Score>& xs) {
  Score s;
  for (const auto& x : xs) {
    s.bleu += x.bleu;
    s.al += x.al;
  }
  s.bleu /= static_cast<double>(xs.size());
  s.al /= static_cast<double>(xs.size());
  return s;
}

// Cellwise mean of reports with identical structure.
GridReport mean_report(const std::vector<GridReport>& rs) {
  const auto& first = rs.front();
  auto same_shape = [&](const GridReport& r) {
    if (r.grids.size() != first.grids.size() || r.direct.has_value() != first.direct.has_value()) return false;
    if (r.direct && (r.direct->ks != first.direct->ks || r.direct->full.has_value() != first.direct->full.has_value()))
      return false;
    for (std::size_t g = 0; g < r.grids.size(); ++g) {
      const auto &x = r.grids[g], &y = first.grids[g];
      if (x.label != y.label || x.ks != y.ks || x.full.has_value() != y.full.has_value()) return false;
    }
    return true;
  };
  for (const auto& r : rs)
    if (!same_shape(r)) throw ConfigError("report CSVs do not share the same configurations and k values");
  GridReport out = first;
  auto collect = [&](auto get) {
    std::vector<Score> xs;
    for (const auto& r : rs) xs.push_back(get(r));
    return mean_score(xs);
  };
  if (out.direct) {
    for (std::size_t j = 0; j < out.direct->cells.size(); ++j)
      out.direct->cells[j] = collect([&](const GridReport& r) { return r.direct->cells[j]; });
    if (out.direct->full) out.direct->full = collect([&](const GridReport& r) { return *r.direct->full; });
  }
  for (std::size_t g = 0; g < out.grids.size(); ++g) {
    auto& grid = out.grids[g];
    for (std::size_t i = 0; i < grid.cells.size(); ++i)
      for (std::size_t j = 0; j < grid.cells[i].size(); ++j)
        grid.cells[i][j] = collect([&](const GridReport& r) { return r.grids[g].cells[i][j]; });
    if (grid.full) grid.full = collect([&](const GridReport& r) { return *r.grids[g].full; });
  }
  return out;
}

int cmd_report(const ReportArgs& a, Manifest& m, std::ostream& out) {
  std::vector<GridReport> reports;
  for (const auto& c : a.csvs) {
    reports.push_back(parse_report_csv(c));
    m.input(c);
  }
  const auto merged = reports.size() == 1 ? reports.front() : mean_report(reports);
  const auto dir = out_dir_or_default(a.out);
  ensure_dir(dir);
  emit_report(merged, dir / "report.csv", dir / "report.md");
  m.config({{"runs", a.csvs.size()}});
  m.output(dir / "report.csv");
  m.output(dir / "report.md");
  m.write(dir / "report.manifest.json");
  out << "merged " << reports.size() << " run(s) into " << (dir / "report.md").string() << '\n';
  return 0;
}

int dispatch(CLI::App& app, const Args& a, Manifest& m, std::istream& in, std::ostream& out, std::ostream& err) {
  if (app.got_subcommand("gen-corpus")) return cmd_gen_corpus(a.gen, m, out);
  if (app.got_subcommand("train")) return cmd_train(a.train, m, err);
  if (app.got_subcommand("translate")) return cmd_translate(a.translate, m, in, out);
  if (app.got_subcommand("pipeline-translate")) return cmd_pipeline_translate(a.pipeline, m, in, out, err);
  if (app.got_subcommand("evaluate")) return cmd_evaluate(a.evaluate, m, out);
  if (app.got_subcommand("grid")) return cmd_grid(a.grid, m, out, err);
  if (app.got_subcommand("report")) return cmd_report(a.report, m, out);
  throw ContractError("no subcommand dispatched");
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
  Args a;
  auto app = build_app(a);
  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app->parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app->exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    const CLI::App* sub = app.get();
    for (const auto* s : app->get_subcommands()) sub = s;
    err << sub->help();
    return 1;
  }

  Manifest manifest(args);
  try {
    return dispatch(*app, a, manifest, in, out, err);
  } catch (const ConfigError& e) {
    err << "configuration error: " << e.what() << '\n';
  } catch (const ParseError& e) {
    err << "parse error: " << e.what() << '\n';
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << '\n';
  } catch (const SpecError& e) {
    err << "spec error: " << e.what() << '\n';
  } catch (const ContractError& e) {
    err << "invalid input: " << e.what() << '\n';
  } catch (const LengthError& e) {
    err << "length error: " << e.what() << '\n';
  } catch (const IndexError& e) {
    err << "index error: " << e.what() << '\n';
  } catch (const nlohmann::json::exception& e) {
    err << "config error: " << e.what() << '\n';
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

std::vector<std::string> subcommands() {
  Args a;
  auto app = build_app(a);
  std::vector<std::string> names;
  for (const auto* s : app->get_subcommands({})) names.push_back(s->get_name());
  return names;
}

std::vector<std::string> flag_names(const std::string& subcommand) {
  Args a;
  auto app = build_app(a);
  std::vector<std::string> names;
  for (const auto* o : app->get_subcommand(subcommand)->get_options())
    for (const auto& l : o->get_lnames()) names.push_back("--" + l);
  return names;
}

}  // namespace pivotmt::cli
