#include "pivotmt/training.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <set>

#include "pivotmt/errors.hpp"
#include "pivotmt/hash.hpp"
#include "pivotmt/metrics.hpp"

namespace pivotmt {

void TrainConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("train config: " + m); };
  if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr)) fail("peak_lr must be finite and >= 0");
  if (warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) fail("label_smoothing must be in [0, 1)");
  if (eval_every < 1) fail("eval_every must be >= 1");
  if (patience < 1) fail("patience must be >= 1");
  if (avg_last < 1) fail("avg_last must be >= 1");
  if (max_steps < 1) fail("max_steps must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) fail("betas must be in [0, 1)");
  if (!(epsilon > 0.0)) fail("epsilon must be > 0");
  if (clip_norm < 0.0) fail("clip_norm must be >= 0");
}

nlohmann::ordered_json train_config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["peak_lr"] = c.peak_lr;
  j["warmup_steps"] = c.warmup_steps;
  j["batch_size"] = c.batch_size;
  j["label_smoothing"] = c.label_smoothing;
  j["eval_every"] = c.eval_every;
  j["log_every"] = c.log_every;
  j["patience"] = c.patience;
  j["avg_last"] = c.avg_last;
  j["max_steps"] = c.max_steps;
  j["seed"] = c.seed;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["epsilon"] = c.epsilon;
  j["clip_norm"] = c.clip_norm;
  j["train_wait_k"] = c.train_wait_k;
  j["dev_limit"] = c.dev_limit;
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("train config must be a JSON object");
  TrainConfig c;
  static const auto known = [] {
    std::set<std::string> keys;
    const auto defaults = train_config_to_json(TrainConfig{});
    for (const auto& [k, v] : defaults.items()) keys.insert(k);
    return keys;
  }();
  for (const auto& [key, value] : j.items())
    if (!known.count(key)) throw ParseError("unknown train config key '" + key + "'");
  try {
    c.peak_lr = j.value("peak_lr", c.peak_lr);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.label_smoothing = j.value("label_smoothing", c.label_smoothing);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.log_every = j.value("log_every", c.log_every);
    c.patience = j.value("patience", c.patience);
    c.avg_last = j.value("avg_last", c.avg_last);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.seed = j.value("seed", c.seed);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.train_wait_k = j.value("train_wait_k", c.train_wait_k);
    c.dev_limit = j.value("dev_limit", c.dev_limit);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("train config: ") + e.what());
  }
  return c;
}

double learning_rate(const TrainConfig& config, std::size_t step) {
  if (step == 0) return 0.0;
  const double s = static_cast<double>(step);
  const double w = static_cast<double>(config.warmup_steps);
  return config.peak_lr * std::min(s / w, std::sqrt(w / s));
}

TrainData make_train_data(const ParallelCorpus& corpus, const std::vector<std::string>& source_languages,
                          const std::string& target_language, const Vocab& src_vocab, const Vocab& tgt_vocab) {
  std::vector<std::size_t> src_cols;
  for (const auto& l : source_languages) src_cols.push_back(corpus.column(l));
  const std::size_t tgt_col = corpus.column(target_language);
  TrainData data;
  for (const auto& ex : corpus.examples) {
    if (ex.split == Split::Test) continue;
    std::vector<TokenIds> row;
    for (std::size_t c : src_cols) row.push_back(src_vocab.encode(ex.sides[c]));
    row.push_back(tgt_vocab.encode(ex.sides[tgt_col]));
    (ex.split == Split::Train ? data.train : data.dev).push_back(std::move(row));
  }
  return data;
}

EarlyStopping::EarlyStopping(std::size_t patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("patience must be >= 1");
}

bool EarlyStopping::observe(double score) {
  if (!best_ || score > *best_) {
    best_ = score;
    stagnant_ = 0;
  } else {
    ++stagnant_;
  }
  return stagnant_ >= patience_;
}

double corpus_bleu(const Model& model, const std::vector<std::vector<TokenIds>>& examples, std::size_t limit) {
  const std::size_t n = limit == 0 ? examples.size() : std::min(limit, examples.size());
  const std::size_t slots = model.config().num_encoders;
  std::vector<TokenIds> hyps, refs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = examples[i];
    std::vector<EncoderStates> enc;
    bool any = false;
    for (std::size_t s = 0; s < slots; ++s) {
      enc.push_back(encode(model, ex[s], s));
      any = any || !ex[s].empty();
    }
    std::size_t longest = 0;
    for (std::size_t s = 0; s < slots; ++s) longest = std::max(longest, ex[s].size());
    const std::size_t max_steps = std::min(model.config().max_len - 1, 2 * longest + 10);
    hyps.push_back(any ? greedy_decode(model, enc, max_steps).tokens : TokenIds{});
    refs.push_back(ex[slots]);
  }
  return bleu(hyps, refs).bleu;
}

std::vector<std::vector<double>> average_checkpoints(const std::vector<std::vector<std::vector<double>>>& snapshots) {
  if (snapshots.empty()) throw ContractError("average_checkpoints needs at least one checkpoint");
  const auto& first = snapshots.front();
  for (std::size_t c = 1; c < snapshots.size(); ++c) {
    if (snapshots[c].size() != first.size()) {
      throw ContractError("checkpoint " + std::to_string(c) + " has " + std::to_string(snapshots[c].size()) +
                          " parameters, expected " + std::to_string(first.size()));
    }
    for (std::size_t p = 0; p < first.size(); ++p)
      if (snapshots[c][p].size() != first[p].size()) {
        throw ContractError("checkpoint " + std::to_string(c) + ": parameter " + std::to_string(p) +
                            " size mismatch");
      }
  }
  // Running mean: identical inputs reproduce themselves exactly.
  std::vector<std::vector<double>> out = first;
  for (std::size_t c = 1; c < snapshots.size(); ++c) {
    const double n = static_cast<double>(c + 1);
    for (std::size_t p = 0; p < out.size(); ++p)
      for (std::size_t i = 0; i < out[p].size(); ++i) out[p][i] += (snapshots[c][p][i] - out[p][i]) / n;
  }
  return out;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write " + path.string());
  f << "step,loss,dev_bleu\n";
  f.precision(10);
  for (const auto& p : curve) {
    f << p.step << ',' << p.loss << ',';
    if (p.dev_bleu) f << *p.dev_bleu;
    f << '\n';
  }
  if (!f) throw IoError("short write to " + path.string());
}

namespace {

void check_data(const Model& model, const std::vector<std::vector<TokenIds>>& examples, const char* what) {
  const auto& c = model.config();
  for (std::size_t e = 0; e < examples.size(); ++e) {
    const auto& ex = examples[e];
    if (ex.size() != c.num_encoders + 1) {
      throw ContractError(std::string(what) + " example " + std::to_string(e) + " has " + std::to_string(ex.size()) +
                          " columns, the model expects " + std::to_string(c.num_encoders + 1));
    }
    for (std::size_t col = 0; col < ex.size(); ++col) {
      const std::size_t vocab = col < c.num_encoders ? c.src_vocab : c.tgt_vocab;
      for (int t : ex[col])
        if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
          throw ContractError(std::string(what) + " example " + std::to_string(e) + ": token id " +
                              std::to_string(t) + " outside the model vocabulary of " + std::to_string(vocab));
        }
    }
  }
}

struct Adam {
  std::vector<std::vector<double>> m, v;
  std::size_t t = 0;

  explicit Adam(const Model& model) {
    for (const auto& p : model.parameters()) {
      m.emplace_back(p.tensor.numel(), 0.0);
      v.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  void step(const Model& model, const TrainConfig& c, double lr) {
    ++t;
    const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(t));
    double scale = 1.0;
    if (c.clip_norm > 0.0) {
      double sq = 0.0;
      for (const auto& p : model.parameters())
        if (p.tensor.has_grad())
          for (double g : p.tensor.grad()) sq += g * g;
      const double norm = std::sqrt(sq);
      if (norm > c.clip_norm) scale = c.clip_norm / norm;
    }
    const auto& params = model.parameters();
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor w = params[i].tensor;
      if (!w.has_grad()) continue;
      const auto g = w.grad();
      auto x = w.mutable_values();
      auto& mi = m[i];
      auto& vi = v[i];
      for (std::size_t j = 0; j < x.size(); ++j) {
        const double gj = g[j] * scale;
        mi[j] = c.beta1 * mi[j] + (1.0 - c.beta1) * gj;
        vi[j] = c.beta2 * vi[j] + (1.0 - c.beta2) * gj * gj;
        x[j] -= lr * (mi[j] / bc1) / (std::sqrt(vi[j] / bc2) + c.epsilon);
      }
    }
  }
};

std::uint64_t batch_hash(const Batch& b) {
  std::uint64_t h = kFnvOffset;
  for (std::size_t i : b.indices) {
    const auto v = static_cast<std::uint64_t>(i);
    h = fnv1a(std::string_view(reinterpret_cast<const char*>(&v), sizeof v), h);
  }
  return h;
}

}  // namespace

TrainResult train(Model& model, const TrainData& data, const TrainConfig& config, const TrainObserver& observer) {
  config.validate();
  if (data.train.empty()) throw ContractError("no training examples");
  if (data.dev.empty()) throw ContractError("no dev examples");
  check_data(model, data.train, "training");
  check_data(model, data.dev, "dev");
  const std::size_t slots = model.config().num_encoders;

  Adam adam(model);
  Rng rng(config.seed);
  Rng dropout_rng = rng.split();
  Rng k_rng = rng.split();
  EarlyStopping stopper(config.patience);
  std::deque<std::size_t> window;  // history indices still holding params

  TrainResult result{model.clone(), {}, {}, 0, false};
  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  std::size_t epoch = 0;
  std::vector<Batch> batches;
  std::size_t next_batch = 0;

  auto record = [&](std::size_t step, std::optional<double> dev) {
    CurvePoint p{step, loss_count ? loss_sum / static_cast<double>(loss_count) : 0.0, dev};
    loss_sum = 0.0;
    loss_count = 0;
    result.curve.push_back(p);
    if (observer) observer(p);
  };

  auto evaluate = [&](std::size_t step) {
    const double dev = corpus_bleu(model, data.dev, config.dev_limit);
    result.history.push_back({step, dev, model.snapshot()});
    window.push_back(result.history.size() - 1);
    if (window.size() > config.avg_last) {
      result.history[window.front()].params.clear();
      result.history[window.front()].params.shrink_to_fit();
      window.pop_front();
    }
    record(step, dev);
    return stopper.observe(dev);
  };

  std::size_t step = 0;
  bool evaluated_last = false;
  while (step < config.max_steps) {
    if (next_batch == batches.size()) {
      batches = make_batches(data.train, config.batch_size, config.seed, epoch++);
      next_batch = 0;
    }
    const Batch& batch = batches[next_batch++];
    ++step;

    std::vector<std::vector<TokenIds>> sources(batch.columns.begin(), batch.columns.begin() + static_cast<std::ptrdiff_t>(slots));
    LossOptions opt;
    opt.label_smoothing = config.label_smoothing;
    if (model.config().dropout > 0.0) opt.dropout_rng = &dropout_rng;
    if (!config.train_wait_k.empty()) {
      const std::size_t k = config.train_wait_k[k_rng.below(config.train_wait_k.size())];
      if (k > 0) opt.wait_k = k;
    }
    Tensor loss = forward_loss(model, sources, batch.columns[slots], opt);
    const double value = loss.values()[0];
    if (!std::isfinite(value)) {
      throw NumericError("non-finite training loss " + std::to_string(value) + " at step " + std::to_string(step) +
                         " (batch " + hex64(batch_hash(batch)) + ")");
    }
    model.zero_grad();
    backward(loss);
    adam.step(model, config, learning_rate(config, step));
    loss_sum += value;
    ++loss_count;

    evaluated_last = false;
    if (step % config.eval_every == 0) {
      evaluated_last = true;
      if (evaluate(step)) {
        result.early_stopped = true;
        break;
      }
    } else if (config.log_every > 0 && step % config.log_every == 0) {
      record(step, std::nullopt);
    }
  }
  if (!evaluated_last) evaluate(step);
  result.steps = step;

  std::vector<std::vector<std::vector<double>>> snaps;
  for (std::size_t i : window) snaps.push_back(result.history[i].params);
  result.model.load_snapshot(average_checkpoints(snaps));
  model.zero_grad();
  return result;
}

}  // namespace pivotmt
