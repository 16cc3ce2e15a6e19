#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "pivotmt/corpus.hpp"
#include "pivotmt/transformer.hpp"

namespace pivotmt {

struct TrainConfig {
  // lr(step) = peak_lr * min(step / warmup_steps, sqrt(warmup_steps / step))
  double peak_lr = 1e-3;
  std::size_t warmup_steps = 400;
  std::size_t batch_size = 64;
  double label_smoothing = 0.1;
  std::size_t eval_every = 200;
  // Curve points between evaluations; 0 records only at evaluations.
  std::size_t log_every = 50;
  std::size_t patience = 10;
  std::size_t avg_last = 10;
  std::size_t max_steps = 20000;
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-9;
  // Global gradient-norm clip; 0 disables.
  double clip_norm = 1.0;
  // Cross-attention schedules sampled uniformly per batch; 0 means full
  // sentence. Empty trains full-sentence only.
  std::vector<std::size_t> train_wait_k;
  // Dev sentences used for BLEU; 0 uses all of them.
  std::size_t dev_limit = 0;

  // ConfigError on out-of-range fields.
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

nlohmann::ordered_json train_config_to_json(const TrainConfig& config);
// Missing keys keep their defaults; unknown keys are a ParseError.
TrainConfig train_config_from_json(const nlohmann::json& j);

double learning_rate(const TrainConfig& config, std::size_t step);

// Examples as [example][column]: one column per source slot, then the target.
struct TrainData {
  std::vector<std::vector<TokenIds>> train;
  std::vector<std::vector<TokenIds>> dev;
};

// Encodes the given source languages and the target language of a corpus.
TrainData make_train_data(const ParallelCorpus& corpus, const std::vector<std::string>& source_languages,
                          const std::string& target_language, const Vocab& src_vocab, const Vocab& tgt_vocab);

struct Checkpoint {
  std::size_t step = 0;
  double dev_bleu = 0.0;
  std::vector<std::vector<double>> params;  // empty once evicted from the averaging window
};

struct CurvePoint {
  std::size_t step = 0;
  double loss = 0.0;  // mean training loss since the previous point
  std::optional<double> dev_bleu;
};

struct TrainResult {
  Model model;  // mean of the last avg_last checkpoints
  std::vector<Checkpoint> history;
  std::vector<CurvePoint> curve;
  std::size_t steps = 0;
  bool early_stopped = false;
};

// Stops once `patience` consecutive evaluations fail to exceed the best
// earlier score; ties do not count as growth.
class EarlyStopping {
 public:
  explicit EarlyStopping(std::size_t patience);
  // Records one evaluation; true when training should stop.
  bool observe(double score);
  std::size_t stagnant() const { return stagnant_; }
  std::optional<double> best() const { return best_; }

 private:
  std::size_t patience_;
  std::size_t stagnant_ = 0;
  std::optional<double> best_;
};

using TrainObserver = std::function<void(const CurvePoint&)>;

// Adam on the teacher-forced loss. Every eval_every steps: greedy-decode the
// dev set, score BLEU, save a checkpoint. `model` holds the last trained
// parameters afterwards. ContractError when token ids exceed the model
// vocabularies or the column count does not match; NumericError on a
// non-finite loss.
TrainResult train(Model& model, const TrainData& data, const TrainConfig& config, const TrainObserver& observer = {});

// Greedy full-sentence BLEU of `model` on examples [example][column].
double corpus_bleu(const Model& model, const std::vector<std::vector<TokenIds>>& examples, std::size_t limit = 0);

// Elementwise mean. ContractError on an empty list or mismatched shapes.
std::vector<std::vector<double>> average_checkpoints(const std::vector<std::vector<std::vector<double>>>& snapshots);

// step,loss,dev_bleu (dev_bleu empty between evaluations). IoError on failure.
void write_curve_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curve);

}  // namespace pivotmt
