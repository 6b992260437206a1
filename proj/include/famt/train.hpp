#pragma once

#include <optional>
#include <string>
#include <vector>

#include "famt/model.hpp"
#include "famt/synthlang.hpp"

namespace famt::train {

enum class Optimizer { adam, radam };
enum class Schedule { noam, linear };

struct TrainConfig {
  Optimizer optimizer = Optimizer::adam;
  Schedule schedule = Schedule::noam;
  double learning_rate = 1.0;  // noam scale factor
  int warmup = 4000;
  double warmup_init_lr = 1e-8;  // linear schedule
  double warmup_end_lr = 7e-4;
  double min_lr = 1e-9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-9;
  double weight_decay = 0.0;  // decoupled
  size_t batch_tokens = 4096;  // padded tokens per batch
  int accumulation = 1;
  double label_smoothing = 0.1;
  double lambda_vmf = 0.2;
  int max_updates = 2000;
  int eval_every = 200;
  int patience = 5;  // evaluations without dev improvement
  double max_grad_norm = 25.0;  // <= 0 disables clipping
  uint64_t seed = 1;

  void validate() const;
  // Defaults for each head: adam+noam, clip 25 for softmax; radam+linear,
  // beta2 0.9995, clip 5 for vMF.
  static TrainConfig for_head(model::Head head);
};

std::string optimizer_name(Optimizer o);
std::string schedule_name(Schedule s);
Optimizer parse_optimizer(const std::string& name);
Schedule parse_schedule(const std::string& name);

double learning_rate(const TrainConfig& cfg, int step, int d_model);

class OptimizerState {
 public:
  explicit OptimizerState(const TrainConfig& cfg) : cfg_(cfg) {}
  // One update of every trainable tensor that has a gradient. Frozen tensors
  // are never touched. Throws TrainingError on a non-finite result.
  void apply(model::Transformer& model, double lr);
  int step() const { return step_; }

 private:
  struct Moments {
    Matrix m;
    Matrix v;
  };
  TrainConfig cfg_;
  std::vector<Moments> moments_;
  int step_ = 0;
};

void zero_grads(model::Transformer& model);
// Global L2 norm over trainable gradients, scaled down to max_norm if larger.
double clip_gradients(model::Transformer& model, double max_norm);

struct ParallelSet {
  std::string source_language;
  std::string target_language;
  std::vector<std::pair<model::TokenIds, model::TokenIds>> pairs;
};

// Target sentences containing words outside the vocabulary are dropped and
// counted; source unknowns become UNK.
ParallelSet encode_pairs(const vocab::MultiVocab& vocab, const std::string& source_language,
                         const std::string& target_language, const synth::ParallelCorpus& corpus,
                         size_t* dropped = nullptr);

// Language-homogeneous batches of at most `batch_tokens` padded tokens,
// length-sorted within each set and shuffled across sets.
std::vector<model::Batch> make_batches(const vocab::MultiVocab& vocab, const std::vector<ParallelSet>& sets,
                                       size_t batch_tokens, Rng& rng);

struct EvalResult {
  double loss_per_token = 0.0;
  double accuracy = 0.0;
  size_t tokens = 0;
};
EvalResult evaluate(model::Transformer& model, const std::vector<ParallelSet>& sets, const TrainConfig& cfg);

struct TracePoint {
  int update = 0;
  double lr = 0.0;
  double train_loss = 0.0;  // per token, over the updates since the last point
  std::optional<double> dev_loss;
};

struct TrainResult {
  std::vector<TracePoint> trace;
  int updates = 0;
  bool early_stopped = false;
  std::optional<double> best_dev_loss;
  double seconds = 0.0;
};

// Supervised training. With dev sets the best-scoring parameters are kept.
TrainResult train(model::Transformer& model, const std::vector<ParallelSet>& train_sets,
                  const std::vector<ParallelSet>& dev_sets, const TrainConfig& cfg);

}  // namespace famt::train
