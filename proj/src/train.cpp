#include "famt/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <numeric>

#include "famt/error.hpp"

namespace famt::train {

void TrainConfig::validate() const {
  if (label_smoothing < 0.0 || label_smoothing >= 1.0) throw ConfigError("label_smoothing must lie in [0, 1)");
  if (lambda_vmf <= 0.0) throw ConfigError("lambda_vmf must be > 0");
  if (warmup < 1) throw ConfigError("warmup must be >= 1");
  if (batch_tokens < 1) throw ConfigError("batch_tokens must be >= 1");
  if (accumulation < 1) throw ConfigError("accumulation must be >= 1");
  if (max_updates < 0) throw ConfigError("max_updates must be >= 0");
  if (eval_every < 1) throw ConfigError("eval_every must be >= 1");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("Adam betas must lie in [0, 1)");
}

TrainConfig TrainConfig::for_head(model::Head head) {
  TrainConfig c;
  if (head == model::Head::vmf) {
    c.optimizer = Optimizer::radam;
    c.schedule = Schedule::linear;
    c.beta2 = 0.9995;
    c.max_grad_norm = 5.0;
    c.weight_decay = 1e-5;
  }
  return c;
}

std::string optimizer_name(Optimizer o) { return o == Optimizer::adam ? "adam" : "radam"; }
std::string schedule_name(Schedule s) { return s == Schedule::noam ? "noam" : "linear"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "adam") return Optimizer::adam;
  if (name == "radam") return Optimizer::radam;
  throw ConfigError("unknown optimizer '" + name + "'");
}

Schedule parse_schedule(const std::string& name) {
  if (name == "noam") return Schedule::noam;
  if (name == "linear") return Schedule::linear;
  throw ConfigError("unknown schedule '" + name + "'");
}

double learning_rate(const TrainConfig& cfg, int step, int d_model) {
  if (step < 1) throw ConfigError("learning rate is defined for step >= 1");
  const double s = step, w = cfg.warmup;
  if (cfg.schedule == Schedule::noam)
    return cfg.learning_rate * std::pow(static_cast<double>(d_model), -0.5) * std::min(std::pow(s, -0.5), s * std::pow(w, -1.5));
  if (s <= w) return cfg.warmup_init_lr + (cfg.warmup_end_lr - cfg.warmup_init_lr) * s / w;
  const double span = std::max(1.0, static_cast<double>(cfg.max_updates) - w);
  return std::max(cfg.min_lr, cfg.warmup_end_lr - (cfg.warmup_end_lr - cfg.min_lr) * (s - w) / span);
}

void OptimizerState::apply(model::Transformer& model, double lr) {
  auto& params = model.params();
  if (moments_.size() != params.size()) moments_.resize(params.size());
  ++step_;
  const double t = step_;
  const double b1t = 1.0 - std::pow(cfg_.beta1, t);
  const double b2t = 1.0 - std::pow(cfg_.beta2, t);
  double rect = 1.0;
  bool adaptive = true;
  if (cfg_.optimizer == Optimizer::radam) {
    const double rho_inf = 2.0 / (1.0 - cfg_.beta2) - 1.0;
    const double rho = rho_inf - 2.0 * t * std::pow(cfg_.beta2, t) / b2t;
    adaptive = rho >= 5.0;
    if (adaptive) rect = std::sqrt((rho - 4.0) * (rho - 2.0) * rho_inf / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho));
  }
  for (size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable || p.grad.size() == 0) continue;
    auto& st = moments_[i];
    if (st.m.rows() != p.value.rows() || st.m.cols() != p.value.cols()) {
      // Fresh (or regrown) tensor: restart its moments.
      st.m = Matrix::Zero(p.value.rows(), p.value.cols());
      st.v = Matrix::Zero(p.value.rows(), p.value.cols());
    }
    st.m = cfg_.beta1 * st.m + (1.0 - cfg_.beta1) * p.grad;
    st.v = cfg_.beta2 * st.v + (1.0 - cfg_.beta2) * p.grad.cwiseAbs2();
    Matrix update;
    if (adaptive)
      update = (rect * lr / b1t) * st.m.array() / ((st.v.array() / b2t).sqrt() + cfg_.adam_eps);
    else
      update = (lr / b1t) * st.m;
    if (cfg_.weight_decay > 0.0) update += lr * cfg_.weight_decay * p.value;
    if (!update.allFinite()) throw TrainingError("non-finite update for tensor '" + p.name + "'");
    p.value -= update;
    round_to_float(p.value);
  }
}

void zero_grads(model::Transformer& model) {
  for (auto& p : model.params()) p.zero_grad();
}

double clip_gradients(model::Transformer& model, double max_norm) {
  double sq = 0.0;
  for (const auto& p : model.params())
    if (p.trainable && p.grad.size()) sq += p.grad.squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& p : model.params())
      if (p.trainable && p.grad.size()) p.grad *= s;
  }
  return norm;
}

ParallelSet encode_pairs(const vocab::MultiVocab& vocab, const std::string& source_language,
                         const std::string& target_language, const synth::ParallelCorpus& corpus, size_t* dropped) {
  ParallelSet set{source_language, target_language, {}};
  vocab.tag(target_language);
  size_t skipped = 0;
  for (const auto& [s, t] : corpus) {
    size_t unk = 0;
    auto tgt = vocab.encode(t, target_language, &unk);
    if (unk > 0 || s.empty()) {
      ++skipped;
      continue;
    }
    set.pairs.emplace_back(vocab.encode(s, source_language), std::move(tgt));
  }
  if (dropped) *dropped = skipped;
  return set;
}

std::vector<model::Batch> make_batches(const vocab::MultiVocab& vocab, const std::vector<ParallelSet>& sets,
                                       size_t batch_tokens, Rng& rng) {
  std::vector<model::Batch> batches;
  for (const auto& set : sets) {
    std::vector<size_t> order(set.pairs.size());
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
      return std::max(set.pairs[a].first.size(), set.pairs[a].second.size()) <
             std::max(set.pairs[b].first.size(), set.pairs[b].second.size());
    });
    std::vector<std::pair<model::TokenIds, model::TokenIds>> cur;
    size_t width = 0;
    for (size_t i : order) {
      const auto& pr = set.pairs[i];
      const size_t w = std::max(pr.first.size(), pr.second.size()) + 1;
      if (!cur.empty() && (cur.size() + 1) * std::max(width, w) > batch_tokens) {
        batches.push_back(model::make_batch(vocab, set.source_language, set.target_language, cur));
        cur.clear();
        width = 0;
      }
      cur.push_back(pr);
      width = std::max(width, w);
    }
    if (!cur.empty()) batches.push_back(model::make_batch(vocab, set.source_language, set.target_language, cur));
  }
  rng.shuffle(batches);
  return batches;
}

EvalResult evaluate(model::Transformer& model, const std::vector<ParallelSet>& sets, const TrainConfig& cfg) {
  Rng rng(0);
  EvalResult r;
  double loss = 0.0;
  size_t correct = 0;
  for (const auto& b : make_batches(model.vocab(), sets, cfg.batch_tokens, rng)) {
    const auto st = model.evaluate(b, cfg.label_smoothing, cfg.lambda_vmf);
    loss += st.loss;
    correct += st.correct;
    r.tokens += st.tokens;
  }
  if (r.tokens == 0) throw ConfigError("evaluation set is empty");
  r.loss_per_token = loss / static_cast<double>(r.tokens);
  r.accuracy = static_cast<double>(correct) / static_cast<double>(r.tokens);
  return r;
}

TrainResult train(model::Transformer& model, const std::vector<ParallelSet>& train_sets,
                  const std::vector<ParallelSet>& dev_sets, const TrainConfig& cfg) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  size_t total_pairs = 0;
  for (const auto& s : train_sets) {
    if (!model.vocab().has_language(s.source_language) || !model.vocab().has_tag(s.target_language))
      throw ConfigError("pair " + s.source_language + "-" + s.target_language + " is not covered by the vocabulary");
    total_pairs += s.pairs.size();
  }
  if (total_pairs == 0) throw ConfigError("training corpus is empty");

  Rng batch_rng(derive_seed(cfg.seed, 1));
  Rng dropout_rng(derive_seed(cfg.seed, 2));
  OptimizerState opt(cfg);
  std::vector<model::Batch> batches;
  size_t cursor = 0;

  TrainResult result;
  double window_loss = 0.0;
  size_t window_tokens = 0;
  int bad_evals = 0;
  std::vector<Matrix> best;

  for (int update = 1; update <= cfg.max_updates; ++update) {
    zero_grads(model);
    size_t tokens = 0;
    for (int a = 0; a < cfg.accumulation; ++a) {
      if (cursor == batches.size()) {
        batches = make_batches(model.vocab(), train_sets, cfg.batch_tokens, batch_rng);
        cursor = 0;
      }
      const auto st = model.forward_backward(batches[cursor++], &dropout_rng, cfg.label_smoothing, cfg.lambda_vmf);
      tokens += st.tokens;
      window_loss += st.loss;
    }
    window_tokens += tokens;
    for (auto& p : model.params())
      if (p.trainable && p.grad.size()) p.grad /= static_cast<double>(tokens);
    model::check_gradients_finite(model);
    clip_gradients(model, cfg.max_grad_norm);
    const double lr = learning_rate(cfg, update, model.config().d_model);
    opt.apply(model, lr);
    result.updates = update;

    const bool last = update == cfg.max_updates;
    if (update % cfg.eval_every == 0 || last) {
      TracePoint tp{update, lr, window_tokens ? window_loss / static_cast<double>(window_tokens) : 0.0, std::nullopt};
      window_loss = 0.0;
      window_tokens = 0;
      if (!dev_sets.empty()) {
        tp.dev_loss = evaluate(model, dev_sets, cfg).loss_per_token;
        if (!result.best_dev_loss || *tp.dev_loss < *result.best_dev_loss) {
          result.best_dev_loss = tp.dev_loss;
          bad_evals = 0;
          best.clear();
          for (const auto& p : model.params()) best.push_back(p.value);
        } else if (++bad_evals >= cfg.patience) {
          result.early_stopped = true;
        }
      }
      result.trace.push_back(tp);
      if (result.early_stopped) break;
    }
  }
  zero_grads(model);
  if (!best.empty())
    for (size_t i = 0; i < best.size(); ++i) model.params()[i].value = best[i];
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace famt::train
