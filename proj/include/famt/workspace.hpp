#pragma once

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "famt/config.hpp"
#include "famt/pipeline.hpp"
#include "famt/translate.hpp"

namespace famt::workspace {

// Exclusive writer lock on an experiment directory (a ".lock" file).
class Lock {
 public:
  explicit Lock(const std::filesystem::path& root);
  ~Lock();
  Lock(const Lock&) = delete;
  Lock& operator=(const Lock&) = delete;

 private:
  std::filesystem::path path_;
};

struct StepOutcome {
  bool skipped = false;  // stamp matched, outputs untouched
  std::vector<std::filesystem::path> outputs;
};

struct AlignSummary {
  StepOutcome step;
  std::map<std::string, double> train_p_at_1;
  std::map<std::string, double> test_p_at_1;  // held-out part of each dictionary
};

struct BacktranslateSummary {
  StepOutcome step;
  std::vector<pipeline::MetricRow> baseline;
  std::vector<pipeline::MetricRow> table;
  std::vector<int> resumed;  // iterations loaded from an earlier run
  std::vector<pipeline::IterationResult> iterations;  // the ones actually run
};

// The two-stage experiment laid out on disk. Each step records the files it
// consumed in the manifest of its stage (base unless it touches an unseen
// language) and writes a stamp so a rerun with identical inputs is a no-op.
//
//   data/       synthetic family (write_family layout), languages.txt
//   emb/        <lang>.vec, <lang>.bank
//   align/      hub.famt and hub.<lang>.famt, p_at_1.tsv and p_at_1.<lang>.tsv
//   vocab/      vocab.txt, embedding.famt
//   model/      base.ckpt, train_trace.tsv, <lang>.ckpt
//   bt/         iter-<k>.ckpt, iter-<k>.tsv, metrics.tsv, final.ckpt
//   manifests/  base.json, extension.json
//   stamps/     one JSON file per step
class Workspace {
 public:
  Workspace(std::filesystem::path root, config::ExperimentConfig config);

  void set_log(std::ostream* log) { log_ = log; }
  const std::filesystem::path& root() const { return root_; }
  const config::ExperimentConfig& config() const { return config_; }
  std::filesystem::path data_dir() const { return root_ / "data"; }
  std::filesystem::path vectors_path(const std::string& lang) const;
  std::filesystem::path bank_path(const std::string& lang) const;
  // Base languages share align/hub.famt; an unseen language gets its own file.
  std::filesystem::path hub_path(const std::string& lang) const;
  std::filesystem::path base_checkpoint() const { return root_ / "model" / "base.ckpt"; }
  std::filesystem::path extended_checkpoint(const std::string& lang) const;
  std::filesystem::path manifest_path(const std::string& stage) const;

  std::string stage_of(const std::string& lang) const;  // "base" or "extension"

  StepOutcome synth();
  StepOutcome embed(const std::string& lang);
  // Maps every listed language onto the pivot and merges them into hub.famt.
  AlignSummary align(const std::vector<std::string>& langs);
  StepOutcome build_vocab();
  StepOutcome train_base();
  StepOutcome extend(const std::string& lang, const translate::PlugInOptions& options);
  BacktranslateSummary backtranslate(const std::optional<std::filesystem::path>& checkpoint = std::nullopt);

  pipeline::IsolationReport verify_stages() const;

 private:
  struct Step {
    std::string name;
    std::string stage;
    std::vector<std::filesystem::path> inputs;
    std::vector<std::filesystem::path> outputs;
    std::string extra;  // anything else the outputs depend on
  };
  std::string step_key(const Step& step) const;
  bool up_to_date(const Step& step, const std::string& key) const;
  void finish(const Step& step, const std::string& key) const;
  void record(const std::string& stage, const std::vector<std::filesystem::path>& inputs) const;
  void require(const std::vector<std::filesystem::path>& inputs) const;

  std::filesystem::path root_;
  config::ExperimentConfig config_;
  std::string config_json_;
  std::ostream* log_ = nullptr;
};

std::vector<pipeline::MetricRow> parse_metric_table(const std::string& tsv);

}  // namespace famt::workspace
