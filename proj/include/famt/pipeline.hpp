#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "famt/model.hpp"
#include "famt/synthlang.hpp"
#include "famt/train.hpp"
#include "famt/translate.hpp"

namespace famt::pipeline {

struct DevSet {
  std::string name;  // test-set column of the metric table
  std::string source_language;
  std::string target_language;
  synth::ParallelCorpus pairs;
};

struct BtPlan {
  std::string new_language;
  std::vector<std::string> partners;
  std::map<std::string, Corpus> monolingual;  // new language and every partner
  int iterations = 2;
  int steps_per_iteration = 2000;
  int beam_size = 5;
  size_t synthetic_per_direction = 0;  // 0 keeps the whole monolingual pool
  bool restart_from_base = false;
  train::TrainConfig adaptation;  // max_updates is replaced by steps_per_iteration
  std::vector<DevSet> dev;         // early stopping and metric tracking
  std::vector<DevSet> test;        // metric tracking only

  void validate() const;
};

// Group frozen in iteration i: the encoder on odd i, the decoder on even i.
std::string frozen_group(int iteration);

struct SyntheticReport {
  size_t input = 0;
  size_t kept = 0;
  size_t empty = 0;
  size_t all_unknown = 0;
};

// Translates monolingual `language_a` text into `language_b`; pairs come back
// as (synthetic b, original a), ready for training b -> a.
synth::ParallelCorpus generate_synthetic(const model::Transformer& model, const Corpus& monolingual,
                                         const std::string& language_a, const std::string& language_b,
                                         const translate::DecodeOptions& options, SyntheticReport* report = nullptr);

struct MetricRow {
  int iteration = 0;      // 0 = before any adaptation
  std::string direction;  // "src-tgt"
  std::string test_set;
  double chrfpp = 0.0;
  double bleu = 0.0;
};

MetricRow evaluate_direction(const model::Transformer& model, const DevSet& dev, int iteration,
                             const translate::DecodeOptions& options = {});

struct IterationResult {
  int iteration = 0;
  std::string frozen;
  std::string frozen_checksum_before;
  std::string frozen_checksum_after;
  std::map<std::string, SyntheticReport> synthetic;  // by training direction
  train::TrainResult training;
  std::vector<MetricRow> metrics;
  bool aborted = false;
  std::string error;
};

// One adaptation round with parity freezing. On divergence the model keeps
// its pre-iteration parameters and the result is marked aborted.
IterationResult run_iteration(model::Transformer& model, const BtPlan& plan, int iteration,
                              const model::Transformer* base = nullptr);

struct PlanResult {
  std::vector<MetricRow> baseline;  // iteration 0, before adaptation
  std::vector<IterationResult> iterations;
  std::vector<MetricRow> table;  // one block of dev rows per iteration
};

PlanResult run_plan(model::Transformer& model, const BtPlan& plan);

// UTF-8 TSV with a header row; scores at full precision.
std::string format_metric_table(const std::vector<MetricRow>& rows);

// ---- two-stage isolation ----

struct FileRecord {
  std::string path;
  std::string sha256;
  std::set<std::string> languages;  // ids named by the file
};

struct StageManifest {
  std::string stage;  // "base" or "extension"
  std::set<std::string> languages;
  std::vector<FileRecord> files;

  std::string to_json() const;
  static StageManifest from_json(const std::string& text);
  void save(const std::filesystem::path& path) const;
  static StageManifest load(const std::filesystem::path& path);
};

// Language ids a file name refers to under the synthetic family layout,
// e.g. "pv-xn.dev.src.txt" -> {pv, xn}; `known` limits the candidates.
std::set<std::string> languages_in_name(const std::string& file_name, const std::set<std::string>& known);

// Languages whose text the file holds: the source side of "<a>-<b>...src.txt",
// the target side of "...tgt.txt", every named language otherwise.
std::set<std::string> content_languages(const std::string& file_name, const std::set<std::string>& known);

// Hashes the files and records the languages they name.
StageManifest make_manifest(const std::string& stage, const std::set<std::string>& languages,
                            const std::vector<std::filesystem::path>& files);

struct Violation {
  std::string file;
  std::string reason;
};

struct IsolationReport {
  std::vector<Violation> violations;
  bool clean() const { return violations.empty(); }
};

// Extension-only languages must not appear in base-stage inputs, by name or
// by content hash (which catches renamed copies).
IsolationReport verify_stage_isolation(const StageManifest& base, const StageManifest& extension);

}  // namespace famt::pipeline
