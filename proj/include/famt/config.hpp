#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "famt/alignment.hpp"
#include "famt/embeddings.hpp"
#include "famt/model.hpp"
#include "famt/random.hpp"
#include "famt/synthlang.hpp"
#include "famt/train.hpp"
#include "famt/translate.hpp"

namespace famt::config {

inline constexpr int kSchemaVersion = 1;

struct LanguageSpec {
  std::string id;
  synth::Relatedness relatedness = synth::Relatedness::close;
  double noise = 0.0;
  bool unseen = false;
};

struct SynthSection {
  synth::GrammarSpec grammar;
  std::vector<LanguageSpec> languages;
  synth::FamilyOptions splits;
};

struct AlignSection {
  std::string pivot = "pv";
  align::HubOptions hub;
  double test_fraction = 0.2;  // held out of each seed dictionary for P@1
};

struct BacktranslateSection {
  std::string new_language;
  std::vector<std::string> partners;
  int iterations = 2;
  int steps_per_iteration = 2000;
  int beam_size = 5;
  size_t synthetic_per_direction = 0;
  bool restart_from_base = false;
  train::TrainConfig adaptation;
};

// One JSON document drives every subcommand. Unknown keys are rejected.
struct ExperimentConfig {
  int schema_version = kSchemaVersion;
  uint64_t seed = 1;
  SynthSection synth;
  emb::SkipgramConfig embed;
  AlignSection align;
  model::TransformerConfig model;
  train::TrainConfig train;
  translate::DecodeOptions translate;
  BacktranslateSection backtranslate;

  void validate() const;
  // Every seed in the document re-derived from `seed`.
  void reseed(uint64_t seed);

  std::vector<std::string> languages() const;
  std::vector<std::string> base_languages() const;  // not marked unseen
  bool is_unseen(const std::string& language) const;
  uint64_t model_seed() const { return derive_seed(seed, 15); }
};

// One derivation per configured language over the grammar's lexicon.
std::vector<synth::LanguageDerivation> derivations(const ExperimentConfig& config);
synth::SynthFamily build_family(const ExperimentConfig& config);

// Desk-scale defaults for the synthetic family (pv pivot, two seen
// languages, one held-out language).
ExperimentConfig default_config();

ExperimentConfig parse(const std::string& json_text);
ExperimentConfig load(const std::filesystem::path& path);
std::string to_json(const ExperimentConfig& config);

std::string relatedness_name(synth::Relatedness r);
synth::Relatedness parse_relatedness(const std::string& name);

}  // namespace famt::config
