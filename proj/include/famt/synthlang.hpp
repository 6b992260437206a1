#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "famt/text.hpp"

namespace famt::synth {

struct GrammarSpec {
  uint64_t seed = 1;
  int vocab_size = 200;         // base lexemes, function words included
  int min_length = 4;
  int max_length = 12;
  int topic_count = 8;
  int sentence_count = 20000;
  int function_words = 8;
  int min_frequency = 5;

  void validate() const;
};

// Appends `suffix` to the token at output position p when p % modulus == residue.
struct SuffixRule {
  int modulus = 2;
  int residue = 0;
  std::string suffix;
};

struct Reorder {
  int window = 1;
  std::vector<int> pattern;  // permutation of 0..window-1; empty means identity
};

struct LanguageDerivation {
  std::string language;
  std::map<std::string, std::string> substitution;  // base lexeme -> surface
  std::map<std::string, std::string> synonyms;      // surface -> alternative surface
  std::vector<SuffixRule> suffix_rules;
  Reorder reorder;
  double noise_rate = 0.0;
  uint64_t seed = 0;
  bool unseen = false;

  void validate() const;
};

using WordPairs = std::vector<std::pair<std::string, std::string>>;
using LanguagePair = std::pair<std::string, std::string>;
using ParallelCorpus = std::vector<std::pair<Sentence, Sentence>>;

struct Splits {
  std::vector<size_t> train;
  std::vector<size_t> dev;
  std::vector<size_t> test;
};

struct DerivedLanguage {
  Corpus corpus;
  WordPairs dictionary;  // (derived surface, base lexeme)
};

struct SynthFamily {
  Corpus base_corpus;
  std::vector<std::string> base_lexicon;
  std::map<std::string, Corpus> languages;
  std::map<LanguagePair, WordPairs> gold_dictionaries;
  std::set<std::string> unseen;
  Splits splits;

  // Sentence pairs for (src, tgt) restricted to the given split indices.
  ParallelCorpus parallel(const std::string& src, const std::string& tgt, const std::vector<size_t>& split) const;
  Corpus monolingual(const std::string& language, const std::vector<size_t>& split) const;
};

// Pseudo-word lexicon used by generate_base_corpus; exposed for derivation factories.
std::vector<std::string> base_lexicon(const GrammarSpec& spec);

Corpus generate_base_corpus(const GrammarSpec& spec);

DerivedLanguage derive_language(const Corpus& base, const LanguageDerivation& d);

// Derivation presets. "close" renames every lexeme; "distant" also reorders
// inside fixed windows and attaches position-conditioned suffixes.
enum class Relatedness { identity, close, distant };
LanguageDerivation make_derivation(const std::string& language, const std::vector<std::string>& lexicon,
                                   Relatedness relatedness, uint64_t seed, double noise_rate = 0.0);

struct FamilyOptions {
  double dev_fraction = 0.05;
  double test_fraction = 0.05;
};

SynthFamily make_family(const GrammarSpec& spec, const std::vector<LanguageDerivation>& derivations,
                        const FamilyOptions& options = {});

// Layout: <lang>.mono.txt, <src>-<tgt>.{src,tgt}.txt (train split, never for
// unseen languages), <src>-<tgt>.{dev,test}.{src,tgt}.txt, dict.<src>-<tgt>.txt.
void write_family(const SynthFamily& family, const std::filesystem::path& dir);

}  // namespace famt::synth
