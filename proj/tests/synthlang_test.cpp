#include <gtest/gtest.h>

#include <filesystem>
#include <map>
#include <set>

#include "famt/error.hpp"
#include "famt/hash.hpp"
#include "famt/synthlang.hpp"

using namespace famt;
using namespace famt::synth;

namespace {

GrammarSpec small_spec(uint64_t seed = 1) {
  GrammarSpec s;
  s.seed = seed;
  s.vocab_size = 200;
  s.min_length = 4;
  s.max_length = 12;
  s.sentence_count = 2000;
  return s;
}

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("famt_synth_" + name);
  std::filesystem::remove_all(p);
  return p;
}

}  // namespace

TEST(GenerateBaseCorpus, DeterministicForSeed) {
  EXPECT_EQ(generate_base_corpus(small_spec(1)), generate_base_corpus(small_spec(1)));
}

TEST(GenerateBaseCorpus, SeedChangesCorpus) {
  EXPECT_NE(generate_base_corpus(small_spec(1)), generate_base_corpus(small_spec(2)));
}

TEST(GenerateBaseCorpus, EveryLexemeAppearsAtLeastFiveTimes) {
  auto spec = small_spec();
  spec.sentence_count = 20000;
  const auto corpus = generate_base_corpus(spec);
  std::map<std::string, int> counts;
  for (const auto& s : corpus) {
    EXPECT_GE(static_cast<int>(s.size()), spec.min_length);
    EXPECT_LE(static_cast<int>(s.size()), spec.max_length);
    for (const auto& w : s) ++counts[w];
  }
  const auto lexicon = base_lexicon(spec);
  ASSERT_EQ(lexicon.size(), 200u);
  for (const auto& w : lexicon) EXPECT_GE(counts[w], 5) << w;
  EXPECT_EQ(counts.size(), lexicon.size());
}

TEST(GenerateBaseCorpus, RejectsInvalidSpec) {
  auto spec = small_spec();
  spec.vocab_size = 9;
  EXPECT_THROW(generate_base_corpus(spec), ConfigError);
  spec = small_spec();
  spec.min_length = 8;
  spec.max_length = 4;
  EXPECT_THROW(generate_base_corpus(spec), ConfigError);
}

TEST(DeriveLanguage, IdentityDerivation) {
  const auto spec = small_spec();
  const auto base = generate_base_corpus(spec);
  const auto d = make_derivation("id", base_lexicon(spec), Relatedness::identity, 3);
  const auto out = derive_language(base, d);
  EXPECT_EQ(out.corpus, base);
  for (const auto& [a, b] : out.dictionary) EXPECT_EQ(a, b);
  EXPECT_EQ(out.dictionary.size(), 200u);
}

TEST(DeriveLanguage, RenamingRoundTripsThroughDictionary) {
  const auto spec = small_spec();
  const auto base = generate_base_corpus(spec);
  const auto out = derive_language(base, make_derivation("xa", base_lexicon(spec), Relatedness::close, 5));
  std::map<std::string, std::string> back(out.dictionary.begin(), out.dictionary.end());
  ASSERT_EQ(out.corpus.size(), base.size());
  for (size_t i = 0; i < base.size(); ++i) {
    Sentence restored;
    for (const auto& w : out.corpus[i]) restored.push_back(back.at(w));
    EXPECT_EQ(restored, base[i]);
  }
}

TEST(DeriveLanguage, DictionaryIsBijective) {
  const auto spec = small_spec();
  const auto lex = base_lexicon(spec);
  const auto out = derive_language(generate_base_corpus(spec), make_derivation("xa", lex, Relatedness::close, 5));
  std::set<std::string> sources, targets;
  for (const auto& [s, t] : out.dictionary) {
    sources.insert(s);
    targets.insert(t);
  }
  EXPECT_EQ(out.dictionary.size(), lex.size());
  EXPECT_EQ(sources.size(), lex.size());
  EXPECT_EQ(targets.size(), lex.size());
}

TEST(DeriveLanguage, ReorderAndSuffixesApply) {
  LanguageDerivation d;
  d.language = "zz";
  for (const auto* w : {"a", "b", "c", "d", "e"}) d.substitution[w] = std::string(w) + w;
  d.reorder = {2, {1, 0}};
  d.suffix_rules = {{2, 1, "x"}};
  const auto out = derive_language({{"a", "b", "c", "d", "e"}}, d);
  EXPECT_EQ(out.corpus[0], (Sentence{"bb", "aax", "dd", "ccx", "ee"}));
}

TEST(DeriveLanguage, IncompleteSubstitutionIsConfigError) {
  LanguageDerivation d;
  d.language = "zz";
  d.substitution["a"] = "x";
  EXPECT_THROW(derive_language({{"a", "b"}}, d), ConfigError);
}

TEST(MakeFamily, AllOrderedPairsAndSharedSplits) {
  const auto spec = small_spec();
  const auto lex = base_lexicon(spec);
  std::vector<LanguageDerivation> ds = {
      make_derivation("aa", lex, Relatedness::identity, 1), make_derivation("bb", lex, Relatedness::close, 2),
      make_derivation("cc", lex, Relatedness::close, 3), make_derivation("dd", lex, Relatedness::distant, 4)};
  const auto fam = make_family(spec, ds);
  EXPECT_EQ(fam.gold_dictionaries.size(), 12u);
  int pairs = 0;
  for (const auto& [a, ca] : fam.languages)
    for (const auto& [b, cb] : fam.languages)
      if (a != b) {
        const auto p = fam.parallel(a, b, fam.splits.train);
        EXPECT_EQ(p.size(), fam.splits.train.size());
        ++pairs;
      }
  EXPECT_EQ(pairs, 12);
  std::set<size_t> all;
  for (const auto* split : {&fam.splits.train, &fam.splits.dev, &fam.splits.test})
    for (size_t i : *split) EXPECT_TRUE(all.insert(i).second) << "split overlap at " << i;
  EXPECT_EQ(all.size(), fam.base_corpus.size());
  // Parallel sentences come from one base index: aa is the identity language.
  const auto p = fam.parallel("aa", "bb", fam.splits.dev);
  for (size_t k = 0; k < p.size(); ++k) EXPECT_EQ(p[k].first, fam.base_corpus[fam.splits.dev[k]]);
}

TEST(MakeFamily, RejectsDuplicatesAndSingletons) {
  const auto spec = small_spec();
  const auto lex = base_lexicon(spec);
  const auto a = make_derivation("aa", lex, Relatedness::close, 1);
  EXPECT_THROW(make_family(spec, {a}), ConfigError);
  EXPECT_THROW(make_family(spec, {a, a}), ConfigError);
}

TEST(WriteFamily, UnseenLanguageNeverLeaksIntoTrainingFiles) {
  const auto spec = small_spec();
  const auto lex = base_lexicon(spec);
  auto held = make_derivation("nn", lex, Relatedness::distant, 9);
  held.unseen = true;
  const auto fam = make_family(spec, {make_derivation("aa", lex, Relatedness::identity, 1),
                                      make_derivation("bb", lex, Relatedness::close, 2), held});
  const auto dir = temp_dir("leak");
  write_family(fam, dir);

  std::set<std::string> other;
  for (const auto& [lang, corpus] : fam.languages)
    if (lang != "nn")
      for (const auto& s : corpus) other.insert(s.begin(), s.end());
  std::set<std::string> unseen_only;
  for (const auto& s : fam.languages.at("nn"))
    for (const auto& w : s)
      if (!other.count(w)) unseen_only.insert(w);
  ASSERT_FALSE(unseen_only.empty());

  int training_files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const bool parallel_train = name.find('-') != std::string::npos && name.rfind("dict.", 0) != 0 &&
                                name.find(".dev.") == std::string::npos && name.find(".test.") == std::string::npos;
    if (!parallel_train) continue;
    ++training_files;
    EXPECT_EQ(name.find("nn"), std::string::npos) << name;
    for (const auto& s : read_corpus(entry.path()))
      for (const auto& w : s) EXPECT_FALSE(unseen_only.count(w)) << name << " leaks " << w;
  }
  EXPECT_EQ(training_files, 4);  // aa-bb, bb-aa, each .src and .tgt
  EXPECT_TRUE(std::filesystem::exists(dir / "nn-aa.test.src.txt"));
}

TEST(WriteFamily, ByteIdenticalAcrossRuns) {
  const auto spec = small_spec();
  const auto lex = base_lexicon(spec);
  std::vector<LanguageDerivation> ds = {make_derivation("aa", lex, Relatedness::identity, 1),
                                        make_derivation("bb", lex, Relatedness::distant, 2, 0.1)};
  const auto d1 = temp_dir("run1");
  const auto d2 = temp_dir("run2");
  write_family(make_family(spec, ds), d1);
  write_family(make_family(spec, ds), d2);
  int files = 0;
  for (const auto& entry : std::filesystem::directory_iterator(d1)) {
    EXPECT_EQ(sha256_file(entry.path()), sha256_file(d2 / entry.path().filename()));
    ++files;
  }
  EXPECT_GT(files, 5);
}
