#include "famt/synthlang.hpp"

#include <algorithm>
#include <unordered_map>
#include <tuple>
#include <unordered_set>

#include "famt/error.hpp"
#include "famt/random.hpp"

namespace famt::synth {
namespace {

constexpr const char* kConsonants = "bdfgklmnprstvz";
constexpr const char* kVowels = "aeiou";

std::string syllable(Rng& rng, std::string_view consonants, std::string_view vowels) {
  std::string s;
  s.push_back(consonants[rng.index(consonants.size())]);
  s.push_back(vowels[rng.index(vowels.size())]);
  return s;
}

// Draws `count` distinct pseudo-words of min_syl..max_syl syllables, skipping
// anything already in `taken`.
std::vector<std::string> pseudo_words(Rng& rng, size_t count, int min_syl, int max_syl, std::string_view consonants,
                                      std::string_view vowels, std::unordered_set<std::string>& taken) {
  std::vector<std::string> words;
  words.reserve(count);
  size_t guard = 0;
  while (words.size() < count) {
    if (++guard > 1000 * (count + 10)) throw ConfigError("cannot draw enough distinct pseudo-words");
    const int syl = min_syl + static_cast<int>(rng.index(static_cast<uint64_t>(max_syl - min_syl + 1)));
    std::string w;
    for (int k = 0; k < syl; ++k) w += syllable(rng, consonants, vowels);
    if (taken.insert(w).second) words.push_back(std::move(w));
  }
  return words;
}

}  // namespace

void GrammarSpec::validate() const {
  if (vocab_size < 10) throw ConfigError("vocab_size must be >= 10");
  if (min_length < 1 || min_length > max_length) throw ConfigError("sentence length range must satisfy 1 <= min <= max");
  if (topic_count < 1) throw ConfigError("topic_count must be >= 1");
  if (function_words < 1 || function_words >= vocab_size - topic_count)
    throw ConfigError("function_words must leave at least one content word per topic");
  if (sentence_count < 1) throw ConfigError("sentence_count must be >= 1");
}

void LanguageDerivation::validate() const {
  if (language.empty()) throw ConfigError("derivation needs a language id");
  if (reorder.window < 1) throw ConfigError("reorder window must be >= 1");
  if (!reorder.pattern.empty()) {
    std::vector<int> sorted = reorder.pattern;
    std::sort(sorted.begin(), sorted.end());
    for (int k = 0; k < static_cast<int>(sorted.size()); ++k)
      if (sorted[k] != k || static_cast<int>(sorted.size()) != reorder.window)
        throw ConfigError("reorder pattern must be a permutation of 0..window-1");
  }
  if (noise_rate < 0.0 || noise_rate >= 1.0) throw ConfigError("noise_rate must lie in [0, 1)");
  for (const auto& r : suffix_rules)
    if (r.modulus < 1 || r.residue < 0 || r.residue >= r.modulus) throw ConfigError("bad suffix rule");
  std::unordered_set<std::string> targets;
  for (const auto& [base, surface] : substitution)
    if (!targets.insert(surface).second) throw ConfigError("substitution for " + language + " is not injective");
}

std::vector<std::string> base_lexicon(const GrammarSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.seed, 100));
  std::unordered_set<std::string> taken;
  auto words = pseudo_words(rng, static_cast<size_t>(spec.function_words), 1, 1, kConsonants, kVowels, taken);
  auto content = pseudo_words(rng, static_cast<size_t>(spec.vocab_size - spec.function_words), 2, 3, kConsonants,
                              kVowels, taken);
  words.insert(words.end(), content.begin(), content.end());
  return words;
}

Corpus generate_base_corpus(const GrammarSpec& spec) {
  spec.validate();
  const auto lexicon = base_lexicon(spec);
  const int n_func = spec.function_words;
  const int n_content = spec.vocab_size - n_func;

  std::vector<std::vector<int>> topic_words(static_cast<size_t>(spec.topic_count));
  for (int j = 0; j < n_content; ++j) topic_words[static_cast<size_t>(j % spec.topic_count)].push_back(n_func + j);

  for (int attempt = 0; attempt < 20; ++attempt) {
    Rng rng(derive_seed(spec.seed, static_cast<uint64_t>(attempt)));
    // Sparse within-topic successor lists give every lexeme a distinct
    // context distribution.
    std::vector<std::vector<int>> successors(static_cast<size_t>(spec.vocab_size));
    for (const auto& words : topic_words)
      for (int w : words)
        for (int k = 0; k < 3; ++k) successors[static_cast<size_t>(w)].push_back(words[rng.index(words.size())]);

    Corpus corpus;
    corpus.reserve(static_cast<size_t>(spec.sentence_count));
    std::vector<int> counts(static_cast<size_t>(spec.vocab_size), 0);
    for (int s = 0; s < spec.sentence_count; ++s) {
      const int topic = static_cast<int>(rng.index(static_cast<uint64_t>(spec.topic_count)));
      const auto& pool = topic_words[static_cast<size_t>(topic)];
      const int len = spec.min_length + static_cast<int>(rng.index(static_cast<uint64_t>(spec.max_length - spec.min_length + 1)));
      Sentence sentence;
      int prev = -1;
      for (int p = 0; p < len; ++p) {
        int w;
        if (p % 3 == 0) {
          w = rng.uniform() < 0.6 ? (p / 3 + topic) % n_func : static_cast<int>(rng.index(static_cast<uint64_t>(n_func)));
        } else if (prev >= 0 && rng.uniform() < 0.75) {
          const auto& next = successors[static_cast<size_t>(prev)];
          w = next[rng.index(next.size())];
        } else {
          w = pool[rng.index(pool.size())];
        }
        if (w >= n_func) prev = w;
        ++counts[static_cast<size_t>(w)];
        sentence.push_back(lexicon[static_cast<size_t>(w)]);
      }
      corpus.push_back(std::move(sentence));
    }
    if (*std::min_element(counts.begin(), counts.end()) >= spec.min_frequency) return corpus;
  }
  throw ConfigError("could not reach the minimum lexeme frequency; raise sentence_count");
}

DerivedLanguage derive_language(const Corpus& base, const LanguageDerivation& d) {
  d.validate();
  Rng rng(d.seed);
  DerivedLanguage out;
  out.corpus.reserve(base.size());
  std::vector<std::pair<std::string, std::string>> pairs;
  std::set<std::pair<std::string, std::string>> seen;

  for (const auto& sentence : base) {
    std::vector<std::pair<std::string, const std::string*>> toks;  // surface, base lexeme
    toks.reserve(sentence.size());
    for (const auto& w : sentence) {
      auto it = d.substitution.find(w);
      if (it == d.substitution.end())
        throw ConfigError("substitution for " + d.language + " does not cover base word '" + w + "'");
      std::string surface = it->second;
      if (d.noise_rate > 0.0 && rng.uniform() < d.noise_rate) {
        if (auto syn = d.synonyms.find(surface); syn != d.synonyms.end()) surface = syn->second;
      }
      toks.emplace_back(std::move(surface), &it->first);
    }
    const int win = d.reorder.window;
    if (win > 1 && !d.reorder.pattern.empty()) {
      auto copy = toks;
      for (size_t c = 0; c + static_cast<size_t>(win) <= toks.size(); c += static_cast<size_t>(win))
        for (int k = 0; k < win; ++k) toks[c + k] = copy[c + static_cast<size_t>(d.reorder.pattern[k])];
    }
    Sentence derived;
    derived.reserve(toks.size());
    for (size_t p = 0; p < toks.size(); ++p) {
      std::string surface = toks[p].first;
      for (const auto& rule : d.suffix_rules)
        if (static_cast<int>(p % static_cast<size_t>(rule.modulus)) == rule.residue) surface += rule.suffix;
      if (seen.emplace(surface, *toks[p].second).second) pairs.emplace_back(surface, *toks[p].second);
      derived.push_back(std::move(surface));
    }
    out.corpus.push_back(std::move(derived));
  }
  std::sort(pairs.begin(), pairs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.second, a.first) < std::tie(b.second, b.first);
  });
  out.dictionary = std::move(pairs);
  return out;
}

LanguageDerivation make_derivation(const std::string& language, const std::vector<std::string>& lexicon,
                                   Relatedness relatedness, uint64_t seed, double noise_rate) {
  LanguageDerivation d;
  d.language = language;
  d.seed = seed;
  d.noise_rate = noise_rate;
  if (relatedness == Relatedness::identity) {
    for (const auto& w : lexicon) d.substitution[w] = w;
    return d;
  }
  Rng rng(derive_seed(seed, 1));
  // Each language draws from its own slice of the alphabet so surfaces differ.
  const std::string consonants = kConsonants;
  std::vector<char> cons(consonants.begin(), consonants.end());
  rng.shuffle(cons);
  const std::string lang_cons(cons.begin(), cons.begin() + 10);
  std::unordered_set<std::string> taken(lexicon.begin(), lexicon.end());
  const auto surfaces = pseudo_words(rng, lexicon.size(), 2, 3, lang_cons, kVowels, taken);
  for (size_t i = 0; i < lexicon.size(); ++i) d.substitution[lexicon[i]] = surfaces[i];
  if (noise_rate > 0.0) {
    const auto alts = pseudo_words(rng, lexicon.size(), 2, 3, lang_cons, kVowels, taken);
    for (size_t i = 0; i < lexicon.size(); ++i) d.synonyms[surfaces[i]] = alts[i];
  }
  if (relatedness == Relatedness::distant) {
    d.reorder.window = 2;
    d.reorder.pattern = {1, 0};
    d.suffix_rules.push_back({4, 3, "n"});
  }
  return d;
}

ParallelCorpus SynthFamily::parallel(const std::string& src, const std::string& tgt,
                                     const std::vector<size_t>& split) const {
  const auto& a = languages.at(src);
  const auto& b = languages.at(tgt);
  ParallelCorpus out;
  out.reserve(split.size());
  for (size_t i : split) out.emplace_back(a[i], b[i]);
  return out;
}

Corpus SynthFamily::monolingual(const std::string& language, const std::vector<size_t>& split) const {
  const auto& c = languages.at(language);
  Corpus out;
  out.reserve(split.size());
  for (size_t i : split) out.push_back(c[i]);
  return out;
}

SynthFamily make_family(const GrammarSpec& spec, const std::vector<LanguageDerivation>& derivations,
                        const FamilyOptions& options) {
  if (derivations.size() < 2) throw ConfigError("a family needs at least two derivations");
  std::set<std::string> ids;
  for (const auto& d : derivations)
    if (!ids.insert(d.language).second) throw ConfigError("duplicate language id '" + d.language + "'");

  SynthFamily family;
  family.base_corpus = generate_base_corpus(spec);
  family.base_lexicon = base_lexicon(spec);

  std::map<std::string, WordPairs> to_base;
  for (const auto& d : derivations) {
    auto derived = derive_language(family.base_corpus, d);
    family.languages[d.language] = std::move(derived.corpus);
    to_base[d.language] = std::move(derived.dictionary);
    if (d.unseen) family.unseen.insert(d.language);
  }

  for (const auto& [a, dict_a] : to_base) {
    for (const auto& [b, dict_b] : to_base) {
      if (a == b) continue;
      std::unordered_map<std::string, std::vector<const std::string*>> forms_b;
      for (const auto& [surface, base] : dict_b) forms_b[base].push_back(&surface);
      WordPairs pairs;
      for (const auto& [surface, base] : dict_a)
        for (const auto* other : forms_b[base]) pairs.emplace_back(surface, *other);
      family.gold_dictionaries[{a, b}] = std::move(pairs);
    }
  }

  const size_t n = family.base_corpus.size();
  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(spec.seed, 7));
  rng.shuffle(order);
  const auto n_dev = static_cast<size_t>(options.dev_fraction * static_cast<double>(n));
  const auto n_test = static_cast<size_t>(options.test_fraction * static_cast<double>(n));
  if (n_dev + n_test >= n) throw ConfigError("dev/test fractions leave no training data");
  family.splits.dev.assign(order.begin(), order.begin() + static_cast<long>(n_dev));
  family.splits.test.assign(order.begin() + static_cast<long>(n_dev), order.begin() + static_cast<long>(n_dev + n_test));
  family.splits.train.assign(order.begin() + static_cast<long>(n_dev + n_test), order.end());
  for (auto* s : {&family.splits.train, &family.splits.dev, &family.splits.test}) std::sort(s->begin(), s->end());
  return family;
}

void write_family(const SynthFamily& family, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> manifest;
  for (const auto& [lang, corpus] : family.languages) {
    write_corpus(dir / (lang + ".mono.txt"), family.monolingual(lang, family.splits.train));
    manifest.push_back(lang + (family.unseen.count(lang) ? " unseen" : " base"));
  }
  write_lines(dir / "languages.txt", manifest);
  for (const auto& [a, ca] : family.languages) {
    for (const auto& [b, cb] : family.languages) {
      if (a == b) continue;
      const std::string stem = a + "-" + b;
      auto emit = [&](const std::string& infix, const std::vector<size_t>& split) {
        Corpus src, tgt;
        for (size_t i : split) {
          src.push_back(ca[i]);
          tgt.push_back(cb[i]);
        }
        write_corpus(dir / (stem + infix + ".src.txt"), src);
        write_corpus(dir / (stem + infix + ".tgt.txt"), tgt);
      };
      if (!family.unseen.count(a) && !family.unseen.count(b)) emit("", family.splits.train);
      emit(".dev", family.splits.dev);
      emit(".test", family.splits.test);
      std::vector<std::string> lines;
      for (const auto& [x, y] : family.gold_dictionaries.at({a, b})) lines.push_back(x + " " + y);
      write_lines(dir / ("dict." + stem + ".txt"), lines);
    }
  }
}

}  // namespace famt::synth
