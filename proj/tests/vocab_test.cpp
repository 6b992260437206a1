#include <gtest/gtest.h>

#include <filesystem>
#include <set>

#include "famt/random.hpp"
#include "famt/vocab.hpp"

using namespace famt;
using namespace famt::vocab;

namespace {

emb::EmbeddingTable table_of(const std::string& lang, const std::vector<std::string>& words, Eigen::Index dim,
                             uint64_t seed) {
  Rng rng(seed);
  Matrix m(static_cast<Eigen::Index>(words.size()), dim);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return emb::EmbeddingTable(lang, words, m);
}

LanguageVocab lang_vocab(const std::string& lang, size_t n, Eigen::Index dim, uint64_t seed) {
  std::vector<std::string> words;
  for (size_t i = 0; i < n; ++i) words.push_back("w" + std::to_string(i));
  const auto t = table_of(lang, words, dim, seed);
  return LanguageVocab{lang, words, t.matrix(), std::vector<uint64_t>(n, 1), {}, {}};
}

MultiVocab three_languages() {
  return MultiVocab::merge({lang_vocab("en", 30, 8, 1), lang_vocab("de", 20, 8, 2), lang_vocab("fr", 25, 8, 3)});
}

}  // namespace

TEST(PrefixedToken, RendersAndParses) {
  EXPECT_EQ((PrefixedToken{"en", "bank"}.render()), "en@bank");
  const auto t = PrefixedToken::parse("en@e@mail");
  EXPECT_EQ(t.language, "en");
  EXPECT_EQ(t.surface, "e@mail");
  EXPECT_THROW(PrefixedToken::parse("bank"), FormatError);
  EXPECT_THROW(validate_language_id("EN"), ConfigError);
  EXPECT_THROW(validate_language_id("e@n"), ConfigError);
  EXPECT_NO_THROW(validate_language_id("pt_br"));
}

TEST(BuildFromCorpus, CopiesRowsOfInTableWords) {
  const auto table = table_of("en", {"a", "b", "c", "d"}, 5, 4);
  const Corpus corpus = {{"c", "a"}, {"b", "c"}};
  const auto v = build_from_corpus(table, corpus, "en");
  ASSERT_EQ(v.words, (std::vector<std::string>{"c", "a", "b"}));
  EXPECT_EQ(v.counts, (std::vector<uint64_t>{2, 1, 1}));
  for (size_t i = 0; i < 3; ++i)
    EXPECT_EQ(v.rows.row(static_cast<Eigen::Index>(i)), table.row(*table.find(v.words[i])));
  EXPECT_TRUE(v.hard_oov.empty());
}

TEST(BuildFromCorpus, ComposesRecoverableWordsAndReportsHardOov) {
  const auto table = table_of("en", {"walk"}, 4, 5);
  emb::SubwordBank bank;
  bank.min_n = 3;
  bank.max_n = 3;
  bank.bucket_count = 64;
  bank.buckets = Matrix::Zero(64, 4);
  Rng rng(6);
  for (size_t b : bank.bucket_ids("walking"))
    for (Eigen::Index c = 0; c < 4; ++c) bank.buckets(static_cast<Eigen::Index>(b), c) = rng.normal();
  // "zq" shares no trigram bucket with "walking" unless hashes collide; check it.
  const auto zq = bank.bucket_ids("zq");
  const auto wk = bank.bucket_ids("walking");
  bool collides = false;
  for (auto b : zq) collides |= std::find(wk.begin(), wk.end(), b) != wk.end();
  ASSERT_FALSE(collides);

  const auto v = build_from_corpus(table, {{"walk", "walking", "zq"}}, "en", &bank);
  ASSERT_EQ(v.words.size(), 2u);
  EXPECT_EQ(v.composed, std::vector<std::string>{"walking"});
  EXPECT_EQ(v.hard_oov, std::vector<std::string>{"zq"});
  const auto expected = emb::compose_oov("walking", bank, nullptr).vector;
  const auto pos = std::find(v.words.begin(), v.words.end(), "walking") - v.words.begin();
  EXPECT_LE((v.rows.row(pos) - expected).cwiseAbs().maxCoeff(), 0.0);
}

TEST(BuildFromCorpus, EmptyCorpusIsInputError) {
  EXPECT_THROW(build_from_corpus(table_of("en", {"a"}, 2, 1), {}, "en"), InputError);
  EXPECT_THROW(build_from_corpus(table_of("en", {"a"}, 2, 1), {{}}, "en"), InputError);
}

TEST(Merge, SizeIsSpecialsPlusLanguages) {
  const auto v = three_languages();
  EXPECT_EQ(v.initial_special_count(), kFixedSpecials + 3);
  EXPECT_EQ(v.size(), v.initial_special_count() + 30 + 20 + 25);
  EXPECT_EQ(v.tokens()[kPad], "<pad>");
  EXPECT_EQ(v.tokens()[kEos], "<eos>");
  for (size_t i = 0; i < v.initial_special_count(); ++i) EXPECT_TRUE(v.is_special(i));
  EXPECT_EQ(v.tokens()[v.tag("de")], "<tgt:de>");
  EXPECT_EQ(v.embedding().rows(), static_cast<Eigen::Index>(v.size()));
}

TEST(Merge, DuplicateSurfacesStayDistinct) {
  auto en = lang_vocab("en", 1, 4, 1);
  auto de = lang_vocab("de", 1, 4, 2);
  en.words = de.words = {"bank"};
  const auto v = MultiVocab::merge({en, de});
  const auto a = v.find("en@bank"), b = v.find("de@bank");
  ASSERT_TRUE(a && b);
  EXPECT_NE(*a, *b);
  EXPECT_NE(v.embedding().row(static_cast<Eigen::Index>(*a)), v.embedding().row(static_cast<Eigen::Index>(*b)));
}

TEST(Merge, IndexIsBijective) {
  const auto v = three_languages();
  std::set<std::string> seen(v.tokens().begin(), v.tokens().end());
  EXPECT_EQ(seen.size(), v.size());
  for (size_t i = 0; i < v.size(); ++i) EXPECT_EQ(*v.find(v.tokens()[i]), i);
}

TEST(Merge, DimensionMismatchIsConfigError) {
  EXPECT_THROW(MultiVocab::merge({lang_vocab("en", 3, 4, 1), lang_vocab("de", 3, 5, 2)}), ConfigError);
}

TEST(TargetMask, SizesAndPartition) {
  const auto v = three_languages();
  EXPECT_EQ(v.target_mask("en").size(), 31u);
  std::set<size_t> covered;
  const std::vector<std::string> langs = {"en", "de", "fr"};
  for (const auto& a : langs) {
    for (size_t i : v.target_mask(a).allowed()) covered.insert(i);
    for (const auto& b : langs) {
      if (a == b) continue;
      std::vector<size_t> both;
      const auto ma = v.target_mask(a).allowed(), mb = v.target_mask(b).allowed();
      std::set_intersection(ma.begin(), ma.end(), mb.begin(), mb.end(), std::back_inserter(both));
      EXPECT_EQ(both, std::vector<size_t>{kEos});
    }
  }
  for (size_t i = 0; i < v.size(); ++i) EXPECT_EQ(covered.count(i) == 1, !v.is_special(i) || i == kEos) << i;
  EXPECT_THROW(v.target_mask("xx"), LookupError);
}

TEST(TargetMask, RandomGreedyDecodesStayInLanguage) {
  const auto v = three_languages();
  const auto mask = v.target_mask("en");
  Rng rng(9);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<size_t> out;
    for (int step = 0; step < 10; ++step) {
      size_t best = 0;
      double best_score = -1e300;
      for (size_t i = 0; i < v.size(); ++i) {
        const double logit = rng.normal();
        if (mask.allows(i) && logit > best_score) {
          best_score = logit;
          best = i;
        }
      }
      out.push_back(best);
      if (best == kEos) break;
    }
    for (size_t t : out) EXPECT_TRUE(t == kEos || v.tokens()[t].rfind("en@", 0) == 0) << v.tokens()[t];
  }
}

TEST(Extend, AppendOnly) {
  const auto v = three_languages();
  const auto before = v.word_checksum();
  const auto w = v.extend(lang_vocab("nn", 100, 8, 11));
  EXPECT_EQ(w.size(), v.size() + 100);
  for (size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(*w.find(v.tokens()[i]), i);
    EXPECT_EQ(w.embedding().row(static_cast<Eigen::Index>(i)), v.embedding().row(static_cast<Eigen::Index>(i)));
  }
  EXPECT_EQ(v.word_checksum(), before);
  EXPECT_EQ(w.target_mask("nn").size(), 101u);
  EXPECT_THROW(w.extend(lang_vocab("nn", 2, 8, 1)), ConflictError);
  EXPECT_THROW(v.extend(lang_vocab("zz", 2, 4, 1)), ConfigError);
}

TEST(Extend, TargetTagCopiesSourceRow) {
  const auto w = three_languages().extend(lang_vocab("nn", 5, 8, 11));
  EXPECT_FALSE(w.has_tag("nn"));
  const auto t = w.add_target_tag("nn", "en");
  EXPECT_EQ(t.size(), w.size() + 1);
  EXPECT_TRUE(t.is_special(t.tag("nn")));
  EXPECT_EQ(t.embedding().row(static_cast<Eigen::Index>(t.tag("nn"))),
            t.embedding().row(static_cast<Eigen::Index>(t.tag("en"))));
  EXPECT_THROW(t.add_target_tag("nn", "en"), ConflictError);
}

TEST(Serialization, RoundTripPreservesIndices) {
  const auto v = three_languages().extend(lang_vocab("nn", 7, 8, 11)).add_target_tag("nn", "en");
  const auto dir = std::filesystem::temp_directory_path() / "famt_vocab_rt";
  v.save(dir / "vocab.txt", dir / "vocab.famt");
  const auto back = MultiVocab::load(dir / "vocab.txt", dir / "vocab.famt");
  ASSERT_EQ(back.tokens(), v.tokens());
  for (size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(back.is_special(i), v.is_special(i));
    EXPECT_EQ(back.special_slot(i), v.special_slot(i));
  }
  EXPECT_EQ(back.languages(), v.languages());
  EXPECT_EQ(back.tag("nn"), v.tag("nn"));
  EXPECT_EQ(back.word_checksum(), v.word_checksum());
  EXPECT_EQ(back.format(), v.format());
}

TEST(Serialization, RejectsInconsistentHeader) {
  const auto v = three_languages();
  std::string text = v.format();
  text.replace(text.find("en:30"), 5, "en:31");
  EXPECT_THROW(MultiVocab::parse(text, v.embedding()), FormatError);
  EXPECT_THROW(MultiVocab::parse(v.format(), v.embedding().topRows(3)), FormatError);
}

TEST(EncodeDecode, UnknownWordsMapToUnk) {
  const auto v = three_languages();
  size_t unk = 0;
  const auto ids = v.encode({"w1", "nope", "w2"}, "de", &unk);
  EXPECT_EQ(unk, 1u);
  EXPECT_EQ(ids[1], kUnk);
  EXPECT_EQ(v.decode({ids[0], kEos, ids[2]}), (Sentence{"w1", "w2"}));
}
