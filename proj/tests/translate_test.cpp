#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>

#include "famt/error.hpp"
#include "famt/translate.hpp"
#include "toy_model.hpp"

using namespace famt;
using namespace famt::model;
using namespace famt::translate;
using namespace famt::testing;

namespace {

Matrix random_unit_rows(Eigen::Index n, Eigen::Index d, Rng& rng) {
  Matrix m(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    for (Eigen::Index c = 0; c < d; ++c) m(r, c) = rng.normal();
    m.row(r).normalize();
  }
  return m;
}

// Straightforward restatement of the collapse rule used as an oracle.
TokenIds collapse_reference(TokenIds t, int n_max, int threshold) {
  for (;;) {
    TokenIds before = t;
    for (int n = n_max; n >= 1; --n) {
      TokenIds out;
      size_t pos = 0;
      while (pos < t.size()) {
        size_t k = 0;
        while (pos + (k + 1) * n <= t.size()) {
          bool same = true;
          for (int j = 0; j < n; ++j) same = same && t[pos + k * n + j] == t[pos + j];
          if (!same) break;
          ++k;
        }
        if (k >= static_cast<size_t>(threshold)) {
          for (int j = 0; j < n; ++j) out.push_back(t[pos + j]);
          pos += k * n;
        } else {
          out.push_back(t[pos++]);
        }
      }
      t = out;
    }
    if (t == before) return t;
  }
}

struct Trained {
  std::shared_ptr<const vocab::MultiVocab> vocab;
  std::unique_ptr<Transformer> model;
  train::ParallelSet pairs;
};

// aa->bb word shift, trained long enough that decoding is not trivial noise.
Trained& trained_model() {
  static Trained t = [] {
    Trained r;
    r.vocab = toy_vocab(16, 12, 1);
    r.model = std::make_unique<Transformer>(small_config(16, 2), r.vocab, 2);
    r.pairs = toy_pairs(*r.vocab, 64, 12, 3);
    train::TrainConfig tc;
    tc.warmup = 100;
    tc.learning_rate = 0.5;
    tc.batch_tokens = 128;
    tc.eval_every = 1000;
    tc.max_updates = 1500;
    train::train(*r.model, {r.pairs}, {}, tc);
    return r;
  }();
  return t;
}

}  // namespace

TEST(VmfDecode, SelfSimilarityAndMask) {
  Rng rng(1);
  const Matrix rows = random_unit_rows(20, 8, rng);
  std::vector<size_t> all(20);
  for (size_t i = 0; i < 20; ++i) all[i] = i;
  for (size_t i = 0; i < 20; ++i) EXPECT_EQ(vmf_decode_step(rows.row(static_cast<Eigen::Index>(i)), rows, all), i);

  const RowVector y = rows.row(3) * 0.9 + rows.row(7) * 0.3;
  const size_t best = vmf_decode_step(y, rows, all);
  std::vector<size_t> without(all);
  without.erase(std::find(without.begin(), without.end(), best));
  Vector s = rows * y.transpose();
  s(static_cast<Eigen::Index>(best)) = -1e300;
  Eigen::Index runner;
  s.maxCoeff(&runner);
  EXPECT_EQ(vmf_decode_step(y, rows, without), static_cast<size_t>(runner));
  EXPECT_THROW(vmf_decode_step(y, rows, {}), ConfigError);
}

TEST(VmfDecode, MatchesExhaustiveCosineScan) {
  Rng rng(2);
  const Matrix rows = random_unit_rows(500, 16, rng);
  std::vector<size_t> all(500);
  for (size_t i = 0; i < 500; ++i) all[i] = i;
  for (int t = 0; t < 100; ++t) {
    RowVector y(16);
    for (Eigen::Index c = 0; c < 16; ++c) y(c) = rng.normal() * 3.0;
    size_t best = 0;
    double best_cos = -2.0;
    for (size_t i = 0; i < 500; ++i) {
      const double cos = y.dot(rows.row(static_cast<Eigen::Index>(i))) / (y.norm() * rows.row(static_cast<Eigen::Index>(i)).norm());
      if (cos > best_cos) best_cos = cos, best = i;
    }
    EXPECT_EQ(vmf_decode_step(y, rows, all), best);
  }
}

TEST(SuppressRepeats, Examples) {
  EXPECT_EQ(suppress_repeats({1, 2, 1, 2, 1, 2}, 2, 3), (TokenIds{1, 2}));
  EXPECT_EQ(suppress_repeats({1, 2, 3, 1, 2, 3}, 4, 3), (TokenIds{1, 2, 3, 1, 2, 3}));
  EXPECT_EQ(suppress_repeats({5, 5, 5, 5, 6}, 4, 3), (TokenIds{5, 6}));
  EXPECT_EQ(suppress_repeats({5, 5, 6}, 4, 3), (TokenIds{5, 5, 6}));
  EXPECT_EQ(suppress_repeats({}, 4, 3), TokenIds{});
  EXPECT_THROW(suppress_repeats({1}, 0, 3), ConfigError);
  EXPECT_THROW(suppress_repeats({1}, 2, 1), ConfigError);
}

TEST(SuppressRepeats, MatchesReferenceAndIsIdempotent) {
  Rng rng(9);
  for (int t = 0; t < 2000; ++t) {
    TokenIds x(rng.index(24));
    const size_t alphabet = 1 + rng.index(4);
    for (auto& v : x) v = rng.index(alphabet);
    const int n_max = 1 + static_cast<int>(rng.index(4));
    const int thr = 2 + static_cast<int>(rng.index(3));
    const auto once = suppress_repeats(x, n_max, thr);
    EXPECT_EQ(once, collapse_reference(x, n_max, thr));
    EXPECT_EQ(suppress_repeats(once, n_max, thr), once);
  }
}

TEST(Decoding, BeamOneEqualsGreedy) {
  auto& t = trained_model();
  DecodeOptions opt;
  opt.repeats.enabled = false;
  for (size_t i = 0; i < 50; ++i) {
    const auto& src = t.pairs.pairs[i].first;
    const auto g = greedy_decode(*t.model, src, "bb", opt);
    const auto b = beam_search(*t.model, src, "bb", opt);
    EXPECT_EQ(g.tokens, b.tokens) << i;
    EXPECT_NEAR(g.score, b.score, 1e-9) << i;
    EXPECT_EQ(g.finished, b.finished);
  }
}

TEST(Decoding, BatchedGreedyEqualsSingle) {
  auto& t = trained_model();
  std::vector<TokenIds> sources;
  for (size_t i = 0; i < 50; ++i) sources.push_back(t.pairs.pairs[i].first);
  const auto batch = greedy_decode_batch(*t.model, sources, "bb", {}, 16);
  for (size_t i = 0; i < 50; ++i) {
    const auto single = greedy_decode(*t.model, sources[i], "bb");
    EXPECT_EQ(batch[i].tokens, single.tokens) << i;
    EXPECT_NEAR(batch[i].score, single.score, 1e-6) << i;
  }
}

TEST(Decoding, WideBeamScoresAtLeastGreedy) {
  auto& t = trained_model();
  DecodeOptions one, four;
  one.repeats.enabled = four.repeats.enabled = false;
  four.beam_size = 4;
  size_t worse = 0;
  for (size_t i = 0; i < 50; ++i) {
    // Held-out style inputs: reversed training sources.
    TokenIds src(t.pairs.pairs[i].first.rbegin(), t.pairs.pairs[i].first.rend());
    const auto a = beam_search(*t.model, src, "bb", one);
    const auto b = beam_search(*t.model, src, "bb", four);
    if (b.normalized() < a.normalized() - 1e-12) ++worse;
  }
  EXPECT_EQ(worse, 0u);
}

TEST(Decoding, TrainedModelTranslatesTrainingPairs) {
  auto& t = trained_model();
  size_t exact = 0;
  for (size_t i = 0; i < 20; ++i)
    exact += greedy_decode(*t.model, t.pairs.pairs[i].first, "bb").tokens == t.pairs.pairs[i].second;
  EXPECT_GE(exact, 10u);
}

TEST(Decoding, FuzzedDecodesStayInsideMask) {
  for (Head head : {Head::softmax, Head::vmf}) {
    auto v = toy_vocab(8, 15, 4);
    Transformer m(small_config(8, 1, head), v, 11);
    Rng rng(5);
    size_t violations = 0, decodes = 0;
    const std::vector<std::string> langs{"aa", "bb"};
    std::vector<TokenIds> sources;
    std::vector<std::string> targets;
    for (int i = 0; i < 500; ++i) {
      TokenIds s(1 + rng.index(6));
      const auto& r = v->range(langs[rng.index(2)]);
      for (auto& x : s) x = r.begin + rng.index(r.size());
      sources.push_back(s);
      targets.push_back(langs[rng.index(2)]);
    }
    for (const std::string& tgt : langs) {
      std::vector<TokenIds> subset;
      for (size_t i = 0; i < sources.size(); ++i)
        if (targets[i] == tgt) subset.push_back(sources[i]);
      DecodeOptions opt;
      opt.max_length_factor = 3.0;
      const auto mask = v->target_mask(tgt);
      for (const auto& h : greedy_decode_batch(m, subset, tgt, opt)) {
        ++decodes;
        for (auto tok : h.tokens) violations += !mask.allows(tok) || tok == mask.eos;
      }
      opt.beam_size = 3;
      for (size_t i = 0; i < subset.size(); ++i) {
        ++decodes;
        for (auto tok : beam_search(m, subset[i], tgt, opt).tokens) violations += !mask.allows(tok) || tok == mask.eos;
      }
    }
    EXPECT_GE(decodes, 1000u);
    EXPECT_EQ(violations, 0u) << head_name(head);
  }
}

TEST(PlugIn, OnlyVocabularyAndSpecialsChange) {
  auto v = toy_vocab(16, 10, 1);
  Transformer m(small_config(16, 2), v, 3);
  std::map<std::string, Matrix> before;
  for (const auto& p : m.params()) before[p.name] = p.value;

  Rng rng(8);
  std::vector<std::string> words;
  for (int i = 0; i < 30; ++i) words.push_back("n" + std::to_string(i));
  emb::EmbeddingTable table("cc", words, random_unit_rows(30, 16, rng));
  const auto map = align::LinearMap::identity(16, "cc");
  PlugInOptions opt;
  opt.add_target_tag = true;
  opt.init_tag_from = "bb";
  const Corpus corpus{{"n1", "n2", "n3"}, {"n4", "n1"}};
  const auto report = plug_in_language(m, table, map, "cc", corpus, opt);
  EXPECT_EQ(report.layers_checksum_before, report.layers_checksum_after);
  EXPECT_EQ(report.words, 4u);
  for (const auto& p : m.params()) {
    if (p.name == "specials.embedding") continue;
    ASSERT_EQ(p.value.size(), before[p.name].size());
    EXPECT_EQ(std::memcmp(p.value.data(), before[p.name].data(), sizeof(double) * p.value.size()), 0) << p.name;
  }
  const auto& sp = m.param("specials.embedding").value;
  const auto& old_sp = before["specials.embedding"];
  EXPECT_TRUE(sp.topRows(old_sp.rows()) == old_sp);
  EXPECT_TRUE(sp.row(m.vocab().special_slot(m.vocab().tag("cc"))) ==
              sp.row(m.vocab().special_slot(m.vocab().tag("bb"))));

  size_t unk = 0;
  m.vocab().encode({"n4", "n1", "n3"}, "cc", &unk);
  EXPECT_EQ(unk, 0u);
  EXPECT_THROW(plug_in_language(m, table, map, "cc", corpus), ConfigError);
  emb::EmbeddingTable narrow("dd", words, random_unit_rows(30, 8, rng));
  EXPECT_THROW(plug_in_language(m, narrow, align::LinearMap::identity(8, "dd"), "dd"), ConfigError);

  // The new language works on both sides of a translation.
  const auto out = greedy_decode(m, m.vocab().encode({"n1", "n2"}, "cc"), "aa");
  const auto mask = m.vocab().target_mask("aa");
  for (auto tok : out.tokens) EXPECT_TRUE(mask.allows(tok));
  greedy_decode(m, m.vocab().encode({"w1"}, "aa"), "cc");
}

TEST(Translate, SkipsEmptyAndChecksLanguages) {
  auto& t = trained_model();
  TranslationRequest req{"aa", "bb", {{"w1", "w2", "w3"}, {}, {"w4", "zzz"}}, {}};
  const auto out = translate::translate(*t.model, req);
  ASSERT_EQ(out.size(), 3u);
  EXPECT_FALSE(out[0].skipped);
  EXPECT_TRUE(out[1].skipped);
  EXPECT_EQ(out[2].unknown, 1u);
  for (const auto& w : out[0].words) EXPECT_EQ(w.front(), 'w');
  req.target_language = "zz";
  EXPECT_THROW(translate::translate(*t.model, req), ConfigError);
}
