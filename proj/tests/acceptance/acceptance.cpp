// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any fails. Pass criterion numbers to run a subset.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "../toy_model.hpp"
#include "famt/alignment.hpp"
#include "famt/autograd.hpp"
#include "famt/config.hpp"
#include "famt/hash.hpp"
#include "famt/metrics.hpp"
#include "famt/text.hpp"
#include "famt/translate.hpp"
#include "famt/workspace.hpp"

using namespace famt;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

std::string sci(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2e", x);
  return buf;
}

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double x, int prec = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << x;
  return os.str();
}

struct Result {
  bool pass = false;
  std::string detail;
};

Matrix randn(Eigen::Index r, Eigen::Index c, Rng& rng, double s = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = s * rng.normal();
  return m;
}

// SHA-256 of float32 bytes, computed here rather than through the library's checksums.
std::string float_hash(const Matrix& m) {
  std::string bytes;
  bytes.reserve(static_cast<size_t>(m.size()) * 4);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      const float f = static_cast<float>(m(r, c));
      char b[4];
      std::memcpy(b, &f, 4);
      bytes.append(b, 4);
    }
  return sha256_hex(bytes);
}

std::string group_hash(const model::Transformer& m, const std::set<std::string>& groups) {
  std::string all;
  for (const auto& p : m.params())
    if (groups.count(p.group)) all += p.name + ":" + float_hash(p.value) + "\n";
  return sha256_hex(all);
}

const std::set<std::string> kLayerGroups = {model::kEncoder, model::kDecoder, model::kCrossAttention,
                                            model::kOutputHead};

// ---- 1. alignment recovery ----

Result alignment_recovery() {
  const Eigen::Index n = 500, d = 32;
  auto names = [&](const char* p) {
    std::vector<std::string> w;
    for (Eigen::Index i = 0; i < n; ++i) w.push_back(p + std::to_string(i));
    return w;
  };
  align::BilingualDictionary dict{"src", "tgt", {}};
  for (Eigen::Index i = 0; i < n; ++i) dict.pairs.emplace_back("s" + std::to_string(i), "t" + std::to_string(i));

  bool ok = true;
  std::ostringstream det;
  double worst_time = 0.0, worst_clean = 1.0, worst_rot = 0.0;
  int refine_wins = 0;
  for (uint64_t seed : {1, 2, 3}) {
    Rng rng(seed);
    Matrix X = align::normalized_rows(randn(n, d, rng));
    const Matrix Q = Eigen::HouseholderQR<Matrix>(randn(d, d, rng)).householderQ();
    const Matrix Y = X * Q.transpose();
    emb::EmbeddingTable src("src", names("s"), X), tgt("tgt", names("t"), Y);

    const auto t0 = Clock::now();
    const auto [A, B] = align::dictionary_rows(dict, src, tgt);
    const auto map = align::procrustes(A, B);
    const double p = align::eval_p_at_1(map, src, tgt, dict, {}).accuracy;
    const double secs = since(t0);
    worst_time = std::max(worst_time, secs);
    worst_clean = std::min(worst_clean, p);
    worst_rot = std::max(worst_rot, (map.matrix - Q).cwiseAbs().maxCoeff());
    ok = ok && p >= 0.99 && secs < 5.0;

    // Noisy copy: Procrustes first, then RCSLS from there.
    const Matrix Yn = Y + randn(n, d, rng, 0.05);
    emb::EmbeddingTable noisy("tgt", names("t"), Yn);
    const auto [An, Bn] = align::dictionary_rows(dict, src, noisy);
    const auto init = align::procrustes(An, Bn);
    const double p0 = align::eval_p_at_1(init, src, noisy, dict, {}).accuracy;
    const double p1 = align::eval_p_at_1(align::rcsls_refine(init, dict, src, noisy, {}).map, src, noisy, dict, {}).accuracy;
    refine_wins += p1 >= p0;
    det << " seed" << seed << " noisy " << fmt(p0) << "->" << fmt(p1) << ";";
  }
  ok = ok && refine_wins == 3;
  return {ok, "clean P@1 min " + fmt(worst_clean) + " (|W-Q|max " + fmt(worst_rot, 9) + ", " + fmt(worst_time, 2) +
                  " s max);" + det.str() + " RCSLS>=Procrustes " + std::to_string(refine_wins) + "/3"};
}

// ---- 2. frozen embeddings ----

Result frozen_embeddings() {
  bool ok = true;
  std::ostringstream det;
  for (auto head : {model::Head::softmax, model::Head::vmf}) {
    auto v = testing::toy_vocab(16, 20, 1);
    model::Transformer m(testing::small_config(16, 1, head), v, 2);
    const auto set = testing::toy_pairs(*v, 64, 20, 3);
    const std::string rows_before = float_hash(m.vocab().embedding());
    const std::string group_before = m.group_checksum(model::kFrozenEmbeddings);
    const std::string layers_before = group_hash(m, kLayerGroups);
    auto cfg = train::TrainConfig::for_head(head);
    cfg.max_updates = 1000;
    cfg.batch_tokens = 128;
    cfg.warmup = 100;
    cfg.eval_every = 1000;
    const auto r = train::train(m, {set}, {}, cfg);
    const bool same = float_hash(m.vocab().embedding()) == rows_before &&
                      m.group_checksum(model::kFrozenEmbeddings) == group_before;
    const bool trained = group_hash(m, kLayerGroups) != layers_before;
    ok = ok && same && trained && r.updates >= 1000;
    det << model::head_name(head) << ": " << r.updates << " updates, word rows " << (same ? "unchanged" : "CHANGED")
        << (trained ? "" : " (layers did not train)") << "; ";
  }
  return {ok, det.str()};
}

// ---- 3. gradients ----

using Builder = std::function<ad::Id(ad::Graph&, std::vector<ad::Id>&)>;

double max_rel_error(std::vector<ad::Param>& params, const Builder& build, int coords, uint64_t seed, double h) {
  auto eval = [&](bool backward) {
    ad::Graph g;
    std::vector<ad::Id> ids;
    for (auto& p : params) ids.push_back(g.param(p));
    const ad::Id out = build(g, ids);
    if (backward) g.backward(out);
    return g.value(out)(0, 0);
  };
  for (auto& p : params) p.zero_grad();
  eval(true);
  Rng rng(seed);
  double worst = 0.0;
  for (int c = 0; c < coords; ++c) {
    auto& p = params[rng.index(params.size())];
    const auto i = static_cast<Eigen::Index>(rng.index(static_cast<size_t>(p.value.size())));
    const double saved = p.value.data()[i];
    p.value.data()[i] = saved + h;
    const double up = eval(false);
    p.value.data()[i] = saved - h;
    const double down = eval(false);
    p.value.data()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double an = p.grad.size() ? p.grad.data()[i] : 0.0;
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
  }
  return worst;
}

double model_rel_error(model::Head head, int coords, uint64_t seed) {
  auto v = testing::toy_vocab(16, 12, seed);
  auto cfg = testing::small_config(16, 2, head);
  model::Transformer m(cfg, v, seed + 1);
  const auto set = testing::toy_pairs(*v, 6, 12, seed + 2);
  const auto batch = model::make_batch(*v, "aa", "bb", set.pairs);
  train::zero_grads(m);
  m.forward_backward(batch, nullptr, 0.1, 0.2);
  Rng rng(seed + 3);
  auto& params = m.params();
  const double h = 1e-4;
  double worst = 0.0;
  for (int c = 0; c < coords;) {
    auto& p = params[rng.index(params.size())];
    if (!p.trainable || p.grad.size() == 0) continue;
    const auto i = static_cast<Eigen::Index>(rng.index(static_cast<size_t>(p.value.size())));
    const double saved = p.value.data()[i];
    p.value.data()[i] = saved + h;
    const double up = m.evaluate(batch, 0.1, 0.2).loss;
    p.value.data()[i] = saved - h;
    const double down = m.evaluate(batch, 0.1, 0.2).loss;
    p.value.data()[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double an = p.grad.data()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-6}));
    ++c;
  }
  return worst;
}

Result gradients() {
  const auto t0 = Clock::now();
  Rng rng(7);
  auto make = [](const std::string& name, Matrix v) { return ad::Param{name, "test", std::move(v), Matrix(), true}; };

  const Matrix words = align::normalized_rows(randn(40, 16, rng));
  std::vector<int> slots(40, -1);
  for (int s = 0; s < 6; ++s) slots[static_cast<size_t>(s)] = s;
  std::vector<ad::Param> sm{make("specials", randn(6, 16, rng, 0.5)), make("h", randn(8, 16, rng))};
  const ad::TiedSoftmax head{&words, 10, 40, 2, 0.1};
  const double softmax_err = max_rel_error(
      sm,
      [&](ad::Graph& g, std::vector<ad::Id>& id) {
        return ad::tied_softmax_loss(g, id[1], id[0], head, {3, 29, -1, 0, 30, 12, 7, 1});
      },
      40, 11, 1e-5);

  std::vector<ad::Param> vm{make("y", randn(8, 16, rng, 2.0))};
  const Matrix targets = align::normalized_rows(randn(8, 16, rng));
  const double vmf_err = max_rel_error(
      vm, [&](ad::Graph& g, std::vector<ad::Id>& id) { return ad::vmf_loss(g, id[0], targets, {1, 1, 0, 1, 1, 1, 1, 1}, 0.2); },
      40, 12, 1e-5);

  const double model_sm = model_rel_error(model::Head::softmax, 30, 21);
  const double model_vmf = model_rel_error(model::Head::vmf, 30, 31);
  const double secs = since(t0);
  const bool ok = softmax_err < 1e-4 && vmf_err < 1e-4 && model_sm < 1e-3 && model_vmf < 1e-3 && secs < 60.0;
  return {ok, "max rel. error: softmax loss " + sci(softmax_err) + ", vMF loss " + sci(vmf_err) +
                  " (40 coords each); 2-layer d16 model softmax " + sci(model_sm) + ", vMF " + sci(model_vmf) +
                  " (30 coords each)"};
}

// ---- 4. overfit ----

Result overfit() {
  const auto t0 = Clock::now();
  synth::GrammarSpec spec;
  spec.seed = 3;
  spec.sentence_count = 2000;
  spec.vocab_size = 120;
  spec.min_frequency = 1;
  const auto lex = synth::base_lexicon(spec);
  const auto fam = synth::make_family(spec, {synth::make_derivation("pv", lex, synth::Relatedness::identity, 1),
                                             synth::make_derivation("xa", lex, synth::Relatedness::distant, 2)});
  const std::vector<size_t> idx(fam.splits.train.begin(), fam.splits.train.begin() + 64);
  const auto pairs = fam.parallel("xa", "pv", idx);
  Rng rng(5);
  std::vector<vocab::LanguageVocab> langs;
  for (const std::string l : {"xa", "pv"}) {
    std::set<std::string> types;
    for (const auto& [s, t] : pairs)
      for (const auto& w : l == "xa" ? s : t) types.insert(w);
    vocab::LanguageVocab lv;
    lv.language = l;
    lv.words.assign(types.begin(), types.end());
    lv.rows = align::normalized_rows(randn(static_cast<Eigen::Index>(lv.words.size()), 32, rng));
    langs.push_back(lv);
  }
  auto v = std::make_shared<const vocab::MultiVocab>(vocab::MultiVocab::merge(langs));
  model::TransformerConfig mc;
  mc.layers = 2;
  mc.d_model = 32;
  mc.ff_dim = 64;
  mc.heads = 4;
  mc.dropout = 0.0;
  model::Transformer m(mc, v, 1);
  const auto set = train::encode_pairs(*v, "xa", "pv", pairs);
  train::TrainConfig tc;
  tc.warmup = 200;
  tc.learning_rate = 1.0;
  tc.batch_tokens = 512;
  tc.max_updates = 2000;
  tc.eval_every = 2000;
  const auto r = train::train(m, {set}, {}, tc);
  const auto ev = train::evaluate(m, {set}, tc);
  const double secs = since(t0);
  const bool ok = set.pairs.size() == 64 && ev.accuracy >= 0.99 && r.updates <= 2000 && secs < 300.0;
  return {ok, std::to_string(set.pairs.size()) + " pairs, " + std::to_string(r.updates) + " updates, token accuracy " +
                  fmt(ev.accuracy, 4) + ", " + fmt(secs, 1) + " s"};
}

// ---- 7. vMF throughput ----

Result throughput() {
  const size_t small = 1000, big = 8000;
  const int warmup = 20, steps = 200;
  std::ostringstream det;
  std::map<model::Head, double> ratio;
  for (auto head : {model::Head::softmax, model::Head::vmf}) {
    struct Run {
      std::shared_ptr<const vocab::MultiVocab> v;
      std::unique_ptr<model::Transformer> m;
      model::Batch batch;
      std::unique_ptr<train::OptimizerState> opt;
      double total = 0.0;
    };
    std::vector<Run> runs;
    for (size_t words : {small, big}) {
      Run r;
      r.v = testing::toy_vocab(32, words, 9);
      r.m = std::make_unique<model::Transformer>(testing::small_config(32, 2, head), r.v, 10);
      // Same word ids (all below `small`) in both vocabularies: identical batches.
      const auto set = testing::toy_pairs(*r.v, 32, small, 11);
      r.batch = model::make_batch(*r.v, "aa", "bb", set.pairs);
      r.opt = std::make_unique<train::OptimizerState>(train::TrainConfig::for_head(head));
      runs.push_back(std::move(r));
    }
    // Interleaved so background load hits both sizes alike.
    for (int s = 0; s < warmup + steps; ++s)
      for (auto& r : runs) {
        const auto t0 = Clock::now();
        train::zero_grads(*r.m);
        r.m->forward_backward(r.batch, nullptr, 0.1, 0.2);
        r.opt->apply(*r.m, 1e-4);
        if (s >= warmup) r.total += since(t0);
      }
    const double a = runs[0].total / steps * 1e3, b = runs[1].total / steps * 1e3;
    ratio[head] = b / a;
    det << model::head_name(head) << " " << fmt(a, 2) << " -> " << fmt(b, 2) << " ms/step (x" << fmt(b / a, 2) << "); ";
  }
  const bool ok = ratio[model::Head::softmax] > 1.5 && std::abs(ratio[model::Head::vmf] - 1.0) < 0.25;
  det << "vocab " << small << " -> " << big << " target words, " << steps << " timed steps after " << warmup;
  return {ok, det.str()};
}

// ---- 8. metrics ----

Result metric_fidelity() {
  const fs::path data = FAMT_TEST_DATA;
  const auto hyps = read_lines(data / "metrics_hyp.txt"), refs = read_lines(data / "metrics_ref.txt");
  // Reference scorer output for the fixture under the two signatures.
  const double ref_chrf = 67.67191344673417, ref_bleu = 62.79872900881592;
  const auto c = metrics::chrf_pp(hyps, refs);
  const auto b = metrics::bleu(hyps, refs);
  const bool sig = c.signature == "nrefs:1|case:mixed|eff:yes|nc:6|nw:2|space:no" &&
                   b.signature == "nrefs:1|case:mixed|eff:no|tok:13a|smooth:exp";
  const bool ok = hyps.size() == 20 && std::abs(c.score - ref_chrf) <= 0.1 && std::abs(b.score - ref_bleu) <= 0.1 && sig;
  return {ok, "chrF++ " + fmt(c.score, 6) + " vs " + fmt(ref_chrf, 6) + ", BLEU " + fmt(b.score, 6) + " vs " +
                  fmt(ref_bleu, 6) + (sig ? "" : ", signature mismatch")};
}

// ---- 9. mask soundness ----

Result mask_soundness() {
  size_t decodes = 0, violations = 0, tokens = 0;
  for (auto head : {model::Head::softmax, model::Head::vmf})
    for (bool trained : {false, true}) {
      auto v = testing::toy_vocab(16, 30, 40 + static_cast<uint64_t>(head));
      model::Transformer m(testing::small_config(16, 1, head), v, 41);
      if (trained) {
        auto cfg = train::TrainConfig::for_head(head);
        cfg.max_updates = 150;
        cfg.warmup = 50;
        cfg.eval_every = 1000;
        cfg.batch_tokens = 256;
        train::train(m, {testing::toy_pairs(*v, 60, 30, 42)}, {}, cfg);
      }
      Rng rng(43 + static_cast<uint64_t>(head) * 2 + trained);
      auto check = [&](const translate::Hypothesis& hyp, const std::string& tgt, size_t src_words, double factor) {
        ++decodes;
        bool bad = hyp.tokens.size() > translate::max_target_length(src_words, factor);
        for (size_t t : hyp.tokens) {
          ++tokens;
          const auto& rendered = m.vocab().tokens().at(t);
          if (m.vocab().is_special(t) || rendered.find('@') == std::string::npos ||
              vocab::PrefixedToken::parse(rendered).language != tgt)
            bad = true;
        }
        violations += bad;
      };
      for (int round = 0; round < 20; ++round) {
        const std::string src = rng.index(2) ? "aa" : "bb";
        const std::string tgt = rng.index(2) ? "aa" : "bb";
        translate::DecodeOptions opts;
        opts.beam_size = 1 + static_cast<int>(rng.index(4));
        opts.max_length_factor = 0.5 + 2.5 * rng.uniform();
        opts.repeats.enabled = rng.index(2);
        Corpus sentences;
        for (int i = 0; i < 13; ++i) {
          Sentence s(1 + rng.index(9));
          for (auto& w : s) w = rng.index(10) ? "w" + std::to_string(rng.index(30)) : "zz" + std::to_string(rng.index(5));
          sentences.push_back(s);
        }
        const auto out = translate::translate(m, {src, tgt, sentences, opts});
        for (size_t i = 0; i < out.size(); ++i) check(out[i].hypothesis, tgt, sentences[i].size(), opts.max_length_factor);
      }
    }
  const bool ok = decodes >= 1000 && violations == 0;
  return {ok, std::to_string(decodes) + " decodes, " + std::to_string(tokens) + " tokens, " + std::to_string(violations) +
                  " violations"};
}

// ---- 5, 6, 10. synthetic family ----

synth::ParallelCorpus read_parallel(const fs::path& src, const fs::path& tgt) {
  const auto s = read_corpus(src), t = read_corpus(tgt);
  synth::ParallelCorpus out;
  for (size_t i = 0; i < s.size() && i < t.size(); ++i) out.emplace_back(s[i], t[i]);
  return out;
}

struct SeedRun {
  uint64_t seed = 0;
  fs::path root;
  double base_seconds = 0.0;  // synth through base training
  double zero_shot = 0.0;
  double control = 0.0;
  bool layers_identical = false;
  double zs_seconds = 0.0;  // base stage plus both plug-ins
  std::optional<workspace::BacktranslateSummary> bt;
  double bt_seconds = 0.0;
  std::vector<std::string> freeze_problems;
};

fs::path scratch_root() {
  static const fs::path root = fs::temp_directory_path() / ("famt_acceptance_" + std::to_string(::getpid()));
  return root;
}

std::map<uint64_t, SeedRun> g_runs;

SeedRun& run_zero_shot(uint64_t seed) {
  auto it = g_runs.find(seed);
  if (it != g_runs.end()) return it->second;
  SeedRun run;
  run.seed = seed;
  run.root = scratch_root() / ("seed-" + std::to_string(seed));
  fs::remove_all(run.root);
  auto cfg = config::default_config();
  cfg.reseed(seed);
  workspace::Workspace ws(run.root, cfg);

  const auto t0 = Clock::now();
  ws.synth();
  for (const auto& l : cfg.languages()) ws.embed(l);
  ws.align(cfg.base_languages());
  ws.align({"xn"});
  ws.build_vocab();
  ws.train_base();
  run.base_seconds = since(t0);

  const auto base = model::Transformer::load(ws.base_checkpoint());
  const auto table = emb::load_vectors(ws.vectors_path("xn"), "xn");
  const auto bank = emb::load_bank(ws.bank_path("xn"));
  const auto hub = align::HubAlignment::load(ws.hub_path("xn"));
  const auto mono = read_corpus(ws.data_dir() / "xn.mono.txt");
  const auto test = read_parallel(ws.data_dir() / "xn-pv.test.src.txt", ws.data_dir() / "xn-pv.test.tgt.txt");
  Corpus sources;
  std::vector<std::string> refs;
  for (const auto& [s, t] : test) {
    sources.push_back(s);
    refs.push_back(join(t));
  }
  translate::PlugInOptions opts;
  opts.bank = &bank;
  const std::string layers = group_hash(base, kLayerGroups);
  bool identical = true;
  auto score_with = [&](const emb::EmbeddingTable& t) {
    model::Transformer m = base;
    translate::plug_in_language(m, t, hub.map_for("xn"), "xn", mono, opts);
    identical = identical && group_hash(m, kLayerGroups) == layers;
    std::vector<std::string> hyps;
    for (const auto& tr : translate::translate(m, {"xn", "pv", sources, {}})) hyps.push_back(join(tr.words));
    return metrics::chrf_pp(hyps, refs).score;
  };
  run.zero_shot = score_with(table);
  // Control: the same rows handed to a random permutation of the words.
  std::vector<size_t> perm(table.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(derive_seed(seed, 99));
  rng.shuffle(perm);
  Matrix rows(table.matrix().rows(), table.matrix().cols());
  for (size_t i = 0; i < perm.size(); ++i)
    rows.row(static_cast<Eigen::Index>(i)) = table.matrix().row(static_cast<Eigen::Index>(perm[i]));
  run.control = score_with(emb::EmbeddingTable("xn", table.words(), rows));
  run.layers_identical = identical;
  run.zs_seconds = since(t0);
  return g_runs.emplace(seed, std::move(run)).first->second;
}

SeedRun& run_backtranslation(uint64_t seed) {
  SeedRun& run = run_zero_shot(seed);
  if (run.bt) return run;
  auto cfg = config::default_config();
  cfg.reseed(seed);
  workspace::Workspace ws(run.root, cfg);
  const auto t0 = Clock::now();
  translate::PlugInOptions opts;
  opts.add_target_tag = true;
  ws.extend("xn", opts);
  run.bt = ws.backtranslate();
  run.bt_seconds = since(t0);

  // Parity freezing checked from the saved checkpoints with our own hashes.
  std::vector<model::Transformer> chain;
  chain.push_back(model::Transformer::load(ws.extended_checkpoint("xn")));
  for (int k = 1; k <= cfg.backtranslate.iterations; ++k)
    chain.push_back(model::Transformer::load(run.root / "bt" / ("iter-" + std::to_string(k) + ".ckpt")));
  for (int k = 1; k < static_cast<int>(chain.size()); ++k) {
    const std::string frozen = k % 2 == 1 ? model::kEncoder : model::kDecoder;
    const std::string other = k % 2 == 1 ? model::kDecoder : model::kEncoder;
    const auto& before = chain[static_cast<size_t>(k - 1)];
    const auto& after = chain[static_cast<size_t>(k)];
    if (group_hash(before, {frozen}) != group_hash(after, {frozen}))
      run.freeze_problems.push_back("iteration " + std::to_string(k) + " changed the " + frozen);
    if (group_hash(before, {other}) == group_hash(after, {other}))
      run.freeze_problems.push_back("iteration " + std::to_string(k) + " left the " + other + " untouched");
    if (float_hash(before.vocab().embedding()) != float_hash(after.vocab().embedding()))
      run.freeze_problems.push_back("iteration " + std::to_string(k) + " changed word rows");
  }
  for (const auto& it : run.bt->iterations)
    if (it.frozen_checksum_before != it.frozen_checksum_after || it.aborted)
      run.freeze_problems.push_back("iteration " + std::to_string(it.iteration) + " reported a freeze failure");
  return run;
}

double row_score(const std::vector<pipeline::MetricRow>& rows, int iteration, const std::string& dir,
                 const std::string& set) {
  for (const auto& r : rows)
    if (r.iteration == iteration && r.direction == dir && r.test_set == set) return r.chrfpp;
  throw Error("no metric row for iteration " + std::to_string(iteration) + " " + dir + " " + set);
}

Result zero_shot() {
  bool ok = true;
  std::ostringstream det;
  for (uint64_t seed : {1, 2, 3}) {
    const auto& r = run_zero_shot(seed);
    const double gap = r.zero_shot - r.control;
    ok = ok && gap >= 15.0 && r.layers_identical && r.zs_seconds < 1800.0;
    det << "seed" << seed << " zero-shot " << fmt(r.zero_shot, 1) << " vs control " << fmt(r.control, 1) << " (+"
        << fmt(gap, 1) << "), layers " << (r.layers_identical ? "identical" : "CHANGED") << ", " << fmt(r.zs_seconds, 0)
        << " s; ";
  }
  det << "xn->pv test chrF++";
  return {ok, det.str()};
}

Result back_translation() {
  bool ok = true;
  std::ostringstream det;
  for (uint64_t seed : {1, 2, 3}) {
    const auto& r = run_backtranslation(seed);
    const double before = row_score(r.bt->baseline, 0, "xn-pv", "dev");
    const double after = row_score(r.bt->table, 2, "xn-pv", "dev");
    const double total = r.base_seconds + r.bt_seconds;
    ok = ok && after - before >= 5.0 && r.freeze_problems.empty() && total < 2700.0;
    det << "seed" << seed << " " << fmt(before, 1) << " -> " << fmt(row_score(r.bt->table, 1, "xn-pv", "dev"), 1)
        << " -> " << fmt(after, 1) << " (+" << fmt(after - before, 1) << "), "
        << (r.freeze_problems.empty() ? "parity freezing held" : r.freeze_problems.front()) << ", " << fmt(total, 0)
        << " s; ";
  }
  det << "xn->pv dev chrF++";
  return {ok, det.str()};
}

Result stage_isolation() {
  const auto& r = run_backtranslation(1);
  const fs::path root = r.root;
  auto base = pipeline::StageManifest::load(root / "manifests" / "base.json");
  const auto ext = pipeline::StageManifest::load(root / "manifests" / "extension.json");
  const auto clean = pipeline::verify_stage_isolation(base, ext);

  // Leak a new-language file into the base stage, then a renamed copy of one.
  auto leak = [&](const fs::path& file) {
    auto b = base;
    const std::string rel = fs::relative(file, root).generic_string();
    b.files.push_back({rel, sha256_file(file), pipeline::languages_in_name(rel, b.languages)});
    return pipeline::verify_stage_isolation(b, ext);
  };
  const auto leaked = leak(root / "data" / "xn.mono.txt");
  const fs::path disguised = root / "data" / "extra-corpus.txt";
  fs::copy_file(root / "data" / "xn.mono.txt", disguised, fs::copy_options::overwrite_existing);
  const auto renamed = leak(disguised);
  fs::remove(disguised);

  const bool ok = clean.violations.empty() && leaked.violations.size() == 1 &&
                  leaked.violations[0].file == "data/xn.mono.txt" && renamed.violations.size() == 1 &&
                  renamed.violations[0].file == "data/extra-corpus.txt";
  std::ostringstream det;
  det << "clean run " << clean.violations.size() << " violations (" << base.files.size() << " base, " << ext.files.size()
      << " extension inputs); leaked file " << leaked.violations.size() << " ["
      << (leaked.violations.empty() ? "" : leaked.violations[0].file) << "]; renamed copy " << renamed.violations.size()
      << " [" << (renamed.violations.empty() ? "" : renamed.violations[0].file) << "]";
  return {ok, det.str()};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<int, std::pair<std::string, std::function<Result()>>>> criteria = {
      {1, {"alignment recovery", alignment_recovery}},
      {2, {"freezing integrity", frozen_embeddings}},
      {3, {"gradient correctness", gradients}},
      {4, {"overfit sanity", overfit}},
      {7, {"vMF throughput", throughput}},
      {8, {"metric fidelity", metric_fidelity}},
      {9, {"mask soundness", mask_soundness}},
      {5, {"zero-shot plug-in", zero_shot}},
      {6, {"back-translation gains", back_translation}},
      {10, {"stage isolation", stage_isolation}},
  };
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  std::map<int, std::string> lines;
  int failures = 0;
  for (const auto& [id, c] : criteria) {
    if (!wanted.empty() && !wanted.count(id)) continue;
    const auto t0 = Clock::now();
    Result r;
    try {
      r = c.second();
    } catch (const std::exception& e) {
      r = {false, std::string("exception: ") + e.what()};
    }
    char head[96];
    std::snprintf(head, sizeof head, "%s %2d %-24s", r.pass ? "PASS" : "FAIL", id, c.first.c_str());
    lines[id] = std::string(head) + " " + r.detail + " [" + fmt(since(t0), 1) + " s]";
    std::cout << lines[id] << std::endl;
    failures += !r.pass;
  }
  std::cout << "\nsummary\n";
  for (const auto& [id, line] : lines) std::cout << line << "\n";
  std::error_code ec;
  fs::remove_all(scratch_root(), ec);
  return failures == 0 ? 0 : 1;
}
