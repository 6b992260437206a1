#include "famt/translate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <numeric>

#include "famt/error.hpp"

namespace famt::translate {

using model::TokenIds;

namespace {

const std::set<std::string> kNonLayerGroups = {model::kFrozenEmbeddings, model::kSpecials};

size_t column_token(const vocab::LanguageMask& mask, Eigen::Index col) {
  const auto n = static_cast<Eigen::Index>(mask.end - mask.begin);
  return col == n ? mask.eos : mask.begin + static_cast<size_t>(col);
}

Eigen::Index argmax(const RowVector& r) {
  Eigen::Index best = 0;
  for (Eigen::Index c = 1; c < r.size(); ++c)
    if (r(c) > r(best)) best = c;
  return best;
}

// One collapse pass per n, largest n first.
TokenIds collapse_once(const TokenIds& in, int n_max, int threshold) {
  TokenIds cur = in;
  for (int n = n_max; n >= 1; --n) {
    const size_t w = static_cast<size_t>(n);
    TokenIds out;
    size_t i = 0;
    while (i < cur.size()) {
      size_t reps = 1;
      if (i + w <= cur.size())
        while (i + (reps + 1) * w <= cur.size() &&
               std::equal(cur.begin() + i, cur.begin() + i + w, cur.begin() + i + reps * w))
          ++reps;
      if (i + w <= cur.size() && reps >= static_cast<size_t>(threshold)) {
        out.insert(out.end(), cur.begin() + i, cur.begin() + i + w);
        i += reps * w;
      } else {
        out.push_back(cur[i++]);
      }
    }
    cur = std::move(out);
  }
  return cur;
}

Hypothesis finish(Hypothesis h, const DecodeOptions& options) {
  if (options.repeats.enabled) h.tokens = suppress_repeats(h.tokens, options.repeats.n_max, options.repeats.threshold);
  return h;
}

}  // namespace

PlugInReport plug_in_language(model::Transformer& model, const emb::EmbeddingTable& table, const align::LinearMap& map,
                              const std::string& language, const Corpus& corpus, const PlugInOptions& options) {
  const auto& current = model.vocab();
  vocab::validate_language_id(language);
  if (current.has_language(language)) throw ConfigError("language '" + language + "' is already in the vocabulary");
  if (table.dim() != map.matrix.cols() || map.matrix.rows() != current.dim())
    throw ConfigError("plug-in dimension mismatch: table " + std::to_string(table.dim()) + ", map " +
                      std::to_string(map.matrix.rows()) + "x" + std::to_string(map.matrix.cols()) + ", model " +
                      std::to_string(current.dim()));
  if (options.add_target_tag && !current.has_tag(options.init_tag_from))
    throw ConfigError("no target tag to initialise from: '" + options.init_tag_from + "'");

  PlugInReport report;
  report.layers_checksum_before = model.checksum_excluding(kNonLayerGroups);

  // Build in the table's own space so n-gram composed rows get mapped too.
  vocab::LanguageVocab lv;
  if (corpus.empty()) {
    lv.language = language;
    lv.words = table.words();
    lv.rows = table.matrix();
    lv.counts.assign(lv.words.size(), 0);
  } else {
    lv = vocab::build_from_corpus(table, corpus, language, options.bank);
  }
  lv.rows = map.apply(lv.rows, options.renormalize);
  auto extended = std::make_shared<vocab::MultiVocab>(current.extend(lv));
  if (options.add_target_tag)
    extended = std::make_shared<vocab::MultiVocab>(extended->add_target_tag(language, options.init_tag_from));
  model.replace_vocab(extended, options.init_tag_from);

  report.words = lv.words.size();
  report.composed = lv.composed.size();
  report.hard_oov = lv.hard_oov.size();
  report.layers_checksum_after = model.checksum_excluding(kNonLayerGroups);
  if (report.layers_checksum_after != report.layers_checksum_before)
    throw Error("plug-in modified Transformer layer tensors");
  return report;
}

size_t max_target_length(size_t source_words, double factor) {
  return static_cast<size_t>(std::ceil(factor * static_cast<double>(source_words))) + 1;
}

size_t vmf_decode_step(const RowVector& y, const Matrix& rows, const std::vector<size_t>& allowed) {
  if (allowed.empty()) throw ConfigError("empty target mask");
  size_t best = allowed.front();
  double best_score = -std::numeric_limits<double>::infinity();
  for (size_t t : allowed) {
    if (t >= static_cast<size_t>(rows.rows())) throw InputError("mask index " + std::to_string(t) + " out of range");
    const double s = y.dot(rows.row(static_cast<Eigen::Index>(t)));
    if (s > best_score) best_score = s, best = t;
  }
  return best;
}

TokenIds suppress_repeats(const TokenIds& tokens, int n_max, int threshold) {
  if (n_max < 1 || threshold < 2) throw ConfigError("suppress_repeats needs n_max >= 1 and threshold >= 2");
  // Iterate to a fixed point so that the rule is idempotent.
  TokenIds cur = tokens;
  for (;;) {
    TokenIds next = collapse_once(cur, n_max, threshold);
    if (next == cur) return cur;
    cur = std::move(next);
  }
}

Hypothesis greedy_decode(const model::Transformer& model, const TokenIds& source, const std::string& target_language,
                         const DecodeOptions& options) {
  const auto& v = model.vocab();
  const auto mask = v.target_mask(target_language);
  const bool vmf = model.config().head == model::Head::vmf;
  const Matrix states = model.encode(source);
  const Matrix rows = vmf ? model.target_rows(mask) : Matrix();
  std::vector<size_t> columns(mask.size());
  std::iota(columns.begin(), columns.end(), size_t{0});
  const size_t cap = max_target_length(source.size(), options.max_length_factor);

  Hypothesis h;
  TokenIds prefix{v.tag(target_language)};
  while (h.steps < cap) {
    const Matrix out = model.last_outputs(states, {prefix});
    const RowVector scores = model.step_scores(out, mask, options.lambda_vmf).row(0);
    const auto col = vmf ? static_cast<Eigen::Index>(vmf_decode_step(out.row(0), rows, columns)) : argmax(scores);
    h.score += scores(col);
    ++h.steps;
    const size_t tok = column_token(mask, col);
    if (tok == mask.eos) {
      h.finished = true;
      break;
    }
    h.tokens.push_back(tok);
    prefix.push_back(tok);
  }
  return finish(std::move(h), options);
}

Hypothesis beam_search(const model::Transformer& model, const TokenIds& source, const std::string& target_language,
                       const DecodeOptions& options) {
  if (options.beam_size < 1) throw ConfigError("beam_size must be >= 1");
  const auto& v = model.vocab();
  const auto mask = v.target_mask(target_language);
  const Matrix states = model.encode(source);
  const size_t beam = static_cast<size_t>(options.beam_size);
  const size_t cap = max_target_length(source.size(), options.max_length_factor);

  struct Live {
    TokenIds prefix;
    double score;
  };
  std::vector<Live> alive{{{v.tag(target_language)}, 0.0}};
  std::vector<Hypothesis> finished;
  // No early exit on a full finished list: a longer live hypothesis can still
  // win after length normalization.
  for (size_t step = 1; step <= cap && !alive.empty(); ++step) {
    std::vector<TokenIds> prefixes;
    for (const auto& a : alive) prefixes.push_back(a.prefix);
    const Matrix scores = model.step_scores(model.last_outputs(states, prefixes), mask, options.lambda_vmf);

    struct Cand {
      double score;
      size_t from;
      Eigen::Index col;
    };
    std::vector<Cand> cands;
    cands.reserve(alive.size() * static_cast<size_t>(scores.cols()));
    for (size_t i = 0; i < alive.size(); ++i)
      for (Eigen::Index c = 0; c < scores.cols(); ++c)
        cands.push_back({alive[i].score + scores(static_cast<Eigen::Index>(i), c), i, c});
    const size_t keep = std::min(cands.size(), 2 * beam);
    std::partial_sort(cands.begin(), cands.begin() + static_cast<std::ptrdiff_t>(keep), cands.end(),
                      [](const Cand& a, const Cand& b) {
                        if (a.score != b.score) return a.score > b.score;
                        return a.from != b.from ? a.from < b.from : a.col < b.col;
                      });

    std::vector<Live> next;
    for (size_t r = 0; r < keep && next.size() < beam; ++r) {
      const auto& c = cands[r];
      const size_t tok = column_token(mask, c.col);
      if (tok == mask.eos) {
        // EOS only counts when ranked inside the beam.
        if (r < beam) {
          Hypothesis h;
          h.tokens.assign(alive[c.from].prefix.begin() + 1, alive[c.from].prefix.end());
          h.score = c.score;
          h.steps = step;
          h.finished = true;
          finished.push_back(std::move(h));
        }
        continue;
      }
      Live n = alive[c.from];
      n.prefix.push_back(tok);
      n.score = c.score;
      next.push_back(std::move(n));
    }
    alive = std::move(next);
  }

  if (finished.empty()) {
    for (const auto& a : alive) {
      Hypothesis h;
      h.tokens.assign(a.prefix.begin() + 1, a.prefix.end());
      h.score = a.score;
      h.steps = h.tokens.size();
      finished.push_back(std::move(h));
    }
  }
  size_t best = 0;
  for (size_t i = 1; i < finished.size(); ++i)
    if (finished[i].normalized() > finished[best].normalized()) best = i;
  return finish(std::move(finished[best]), options);
}

std::vector<Hypothesis> greedy_decode_batch(const model::Transformer& model, const std::vector<TokenIds>& sources,
                                            const std::string& target_language, const DecodeOptions& options,
                                            size_t max_batch) {
  if (options.beam_size != 1) throw ConfigError("batched decoding supports beam_size 1 only");
  if (max_batch == 0) throw ConfigError("max_batch must be positive");
  const auto& v = model.vocab();
  const auto mask = v.target_mask(target_language);
  const bool vmf = model.config().head == model::Head::vmf;
  const Matrix rows = vmf ? model.target_rows(mask) : Matrix();
  std::vector<size_t> columns(mask.size());
  std::iota(columns.begin(), columns.end(), size_t{0});
  const size_t tag = v.tag(target_language);

  std::vector<size_t> order(sources.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](size_t a, size_t b) { return sources[a].size() < sources[b].size(); });

  std::vector<Hypothesis> result(sources.size());
  for (size_t start = 0; start < order.size(); start += max_batch) {
    const size_t B = std::min(max_batch, order.size() - start);
    size_t L = 0;
    for (size_t b = 0; b < B; ++b) L = std::max(L, sources[order[start + b]].size() + 1);
    TokenIds padded(B * L, vocab::kPad);
    std::vector<char> valid(B * L, 0);
    for (size_t b = 0; b < B; ++b) {
      const auto& s = sources[order[start + b]];
      for (size_t t = 0; t < s.size(); ++t) padded[b * L + t] = s[t], valid[b * L + t] = 1;
      padded[b * L + s.size()] = vocab::kEos;
      valid[b * L + s.size()] = 1;
    }
    const Matrix states = model.encode_batch(padded, B, L);
    const auto Li = static_cast<Eigen::Index>(L);

    std::vector<size_t> active(B);
    std::iota(active.begin(), active.end(), size_t{0});
    std::vector<TokenIds> prefixes(B, TokenIds{tag});
    std::vector<size_t> caps(B);
    for (size_t b = 0; b < B; ++b) caps[b] = max_target_length(sources[order[start + b]].size(), options.max_length_factor);
    while (!active.empty()) {
      Matrix mem(static_cast<Eigen::Index>(active.size()) * Li, states.cols());
      std::vector<char> mem_valid;
      std::vector<TokenIds> pre;
      for (size_t i = 0; i < active.size(); ++i) {
        const auto b = active[i];
        mem.middleRows(static_cast<Eigen::Index>(i) * Li, Li) = states.middleRows(static_cast<Eigen::Index>(b) * Li, Li);
        mem_valid.insert(mem_valid.end(), valid.begin() + static_cast<std::ptrdiff_t>(b * L),
                         valid.begin() + static_cast<std::ptrdiff_t>((b + 1) * L));
        pre.push_back(prefixes[b]);
      }
      const Matrix out = model.last_outputs_batch(mem, mem_valid, L, pre);
      const Matrix scores = model.step_scores(out, mask, options.lambda_vmf);
      std::vector<size_t> still;
      for (size_t i = 0; i < active.size(); ++i) {
        const auto b = active[i];
        auto& h = result[order[start + b]];
        const auto r = static_cast<Eigen::Index>(i);
        const auto col =
            vmf ? static_cast<Eigen::Index>(vmf_decode_step(out.row(r), rows, columns)) : argmax(scores.row(r));
        h.score += scores(r, col);
        ++h.steps;
        const size_t tok = column_token(mask, col);
        if (tok == mask.eos) {
          h.finished = true;
          continue;
        }
        h.tokens.push_back(tok);
        prefixes[b].push_back(tok);
        if (h.steps < caps[b]) still.push_back(b);
      }
      active = std::move(still);
    }
  }
  for (auto& h : result) h = finish(std::move(h), options);
  return result;
}

std::vector<Translation> translate(const model::Transformer& model, const TranslationRequest& request) {
  const auto& v = model.vocab();
  if (!v.has_language(request.source_language))
    throw ConfigError("source language '" + request.source_language + "' is not in the vocabulary");
  if (!v.has_tag(request.target_language))
    throw ConfigError("target language '" + request.target_language + "' cannot be decoded by this model");
  if (request.options.beam_size < 1) throw ConfigError("beam_size must be >= 1");

  std::vector<Translation> out(request.sentences.size());
  std::vector<TokenIds> sources;
  std::vector<size_t> where;
  for (size_t i = 0; i < request.sentences.size(); ++i) {
    if (request.sentences[i].empty()) {
      out[i].skipped = true;
      continue;
    }
    sources.push_back(v.encode(request.sentences[i], request.source_language, &out[i].unknown));
    where.push_back(i);
  }
  std::vector<Hypothesis> hyps;
  if (request.options.beam_size == 1) {
    hyps = greedy_decode_batch(model, sources, request.target_language, request.options);
  } else {
    for (const auto& s : sources) hyps.push_back(beam_search(model, s, request.target_language, request.options));
  }
  for (size_t k = 0; k < where.size(); ++k) {
    out[where[k]].words = v.decode(hyps[k].tokens);
    out[where[k]].hypothesis = std::move(hyps[k]);
  }
  return out;
}

}  // namespace famt::translate
