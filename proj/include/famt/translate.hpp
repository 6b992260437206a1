#pragma once

#include <string>
#include <vector>

#include "famt/alignment.hpp"
#include "famt/embeddings.hpp"
#include "famt/model.hpp"

namespace famt::translate {

struct PlugInOptions {
  bool renormalize = true;      // re-normalize rows after mapping into the hub
  bool add_target_tag = false;  // also make the language decodable
  std::string init_tag_from;    // tag row copied for the new tag (the pivot)
  const emb::SubwordBank* bank = nullptr;
};

struct PlugInReport {
  size_t words = 0;
  size_t composed = 0;
  size_t hard_oov = 0;
  std::string layers_checksum_before;
  std::string layers_checksum_after;
};

// Maps `table` into the hub with `map` and appends its words (restricted to
// `corpus` types when non-empty, otherwise every table word) to the model's
// vocabulary. Only the vocabulary and the specials tensor change.
PlugInReport plug_in_language(model::Transformer& model, const emb::EmbeddingTable& table, const align::LinearMap& map,
                              const std::string& language, const Corpus& corpus = {},
                              const PlugInOptions& options = {});

struct RepeatRule {
  bool enabled = true;
  int n_max = 4;
  int threshold = 3;
};

struct DecodeOptions {
  int beam_size = 1;
  double max_length_factor = 2.0;  // cap = ceil(factor * source words) + 1
  double lambda_vmf = 0.2;
  RepeatRule repeats;
};

struct Hypothesis {
  model::TokenIds tokens;  // target words, EOS excluded
  double score = 0.0;      // cumulative log-probability or negative vMF loss
  size_t steps = 0;        // emitted tokens including EOS when finished
  bool finished = false;

  double normalized() const { return steps ? score / static_cast<double>(steps) : score; }
};

size_t max_target_length(size_t source_words, double factor);

// Argmax of y . e_t over the allowed rows; `rows` holds the mask's unit rows.
size_t vmf_decode_step(const RowVector& y, const Matrix& rows, const std::vector<size_t>& allowed);

// Collapses runs of one n-gram repeated >= threshold consecutive times, for n
// from n_max down to 1.
model::TokenIds suppress_repeats(const model::TokenIds& tokens, int n_max, int threshold);

// Step-by-step argmax decoding (vMF head: cosine argmax).
Hypothesis greedy_decode(const model::Transformer& model, const model::TokenIds& source,
                         const std::string& target_language, const DecodeOptions& options = {});

// Length-normalized beam search under the target-language mask.
Hypothesis beam_search(const model::Transformer& model, const model::TokenIds& source,
                       const std::string& target_language, const DecodeOptions& options = {});

// Greedy decoding of many sentences at once (beam 1 only). Results equal
// greedy_decode per sentence.
std::vector<Hypothesis> greedy_decode_batch(const model::Transformer& model, const std::vector<model::TokenIds>& sources,
                                            const std::string& target_language, const DecodeOptions& options = {},
                                            size_t max_batch = 64);

struct TranslationRequest {
  std::string source_language;
  std::string target_language;
  std::vector<Sentence> sentences;  // tokenized, unprefixed
  DecodeOptions options;
};

struct Translation {
  Sentence words;  // unprefixed surfaces
  Hypothesis hypothesis;
  bool skipped = false;  // empty input
  size_t unknown = 0;    // source words mapped to UNK
};

std::vector<Translation> translate(const model::Transformer& model, const TranslationRequest& request);

}  // namespace famt::translate
