#pragma once

#include <filesystem>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "famt/autograd.hpp"
#include "famt/vocab.hpp"

namespace famt::model {

enum class Head { softmax, vmf };
std::string head_name(Head h);
Head parse_head(const std::string& name);

struct TransformerConfig {
  int layers = 9;  // per stack
  int d_model = 300;
  int ff_dim = 1200;
  int heads = 6;
  double dropout = 0.2;
  int relative_clip = 16;
  Head head = Head::softmax;
  bool scale_embeddings = true;  // multiply input rows by sqrt(d_model)

  void validate() const;
  std::string canonical() const;
  static TransformerConfig parse(const std::string& text);
};

// Parameter groups. Word rows live in the vocabulary and form the frozen
// embedding group; they are never a trainable tensor.
inline const char* const kFrozenEmbeddings = "frozen_embeddings";
inline const char* const kEncoder = "encoder";
inline const char* const kDecoder = "decoder";
inline const char* const kCrossAttention = "cross_attention";
inline const char* const kOutputHead = "output_head";
inline const char* const kSpecials = "specials";

using TokenIds = std::vector<size_t>;

// Padded, language-homogeneous batch. Each source ends with EOS; the decoder
// input starts with the target tag and the output ends with EOS.
struct Batch {
  std::string source_language;
  std::string target_language;
  size_t size = 0;
  size_t src_len = 0;
  size_t tgt_len = 0;
  TokenIds src;
  TokenIds dec_in;
  TokenIds dec_out;
  size_t target_tokens = 0;
};

Batch make_batch(const vocab::MultiVocab& vocab, const std::string& source_language,
                 const std::string& target_language, const std::vector<std::pair<TokenIds, TokenIds>>& pairs);

struct LossStats {
  double loss = 0.0;  // summed over target tokens
  size_t tokens = 0;
  size_t correct = 0;  // argmax (softmax) or cosine argmax (vMF) hits
};

class Transformer {
 public:
  Transformer(TransformerConfig config, std::shared_ptr<const vocab::MultiVocab> vocab, uint64_t seed);

  const TransformerConfig& config() const { return config_; }
  const vocab::MultiVocab& vocab() const { return *vocab_; }
  std::shared_ptr<const vocab::MultiVocab> vocab_ptr() const { return vocab_; }

  std::vector<ad::Param>& params() { return params_; }
  const std::vector<ad::Param>& params() const { return params_; }
  ad::Param& param(const std::string& name);
  const ad::Param& param(const std::string& name) const;
  std::vector<std::string> groups() const;

  void set_group_trainable(const std::string& group, bool trainable);
  bool group_trainable(const std::string& group) const;
  // SHA-256 of a group's float32 bytes in name order. The frozen embedding
  // group hashes the vocabulary word rows.
  std::string group_checksum(const std::string& group) const;
  std::string checksum_excluding(const std::set<std::string>& groups) const;

  // Summed training loss over the batch's target tokens. `dropout_rng` null
  // means inference mode.
  ad::Id forward_loss(ad::Graph& g, const Batch& batch, Rng* dropout_rng, double label_smoothing, double lambda_vmf,
                      LossStats* stats = nullptr);
  // Forward plus backward; gradients accumulate into params().
  LossStats forward_backward(const Batch& batch, Rng* dropout_rng, double label_smoothing, double lambda_vmf);
  LossStats evaluate(const Batch& batch, double label_smoothing, double lambda_vmf);

  // Encoder states for one source sentence (EOS is appended here).
  Matrix encode(const TokenIds& source) const;
  // Encoder states for a padded batch; rows are batch-major.
  Matrix encode_batch(const TokenIds& padded, size_t batch, size_t len) const;
  // Head outputs at the last position of every prefix. All prefixes share one
  // length and attend to the same encoder states (rows of `states`).
  Matrix last_outputs(const Matrix& states, const std::vector<TokenIds>& prefixes) const;
  // Same, with one encoder state block per prefix (batch of different sources).
  Matrix last_outputs_batch(const Matrix& states, const std::vector<char>& src_valid, size_t src_len,
                            const std::vector<TokenIds>& prefixes) const;
  // Per-row scores over mask columns (word block then EOS): log-probabilities
  // for the softmax head, negative vMF loss for the vMF head.
  Matrix step_scores(const Matrix& outputs, const vocab::LanguageMask& mask, double lambda_vmf = 0.2) const;
  // Unit target rows for the mask columns (word block then EOS).
  Matrix target_rows(const vocab::LanguageMask& mask) const;

  // Swaps in an extended vocabulary. Special slots that did not exist before
  // are initialised from the trained row of `init_tag_from`'s tag.
  void replace_vocab(std::shared_ptr<const vocab::MultiVocab> vocab, const std::string& init_tag_from);

  // Writes the checkpoint and, next to it, "<path>.vocab.txt" which the
  // checkpoint references by SHA-256.
  void save(const std::filesystem::path& path) const;
  static Transformer load(const std::filesystem::path& path);

 private:
  Transformer() = default;
  void add_param(const std::string& name, const std::string& group, Matrix value);
  void build_params(Rng& rng);
  size_t index_of(const std::string& name) const;

  struct Ids;  // parameter node ids inside one graph
  Ids bind(ad::Graph& g, bool with_grad) const;
  ad::Id run_encoder(ad::Graph& g, const Ids& p, const TokenIds& src, size_t batch, size_t len,
                     const std::vector<char>& src_valid, Rng* rng) const;
  ad::Id run_decoder(ad::Graph& g, const Ids& p, ad::Id memory, const std::vector<char>& src_valid, size_t src_len,
                     const TokenIds& dec_in, size_t batch, size_t len, Rng* rng) const;
  ad::Id attention_block(ad::Graph& g, const Ids& p, const std::string& prefix, ad::Id x, ad::Id memory,
                         const ad::AttentionShape& shape, bool relative) const;

  TransformerConfig config_;
  std::shared_ptr<const vocab::MultiVocab> vocab_;
  std::vector<ad::Param> params_;
  std::map<std::string, size_t> by_name_;
};

// Non-finite entries anywhere in trainable gradients; names the first tensor.
void check_gradients_finite(const Transformer& model);

}  // namespace famt::model
