#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "famt/linalg.hpp"
#include "famt/random.hpp"
#include "famt/text.hpp"

namespace famt::emb {

class EmbeddingTable {
 public:
  EmbeddingTable() = default;
  EmbeddingTable(std::string language, std::vector<std::string> words, Matrix matrix);

  const std::string& language() const { return language_; }
  void set_language(std::string language) { language_ = std::move(language); }
  const std::vector<std::string>& words() const { return words_; }
  const Matrix& matrix() const { return matrix_; }
  Matrix& mutable_matrix() { return matrix_; }
  Eigen::Index dim() const { return matrix_.cols(); }
  size_t size() const { return words_.size(); }
  bool unit_normalized() const { return unit_normalized_; }
  void set_unit_normalized(bool v) { unit_normalized_ = v; }

  std::optional<size_t> find(const std::string& word) const;
  RowVector row(size_t i) const { return matrix_.row(static_cast<Eigen::Index>(i)); }

  // Throws FormatError on duplicate words or non-finite rows.
  void validate() const;

 private:
  std::string language_;
  std::vector<std::string> words_;
  Matrix matrix_;
  std::unordered_map<std::string, size_t> index_;
  bool unit_normalized_ = false;
};

// Character n-gram hash buckets (fastText-style composition).
struct SubwordBank {
  int min_n = 3;
  int max_n = 6;
  size_t bucket_count = size_t{1} << 18;
  Matrix buckets;
  char32_t begin_marker = U'<';
  char32_t end_marker = U'>';

  // Every n-gram occurrence of <word> for n in [min_n, max_n], in scan order.
  std::vector<std::string> ngrams(const std::string& word) const;
  size_t bucket_of(const std::string& gram) const;
  std::vector<size_t> bucket_ids(const std::string& word) const;
};

struct SkipgramConfig {
  std::string language;
  int dim = 300;
  int window = 5;
  int negatives = 5;
  int epochs = 5;
  double learning_rate = 0.05;  // linearly decayed to zero
  int min_count = 5;
  uint64_t seed = 1;
  int min_n = 3;
  int max_n = 6;
  size_t bucket_count = size_t{1} << 18;

  void validate() const;
};

// A (center, context, negatives) sample set held fixed to probe the objective.
struct SkipgramProbe {
  std::vector<size_t> centers;
  std::vector<size_t> contexts;
  std::vector<std::vector<size_t>> negatives;
};

// Single-worker trainer; runs are deterministic for a given seed.
class SkipgramTrainer {
 public:
  SkipgramTrainer(const Corpus& corpus, SkipgramConfig cfg);

  void train_epoch();
  int epochs_done() const { return epochs_done_; }

  // Mean sampled negative log-likelihood over a fixed probe.
  double objective(const SkipgramProbe& probe) const;
  SkipgramProbe make_probe(size_t count, uint64_t seed) const;

  // Word rows are (word vector + sum of its n-gram buckets) / (1 + #grams).
  std::pair<EmbeddingTable, SubwordBank> result() const;

  const std::vector<std::string>& vocabulary() const { return words_; }

 private:
  RowVector hidden(size_t word) const;
  size_t sample_negative(Rng& rng) const;

  SkipgramConfig cfg_;
  std::vector<std::vector<size_t>> sentences_;  // word ids, rare words removed
  std::vector<std::string> words_;
  std::vector<uint64_t> counts_;
  std::vector<std::vector<size_t>> inputs_;  // per word: own row + bucket rows
  Matrix input_;                             // |V| + buckets rows
  Matrix output_;
  std::vector<size_t> negative_table_;
  SubwordBank bank_shape_;
  Rng rng_;
  uint64_t total_tokens_ = 0;
  uint64_t processed_ = 0;
  int epochs_done_ = 0;
};

std::pair<EmbeddingTable, SubwordBank> train_skipgram(const Corpus& corpus, const SkipgramConfig& cfg);

// Text vector format: header "<count> <dim>", then "word v1 ... vdim" rows.
EmbeddingTable load_vectors(const std::filesystem::path& path, const std::string& language = "");
EmbeddingTable parse_vectors(const std::string& text, const std::string& language = "");
std::string format_vectors(const EmbeddingTable& table);
void save_vectors(const std::filesystem::path& path, const EmbeddingTable& table);

void save_bank(const std::filesystem::path& path, const SubwordBank& bank);
SubwordBank load_bank(const std::filesystem::path& path);

enum class OovFlag { none, soft, hard };

struct Composed {
  RowVector vector;
  OovFlag flag = OovFlag::none;
};

// Table lookup wins; otherwise the mean of the word's n-gram bucket vectors.
// All-zero buckets give a zero vector flagged hard.
Composed compose_oov(const std::string& word, const SubwordBank& bank, const EmbeddingTable* table = nullptr);

struct NormalizeReport {
  size_t zero_rows = 0;
};

NormalizeReport normalize_rows(EmbeddingTable& table);

}  // namespace famt::emb
