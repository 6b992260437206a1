#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "famt/embeddings.hpp"
#include "famt/error.hpp"
#include "famt/linalg.hpp"
#include "famt/text.hpp"

namespace famt::vocab {

// Lowercase ASCII letters, digits, '_' and '-'; never '@'.
void validate_language_id(const std::string& language);

struct PrefixedToken {
  std::string language;
  std::string surface;

  std::string render() const { return language + "@" + surface; }
  // Splits at the first '@'; throws FormatError if there is none.
  static PrefixedToken parse(const std::string& token);
};

inline constexpr size_t kPad = 0;
inline constexpr size_t kBos = 1;
inline constexpr size_t kEos = 2;
inline constexpr size_t kUnk = 3;
inline constexpr size_t kFixedSpecials = 4;

std::string tag_token(const std::string& language);  // "<tgt:xx>"

// One language's corpus-restricted word list; rows live in the space of the
// table it was built from (map them to the hub afterwards).
struct LanguageVocab {
  std::string language;
  std::vector<std::string> words;
  Matrix rows;
  std::vector<uint64_t> counts;
  std::vector<std::string> composed;  // words whose row came from n-gram composition
  std::vector<std::string> hard_oov;  // corpus types with no usable vector, excluded
};

// Corpus types found in `table`, plus types recoverable through `bank` when
// given. Sorted by descending frequency, ties by surface.
LanguageVocab build_from_corpus(const emb::EmbeddingTable& table, const Corpus& corpus, const std::string& language,
                                const emb::SubwordBank* bank = nullptr);

struct LanguageMask {
  std::string language;
  size_t begin = 0;  // word block [begin, end)
  size_t end = 0;
  size_t eos = kEos;

  size_t size() const { return end - begin + 1; }
  bool allows(size_t index) const { return index == eos || (index >= begin && index < end); }
  std::vector<size_t> allowed() const;
};

// Merged language-prefixed vocabulary. Immutable after construction; extend()
// returns a new value.
class MultiVocab {
 public:
  struct Range {
    size_t begin = 0;
    size_t end = 0;
    size_t size() const { return end - begin; }
  };

  // Specials first (PAD, BOS, EOS, UNK, one tag per language), then each
  // language's words as a contiguous block in the given order.
  static MultiVocab merge(const std::vector<LanguageVocab>& languages, uint64_t seed = 7);

  // Appends the new language's words. Existing indices and rows are untouched.
  MultiVocab extend(const LanguageVocab& language) const;

  // Appends a target tag for a language added by extend(), making it a
  // decoding target. The tag row starts as a copy of `init_from`'s tag row.
  MultiVocab add_target_tag(const std::string& language, const std::string& init_from) const;
  bool has_tag(const std::string& language) const { return tags_.count(language) != 0; }

  size_t size() const { return tokens_.size(); }
  Eigen::Index dim() const { return embedding_.cols(); }
  size_t initial_special_count() const { return initial_specials_; }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::string>& languages() const { return languages_; }
  bool has_language(const std::string& language) const { return ranges_.count(language) != 0; }
  const Range& range(const std::string& language) const;
  std::optional<size_t> find(const std::string& rendered) const;
  size_t index_of(const std::string& language, const std::string& surface) const;  // kUnk if absent
  size_t tag(const std::string& language) const;
  bool is_special(size_t index) const { return special_slot_[index] >= 0; }
  // Position of a special token in specials(); -1 for words.
  int special_slot(size_t index) const { return special_slot_[index]; }
  const std::vector<size_t>& specials() const { return specials_; }
  std::string language_of(size_t index) const;  // "" for specials

  const Matrix& embedding() const { return embedding_; }
  LanguageMask target_mask(const std::string& language) const;

  std::vector<size_t> encode(const Sentence& words, const std::string& language, size_t* unknown = nullptr) const;
  // Surfaces of word tokens; specials are dropped.
  Sentence decode(const std::vector<size_t>& indices) const;

  // SHA-256 over the float32 bytes of every word row.
  std::string word_checksum() const;

  // Text form: header "#famt-vocab <S> <lang>:<count> ...", then one token per line.
  std::string format() const;
  static MultiVocab parse(const std::string& text, Matrix embedding);

  void save(const std::filesystem::path& vocab_file, const std::filesystem::path& embedding_file) const;
  static MultiVocab load(const std::filesystem::path& vocab_file, const std::filesystem::path& embedding_file);

 private:
  void add_token(const std::string& rendered, int slot);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, size_t> index_;
  std::vector<int> special_slot_;
  std::vector<size_t> specials_;
  std::vector<std::string> languages_;
  std::map<std::string, Range> ranges_;
  std::map<std::string, size_t> tags_;
  size_t initial_specials_ = 0;
  Matrix embedding_;
};

}  // namespace famt::vocab
