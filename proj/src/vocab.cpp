#include "famt/vocab.hpp"

#include <algorithm>
#include <cstring>
#include <sstream>

#include "famt/error.hpp"
#include "famt/hash.hpp"
#include "famt/random.hpp"
#include "famt/tensor_file.hpp"

namespace famt::vocab {
namespace {

const char* const kFixedNames[kFixedSpecials] = {"<pad>", "<bos>", "<eos>", "<unk>"};

bool is_tag(const std::string& tok) { return tok.rfind("<tgt:", 0) == 0 && tok.size() > 6 && tok.back() == '>'; }

std::string tag_language(const std::string& tok) { return tok.substr(5, tok.size() - 6); }

RowVector random_unit(Rng& rng, Eigen::Index dim) {
  RowVector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = rng.normal();
  return v / v.norm();
}

}  // namespace

void validate_language_id(const std::string& language) {
  if (language.empty()) throw ConfigError("empty language id");
  for (char c : language) {
    const bool ok = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) throw ConfigError("invalid language id '" + language + "'");
  }
}

PrefixedToken PrefixedToken::parse(const std::string& token) {
  const auto at = token.find('@');
  if (at == std::string::npos || at == 0 || at + 1 == token.size())
    throw FormatError("'" + token + "' is not a prefixed token");
  return {token.substr(0, at), token.substr(at + 1)};
}

std::string tag_token(const std::string& language) { return "<tgt:" + language + ">"; }

LanguageVocab build_from_corpus(const emb::EmbeddingTable& table, const Corpus& corpus, const std::string& language,
                                const emb::SubwordBank* bank) {
  validate_language_id(language);
  std::unordered_map<std::string, uint64_t> freq;
  size_t tokens = 0;
  for (const auto& s : corpus)
    for (const auto& w : s) {
      ++freq[w];
      ++tokens;
    }
  if (tokens == 0) throw InputError("empty corpus for language '" + language + "'");

  std::vector<std::pair<std::string, uint64_t>> types(freq.begin(), freq.end());
  std::sort(types.begin(), types.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });

  LanguageVocab out;
  out.language = language;
  std::vector<RowVector> rows;
  for (const auto& [w, c] : types) {
    if (auto i = table.find(w)) {
      rows.push_back(table.row(*i));
    } else if (bank) {
      auto composed = emb::compose_oov(w, *bank, nullptr);
      if (composed.flag == emb::OovFlag::hard) {
        out.hard_oov.push_back(w);
        continue;
      }
      rows.push_back(std::move(composed.vector));
      out.composed.push_back(w);
    } else {
      out.hard_oov.push_back(w);
      continue;
    }
    out.words.push_back(w);
    out.counts.push_back(c);
  }
  out.rows.resize(static_cast<Eigen::Index>(rows.size()), table.dim());
  for (size_t r = 0; r < rows.size(); ++r) out.rows.row(static_cast<Eigen::Index>(r)) = rows[r];
  return out;
}

std::vector<size_t> LanguageMask::allowed() const {
  std::vector<size_t> out;
  out.reserve(size());
  out.push_back(eos);
  for (size_t i = begin; i < end; ++i) out.push_back(i);
  std::sort(out.begin(), out.end());
  return out;
}

void MultiVocab::add_token(const std::string& rendered, int slot) {
  if (!index_.emplace(rendered, tokens_.size()).second) throw ConflictError("duplicate token '" + rendered + "'");
  tokens_.push_back(rendered);
  special_slot_.push_back(slot);
  if (slot >= 0) specials_.push_back(tokens_.size() - 1);
}

MultiVocab MultiVocab::merge(const std::vector<LanguageVocab>& languages, uint64_t seed) {
  if (languages.empty()) throw ConfigError("merge needs at least one language");
  const Eigen::Index dim = languages.front().rows.cols();
  size_t words = 0;
  for (const auto& l : languages) {
    validate_language_id(l.language);
    if (l.rows.cols() != dim)
      throw ConfigError("embedding dimension mismatch: '" + l.language + "' has " + std::to_string(l.rows.cols()) +
                        ", expected " + std::to_string(dim));
    if (l.rows.rows() != static_cast<Eigen::Index>(l.words.size()))
      throw ConfigError("row count mismatch for '" + l.language + "'");
    words += l.words.size();
  }

  MultiVocab v;
  for (size_t i = 0; i < kFixedSpecials; ++i) v.add_token(kFixedNames[i], static_cast<int>(i));
  for (const auto& l : languages) {
    if (v.tags_.count(l.language)) throw ConflictError("language '" + l.language + "' listed twice");
    v.tags_[l.language] = v.tokens_.size();
    v.add_token(tag_token(l.language), static_cast<int>(v.specials_.size()));
  }
  v.initial_specials_ = v.tokens_.size();

  v.embedding_ = Matrix::Zero(static_cast<Eigen::Index>(v.initial_specials_ + words), dim);
  Rng rng(seed);
  for (size_t i = 1; i < v.initial_specials_; ++i) v.embedding_.row(static_cast<Eigen::Index>(i)) = random_unit(rng, dim);

  for (const auto& l : languages) {
    Range r{v.tokens_.size(), v.tokens_.size() + l.words.size()};
    for (const auto& w : l.words) v.add_token(PrefixedToken{l.language, w}.render(), -1);
    v.embedding_.middleRows(static_cast<Eigen::Index>(r.begin), static_cast<Eigen::Index>(r.size())) = l.rows;
    v.ranges_[l.language] = r;
    v.languages_.push_back(l.language);
  }
  round_to_float(v.embedding_);
  return v;
}

MultiVocab MultiVocab::extend(const LanguageVocab& l) const {
  validate_language_id(l.language);
  if (has_language(l.language)) throw ConflictError("language '" + l.language + "' is already in the vocabulary");
  if (l.rows.cols() != dim())
    throw ConfigError("embedding dimension mismatch for '" + l.language + "': " + std::to_string(l.rows.cols()) +
                      " vs " + std::to_string(dim()));
  if (l.rows.rows() != static_cast<Eigen::Index>(l.words.size()))
    throw ConfigError("row count mismatch for '" + l.language + "'");

  MultiVocab v = *this;
  Range r{v.tokens_.size(), v.tokens_.size() + l.words.size()};
  for (const auto& w : l.words) v.add_token(PrefixedToken{l.language, w}.render(), -1);
  v.ranges_[l.language] = r;
  v.languages_.push_back(l.language);

  Matrix grown(static_cast<Eigen::Index>(v.tokens_.size()), dim());
  grown.topRows(embedding_.rows()) = embedding_;
  Matrix added = l.rows;
  round_to_float(added);
  grown.bottomRows(added.rows()) = added;
  v.embedding_ = std::move(grown);
  return v;
}

MultiVocab MultiVocab::add_target_tag(const std::string& language, const std::string& init_from) const {
  range(language);
  if (has_tag(language)) throw ConflictError("language '" + language + "' already has a target tag");
  const size_t source_tag = tag(init_from);
  MultiVocab v = *this;
  v.tags_[language] = v.tokens_.size();
  v.add_token(tag_token(language), static_cast<int>(v.specials_.size()));
  Matrix grown(embedding_.rows() + 1, dim());
  grown.topRows(embedding_.rows()) = embedding_;
  grown.bottomRows(1) = embedding_.row(static_cast<Eigen::Index>(source_tag));
  v.embedding_ = std::move(grown);
  return v;
}

const MultiVocab::Range& MultiVocab::range(const std::string& language) const {
  auto it = ranges_.find(language);
  if (it == ranges_.end()) throw LookupError("language '" + language + "' is not in the vocabulary");
  return it->second;
}

std::optional<size_t> MultiVocab::find(const std::string& rendered) const {
  auto it = index_.find(rendered);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

size_t MultiVocab::index_of(const std::string& language, const std::string& surface) const {
  auto i = find(PrefixedToken{language, surface}.render());
  return i ? *i : kUnk;
}

size_t MultiVocab::tag(const std::string& language) const {
  auto it = tags_.find(language);
  if (it == tags_.end()) throw LookupError("no target tag for language '" + language + "'");
  return it->second;
}

std::string MultiVocab::language_of(size_t index) const {
  if (index >= tokens_.size() || is_special(index)) return "";
  for (const auto& [lang, r] : ranges_)
    if (index >= r.begin && index < r.end) return lang;
  return "";
}

LanguageMask MultiVocab::target_mask(const std::string& language) const {
  const auto& r = range(language);
  return {language, r.begin, r.end, kEos};
}

std::vector<size_t> MultiVocab::encode(const Sentence& words, const std::string& language, size_t* unknown) const {
  range(language);
  std::vector<size_t> out;
  out.reserve(words.size());
  size_t unk = 0;
  for (const auto& w : words) {
    out.push_back(index_of(language, w));
    unk += out.back() == kUnk;
  }
  if (unknown) *unknown = unk;
  return out;
}

Sentence MultiVocab::decode(const std::vector<size_t>& indices) const {
  Sentence out;
  for (size_t i : indices) {
    if (i >= tokens_.size()) throw InputError("token index " + std::to_string(i) + " out of range");
    if (is_special(i)) continue;
    out.push_back(PrefixedToken::parse(tokens_[i]).surface);
  }
  return out;
}

std::string MultiVocab::word_checksum() const {
  std::string bytes;
  for (const auto& lang : languages_) {
    const auto& r = ranges_.at(lang);
    for (size_t i = r.begin; i < r.end; ++i) {
      for (Eigen::Index c = 0; c < embedding_.cols(); ++c) {
        const float f = static_cast<float>(embedding_(static_cast<Eigen::Index>(i), c));
        char b[sizeof f];
        std::memcpy(b, &f, sizeof f);
        bytes.append(b, sizeof f);
      }
    }
  }
  return sha256_hex(bytes);
}

std::string MultiVocab::format() const {
  std::ostringstream out;
  out << "#famt-vocab " << initial_specials_;
  for (const auto& lang : languages_) out << ' ' << lang << ':' << ranges_.at(lang).size();
  out << '\n';
  for (const auto& t : tokens_) out << t << '\n';
  return out.str();
}

MultiVocab MultiVocab::parse(const std::string& text, Matrix embedding) {
  std::istringstream in(text);
  std::string header;
  if (!std::getline(in, header) || header.rfind("#famt-vocab ", 0) != 0) throw FormatError("missing vocabulary header");
  const auto fields = split_whitespace(header);
  if (fields.size() < 2) throw FormatError("malformed vocabulary header");
  MultiVocab v;
  v.initial_specials_ = std::stoul(fields[1]);
  std::vector<std::pair<std::string, size_t>> counts;
  for (size_t i = 2; i < fields.size(); ++i) {
    const auto colon = fields[i].rfind(':');
    if (colon == std::string::npos) throw FormatError("malformed language count '" + fields[i] + "'");
    counts.emplace_back(fields[i].substr(0, colon), std::stoul(fields[i].substr(colon + 1)));
  }

  std::string line;
  size_t line_no = 1;
  std::string current;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) throw FormatError("vocabulary line " + std::to_string(line_no) + " is empty");
    const size_t idx = v.tokens_.size();
    if (idx < kFixedSpecials) {
      if (line != kFixedNames[idx]) throw FormatError("vocabulary line " + std::to_string(line_no) + ": expected " + kFixedNames[idx]);
      v.add_token(line, static_cast<int>(idx));
    } else if (is_tag(line)) {
      v.tags_[tag_language(line)] = idx;
      v.add_token(line, static_cast<int>(v.specials_.size()));
    } else {
      const auto tok = PrefixedToken::parse(line);
      auto it = v.ranges_.find(tok.language);
      if (it == v.ranges_.end()) {
        v.ranges_[tok.language] = Range{idx, idx};
        v.languages_.push_back(tok.language);
        it = v.ranges_.find(tok.language);
      } else if (it->second.end != idx) {
        throw FormatError("language '" + tok.language + "' is not contiguous at line " + std::to_string(line_no));
      }
      v.add_token(line, -1);
      it->second.end = idx + 1;
    }
  }
  if (counts.size() != v.languages_.size()) throw FormatError("vocabulary header language count mismatch");
  for (size_t i = 0; i < counts.size(); ++i)
    if (counts[i].first != v.languages_[i] || counts[i].second != v.ranges_.at(v.languages_[i]).size())
      throw FormatError("vocabulary header disagrees with body for '" + counts[i].first + "'");
  if (embedding.rows() != static_cast<Eigen::Index>(v.tokens_.size()))
    throw FormatError("embedding has " + std::to_string(embedding.rows()) + " rows for " +
                      std::to_string(v.tokens_.size()) + " tokens");
  v.embedding_ = std::move(embedding);
  return v;
}

void MultiVocab::save(const std::filesystem::path& vocab_file, const std::filesystem::path& embedding_file) const {
  write_file(vocab_file, format());
  TensorArchive a;
  a.config_text = "vocab_sha256=" + sha256_hex(format()) + "\n";
  a.put("vocab.embedding", embedding_);
  a.save(embedding_file);
}

MultiVocab MultiVocab::load(const std::filesystem::path& vocab_file, const std::filesystem::path& embedding_file) {
  return parse(read_file(vocab_file), TensorArchive::load(embedding_file).matrix("vocab.embedding"));
}

}  // namespace famt::vocab
