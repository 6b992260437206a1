#include "famt/embeddings.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <map>

#include "famt/error.hpp"
#include "famt/hash.hpp"
#include "famt/tensor_file.hpp"

namespace famt::emb {

EmbeddingTable::EmbeddingTable(std::string language, std::vector<std::string> words, Matrix matrix)
    : language_(std::move(language)), words_(std::move(words)), matrix_(std::move(matrix)) {
  if (static_cast<Eigen::Index>(words_.size()) != matrix_.rows())
    throw FormatError("word count does not match matrix rows");
  index_.reserve(words_.size());
  for (size_t i = 0; i < words_.size(); ++i)
    if (!index_.emplace(words_[i], i).second) throw FormatError("duplicate word '" + words_[i] + "'");
}

std::optional<size_t> EmbeddingTable::find(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

void EmbeddingTable::validate() const {
  if (index_.size() != words_.size()) throw FormatError("duplicate words in table");
  for (Eigen::Index r = 0; r < matrix_.rows(); ++r)
    if (!matrix_.row(r).allFinite()) throw FormatError("non-finite row for '" + words_[static_cast<size_t>(r)] + "'");
  if (unit_normalized_) {
    for (Eigen::Index r = 0; r < matrix_.rows(); ++r) {
      const double n = matrix_.row(r).norm();
      if (std::abs(n - 1.0) > 1e-5) throw FormatError("row '" + words_[static_cast<size_t>(r)] + "' is not unit norm");
    }
  }
}

std::vector<std::string> SubwordBank::ngrams(const std::string& word) const {
  std::u32string marked;
  marked.push_back(begin_marker);
  marked += decode_utf8(word);
  marked.push_back(end_marker);
  std::vector<std::string> grams;
  const auto len = static_cast<int>(marked.size());
  for (int i = 0; i < len; ++i)
    for (int n = min_n; n <= max_n && i + n <= len; ++n) grams.push_back(encode_utf8(marked.substr(static_cast<size_t>(i), static_cast<size_t>(n))));
  return grams;
}

size_t SubwordBank::bucket_of(const std::string& gram) const { return static_cast<size_t>(fnv1a64(gram) % bucket_count); }

std::vector<size_t> SubwordBank::bucket_ids(const std::string& word) const {
  std::vector<size_t> ids;
  for (const auto& g : ngrams(word)) ids.push_back(bucket_of(g));
  return ids;
}

void SkipgramConfig::validate() const {
  if (window < 1) throw ConfigError("skip-gram window must be >= 1");
  if (negatives < 1) throw ConfigError("skip-gram negatives must be >= 1");
  if (dim < 1 || epochs < 0 || min_count < 1) throw ConfigError("bad skip-gram dimensions");
  if (min_n < 1 || min_n > max_n) throw ConfigError("n-gram range must satisfy 1 <= min_n <= max_n");
  if (bucket_count == 0) throw ConfigError("bucket_count must be positive");
}

SkipgramTrainer::SkipgramTrainer(const Corpus& corpus, SkipgramConfig cfg) : cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  if (corpus.empty()) throw InputError("skip-gram corpus is empty");

  std::map<std::string, uint64_t> freq;
  for (const auto& s : corpus)
    for (const auto& w : s) ++freq[w];
  std::vector<std::pair<std::string, uint64_t>> kept;
  for (const auto& [w, c] : freq)
    if (c >= static_cast<uint64_t>(cfg_.min_count)) kept.emplace_back(w, c);
  if (kept.empty()) throw InputError("no word reaches min_count");
  std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });

  std::unordered_map<std::string, size_t> id;
  for (const auto& [w, c] : kept) {
    id.emplace(w, words_.size());
    words_.push_back(w);
    counts_.push_back(c);
  }
  for (const auto& s : corpus) {
    std::vector<size_t> ids;
    for (const auto& w : s)
      if (auto it = id.find(w); it != id.end()) ids.push_back(it->second);
    total_tokens_ += ids.size();
    if (ids.size() > 1) sentences_.push_back(std::move(ids));
  }

  bank_shape_.min_n = cfg_.min_n;
  bank_shape_.max_n = cfg_.max_n;
  bank_shape_.bucket_count = cfg_.bucket_count;
  const size_t nv = words_.size();
  inputs_.resize(nv);
  for (size_t w = 0; w < nv; ++w) {
    inputs_[w].push_back(w);
    for (size_t b : bank_shape_.bucket_ids(words_[w])) inputs_[w].push_back(nv + b);
  }

  const auto rows = static_cast<Eigen::Index>(nv + cfg_.bucket_count);
  input_.resize(rows, cfg_.dim);
  const double bound = 1.0 / cfg_.dim;
  for (Eigen::Index i = 0; i < input_.size(); ++i) input_.data()[i] = rng_.uniform(-bound, bound);
  output_ = Matrix::Zero(static_cast<Eigen::Index>(nv), cfg_.dim);

  // Unigram^0.75 table for negative sampling.
  constexpr size_t kTable = 1000000;
  double z = 0.0;
  for (uint64_t c : counts_) z += std::pow(static_cast<double>(c), 0.75);
  negative_table_.reserve(kTable);
  for (size_t w = 0; w < nv; ++w) {
    const auto n = static_cast<size_t>(std::ceil(std::pow(static_cast<double>(counts_[w]), 0.75) / z * kTable));
    negative_table_.insert(negative_table_.end(), n, w);
  }
  rng_.shuffle(negative_table_);
}

size_t SkipgramTrainer::sample_negative(Rng& rng) const { return negative_table_[rng.index(negative_table_.size())]; }

RowVector SkipgramTrainer::hidden(size_t word) const {
  RowVector h = RowVector::Zero(cfg_.dim);
  for (size_t r : inputs_[word]) h += input_.row(static_cast<Eigen::Index>(r));
  return h / static_cast<double>(inputs_[word].size());
}

void SkipgramTrainer::train_epoch() {
  const double total = static_cast<double>(total_tokens_) * std::max(1, cfg_.epochs);
  RowVector grad(cfg_.dim);
  for (const auto& sentence : sentences_) {
    for (size_t i = 0; i < sentence.size(); ++i) {
      const double progress = std::min(1.0, static_cast<double>(processed_) / total);
      const double lr = cfg_.learning_rate * (1.0 - progress);
      ++processed_;
      const auto reach = static_cast<long>(1 + rng_.index(static_cast<uint64_t>(cfg_.window)));
      const size_t center = sentence[i];
      const auto& rows = inputs_[center];
      for (long off = -reach; off <= reach; ++off) {
        const long c = static_cast<long>(i) + off;
        if (off == 0 || c < 0 || c >= static_cast<long>(sentence.size())) continue;
        const RowVector h = hidden(center);
        grad.setZero();
        for (int k = 0; k <= cfg_.negatives; ++k) {
          size_t target;
          double label;
          if (k == 0) {
            target = sentence[static_cast<size_t>(c)];
            label = 1.0;
          } else {
            target = sample_negative(rng_);
            if (target == sentence[static_cast<size_t>(c)]) continue;
            label = 0.0;
          }
          auto out = output_.row(static_cast<Eigen::Index>(target));
          const double score = 1.0 / (1.0 + std::exp(-out.dot(h)));
          const double g = lr * (label - score);
          grad += g * out;
          out += g * h;
        }
        for (size_t r : rows) input_.row(static_cast<Eigen::Index>(r)) += grad;
      }
    }
  }
  ++epochs_done_;
}

SkipgramProbe SkipgramTrainer::make_probe(size_t count, uint64_t seed) const {
  Rng rng(seed);
  SkipgramProbe probe;
  while (probe.centers.size() < count) {
    const auto& s = sentences_[rng.index(sentences_.size())];
    const size_t i = rng.index(s.size());
    size_t j = rng.index(s.size());
    if (j == i) j = (i + 1) % s.size();
    probe.centers.push_back(s[i]);
    probe.contexts.push_back(s[j]);
    std::vector<size_t> neg;
    for (int k = 0; k < cfg_.negatives; ++k) neg.push_back(sample_negative(rng));
    probe.negatives.push_back(std::move(neg));
  }
  return probe;
}

double SkipgramTrainer::objective(const SkipgramProbe& probe) const {
  auto log_sigmoid = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  double loss = 0.0;
  for (size_t n = 0; n < probe.centers.size(); ++n) {
    const RowVector h = hidden(probe.centers[n]);
    loss -= log_sigmoid(output_.row(static_cast<Eigen::Index>(probe.contexts[n])).dot(h));
    for (size_t neg : probe.negatives[n]) loss -= log_sigmoid(-output_.row(static_cast<Eigen::Index>(neg)).dot(h));
  }
  return loss / static_cast<double>(probe.centers.size());
}

std::pair<EmbeddingTable, SubwordBank> SkipgramTrainer::result() const {
  const size_t nv = words_.size();
  Matrix rows(static_cast<Eigen::Index>(nv), cfg_.dim);
  for (size_t w = 0; w < nv; ++w) rows.row(static_cast<Eigen::Index>(w)) = hidden(w);
  SubwordBank bank = bank_shape_;
  bank.buckets = input_.bottomRows(static_cast<Eigen::Index>(cfg_.bucket_count));
  return {EmbeddingTable(cfg_.language, words_, std::move(rows)), std::move(bank)};
}

std::pair<EmbeddingTable, SubwordBank> train_skipgram(const Corpus& corpus, const SkipgramConfig& cfg) {
  SkipgramTrainer trainer(corpus, cfg);
  for (int e = 0; e < cfg.epochs; ++e) trainer.train_epoch();
  return trainer.result();
}

namespace {

std::string format_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::general, 9);
  return std::string(buf, res.ptr);
}

}  // namespace

EmbeddingTable parse_vectors(const std::string& text, const std::string& language) {
  size_t pos = 0;
  size_t line_no = 0;
  auto next_line = [&](std::string_view& line) {
    if (pos >= text.size()) return false;
    size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    line = std::string_view(text).substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    pos = end + 1;
    ++line_no;
    return true;
  };
  std::string_view line;
  if (!next_line(line)) throw FormatError("vector file is empty");
  const auto header = split_whitespace(line);
  long count = 0, dim = 0;
  if (header.size() != 2 || std::from_chars(header[0].data(), header[0].data() + header[0].size(), count).ec != std::errc{} ||
      std::from_chars(header[1].data(), header[1].data() + header[1].size(), dim).ec != std::errc{} || count < 0 || dim < 1)
    throw FormatError("line 1: header must be '<count> <dim>'");

  std::vector<std::string> words;
  Matrix m(count, dim);
  std::unordered_map<std::string, size_t> seen;
  while (next_line(line)) {
    if (line.empty()) continue;
    const auto fields = split_whitespace(line);
    const std::string where = "line " + std::to_string(line_no);
    if (static_cast<long>(words.size()) >= count) throw FormatError(where + ": more rows than header count");
    if (static_cast<long>(fields.size()) != dim + 1)
      throw FormatError(where + ": expected " + std::to_string(dim) + " values, found " + std::to_string(fields.size() - 1));
    if (!seen.emplace(fields[0], words.size()).second) throw FormatError(where + ": duplicate word '" + fields[0] + "'");
    const auto r = static_cast<Eigen::Index>(words.size());
    for (long k = 0; k < dim; ++k) {
      const auto& f = fields[static_cast<size_t>(k + 1)];
      double v;
      auto res = std::from_chars(f.data(), f.data() + f.size(), v);
      if (res.ec != std::errc{} || res.ptr != f.data() + f.size()) throw FormatError(where + ": bad number '" + f + "'");
      m(r, k) = v;
    }
    words.push_back(fields[0]);
  }
  if (static_cast<long>(words.size()) != count)
    throw FormatError("header promised " + std::to_string(count) + " rows, found " + std::to_string(words.size()));
  return EmbeddingTable(language, std::move(words), std::move(m));
}

EmbeddingTable load_vectors(const std::filesystem::path& path, const std::string& language) {
  return parse_vectors(read_file(path), language);
}

std::string format_vectors(const EmbeddingTable& table) {
  std::string out = std::to_string(table.size()) + " " + std::to_string(table.dim()) + "\n";
  const Matrix& m = table.matrix();
  for (size_t i = 0; i < table.size(); ++i) {
    out += table.words()[i];
    for (Eigen::Index k = 0; k < m.cols(); ++k) {
      out.push_back(' ');
      out += format_double(m(static_cast<Eigen::Index>(i), k));
    }
    out.push_back('\n');
  }
  return out;
}

void save_vectors(const std::filesystem::path& path, const EmbeddingTable& table) {
  write_file(path, format_vectors(table));
}

void save_bank(const std::filesystem::path& path, const SubwordBank& bank) {
  TensorArchive a;
  a.config_text = "min_n=" + std::to_string(bank.min_n) + "\nmax_n=" + std::to_string(bank.max_n) +
                  "\nbucket_count=" + std::to_string(bank.bucket_count) + "\n";
  a.put("buckets", bank.buckets);
  a.save(path);
}

SubwordBank load_bank(const std::filesystem::path& path) {
  const auto a = TensorArchive::load(path);
  SubwordBank bank;
  for (const auto& line : split_whitespace(a.config_text)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq);
    const long v = std::stol(line.substr(eq + 1));
    if (key == "min_n") bank.min_n = static_cast<int>(v);
    if (key == "max_n") bank.max_n = static_cast<int>(v);
    if (key == "bucket_count") bank.bucket_count = static_cast<size_t>(v);
  }
  bank.buckets = a.matrix("buckets");
  if (static_cast<size_t>(bank.buckets.rows()) != bank.bucket_count) throw FormatError("bucket matrix row count mismatch");
  return bank;
}

Composed compose_oov(const std::string& word, const SubwordBank& bank, const EmbeddingTable* table) {
  if (word.empty()) throw InputError("cannot compose an empty word");
  if (table) {
    if (auto i = table->find(word)) return {table->row(*i), OovFlag::none};
  }
  const auto ids = bank.bucket_ids(word);
  RowVector sum = RowVector::Zero(bank.buckets.cols());
  bool live = false;
  for (size_t b : ids) {
    const auto row = bank.buckets.row(static_cast<Eigen::Index>(b));
    if (!row.isZero(0.0)) live = true;
    sum += row;
  }
  if (!live || ids.empty()) return {RowVector::Zero(bank.buckets.cols()), OovFlag::hard};
  return {sum / static_cast<double>(ids.size()), OovFlag::soft};
}

NormalizeReport normalize_rows(EmbeddingTable& table) {
  NormalizeReport report;
  Matrix& m = table.mutable_matrix();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    const double n = m.row(r).norm();
    if (n == 0.0) {
      ++report.zero_rows;
    } else {
      m.row(r) /= n;
    }
  }
  table.set_unit_normalized(report.zero_rows == 0);
  return report;
}

}  // namespace famt::emb
