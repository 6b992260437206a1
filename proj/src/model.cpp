#include "famt/model.hpp"

#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_map>

#include "famt/error.hpp"
#include "famt/hash.hpp"
#include "famt/tensor_file.hpp"

namespace famt::model {

using ad::Graph;
using ad::Id;

std::string head_name(Head h) { return h == Head::softmax ? "softmax" : "vmf"; }

Head parse_head(const std::string& name) {
  if (name == "softmax") return Head::softmax;
  if (name == "vmf") return Head::vmf;
  throw ConfigError("unknown output head '" + name + "' (expected softmax or vmf)");
}

void TransformerConfig::validate() const {
  if (layers < 1) throw ConfigError("layers must be >= 1");
  if (d_model < 1 || heads < 1 || d_model % heads != 0)
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by heads " + std::to_string(heads));
  if (ff_dim < 1) throw ConfigError("ff_dim must be >= 1");
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("dropout must lie in [0, 1)");
  if (relative_clip < 0) throw ConfigError("relative_clip must be >= 0");
}

std::string TransformerConfig::canonical() const {
  std::ostringstream out;
  out.precision(17);
  out << "layers=" << layers << "\nd_model=" << d_model << "\nff_dim=" << ff_dim << "\nheads=" << heads
      << "\ndropout=" << dropout << "\nrelative_clip=" << relative_clip << "\nhead=" << head_name(head)
      << "\nscale_embeddings=" << (scale_embeddings ? 1 : 0) << "\n";
  return out.str();
}

TransformerConfig TransformerConfig::parse(const std::string& text) {
  TransformerConfig c;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
    if (key == "layers") c.layers = std::stoi(val);
    else if (key == "d_model") c.d_model = std::stoi(val);
    else if (key == "ff_dim") c.ff_dim = std::stoi(val);
    else if (key == "heads") c.heads = std::stoi(val);
    else if (key == "dropout") c.dropout = std::stod(val);
    else if (key == "relative_clip") c.relative_clip = std::stoi(val);
    else if (key == "head") c.head = parse_head(val);
    else if (key == "scale_embeddings") c.scale_embeddings = val == "1";
  }
  c.validate();
  return c;
}

Batch make_batch(const vocab::MultiVocab& vocab, const std::string& source_language,
                 const std::string& target_language, const std::vector<std::pair<TokenIds, TokenIds>>& pairs) {
  if (pairs.empty()) throw ConfigError("empty batch");
  Batch b;
  b.source_language = source_language;
  b.target_language = target_language;
  b.size = pairs.size();
  for (const auto& [s, t] : pairs) {
    b.src_len = std::max(b.src_len, s.size() + 1);
    b.tgt_len = std::max(b.tgt_len, t.size() + 1);
  }
  const size_t tag = vocab.tag(target_language);
  b.src.assign(b.size * b.src_len, vocab::kPad);
  b.dec_in.assign(b.size * b.tgt_len, vocab::kPad);
  b.dec_out.assign(b.size * b.tgt_len, vocab::kPad);
  for (size_t i = 0; i < b.size; ++i) {
    const auto& [s, t] = pairs[i];
    std::copy(s.begin(), s.end(), b.src.begin() + static_cast<long>(i * b.src_len));
    b.src[i * b.src_len + s.size()] = vocab::kEos;
    b.dec_in[i * b.tgt_len] = tag;
    std::copy(t.begin(), t.end(), b.dec_in.begin() + static_cast<long>(i * b.tgt_len + 1));
    std::copy(t.begin(), t.end(), b.dec_out.begin() + static_cast<long>(i * b.tgt_len));
    b.dec_out[i * b.tgt_len + t.size()] = vocab::kEos;
    b.target_tokens += t.size() + 1;
  }
  return b;
}

struct Transformer::Ids {
  std::unordered_map<std::string, Id> id;
  Id operator[](const std::string& name) const { return id.at(name); }
};

Transformer::Transformer(TransformerConfig config, std::shared_ptr<const vocab::MultiVocab> vocab, uint64_t seed)
    : config_(config), vocab_(std::move(vocab)) {
  config_.validate();
  if (!vocab_) throw ConfigError("model needs a vocabulary");
  if (vocab_->dim() != config_.d_model)
    throw ConfigError("d_model " + std::to_string(config_.d_model) + " differs from embedding dimension " +
                      std::to_string(vocab_->dim()));
  Rng rng(seed);
  build_params(rng);
}

void Transformer::add_param(const std::string& name, const std::string& group, Matrix value) {
  round_to_float(value);
  by_name_[name] = params_.size();
  params_.push_back(ad::Param{name, group, std::move(value), Matrix(), true});
}

void Transformer::build_params(Rng& rng) {
  const int d = config_.d_model, f = config_.ff_dim, dk = d / config_.heads, R = 2 * config_.relative_clip + 1;
  auto glorot = [&](int out, int in) {
    const double limit = std::sqrt(6.0 / (in + out));
    Matrix m(out, in);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(-limit, limit);
    return m;
  };
  auto attn = [&](const std::string& p, const std::string& group, bool relative) {
    for (const char* w : {"wq", "wk", "wv", "wo"}) add_param(p + "." + w, group, glorot(d, d));
    for (const char* b : {"bq", "bk", "bv", "bo"}) add_param(p + "." + b, group, Matrix::Zero(1, d));
    if (relative) {
      add_param(p + ".relk", group, glorot(R, dk));
      add_param(p + ".relv", group, glorot(R, dk));
    }
  };
  auto norm = [&](const std::string& p, const std::string& group) {
    add_param(p + ".g", group, Matrix::Ones(1, d));
    add_param(p + ".b", group, Matrix::Zero(1, d));
  };
  auto ffn = [&](const std::string& p, const std::string& group) {
    add_param(p + ".w1", group, glorot(f, d));
    add_param(p + ".b1", group, Matrix::Zero(1, f));
    add_param(p + ".w2", group, glorot(d, f));
    add_param(p + ".b2", group, Matrix::Zero(1, d));
  };
  for (int l = 0; l < config_.layers; ++l) {
    const std::string e = "enc." + std::to_string(l);
    attn(e + ".self", kEncoder, true);
    norm(e + ".ln1", kEncoder);
    ffn(e + ".ff", kEncoder);
    norm(e + ".ln2", kEncoder);
  }
  for (int l = 0; l < config_.layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    attn(p + ".self", kDecoder, true);
    norm(p + ".ln1", kDecoder);
    attn(p + ".cross", kCrossAttention, false);
    norm(p + ".ln2", kCrossAttention);
    ffn(p + ".ff", kDecoder);
    norm(p + ".ln3", kDecoder);
  }
  norm("out.ln", kOutputHead);
  if (config_.head == Head::vmf) {
    add_param("out.proj.w", kOutputHead, glorot(d, d));
    add_param("out.proj.b", kOutputHead, Matrix::Zero(1, d));
  }
  Matrix specials(static_cast<Eigen::Index>(vocab_->specials().size()), d);
  for (size_t s = 0; s < vocab_->specials().size(); ++s)
    specials.row(static_cast<Eigen::Index>(s)) = vocab_->embedding().row(static_cast<Eigen::Index>(vocab_->specials()[s]));
  add_param("specials.embedding", kSpecials, specials);
}

size_t Transformer::index_of(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) throw LookupError("no parameter named '" + name + "'");
  return it->second;
}

ad::Param& Transformer::param(const std::string& name) { return params_[index_of(name)]; }
const ad::Param& Transformer::param(const std::string& name) const { return params_[index_of(name)]; }

std::vector<std::string> Transformer::groups() const {
  return {kFrozenEmbeddings, kEncoder, kDecoder, kCrossAttention, kOutputHead, kSpecials};
}

void Transformer::set_group_trainable(const std::string& group, bool trainable) {
  if (group == kFrozenEmbeddings) {
    if (trainable) throw ConfigError("word embedding rows cannot be made trainable");
    return;
  }
  bool found = false;
  for (auto& p : params_)
    if (p.group == group) {
      p.trainable = trainable;
      found = true;
    }
  if (!found) throw LookupError("unknown parameter group '" + group + "'");
}

bool Transformer::group_trainable(const std::string& group) const {
  if (group == kFrozenEmbeddings) return false;
  for (const auto& p : params_)
    if (p.group == group) return p.trainable;
  throw LookupError("unknown parameter group '" + group + "'");
}

namespace {

void append_floats(std::string& bytes, const Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    const float f = static_cast<float>(m.data()[i]);
    char b[sizeof f];
    std::memcpy(b, &f, sizeof f);
    bytes.append(b, sizeof f);
  }
}

}  // namespace

std::string Transformer::group_checksum(const std::string& group) const {
  if (group == kFrozenEmbeddings) return vocab_->word_checksum();
  std::string bytes;
  for (const auto& [name, i] : by_name_)
    if (params_[i].group == group) {
      bytes.append(name);
      append_floats(bytes, params_[i].value);
    }
  return sha256_hex(bytes);
}

std::string Transformer::checksum_excluding(const std::set<std::string>& groups) const {
  std::string bytes;
  for (const auto& [name, i] : by_name_)
    if (!groups.count(params_[i].group)) {
      bytes.append(name);
      append_floats(bytes, params_[i].value);
    }
  return sha256_hex(bytes);
}

Transformer::Ids Transformer::bind(Graph& g, bool with_grad) const {
  Ids ids;
  for (const auto& [name, i] : by_name_) {
    if (with_grad)
      ids.id[name] = g.param(const_cast<ad::Param&>(params_[i]));
    else
      ids.id[name] = g.constant(params_[i].value);
  }
  return ids;
}

Id Transformer::attention_block(Graph& g, const Ids& p, const std::string& prefix, Id x, Id memory,
                                const ad::AttentionShape& shape, bool relative) const {
  const Id q = ad::linear(g, x, p[prefix + ".wq"], p[prefix + ".bq"]);
  const Id k = ad::linear(g, memory, p[prefix + ".wk"], p[prefix + ".bk"]);
  const Id v = ad::linear(g, memory, p[prefix + ".wv"], p[prefix + ".bv"]);
  const Id a = ad::attention(g, q, k, v, relative ? p[prefix + ".relk"] : -1, relative ? p[prefix + ".relv"] : -1, shape);
  return ad::linear(g, a, p[prefix + ".wo"], p[prefix + ".bo"]);
}

Id Transformer::run_encoder(Graph& g, const Ids& p, const TokenIds& src, size_t batch, size_t len,
                            const std::vector<char>& src_valid, Rng* rng) const {
  const double scale = config_.scale_embeddings ? std::sqrt(static_cast<double>(config_.d_model)) : 1.0;
  std::vector<int> slots(vocab_->size());
  for (size_t i = 0; i < slots.size(); ++i) slots[i] = vocab_->special_slot(i);
  Id x = ad::dropout(g, ad::embed(g, vocab_->embedding(), p["specials.embedding"], slots, src, scale), config_.dropout, rng);
  ad::AttentionShape shape{batch, len, len, config_.heads, config_.relative_clip, false, src_valid};
  for (int l = 0; l < config_.layers; ++l) {
    const std::string e = "enc." + std::to_string(l);
    const Id a = attention_block(g, p, e + ".self", x, x, shape, true);
    x = ad::layer_norm(g, ad::add(g, x, ad::dropout(g, a, config_.dropout, rng)), p[e + ".ln1.g"], p[e + ".ln1.b"]);
    const Id h = ad::relu(g, ad::linear(g, x, p[e + ".ff.w1"], p[e + ".ff.b1"]));
    const Id f = ad::linear(g, h, p[e + ".ff.w2"], p[e + ".ff.b2"]);
    x = ad::layer_norm(g, ad::add(g, x, ad::dropout(g, f, config_.dropout, rng)), p[e + ".ln2.g"], p[e + ".ln2.b"]);
  }
  return x;
}

Id Transformer::run_decoder(Graph& g, const Ids& p, Id memory, const std::vector<char>& src_valid, size_t src_len,
                            const TokenIds& dec_in, size_t batch, size_t len, Rng* rng) const {
  const double scale = config_.scale_embeddings ? std::sqrt(static_cast<double>(config_.d_model)) : 1.0;
  std::vector<int> slots(vocab_->size());
  for (size_t i = 0; i < slots.size(); ++i) slots[i] = vocab_->special_slot(i);
  Id y = ad::dropout(g, ad::embed(g, vocab_->embedding(), p["specials.embedding"], slots, dec_in, scale), config_.dropout, rng);
  std::vector<char> tgt_valid(dec_in.size());
  for (size_t i = 0; i < dec_in.size(); ++i) tgt_valid[i] = dec_in[i] != vocab::kPad;
  ad::AttentionShape self_shape{batch, len, len, config_.heads, config_.relative_clip, true, tgt_valid};
  ad::AttentionShape cross_shape{batch, len, src_len, config_.heads, config_.relative_clip, false, src_valid};
  for (int l = 0; l < config_.layers; ++l) {
    const std::string d = "dec." + std::to_string(l);
    const Id a = attention_block(g, p, d + ".self", y, y, self_shape, true);
    y = ad::layer_norm(g, ad::add(g, y, ad::dropout(g, a, config_.dropout, rng)), p[d + ".ln1.g"], p[d + ".ln1.b"]);
    const Id c = attention_block(g, p, d + ".cross", y, memory, cross_shape, false);
    y = ad::layer_norm(g, ad::add(g, y, ad::dropout(g, c, config_.dropout, rng)), p[d + ".ln2.g"], p[d + ".ln2.b"]);
    const Id h = ad::relu(g, ad::linear(g, y, p[d + ".ff.w1"], p[d + ".ff.b1"]));
    const Id f = ad::linear(g, h, p[d + ".ff.w2"], p[d + ".ff.b2"]);
    y = ad::layer_norm(g, ad::add(g, y, ad::dropout(g, f, config_.dropout, rng)), p[d + ".ln3.g"], p[d + ".ln3.b"]);
  }
  Id out = ad::layer_norm(g, y, p["out.ln.g"], p["out.ln.b"]);
  if (config_.head == Head::vmf) out = ad::linear(g, out, p["out.proj.w"], p["out.proj.b"]);
  return out;
}

Id Transformer::forward_loss(Graph& g, const Batch& batch, Rng* dropout_rng, double label_smoothing,
                             double lambda_vmf, LossStats* stats) {
  if (batch.size == 0) throw ConfigError("empty batch");
  const auto mask = vocab_->target_mask(batch.target_language);
  const Ids p = bind(g, true);
  std::vector<char> src_valid(batch.src.size());
  for (size_t i = 0; i < batch.src.size(); ++i) {
    if (batch.src[i] >= vocab_->size()) throw InputError("token index " + std::to_string(batch.src[i]) + " out of range");
    src_valid[i] = batch.src[i] != vocab::kPad;
  }
  const Id memory = run_encoder(g, p, batch.src, batch.size, batch.src_len, src_valid, dropout_rng);
  const Id out =
      run_decoder(g, p, memory, src_valid, batch.src_len, batch.dec_in, batch.size, batch.tgt_len, dropout_rng);

  const size_t block = mask.end - mask.begin;
  LossStats st;
  Id loss;
  if (config_.head == Head::softmax) {
    std::vector<int> cols(batch.dec_out.size(), -1);
    for (size_t i = 0; i < cols.size(); ++i) {
      const size_t t = batch.dec_out[i];
      if (t == vocab::kPad) continue;
      if (!mask.allows(t))
        throw DataError("target token '" + vocab_->tokens()[t] + "' is outside the " + batch.target_language + " mask");
      cols[i] = t == vocab::kEos ? static_cast<int>(block) : static_cast<int>(t - mask.begin);
      ++st.tokens;
    }
    ad::TiedSoftmax head{&vocab_->embedding(), mask.begin, mask.end, vocab_->special_slot(vocab::kEos), label_smoothing};
    loss = ad::tied_softmax_loss(g, out, p["specials.embedding"], head, cols, &st.correct);
  } else {
    const Matrix& Y = g.value(out);
    Matrix targets = Matrix::Zero(Y.rows(), Y.cols());
    std::vector<char> valid(batch.dec_out.size(), 0);
    RowVector eos = param("specials.embedding").value.row(vocab_->special_slot(vocab::kEos));
    if (eos.norm() > 0) eos.normalize();
    std::vector<size_t> gold(batch.dec_out.size(), 0);
    for (size_t i = 0; i < batch.dec_out.size(); ++i) {
      const size_t t = batch.dec_out[i];
      if (t == vocab::kPad) continue;
      if (!mask.allows(t))
        throw DataError("target token '" + vocab_->tokens()[t] + "' is outside the " + batch.target_language + " mask");
      const auto r = static_cast<Eigen::Index>(i);
      if (t == vocab::kEos) {
        targets.row(r) = eos;
      } else {
        targets.row(r) = vocab_->embedding().row(static_cast<Eigen::Index>(t));
        const double n = targets.row(r).norm();
        if (n > 0) targets.row(r) /= n;
      }
      valid[i] = 1;
      gold[i] = t;
      ++st.tokens;
    }
    loss = ad::vmf_loss(g, out, targets, valid, lambda_vmf);
    if (stats) {
      // Accuracy needs a scan over the target block; only done when asked.
      const Matrix rows = target_rows(mask);
      const Matrix sims = Y * rows.transpose();
      for (size_t i = 0; i < valid.size(); ++i) {
        if (!valid[i]) continue;
        Eigen::Index best = 0;
        sims.row(static_cast<Eigen::Index>(i)).maxCoeff(&best);
        const size_t pred = static_cast<size_t>(best) == block ? vocab::kEos : mask.begin + static_cast<size_t>(best);
        st.correct += pred == gold[i];
      }
    }
  }
  st.loss = g.value(loss)(0, 0);
  if (stats) *stats = st;
  return loss;
}

LossStats Transformer::forward_backward(const Batch& batch, Rng* dropout_rng, double label_smoothing,
                                        double lambda_vmf) {
  Graph g;
  LossStats st;
  const Id loss = forward_loss(g, batch, dropout_rng, label_smoothing, lambda_vmf, config_.head == Head::softmax ? &st : nullptr);
  if (config_.head == Head::vmf) {
    st.loss = g.value(loss)(0, 0);
    for (size_t t : batch.dec_out) st.tokens += t != vocab::kPad;
  }
  g.backward(loss);
  return st;
}

LossStats Transformer::evaluate(const Batch& batch, double label_smoothing, double lambda_vmf) {
  Graph g;
  LossStats st;
  forward_loss(g, batch, nullptr, label_smoothing, lambda_vmf, &st);
  return st;
}

Matrix Transformer::encode_batch(const TokenIds& padded, size_t batch, size_t len) const {
  Graph g;
  const Ids p = bind(g, false);
  std::vector<char> valid(padded.size());
  for (size_t i = 0; i < padded.size(); ++i) {
    if (padded[i] >= vocab_->size()) throw InputError("token index " + std::to_string(padded[i]) + " out of range");
    valid[i] = padded[i] != vocab::kPad;
  }
  return g.value(run_encoder(g, p, padded, batch, len, valid, nullptr));
}

Matrix Transformer::encode(const TokenIds& source) const {
  TokenIds src = source;
  src.push_back(vocab::kEos);
  return encode_batch(src, 1, src.size());
}

Matrix Transformer::last_outputs(const Matrix& states, const std::vector<TokenIds>& prefixes) const {
  const size_t n = prefixes.size();
  Matrix memory(states.rows() * static_cast<Eigen::Index>(n), states.cols());
  for (size_t b = 0; b < n; ++b) memory.middleRows(static_cast<Eigen::Index>(b) * states.rows(), states.rows()) = states;
  return last_outputs_batch(memory, std::vector<char>(static_cast<size_t>(memory.rows()), 1),
                            static_cast<size_t>(states.rows()), prefixes);
}

Matrix Transformer::last_outputs_batch(const Matrix& states, const std::vector<char>& src_valid, size_t src_len,
                                       const std::vector<TokenIds>& prefixes) const {
  if (prefixes.empty()) return Matrix(0, config_.d_model);
  const size_t n = prefixes.size(), len = prefixes.front().size();
  TokenIds dec_in;
  dec_in.reserve(n * len);
  for (const auto& pre : prefixes) {
    if (pre.size() != len) throw ConfigError("prefixes must share one length");
    for (size_t t : pre) {
      if (t >= vocab_->size()) throw InputError("token index " + std::to_string(t) + " out of range");
      dec_in.push_back(t);
    }
  }
  Graph g;
  const Ids p = bind(g, false);
  const Id memory = g.constant(states);
  const Id out = run_decoder(g, p, memory, src_valid, src_len, dec_in, n, len, nullptr);
  const Matrix& Y = g.value(out);
  Matrix last(static_cast<Eigen::Index>(n), Y.cols());
  for (size_t b = 0; b < n; ++b) last.row(static_cast<Eigen::Index>(b)) = Y.row(static_cast<Eigen::Index>(b * len + len - 1));
  return last;
}

Matrix Transformer::target_rows(const vocab::LanguageMask& mask) const {
  const auto n = static_cast<Eigen::Index>(mask.end - mask.begin);
  Matrix rows(n + 1, config_.d_model);
  rows.topRows(n) = vocab_->embedding().middleRows(static_cast<Eigen::Index>(mask.begin), n);
  rows.row(n) = param("specials.embedding").value.row(vocab_->special_slot(mask.eos));
  for (Eigen::Index r = 0; r <= n; ++r) {
    const double norm = rows.row(r).norm();
    if (norm > 0) rows.row(r) /= norm;
  }
  return rows;
}

Matrix Transformer::step_scores(const Matrix& outputs, const vocab::LanguageMask& mask, double lambda_vmf) const {
  const auto n = static_cast<Eigen::Index>(mask.end - mask.begin);
  if (config_.head == Head::softmax) {
    Matrix logits(outputs.rows(), n + 1);
    logits.leftCols(n).noalias() = outputs * vocab_->embedding().middleRows(static_cast<Eigen::Index>(mask.begin), n).transpose();
    logits.col(n) = outputs * param("specials.embedding").value.row(vocab_->special_slot(mask.eos)).transpose();
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      const double mx = logits.row(r).maxCoeff();
      const double lse = mx + std::log((logits.row(r).array() - mx).exp().sum());
      logits.row(r).array() -= lse;
    }
    return logits;
  }
  const Matrix rows = target_rows(mask);
  Matrix scores = outputs * rows.transpose();
  for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
    const double kappa = std::max(outputs.row(r).norm(), ad::kKappaFloor);
    scores.row(r) = lambda_vmf * scores.row(r).array() - ad::vmf_neg_log_norm(kappa, config_.d_model);
  }
  return scores;
}

void Transformer::replace_vocab(std::shared_ptr<const vocab::MultiVocab> v, const std::string& init_tag_from) {
  if (!v) throw ConfigError("null vocabulary");
  if (v->dim() != config_.d_model) throw ConfigError("vocabulary dimension differs from d_model");
  const auto& old_specials = vocab_->specials();
  const auto& new_specials = v->specials();
  if (new_specials.size() < old_specials.size() ||
      !std::equal(old_specials.begin(), old_specials.end(), new_specials.begin()))
    throw ConfigError("replacement vocabulary must extend the current one");
  ad::Param& sp = param("specials.embedding");
  if (new_specials.size() > old_specials.size()) {
    const RowVector init = sp.value.row(vocab_->special_slot(vocab_->tag(init_tag_from)));
    Matrix grown(static_cast<Eigen::Index>(new_specials.size()), sp.value.cols());
    grown.topRows(sp.value.rows()) = sp.value;
    for (Eigen::Index r = sp.value.rows(); r < grown.rows(); ++r) grown.row(r) = init;
    sp.value = std::move(grown);
    sp.zero_grad();
  }
  vocab_ = std::move(v);
}

void Transformer::save(const std::filesystem::path& path) const {
  const std::string vocab_text = vocab_->format();
  std::filesystem::path vocab_path = path;
  vocab_path += ".vocab.txt";
  write_file(vocab_path, vocab_text);
  TensorArchive a;
  a.config_text = config_.canonical() + "vocab_file=" + vocab_path.filename().string() + "\nvocab_sha256=" +
                  sha256_hex(vocab_text) + "\n";
  for (const auto& [name, i] : by_name_) a.put(name, params_[i].value);
  a.put("vocab.embedding", vocab_->embedding());
  a.save(path);
}

Transformer Transformer::load(const std::filesystem::path& path) {
  const auto a = TensorArchive::load(path);
  std::string vocab_file, vocab_hash;
  std::istringstream in(a.config_text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.rfind("vocab_file=", 0) == 0) vocab_file = line.substr(11);
    if (line.rfind("vocab_sha256=", 0) == 0) vocab_hash = line.substr(13);
  }
  if (vocab_file.empty() || vocab_hash.empty()) throw FormatError(path.string() + ": checkpoint lacks a vocabulary reference");
  const std::string vocab_text = read_file(path.parent_path() / vocab_file);
  if (sha256_hex(vocab_text) != vocab_hash)
    throw FormatError(path.string() + ": vocabulary file hash does not match the checkpoint");

  Transformer t;
  t.config_ = TransformerConfig::parse(a.config_text);
  t.vocab_ = std::make_shared<const vocab::MultiVocab>(vocab::MultiVocab::parse(vocab_text, a.matrix("vocab.embedding")));
  Rng rng(0);
  t.build_params(rng);
  for (auto& p : t.params_) {
    if (!a.contains(p.name)) throw FormatError(path.string() + ": missing tensor '" + p.name + "'");
    Matrix m = a.matrix(p.name);
    if (p.name != "specials.embedding" && (m.rows() != p.value.rows() || m.cols() != p.value.cols()))
      throw FormatError(path.string() + ": tensor '" + p.name + "' has the wrong shape");
    p.value = std::move(m);
  }
  return t;
}

void check_gradients_finite(const Transformer& model) {
  for (const auto& p : model.params())
    if (p.trainable && p.grad.size() && !p.grad.allFinite())
      throw TrainingError("non-finite gradient in tensor '" + p.name + "'");
}

}  // namespace famt::model
