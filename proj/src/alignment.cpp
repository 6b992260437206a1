#include "famt/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include "famt/random.hpp"
#include "famt/tensor_file.hpp"
#include "famt/text.hpp"

namespace famt::align {
namespace {

// Indices of the k largest entries of `row` (ties resolved towards lower index).
std::vector<Eigen::Index> top_k(const Eigen::Ref<const RowVector>& row, int k) {
  std::vector<Eigen::Index> idx(static_cast<size_t>(row.size()));
  std::iota(idx.begin(), idx.end(), 0);
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(), [&](Eigen::Index a, Eigen::Index b) {
    return row(a) > row(b) || (row(a) == row(b) && a < b);
  });
  idx.resize(static_cast<size_t>(k));
  return idx;
}

Matrix capped(const Matrix& m, const std::optional<size_t>& pool) {
  if (!pool || static_cast<Eigen::Index>(*pool) >= m.rows()) return m;
  return m.topRows(static_cast<Eigen::Index>(*pool));
}

void check_k(int k, Eigen::Index pool_rows) {
  if (k < 1) throw ConfigError("CSLS k must be >= 1");
  if (k > pool_rows)
    throw ConfigError("CSLS k=" + std::to_string(k) + " exceeds vocabulary size " + std::to_string(pool_rows));
}

// d cos(u, z) / du for unit z.
RowVector cos_grad(const RowVector& u, const RowVector& z) {
  const double n = u.norm();
  if (n == 0.0) return RowVector::Zero(u.size());
  const RowVector uh = u / n;
  return (z - uh.dot(z) * uh) / n;
}

struct LossTerms {
  double loss = 0.0;
  Matrix grad;
};

LossTerms rcsls_terms(const Matrix& W, const Matrix& X, const Matrix& Y, const Matrix& Sv, const Matrix& Tv, int k,
                      bool with_grad) {
  const auto n = X.rows();
  const Matrix U = X * W.transpose();
  const Matrix Un = normalized_rows(U);
  const Matrix V = Sv * W.transpose();
  const Matrix Vn = normalized_rows(V);
  const Matrix sims_t = Un * Tv.transpose();
  const Matrix sims_s = Y * Vn.transpose();

  LossTerms out;
  Matrix dU = Matrix::Zero(n, W.rows());
  Matrix dV;
  if (with_grad) dV = Matrix::Zero(V.rows(), W.rows());
  const double inv_n = 1.0 / static_cast<double>(n);
  const double inv_k = 1.0 / static_cast<double>(k);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double c = Un.row(i).dot(Y.row(i));
    const auto nt = top_k(sims_t.row(i), k);
    const auto ns = top_k(sims_s.row(i), k);
    double rt = 0.0, rs = 0.0;
    for (auto t : nt) rt += sims_t(i, t);
    for (auto s : ns) rs += sims_s(i, s);
    out.loss += -2.0 * c + rt * inv_k + rs * inv_k;
    if (with_grad) {
      const RowVector u = U.row(i);
      RowVector g = -2.0 * cos_grad(u, Y.row(i));
      for (auto t : nt) g += inv_k * cos_grad(u, Tv.row(t));
      dU.row(i) += inv_n * g;
      for (auto s : ns) dV.row(s) += (inv_n * inv_k) * cos_grad(V.row(s), Y.row(i));
    }
  }
  out.loss *= inv_n;
  if (with_grad) out.grad = dU.transpose() * X + dV.transpose() * Sv;
  return out;
}

}  // namespace

void BilingualDictionary::validate() const {
  for (const auto& [s, t] : pairs)
    if (s.empty() || t.empty()) throw FormatError("dictionary contains an empty word");
}

BilingualDictionary load_dictionary(const std::filesystem::path& path, std::string source_language,
                                    std::string target_language) {
  BilingualDictionary d{std::move(source_language), std::move(target_language), {}};
  size_t line_no = 0;
  for (const auto& line : read_lines(path)) {
    ++line_no;
    const auto f = split_whitespace(line);
    if (f.empty()) continue;
    if (f.size() != 2) throw FormatError(path.string() + ":" + std::to_string(line_no) + ": expected 'src tgt'");
    d.pairs.emplace_back(f[0], f[1]);
  }
  return d;
}

void save_dictionary(const std::filesystem::path& path, const BilingualDictionary& dict) {
  std::vector<std::string> lines;
  for (const auto& [s, t] : dict.pairs) lines.push_back(s + " " + t);
  write_lines(path, lines);
}

std::pair<BilingualDictionary, BilingualDictionary> split_dictionary(const BilingualDictionary& dict,
                                                                     double test_fraction, uint64_t seed) {
  std::vector<std::string> sources;
  std::unordered_set<std::string> seen;
  for (const auto& [s, t] : dict.pairs)
    if (seen.insert(s).second) sources.push_back(s);
  Rng rng(seed);
  rng.shuffle(sources);
  const auto n_test = static_cast<size_t>(test_fraction * static_cast<double>(sources.size()));
  std::unordered_set<std::string> test(sources.begin(), sources.begin() + static_cast<long>(n_test));
  BilingualDictionary train{dict.source_language, dict.target_language, {}};
  BilingualDictionary held{dict.source_language, dict.target_language, {}};
  for (const auto& p : dict.pairs) (test.count(p.first) ? held : train).pairs.push_back(p);
  return {train, held};
}

LinearMap LinearMap::identity(Eigen::Index dim, const std::string& language) {
  return LinearMap{Matrix::Identity(dim, dim), language, language, true};
}

Matrix LinearMap::apply(const Matrix& rows, bool renormalize) const {
  Matrix out = rows * matrix.transpose();
  return renormalize ? normalized_rows(out) : out;
}

double LinearMap::orthogonality_error() const {
  const Matrix g = matrix.transpose() * matrix - Matrix::Identity(matrix.cols(), matrix.cols());
  return g.cwiseAbs().maxCoeff();
}

const LinearMap& HubAlignment::map_for(const std::string& language) const {
  auto it = maps.find(language);
  if (it == maps.end()) throw LookupError("no alignment map for language '" + language + "'");
  return it->second;
}

void HubAlignment::save(const std::filesystem::path& path) const {
  TensorArchive a;
  std::ostringstream cfg;
  cfg << "pivot=" << pivot << "\n";
  for (const auto& [lang, m] : maps) {
    cfg << "map=" << lang << "," << (m.orthogonal ? 1 : 0) << "\n";
    a.put("align." + lang, m.matrix);
  }
  a.config_text = cfg.str();
  a.save(path);
}

HubAlignment HubAlignment::load(const std::filesystem::path& path) {
  const auto a = TensorArchive::load(path);
  HubAlignment h;
  for (const auto& line : split_whitespace(a.config_text)) {
    if (line.rfind("pivot=", 0) == 0) h.pivot = line.substr(6);
    if (line.rfind("map=", 0) == 0) {
      const auto comma = line.find(',');
      const std::string lang = line.substr(4, comma - 4);
      LinearMap m{a.matrix("align." + lang), lang, "", line.substr(comma + 1) == "1"};
      h.maps.emplace(lang, std::move(m));
    }
  }
  if (h.pivot.empty()) throw FormatError("alignment artifact lacks a pivot");
  for (auto& [lang, m] : h.maps) m.target_language = h.pivot;
  return h;
}

Matrix normalized_rows(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    const double n = out.row(r).norm();
    if (n > 0.0) out.row(r) /= n;
  }
  return out;
}

LinearMap procrustes(const Matrix& X, const Matrix& Y) {
  if (X.rows() < 1 || X.rows() != Y.rows() || X.cols() != Y.cols())
    throw ConfigError("procrustes needs equally shaped, non-empty X and Y");
  if (X.isZero(0.0) || Y.isZero(0.0)) throw NumericalError("procrustes inputs are all zero");
  const Matrix M = Y.transpose() * X;
  Eigen::JacobiSVD<Matrix> svd(M, Eigen::ComputeFullU | Eigen::ComputeFullV);
  LinearMap map;
  map.matrix = svd.matrixU() * svd.matrixV().transpose();
  map.orthogonal = true;
  if (!map.matrix.allFinite()) throw NumericalError("procrustes SVD produced non-finite values");
  return map;
}

Vector knn_mean_similarity(const Matrix& queries, const Matrix& pool, int k) {
  check_k(k, pool.rows());
  Vector out(queries.rows());
  constexpr Eigen::Index kChunk = 512;
  for (Eigen::Index start = 0; start < queries.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, queries.rows() - start);
    const Matrix sims = queries.middleRows(start, len) * pool.transpose();
    for (Eigen::Index i = 0; i < len; ++i) {
      double s = 0.0;
      for (auto j : top_k(sims.row(i), k)) s += sims(i, j);
      out(start + i) = s / k;
    }
  }
  return out;
}

double csls(const RowVector& x, const RowVector& y, double r_target_of_x, double r_source_of_y) {
  const double nx = x.norm(), ny = y.norm();
  const double c = (nx == 0.0 || ny == 0.0) ? 0.0 : x.dot(y) / (nx * ny);
  return 2.0 * c - r_target_of_x - r_source_of_y;
}

CslsContext make_csls_context(const Matrix& mapped_source, const Matrix& target, const CslsParams& params) {
  CslsContext ctx;
  ctx.source = normalized_rows(mapped_source);
  ctx.target = normalized_rows(target);
  const Matrix src_pool = capped(ctx.source, params.candidate_pool);
  const Matrix tgt_pool = capped(ctx.target, params.candidate_pool);
  ctx.r_target = knn_mean_similarity(ctx.source, tgt_pool, params.k);
  ctx.r_source = knn_mean_similarity(ctx.target, src_pool, params.k);
  return ctx;
}

Matrix csls_scores(const CslsContext& ctx, const std::vector<size_t>& source_rows) {
  Matrix q(static_cast<Eigen::Index>(source_rows.size()), ctx.source.cols());
  Vector rt(q.rows());
  for (size_t i = 0; i < source_rows.size(); ++i) {
    q.row(static_cast<Eigen::Index>(i)) = ctx.source.row(static_cast<Eigen::Index>(source_rows[i]));
    rt(static_cast<Eigen::Index>(i)) = ctx.r_target(static_cast<Eigen::Index>(source_rows[i]));
  }
  Matrix s = 2.0 * q * ctx.target.transpose();
  s.colwise() -= rt;
  s.rowwise() -= ctx.r_source.transpose();
  return s;
}

std::pair<Matrix, Matrix> dictionary_rows(const BilingualDictionary& dict, const emb::EmbeddingTable& source,
                                          const emb::EmbeddingTable& target) {
  std::vector<std::pair<size_t, size_t>> idx;
  for (const auto& [s, t] : dict.pairs) {
    auto i = source.find(s);
    auto j = target.find(t);
    if (i && j) idx.emplace_back(*i, *j);
  }
  Matrix X(static_cast<Eigen::Index>(idx.size()), source.dim());
  Matrix Y(static_cast<Eigen::Index>(idx.size()), target.dim());
  for (size_t r = 0; r < idx.size(); ++r) {
    X.row(static_cast<Eigen::Index>(r)) = source.matrix().row(static_cast<Eigen::Index>(idx[r].first));
    Y.row(static_cast<Eigen::Index>(r)) = target.matrix().row(static_cast<Eigen::Index>(idx[r].second));
  }
  return {normalized_rows(X), normalized_rows(Y)};
}

double rcsls_loss(const Matrix& W, const Matrix& X, const Matrix& Y, const Matrix& source_vocab,
                  const Matrix& target_vocab, const CslsParams& params) {
  check_k(params.k, std::min(source_vocab.rows(), target_vocab.rows()));
  return rcsls_terms(W, X, Y, source_vocab, target_vocab, params.k, false).loss;
}

std::pair<double, Matrix> rcsls_loss_grad(const Matrix& W, const Matrix& X, const Matrix& Y, const Matrix& source_vocab,
                                          const Matrix& target_vocab, const CslsParams& params) {
  check_k(params.k, std::min(source_vocab.rows(), target_vocab.rows()));
  auto t = rcsls_terms(W, X, Y, source_vocab, target_vocab, params.k, true);
  return {t.loss, std::move(t.grad)};
}

RcslsResult rcsls_refine(const LinearMap& initial, const BilingualDictionary& dict, const emb::EmbeddingTable& source,
                         const emb::EmbeddingTable& target, const CslsParams& params, const RcslsOptions& options) {
  const auto [X, Y] = dictionary_rows(dict, source, target);
  if (X.rows() == 0) throw ConfigError("RCSLS needs a non-empty in-vocabulary dictionary");
  const Matrix Sv = capped(normalized_rows(source.matrix()), params.candidate_pool);
  const Matrix Tv = capped(normalized_rows(target.matrix()), params.candidate_pool);
  check_k(params.k, std::min(Sv.rows(), Tv.rows()));

  RcslsResult result{initial, {}};
  result.map.orthogonal = false;
  Matrix W = initial.matrix;
  auto current = rcsls_terms(W, X, Y, Sv, Tv, params.k, true);
  if (!std::isfinite(current.loss)) throw OptimizationError("RCSLS loss is not finite at the initial map", initial);
  result.losses.push_back(current.loss);
  double lr = options.learning_rate;

  for (int epoch = 0; epoch < options.epochs; ++epoch) {
    if (!current.grad.allFinite()) {
      result.map.matrix = W;
      throw OptimizationError("RCSLS gradient diverged at epoch " + std::to_string(epoch), result.map);
    }
    bool accepted = false;
    for (int attempt = 0; attempt <= options.max_backtracks; ++attempt) {
      Matrix candidate = W - lr * current.grad;
      auto next = rcsls_terms(candidate, X, Y, Sv, Tv, params.k, true);
      if (!options.line_search) {
        if (!std::isfinite(next.loss)) {
          result.map.matrix = W;
          throw OptimizationError("RCSLS loss diverged at epoch " + std::to_string(epoch), result.map);
        }
        W = std::move(candidate);
        current = std::move(next);
        accepted = true;
        break;
      }
      if (std::isfinite(next.loss) && next.loss <= current.loss) {
        W = std::move(candidate);
        current = std::move(next);
        accepted = true;
        lr *= 1.5;
        break;
      }
      lr *= 0.5;
    }
    if (!accepted) break;
    result.losses.push_back(current.loss);
  }
  result.map.matrix = W;
  return result;
}

PrecisionReport eval_p_at_1(const LinearMap& map, const emb::EmbeddingTable& source, const emb::EmbeddingTable& target,
                            const BilingualDictionary& dict, const CslsParams& params) {
  PrecisionReport report;
  std::vector<size_t> queries;
  std::unordered_map<size_t, std::set<size_t>> gold;
  for (const auto& [s, t] : dict.pairs) {
    auto i = source.find(s);
    auto j = target.find(t);
    if (!i || !j) {
      ++report.skipped;
      continue;
    }
    if (!gold.count(*i)) queries.push_back(*i);
    gold[*i].insert(*j);
  }
  if (queries.empty()) throw EvaluationError("no usable dictionary pairs for P@1");

  const Matrix mapped = map.apply(source.matrix(), true);
  const Matrix tgt = capped(normalized_rows(target.matrix()), params.candidate_pool);
  const Matrix src_pool = capped(mapped, params.candidate_pool);

  Matrix q(static_cast<Eigen::Index>(queries.size()), mapped.cols());
  for (size_t r = 0; r < queries.size(); ++r) q.row(static_cast<Eigen::Index>(r)) = mapped.row(static_cast<Eigen::Index>(queries[r]));
  const Vector rt = knn_mean_similarity(q, tgt, params.k);
  const Vector rs = knn_mean_similarity(tgt, src_pool, params.k);
  Matrix scores = 2.0 * q * tgt.transpose();
  scores.colwise() -= rt;
  scores.rowwise() -= rs.transpose();

  size_t hits = 0;
  for (size_t r = 0; r < queries.size(); ++r) {
    Eigen::Index best = 0;
    scores.row(static_cast<Eigen::Index>(r)).maxCoeff(&best);
    if (gold[queries[r]].count(static_cast<size_t>(best))) ++hits;
  }
  report.evaluated = queries.size();
  report.accuracy = static_cast<double>(hits) / static_cast<double>(queries.size());
  return report;
}

HubAlignment align_to_hub(const std::map<std::string, emb::EmbeddingTable>& tables,
                          const std::map<std::string, BilingualDictionary>& dicts, const std::string& pivot,
                          const HubOptions& options) {
  auto pit = tables.find(pivot);
  if (pit == tables.end()) throw ConfigError("pivot language '" + pivot + "' has no embedding table");
  const auto& pivot_table = pit->second;
  HubAlignment hub;
  hub.pivot = pivot;
  for (const auto& [lang, table] : tables) {
    if (table.dim() != pivot_table.dim()) throw ConfigError("embedding dimension mismatch for '" + lang + "'");
    if (lang == pivot) {
      hub.maps.emplace(lang, LinearMap::identity(table.dim(), pivot));
      continue;
    }
    auto dit = dicts.find(lang);
    if (dit == dicts.end()) throw ConfigError("missing dictionary from '" + lang + "' to pivot '" + pivot + "'");
    const auto [X, Y] = dictionary_rows(dit->second, table, pivot_table);
    if (X.rows() == 0) throw ConfigError("dictionary for '" + lang + "' has no in-vocabulary pairs");
    LinearMap map = procrustes(X, Y);
    map.source_language = lang;
    map.target_language = pivot;
    if (options.refine) map = rcsls_refine(map, dit->second, table, pivot_table, options.csls, options.rcsls).map;
    map.source_language = lang;
    map.target_language = pivot;
    hub.train_p_at_1[lang] = eval_p_at_1(map, table, pivot_table, dit->second, options.csls).accuracy;
    hub.maps.emplace(lang, std::move(map));
  }
  return hub;
}

}  // namespace famt::align
