#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "famt/embeddings.hpp"
#include "famt/error.hpp"
#include "famt/linalg.hpp"

namespace famt::align {

struct BilingualDictionary {
  std::string source_language;
  std::string target_language;
  std::vector<std::pair<std::string, std::string>> pairs;

  void validate() const;
};

// "src tgt" per line, whitespace separated.
BilingualDictionary load_dictionary(const std::filesystem::path& path, std::string source_language,
                                    std::string target_language);
void save_dictionary(const std::filesystem::path& path, const BilingualDictionary& dict);

// Deterministic split of the unique source words into train/test halves.
std::pair<BilingualDictionary, BilingualDictionary> split_dictionary(const BilingualDictionary& dict,
                                                                     double test_fraction, uint64_t seed);

// Maps column vectors: x -> W x. Row-stored embeddings map as X W^T.
struct LinearMap {
  Matrix matrix;
  std::string source_language;
  std::string target_language;
  bool orthogonal = false;

  static LinearMap identity(Eigen::Index dim, const std::string& language);
  Matrix apply(const Matrix& rows, bool renormalize = true) const;
  double orthogonality_error() const;  // max |W^T W - I|
};

struct HubAlignment {
  std::string pivot;
  std::map<std::string, LinearMap> maps;
  std::map<std::string, double> train_p_at_1;

  const LinearMap& map_for(const std::string& language) const;
  void save(const std::filesystem::path& path) const;
  static HubAlignment load(const std::filesystem::path& path);
};

struct CslsParams {
  int k = 10;
  std::optional<size_t> candidate_pool;  // caps the target/source sets searched
};

// Orthogonal W = U V^T from the SVD of Y^T X; rows of X and Y are paired.
LinearMap procrustes(const Matrix& X, const Matrix& Y);

// Mean cosine of each query row to its k most similar rows of `pool`.
Vector knn_mean_similarity(const Matrix& queries, const Matrix& pool, int k);

// CSLS(x, y) = 2 cos(x, y) - r_T(x) - r_S(y).
double csls(const RowVector& x, const RowVector& y, double r_target_of_x, double r_source_of_y);

struct CslsContext {
  Matrix source;      // mapped, unit rows
  Matrix target;      // unit rows
  Vector r_target;    // per source row: mean cos to k nearest targets
  Vector r_source;    // per target row: mean cos to k nearest sources
};

CslsContext make_csls_context(const Matrix& mapped_source, const Matrix& target, const CslsParams& params);

// Full CSLS score matrix between the chosen source rows and all targets.
Matrix csls_scores(const CslsContext& ctx, const std::vector<size_t>& source_rows);

struct RcslsOptions {
  int epochs = 50;
  double learning_rate = 1.0;
  int max_backtracks = 12;
  bool line_search = true;
};

struct RcslsResult {
  LinearMap map;
  std::vector<double> losses;  // one entry per accepted iterate, starting at W0
};

class OptimizationError : public Error {
 public:
  OptimizationError(const std::string& what, LinearMap last_finite) : Error(what), last_finite_(std::move(last_finite)) {}
  const char* kind() const noexcept override { return "optimization error"; }
  const LinearMap& last_finite() const { return last_finite_; }

 private:
  LinearMap last_finite_;
};

// Loss (1/n) sum_i [-2 cos(W x_i, y_i) + r_T(W x_i) + r_S(y_i)] on the
// dictionary pairs; r_S ranges over the whole mapped source vocabulary.
double rcsls_loss(const Matrix& W, const Matrix& X, const Matrix& Y, const Matrix& source_vocab,
                  const Matrix& target_vocab, const CslsParams& params);

// Loss and its gradient with neighbour sets frozen at W.
std::pair<double, Matrix> rcsls_loss_grad(const Matrix& W, const Matrix& X, const Matrix& Y, const Matrix& source_vocab,
                                          const Matrix& target_vocab, const CslsParams& params);

RcslsResult rcsls_refine(const LinearMap& initial, const BilingualDictionary& dict, const emb::EmbeddingTable& source,
                         const emb::EmbeddingTable& target, const CslsParams& params, const RcslsOptions& options = {});

struct PrecisionReport {
  double accuracy = 0.0;
  size_t evaluated = 0;
  size_t skipped = 0;  // pairs with an out-of-vocabulary side
};

PrecisionReport eval_p_at_1(const LinearMap& map, const emb::EmbeddingTable& source, const emb::EmbeddingTable& target,
                            const BilingualDictionary& dict, const CslsParams& params);

struct HubOptions {
  CslsParams csls;
  RcslsOptions rcsls;
  bool refine = true;
};

HubAlignment align_to_hub(const std::map<std::string, emb::EmbeddingTable>& tables,
                          const std::map<std::string, BilingualDictionary>& dicts, const std::string& pivot,
                          const HubOptions& options = {});

// Rows of X (source) and Y (target) for dictionary pairs present in both tables.
std::pair<Matrix, Matrix> dictionary_rows(const BilingualDictionary& dict, const emb::EmbeddingTable& source,
                                          const emb::EmbeddingTable& target);

Matrix normalized_rows(const Matrix& m);

}  // namespace famt::align
