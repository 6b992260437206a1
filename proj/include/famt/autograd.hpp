#pragma once

#include <functional>
#include <string>
#include <vector>

#include "famt/linalg.hpp"
#include "famt/random.hpp"

namespace famt::ad {

struct Param {
  std::string name;
  std::string group;
  Matrix value;
  Matrix grad;  // empty until a backward pass touches it
  bool trainable = true;

  void zero_grad() { grad.resize(0, 0); }
};

// Tape of matrix-valued nodes. Ops append nodes; backward() walks the tape
// in reverse and accumulates into Param::grad for trainable leaves.
class Graph {
 public:
  using Id = int;
  using Backward = std::function<void(Graph&, Id)>;

  Id constant(Matrix value);
  Id param(Param& p);
  Id push(Matrix value, bool needs_grad, Backward back);

  const Matrix& value(Id id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool needs_grad(Id id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }
  // Gradient buffer, zero-initialised on first access.
  Matrix& grad(Id id);
  bool has_grad(Id id) const { return nodes_[static_cast<size_t>(id)].grad.size() > 0; }

  // Root must be 1x1.
  void backward(Id root, double seed = 1.0);
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    Param* param = nullptr;
    bool needs_grad = false;
    Backward back;
  };
  std::vector<Node> nodes_;
};

using Id = Graph::Id;

// x W^T (+ b). x: n x in, W: out x in, b: 1 x out or -1.
Id linear(Graph& g, Id x, Id w, Id b = -1);
Id add(Graph& g, Id a, Id b);
Id relu(Graph& g, Id a);
// Inverted dropout; identity when rng is null or rate is 0.
Id dropout(Graph& g, Id a, double rate, Rng* rng);
// Per-row normalisation with gain and bias (1 x d each).
Id layer_norm(Graph& g, Id x, Id gain, Id bias, double eps = 1e-6);

// Multi-head scaled dot-product attention over a padded batch. Rows of q are
// batch-major (b * len_q + i), likewise k and v with len_k. Relative position
// tables (2 * clip + 1) x head_dim are shared by all heads; pass -1 to omit.
struct AttentionShape {
  size_t batch = 1;
  size_t len_q = 0;
  size_t len_k = 0;
  int heads = 1;
  int clip = 16;
  bool causal = false;
  std::vector<char> key_valid;  // batch * len_k, empty means all valid
};
Id attention(Graph& g, Id q, Id k, Id v, Id rel_k, Id rel_v, const AttentionShape& shape);

// Rows for token ids: special tokens read `specials` (a trainable node) at
// their slot, word tokens read the frozen `words` table. Both are scaled.
Id embed(Graph& g, const Matrix& words, Id specials, const std::vector<int>& slots, const std::vector<size_t>& ids,
         double scale);

// Label-smoothed cross entropy summed over rows with target >= 0. `allowed`
// (optional) marks usable columns; disallowed columns get probability 0 and
// smoothing mass is spread over allowed columns only. Throws DataError if a
// target column is not allowed.
double smoothed_xent(const Matrix& logits, const std::vector<int>& targets, double eps, Matrix* dlogits,
                     const std::vector<char>* allowed = nullptr, size_t* correct = nullptr);

// Tied output layer over one target-language block: logits are h [E; e_eos]^T
// with E the frozen word rows [begin, end) and e_eos the specials row at
// eos_slot. Targets are column ids (word offset, or block size for EOS), -1
// to skip. Returns the summed loss as a 1x1 node.
struct TiedSoftmax {
  const Matrix* words = nullptr;
  size_t begin = 0;
  size_t end = 0;
  int eos_slot = 2;
  double label_smoothing = 0.1;
};
Id tied_softmax_loss(Graph& g, Id hidden, Id specials, const TiedSoftmax& head, const std::vector<int>& targets,
                     size_t* correct = nullptr);

// -log C_m(kappa) with the closed-form approximation
// sqrt((m/2+1)^2 + k^2) - (m/2-1) log((m/2-1) + sqrt((m/2+1)^2 + k^2)).
double vmf_neg_log_norm(double kappa, int m);
double vmf_neg_log_norm_grad(double kappa, int m);
inline constexpr double kKappaFloor = 1e-8;

// loss = -log C_m(|y|) - lambda y.e for one output vector; e should be unit.
double vmf_loss(const RowVector& y, const RowVector& e, double lambda, RowVector* grad = nullptr);

// Summed vMF loss over rows with valid[r] != 0; targets holds one unit row per output row.
Id vmf_loss(Graph& g, Id y, const Matrix& targets, const std::vector<char>& valid, double lambda);

}  // namespace famt::ad
