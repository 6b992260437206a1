#include "famt/autograd.hpp"

#include <cmath>
#include <limits>
#include <memory>

#include "famt/error.hpp"

namespace famt::ad {

Id Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Id Graph::param(Param& p) {
  const Id id = push(p.value, p.trainable, nullptr);
  nodes_.back().param = &p;
  return id;
}

Id Graph::push(Matrix value, bool needs_grad, Backward back) {
  nodes_.push_back(Node{std::move(value), Matrix(), nullptr, needs_grad, std::move(back)});
  return static_cast<Id>(nodes_.size() - 1);
}

Matrix& Graph::grad(Id id) {
  auto& n = nodes_[static_cast<size_t>(id)];
  if (n.grad.size() == 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

void Graph::backward(Id root, double seed) {
  if (value(root).size() != 1) throw ConfigError("backward needs a scalar root");
  grad(root)(0, 0) += seed;
  for (Id id = root; id >= 0; --id) {
    auto& n = nodes_[static_cast<size_t>(id)];
    if (!n.needs_grad || n.grad.size() == 0) continue;
    if (n.back) n.back(*this, id);
    if (n.param) {
      if (n.param->grad.size() == 0) n.param->grad = Matrix::Zero(n.value.rows(), n.value.cols());
      n.param->grad += n.grad;
    }
  }
}

Id linear(Graph& g, Id x, Id w, Id b) {
  Matrix y = g.value(x) * g.value(w).transpose();
  if (b >= 0) y.rowwise() += g.value(b).row(0);
  const bool needs = g.needs_grad(x) || g.needs_grad(w) || g.needs_grad(b);
  return g.push(std::move(y), needs, [x, w, b](Graph& g, Id self) {
    const Matrix& dy = g.grad(self);
    if (g.needs_grad(x)) g.grad(x).noalias() += dy * g.value(w);
    if (g.needs_grad(w)) g.grad(w).noalias() += dy.transpose() * g.value(x);
    if (g.needs_grad(b)) g.grad(b) += dy.colwise().sum();
  });
}

Id add(Graph& g, Id a, Id b) {
  Matrix y = g.value(a) + g.value(b);
  return g.push(std::move(y), g.needs_grad(a) || g.needs_grad(b), [a, b](Graph& g, Id self) {
    const Matrix dy = g.grad(self);
    if (g.needs_grad(a)) g.grad(a) += dy;
    if (g.needs_grad(b)) g.grad(b) += dy;
  });
}

Id relu(Graph& g, Id a) {
  Matrix y = g.value(a).cwiseMax(0.0);
  return g.push(std::move(y), g.needs_grad(a), [a](Graph& g, Id self) {
    const Matrix& x = g.value(a);
    g.grad(a) += (x.array() > 0.0).select(g.grad(self), 0.0);
  });
}

Id dropout(Graph& g, Id a, double rate, Rng* rng) {
  if (!rng || rate <= 0.0) return a;
  const Matrix& x = g.value(a);
  auto mask = std::make_shared<Matrix>(x.rows(), x.cols());
  const double keep = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = rng->uniform() < rate ? 0.0 : keep;
  Matrix y = x.cwiseProduct(*mask);
  return g.push(std::move(y), g.needs_grad(a), [a, mask](Graph& g, Id self) {
    g.grad(a) += g.grad(self).cwiseProduct(*mask);
  });
}

Id layer_norm(Graph& g, Id x, Id gain, Id bias, double eps) {
  const Matrix& in = g.value(x);
  const auto d = in.cols();
  auto xhat = std::make_shared<Matrix>(in.rows(), d);
  auto inv_sigma = std::make_shared<Vector>(in.rows());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    const double mean = in.row(r).mean();
    const double var = (in.row(r).array() - mean).square().mean();
    (*inv_sigma)(r) = 1.0 / std::sqrt(var + eps);
    xhat->row(r) = (in.row(r).array() - mean) * (*inv_sigma)(r);
  }
  Matrix y = xhat->array().rowwise() * g.value(gain).row(0).array();
  y.rowwise() += g.value(bias).row(0);
  const bool needs = g.needs_grad(x) || g.needs_grad(gain) || g.needs_grad(bias);
  return g.push(std::move(y), needs, [x, gain, bias, xhat, inv_sigma](Graph& g, Id self) {
    const Matrix& dy = g.grad(self);
    if (g.needs_grad(gain)) g.grad(gain) += dy.cwiseProduct(*xhat).colwise().sum();
    if (g.needs_grad(bias)) g.grad(bias) += dy.colwise().sum();
    if (g.needs_grad(x)) {
      Matrix dxhat = dy.array().rowwise() * g.value(gain).row(0).array();
      Matrix& dx = g.grad(x);
      for (Eigen::Index r = 0; r < dxhat.rows(); ++r) {
        const double m1 = dxhat.row(r).mean();
        const double m2 = dxhat.row(r).dot(xhat->row(r)) / static_cast<double>(dxhat.cols());
        dx.row(r).array() += (*inv_sigma)(r) * (dxhat.row(r).array() - m1 - xhat->row(r).array() * m2);
      }
    }
  });
}

Id attention(Graph& g, Id q, Id k, Id v, Id rel_k, Id rel_v, const AttentionShape& shape) {
  const Matrix& Q = g.value(q);
  const Matrix& K = g.value(k);
  const Matrix& V = g.value(v);
  const auto B = static_cast<Eigen::Index>(shape.batch);
  const auto Lq = static_cast<Eigen::Index>(shape.len_q);
  const auto Lk = static_cast<Eigen::Index>(shape.len_k);
  const auto d = Q.cols();
  const int H = shape.heads;
  if (H < 1 || d % H != 0) throw ConfigError("model width is not divisible by the head count");
  if (Q.rows() != B * Lq || K.rows() != B * Lk || V.rows() != B * Lk || K.cols() != d || V.cols() != d)
    throw ConfigError("attention input shapes disagree");
  if (!shape.key_valid.empty() && static_cast<Eigen::Index>(shape.key_valid.size()) != B * Lk)
    throw ConfigError("attention key mask has the wrong size");
  const auto dk = d / H;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
  const bool rel = rel_k >= 0;
  const int clip = shape.clip;
  const Eigen::Index R = 2 * clip + 1;

  auto ridx = std::make_shared<Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(Lq, Lk);
  for (Eigen::Index i = 0; i < Lq; ++i)
    for (Eigen::Index j = 0; j < Lk; ++j) {
      const auto r = std::clamp<Eigen::Index>(j - i, -clip, clip);
      (*ridx)(i, j) = static_cast<int>(r + clip);
    }
  auto probs = std::make_shared<std::vector<Matrix>>(static_cast<size_t>(B * H));
  auto valid = std::make_shared<std::vector<char>>(shape.key_valid);

  Matrix out = Matrix::Zero(B * Lq, d);
  constexpr double kNegInf = -std::numeric_limits<double>::infinity();
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int h = 0; h < H; ++h) {
      const auto qb = Q.block(b * Lq, h * dk, Lq, dk);
      const auto kb = K.block(b * Lk, h * dk, Lk, dk);
      const auto vb = V.block(b * Lk, h * dk, Lk, dk);
      Matrix S = qb * kb.transpose();
      if (rel) {
        const Matrix QR = qb * g.value(rel_k).transpose();
        for (Eigen::Index i = 0; i < Lq; ++i)
          for (Eigen::Index j = 0; j < Lk; ++j) S(i, j) += QR(i, (*ridx)(i, j));
      }
      S *= scale;
      for (Eigen::Index i = 0; i < Lq; ++i) {
        double mx = kNegInf;
        for (Eigen::Index j = 0; j < Lk; ++j) {
          const bool ok = (valid->empty() || (*valid)[static_cast<size_t>(b * Lk + j)]) && !(shape.causal && j > i);
          if (!ok) S(i, j) = kNegInf;
          mx = std::max(mx, S(i, j));
        }
        if (mx == kNegInf) {
          S.row(i).setZero();
          continue;
        }
        double z = 0.0;
        for (Eigen::Index j = 0; j < Lk; ++j) {
          S(i, j) = S(i, j) == kNegInf ? 0.0 : std::exp(S(i, j) - mx);
          z += S(i, j);
        }
        S.row(i) /= z;
      }
      auto o = out.block(b * Lq, h * dk, Lq, dk);
      o.noalias() = S * vb;
      if (rel) {
        Matrix Pr = Matrix::Zero(Lq, R);
        for (Eigen::Index i = 0; i < Lq; ++i)
          for (Eigen::Index j = 0; j < Lk; ++j) Pr(i, (*ridx)(i, j)) += S(i, j);
        o.noalias() += Pr * g.value(rel_v);
      }
      (*probs)[static_cast<size_t>(b * H + h)] = std::move(S);
    }
  }

  const bool needs = g.needs_grad(q) || g.needs_grad(k) || g.needs_grad(v) || g.needs_grad(rel_k) || g.needs_grad(rel_v);
  return g.push(std::move(out), needs, [=](Graph& g, Id self) {
    const Matrix& dOut = g.grad(self);
    const Matrix& Q = g.value(q);
    const Matrix& K = g.value(k);
    const Matrix& V = g.value(v);
    for (Eigen::Index b = 0; b < B; ++b) {
      for (int h = 0; h < H; ++h) {
        const Matrix& P = (*probs)[static_cast<size_t>(b * H + h)];
        const Matrix dO = dOut.block(b * Lq, h * dk, Lq, dk);
        const auto qb = Q.block(b * Lq, h * dk, Lq, dk);
        const auto kb = K.block(b * Lk, h * dk, Lk, dk);
        const auto vb = V.block(b * Lk, h * dk, Lk, dk);
        if (g.needs_grad(v)) g.grad(v).block(b * Lk, h * dk, Lk, dk).noalias() += P.transpose() * dO;
        Matrix dP = dO * vb.transpose();
        if (rel) {
          const Matrix DR = dO * g.value(rel_v).transpose();
          Matrix Pr = Matrix::Zero(Lq, R);
          for (Eigen::Index i = 0; i < Lq; ++i)
            for (Eigen::Index j = 0; j < Lk; ++j) {
              dP(i, j) += DR(i, (*ridx)(i, j));
              Pr(i, (*ridx)(i, j)) += P(i, j);
            }
          if (g.needs_grad(rel_v)) g.grad(rel_v).noalias() += Pr.transpose() * dO;
        }
        Matrix dS = P.cwiseProduct(dP);
        const Vector rows = dS.rowwise().sum();
        dS -= P.cwiseProduct(rows.replicate(1, Lk));
        dS *= scale;
        if (g.needs_grad(q)) g.grad(q).block(b * Lq, h * dk, Lq, dk).noalias() += dS * kb;
        if (g.needs_grad(k)) g.grad(k).block(b * Lk, h * dk, Lk, dk).noalias() += dS.transpose() * qb;
        if (rel && (g.needs_grad(q) || g.needs_grad(rel_k))) {
          Matrix dSr = Matrix::Zero(Lq, R);
          for (Eigen::Index i = 0; i < Lq; ++i)
            for (Eigen::Index j = 0; j < Lk; ++j) dSr(i, (*ridx)(i, j)) += dS(i, j);
          if (g.needs_grad(q)) g.grad(q).block(b * Lq, h * dk, Lq, dk).noalias() += dSr * g.value(rel_k);
          if (g.needs_grad(rel_k)) g.grad(rel_k).noalias() += dSr.transpose() * qb;
        }
      }
    }
  });
}

Id embed(Graph& g, const Matrix& words, Id specials, const std::vector<int>& slots, const std::vector<size_t>& ids,
         double scale) {
  Matrix y(static_cast<Eigen::Index>(ids.size()), words.cols());
  const Matrix& sp = g.value(specials);
  for (size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= slots.size()) throw InputError("token index " + std::to_string(ids[r]) + " out of range");
    const int slot = slots[ids[r]];
    const auto row = static_cast<Eigen::Index>(r);
    if (slot >= 0) {
      if (slot >= sp.rows()) throw InputError("special slot " + std::to_string(slot) + " has no embedding row");
      y.row(row) = scale * sp.row(slot);
    } else {
      y.row(row) = scale * words.row(static_cast<Eigen::Index>(ids[r]));
    }
  }
  auto rows = std::make_shared<std::vector<std::pair<Eigen::Index, int>>>();
  for (size_t r = 0; r < ids.size(); ++r)
    if (slots[ids[r]] >= 0) rows->emplace_back(static_cast<Eigen::Index>(r), slots[ids[r]]);
  return g.push(std::move(y), g.needs_grad(specials) && !rows->empty(), [specials, rows, scale](Graph& g, Id self) {
    const Matrix& dy = g.grad(self);
    Matrix& ds = g.grad(specials);
    for (const auto& [r, slot] : *rows) ds.row(slot) += scale * dy.row(r);
  });
}

double smoothed_xent(const Matrix& logits, const std::vector<int>& targets, double eps, Matrix* dlogits,
                     const std::vector<char>* allowed, size_t* correct) {
  if (eps < 0.0 || eps >= 1.0) throw ConfigError("label smoothing must lie in [0, 1)");
  if (static_cast<Eigen::Index>(targets.size()) != logits.rows()) throw ConfigError("one target per logit row expected");
  const auto C = logits.cols();
  if (allowed && static_cast<Eigen::Index>(allowed->size()) != C) throw ConfigError("mask width mismatch");
  auto ok = [&](Eigen::Index c) { return !allowed || (*allowed)[static_cast<size_t>(c)]; };
  Eigen::Index K = 0;
  for (Eigen::Index c = 0; c < C; ++c) K += ok(c);
  if (K == 0) throw ConfigError("softmax mask allows no class");
  if (dlogits) *dlogits = Matrix::Zero(logits.rows(), C);
  size_t hits = 0;
  double total = 0.0;
  const double off = eps / static_cast<double>(K);
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int t = targets[static_cast<size_t>(r)];
    if (t < 0) continue;
    if (t >= C || !ok(t)) throw DataError("gold index " + std::to_string(t) + " lies outside the allowed mask");
    double mx = -std::numeric_limits<double>::infinity();
    Eigen::Index arg = 0;
    for (Eigen::Index c = 0; c < C; ++c)
      if (ok(c) && logits(r, c) > mx) {
        mx = logits(r, c);
        arg = c;
      }
    hits += arg == t;
    double z = 0.0, mean_logit = 0.0;
    for (Eigen::Index c = 0; c < C; ++c)
      if (ok(c)) {
        z += std::exp(logits(r, c) - mx);
        mean_logit += logits(r, c);
      }
    const double lse = mx + std::log(z);
    total += lse - (1.0 - eps) * logits(r, t) - off * mean_logit;
    if (dlogits) {
      for (Eigen::Index c = 0; c < C; ++c)
        if (ok(c)) (*dlogits)(r, c) = std::exp(logits(r, c) - lse) - off;
      (*dlogits)(r, t) -= 1.0 - eps;
    }
  }
  if (correct) *correct = hits;
  return total;
}

Id tied_softmax_loss(Graph& g, Id hidden, Id specials, const TiedSoftmax& head, const std::vector<int>& targets,
                     size_t* correct) {
  const Matrix& h = g.value(hidden);
  const auto n = static_cast<Eigen::Index>(head.end - head.begin);
  const auto block = head.words->middleRows(static_cast<Eigen::Index>(head.begin), n);
  const RowVector eos = g.value(specials).row(head.eos_slot);
  Matrix logits(h.rows(), n + 1);
  logits.leftCols(n).noalias() = h * block.transpose();
  logits.col(n) = h * eos.transpose();
  auto dlogits = std::make_shared<Matrix>();
  Matrix loss(1, 1);
  loss(0, 0) = smoothed_xent(logits, targets, head.label_smoothing, dlogits.get(), nullptr, correct);
  const bool needs = g.needs_grad(hidden) || g.needs_grad(specials);
  const Matrix* words = head.words;
  const auto begin = static_cast<Eigen::Index>(head.begin);
  const int slot = head.eos_slot;
  return g.push(std::move(loss), needs, [=](Graph& g, Id self) {
    const double up = g.grad(self)(0, 0);
    const auto block = words->middleRows(begin, n);
    if (g.needs_grad(hidden)) {
      Matrix& dh = g.grad(hidden);
      dh.noalias() += up * (dlogits->leftCols(n) * block);
      dh.noalias() += up * (dlogits->col(n) * g.value(specials).row(slot));
    }
    if (g.needs_grad(specials)) g.grad(specials).row(slot) += up * (dlogits->col(n).transpose() * g.value(hidden));
  });
}

double vmf_neg_log_norm(double kappa, int m) {
  const double v = 0.5 * m;
  const double r = std::sqrt((v + 1.0) * (v + 1.0) + kappa * kappa);
  return r - (v - 1.0) * std::log((v - 1.0) + r);
}

double vmf_neg_log_norm_grad(double kappa, int m) {
  const double v = 0.5 * m;
  const double r = std::sqrt((v + 1.0) * (v + 1.0) + kappa * kappa);
  return kappa / r - (v - 1.0) * (kappa / r) / ((v - 1.0) + r);
}

double vmf_loss(const RowVector& y, const RowVector& e, double lambda, RowVector* grad) {
  const int m = static_cast<int>(y.size());
  const double norm = y.norm();
  const double kappa = std::max(norm, kKappaFloor);
  const double loss = vmf_neg_log_norm(kappa, m) - lambda * y.dot(e);
  if (grad) *grad = vmf_neg_log_norm_grad(kappa, m) * y / kappa - lambda * e;
  return loss;
}

Id vmf_loss(Graph& g, Id y, const Matrix& targets, const std::vector<char>& valid, double lambda) {
  const Matrix& Y = g.value(y);
  if (targets.rows() != Y.rows() || targets.cols() != Y.cols()) throw ConfigError("vMF targets shape mismatch");
  auto grads = std::make_shared<Matrix>(Matrix::Zero(Y.rows(), Y.cols()));
  double total = 0.0;
  RowVector gr;
  for (Eigen::Index r = 0; r < Y.rows(); ++r) {
    if (!valid[static_cast<size_t>(r)]) continue;
    total += vmf_loss(Y.row(r), targets.row(r), lambda, &gr);
    grads->row(r) = gr;
  }
  Matrix loss(1, 1);
  loss(0, 0) = total;
  return g.push(std::move(loss), g.needs_grad(y), [y, grads](Graph& g, Id self) {
    g.grad(y) += g.grad(self)(0, 0) * *grads;
  });
}

}  // namespace famt::ad
