#pragma once

#include <Eigen/Dense>

namespace famt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Rounds every entry to the nearest float32 value. Stored tensors are float32,
// so keeping live parameters on the float grid makes save/load bit-exact.
inline void round_to_float(Matrix& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(static_cast<float>(m.data()[i]));
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace famt
