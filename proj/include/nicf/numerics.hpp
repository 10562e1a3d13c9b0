#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace nicf {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Matrix = MatrixX<double>;
using Vector = VectorX<double>;
using RowVector = RowVectorX<double>;
using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Rng = std::mt19937_64;

struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Logistic function, stable for large |x|.
template <typename Scalar>
Scalar sigmoid(Scalar x) {
  if (x >= Scalar(0)) {
    return Scalar(1) / (Scalar(1) + std::exp(-x));
  }
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

/// Row-wise softmax with max subtraction. Masked entries (mask == false)
/// are exactly zero in the result. A row with no unmasked entry throws.
template <typename Derived>
MatrixX<typename Derived::Scalar> softmax_rows(const Eigen::MatrixBase<Derived>& m,
                                               const Mask* mask = nullptr) {
  using Scalar = typename Derived::Scalar;
  if (mask && (mask->rows() != m.rows() || mask->cols() != m.cols())) {
    throw NumericError("softmax_rows: mask shape mismatch");
  }
  const MatrixX<Scalar> in = m;  // coefficient access on a product expression would re-evaluate it
  MatrixX<Scalar> out = MatrixX<Scalar>::Zero(in.rows(), in.cols());
  for (Eigen::Index r = 0; r < in.rows(); ++r) {
    Scalar hi = -std::numeric_limits<Scalar>::infinity();
    bool any = false;
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      hi = std::max(hi, in(r, c));
      any = true;
    }
    if (!any) {
      throw NumericError("softmax_rows: row " + std::to_string(r) + " is fully masked");
    }
    Scalar total = 0;
    for (Eigen::Index c = 0; c < in.cols(); ++c) {
      if (mask && !(*mask)(r, c)) continue;
      out(r, c) = std::exp(in(r, c) - hi);
      total += out(r, c);
    }
    out.row(r) /= total;
  }
  return out;
}

/// Lower-triangular mask: entry (i, j) is allowed iff j <= i.
Mask causal_mask(Eigen::Index n);

/// Cholesky factor L with L * L^T = s. Throws NumericError when s is not
/// symmetric (1e-10) or not positive definite.
template <typename Derived>
MatrixX<typename Derived::Scalar> cholesky(const Eigen::MatrixBase<Derived>& s) {
  using Scalar = typename Derived::Scalar;
  if (s.rows() != s.cols()) throw NumericError("cholesky: matrix is not square");
  if ((s - s.transpose()).cwiseAbs().maxCoeff() > Scalar(1e-10)) {
    throw NumericError("cholesky: matrix is not symmetric");
  }
  Eigen::LLT<MatrixX<Scalar>> llt(s);
  if (llt.info() != Eigen::Success) {
    throw NumericError("cholesky: matrix is not positive definite");
  }
  return llt.matrixL();
}

/// Draws mean + L * xi with xi ~ N(0, I) from rng.
template <typename DerivedMean, typename DerivedCov>
VectorX<typename DerivedMean::Scalar> sample_gaussian(const Eigen::MatrixBase<DerivedMean>& mean,
                                                      const Eigen::MatrixBase<DerivedCov>& cov,
                                                      Rng& rng) {
  using Scalar = typename DerivedMean::Scalar;
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw NumericError("sample_gaussian: dimension mismatch");
  }
  const MatrixX<Scalar> l = cholesky(cov);
  std::normal_distribution<Scalar> normal(0, 1);
  VectorX<Scalar> xi(mean.size());
  for (Eigen::Index i = 0; i < xi.size(); ++i) xi(i) = normal(rng);
  return mean + l * xi;
}

/// Central-difference gradient of f at x.
Vector finite_diff_grad(const std::function<double(const Vector&)>& f, const Vector& x,
                        double h = 1e-5);

/// Uniform index in [0, n).
inline std::size_t uniform_index(Rng& rng, std::size_t n) {
  return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
}

inline bool all_finite(const Matrix& m) { return m.allFinite(); }

}  // namespace nicf
