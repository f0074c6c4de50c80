// Polynomial-basis least squares shared by the residual models.
#pragma once

#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "synthpi/common.hpp"

namespace synthpi {

// Basis columns for a given degree: constant; the raw regressors; for
// degree 2 additionally all squares and pairwise products.
inline Eigen::MatrixXd polynomial_basis(const Eigen::MatrixXd& x, int degree) {
  if (degree < 0 || degree > 2)
    throw usage_error("polynomial_basis: degree must be 0, 1 or 2");
  const Eigen::Index n = x.rows();
  const Eigen::Index k = x.cols();
  Eigen::Index cols = 1;
  if (degree >= 1) cols += k;
  if (degree == 2) cols += k * (k + 1) / 2;
  Eigen::MatrixXd basis(n, cols);
  basis.col(0).setOnes();
  Eigen::Index next = 1;
  if (degree >= 1) {
    basis.middleCols(next, k) = x;
    next += k;
  }
  if (degree == 2)
    for (Eigen::Index a = 0; a < k; ++a)
      for (Eigen::Index b = a; b < k; ++b)
        basis.col(next++) = x.col(a).cwiseProduct(x.col(b));
  return basis;
}

inline Eigen::RowVectorXd polynomial_basis_row(const Eigen::RowVectorXd& x,
                                               int degree) {
  return polynomial_basis(Eigen::MatrixXd(x), degree);
}

struct LstsqResult {
  Eigen::VectorXd coeffs;
  Eigen::Index rank = 0;
  bool rank_deficient = false;
};

// Rank-revealing least squares; collinear columns are effectively
// dropped by the pivoted factorization.
inline LstsqResult lstsq(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                         const std::string& what = "regression") {
  if (x.rows() != y.size()) throw usage_error(what + ": row count mismatch");
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(x);
  LstsqResult out;
  out.rank = qr.rank();
  out.coeffs = qr.solve(y);
  if (out.rank < x.cols()) {
    out.rank_deficient = true;
    detail::warn(what + ": collinear basis, dropped " +
                 std::to_string(x.cols() - out.rank) + " column(s)");
  }
  return out;
}

}  // namespace synthpi
