#include "pmedit/numerics.hpp"

#include "pmedit/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace pmedit::numerics {

namespace {

void require_square(const Matrix& a, const char* op) {
  if (a.rows() != a.cols()) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(op) + ": matrix is " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + ", expected square");
  }
}

void require_rows_match(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorKind::DimensionMismatch,
                std::string(op) + ": lhs has " + std::to_string(a.rows()) + " rows, rhs has " +
                    std::to_string(b.rows()));
  }
}

}  // namespace

Matrix solve_spd(const Matrix& a, const Matrix& b) {
  require_square(a, "solve_spd");
  require_rows_match(a, b, "solve_spd");
  if (a.rows() == 0) return Matrix(0, b.cols());

  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > kSymmetryTol * scale) {
    throw Error(ErrorKind::NotSPD, "solve_spd: matrix is not symmetric");
  }

  Eigen::LLT<Matrix> llt(a);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorKind::NotSPD, "solve_spd: non-positive Cholesky pivot");
  }
  // Eigen reports success for tiny positive pivots; NaN slips through too.
  const auto diag = llt.matrixL().toDenseMatrix().diagonal();
  for (Eigen::Index i = 0; i < diag.size(); ++i) {
    if (!(diag(i) > 0.0) || !std::isfinite(diag(i))) {
      throw Error(ErrorKind::NotSPD, "solve_spd: non-positive Cholesky pivot");
    }
  }
  return llt.solve(b);
}

Matrix solve_general(const Matrix& a, const Matrix& b) {
  require_square(a, "solve_general");
  require_rows_match(a, b, "solve_general");
  if (a.rows() == 0) return Matrix(0, b.cols());

  const double max_abs = a.cwiseAbs().maxCoeff();
  if (!(max_abs > 0.0)) throw Error(ErrorKind::Singular, "solve_general: zero matrix");

  Eigen::PartialPivLU<Matrix> lu(a);
  const auto& packed = lu.matrixLU();
  for (Eigen::Index i = 0; i < packed.rows(); ++i) {
    if (!(std::abs(packed(i, i)) > kSingularPivotTol * max_abs)) {
      throw Error(ErrorKind::Singular,
                  "solve_general: pivot " + std::to_string(i) + " below tolerance");
    }
  }
  return lu.solve(b);
}

std::int64_t numerical_rank(const Matrix& m, double tol) {
  if (m.size() == 0) return 0;
  if (std::max(m.rows(), m.cols()) <= kSvdRankMaxDim) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
    const auto& sv = svd.singularValues();
    if (sv.size() == 0 || !(sv(0) > 0.0)) return 0;
    const double cutoff = tol * sv(0);
    return static_cast<std::int64_t>((sv.array() > cutoff).count());
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(m);
  const auto r = qr.matrixR().diagonal().cwiseAbs();
  if (r.size() == 0 || !(r(0) > 0.0)) return 0;
  const double cutoff = tol * r(0);
  return static_cast<std::int64_t>((r.array() > cutoff).count());
}

Matrix symmetrized(const Matrix& m) {
  Matrix out = m;
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < m.cols(); ++j) {
      const double avg = 0.5 * (m(i, j) + m(j, i));
      out(i, j) = avg;
      out(j, i) = avg;
    }
  }
  return out;
}

bool all_finite(const Matrix& m) { return m.allFinite(); }
bool all_finite(const Vector& v) { return v.allFinite(); }

}  // namespace pmedit::numerics
