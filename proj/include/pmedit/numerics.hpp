#pragma once

#include <Eigen/Dense>

#include <cstdint>

namespace pmedit {

/// Dense row-major storage; all editor arithmetic is double precision.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

namespace numerics {

inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kSingularPivotTol = 1e-12;
inline constexpr double kDefaultRankTol = 1e-8;
/// Above this size numerical_rank counts pivots of a column-pivoted QR
/// instead of computing singular values.
inline constexpr Eigen::Index kSvdRankMaxDim = 64;

/// Solves A X = B for symmetric positive definite A by Cholesky.
/// Throws NotSPD when a pivot is not strictly positive, or when A is not
/// symmetric to kSymmetryTol relative.
Matrix solve_spd(const Matrix& a, const Matrix& b);

/// Solves A X = B for square nonsingular A by partially pivoted LU.
/// Throws Singular when a pivot falls below kSingularPivotTol * max|A|.
Matrix solve_general(const Matrix& a, const Matrix& b);

/// Number of singular values above tol * sigma_max; 0 for the zero matrix.
std::int64_t numerical_rank(const Matrix& m, double tol = kDefaultRankTol);

inline double frobenius(const Matrix& m) { return m.norm(); }

/// Returns (m + m^T) / 2, exactly symmetric.
Matrix symmetrized(const Matrix& m);

bool all_finite(const Matrix& m);
bool all_finite(const Vector& v);

}  // namespace numerics
}  // namespace pmedit
