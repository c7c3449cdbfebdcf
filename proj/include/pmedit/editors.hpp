#pragma once

#include "pmedit/numerics.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace pmedit {

enum class Algorithm { Rome, Memit, Emmet };

std::string_view to_string(Algorithm algorithm);
/// Throws InvalidConfig for unknown names.
Algorithm algorithm_from_string(std::string_view name);

/// Stacked edit keys (d_ffn x E) and target values (d_model x E).
struct EditBatchMatrices {
  Matrix keys;
  Matrix values;
  std::vector<std::int64_t> fact_ids;

  std::int64_t size() const { return keys.cols(); }
  /// Throws DimensionMismatch / InvalidConfig on malformed batches.
  void validate() const;
};

struct EditDelta {
  Matrix delta;  // d_model x d_ffn
  Algorithm algorithm = Algorithm::Rome;
  /// MEMIT: preservation weight. EMMET: ridge on the E x E Gram. ROME: 0.
  double lambda = 0.0;
  std::int64_t batch_size = 1;
};

struct ObjectiveBreakdown {
  double preservation = 0.0;  // ||(W_hat - W0) K0||_F
  double memorization = 0.0;  // ||W_hat K_E - V_E||_F
  double lambda = 0.0;

  /// lambda * preservation^2 + memorization^2
  double weighted() const { return lambda * preservation * preservation + memorization * memorization; }
};

/// Keys whose cosine similarity exceeds this are rejected by the equality-constrained editors.
inline constexpr double kDuplicateKeyCosine = 1.0 - 1e-8;
/// Relative Cholesky pivot floor for the EMMET Gram matrix.
inline constexpr double kGramPivotTol = 1e-14;
inline constexpr double kDegenerateKeyTol = 1e-12;

/// Rank-one equality-constrained edit: W0 + delta maps k_e exactly to v_e while
/// minimising the C0-weighted change.
EditDelta rome_delta(const Matrix& w0, const Matrix& c0, const Vector& key, const Vector& value);

/// Least-squares memorization with preservation weight lambda:
/// delta = (V - W0 K) K^T (lambda C0 + K K^T)^-1.
EditDelta memit_delta(const Matrix& w0, const Matrix& c0, const EditBatchMatrices& batch,
                      double lambda);

/// Batched equality-constrained edit:
/// delta = (V - W0 K) (K^T C0^-1 K + ridge I)^-1 K^T C0^-1.
EditDelta emmet_delta(const Matrix& w0, const Matrix& c0, const EditBatchMatrices& batch,
                      double ridge = 0.0);

/// Solves min tr(delta C0 delta^T) s.t. delta K = V - W0 K through its KKT system,
/// one bordered system per row of delta. Independent of emmet_delta.
Matrix emmet_oracle_kkt(const Matrix& w0, const Matrix& c0, const EditBatchMatrices& batch);

ObjectiveBreakdown pm_objective(const Matrix& w0, const Matrix& w_hat, const Matrix& k0,
                                const EditBatchMatrices& batch, double lambda);

}  // namespace pmedit
