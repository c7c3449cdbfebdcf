#include "pmedit/editors.hpp"

#include "pmedit/error.hpp"

#include <cmath>
#include <set>
#include <string>

namespace pmedit {

std::string_view to_string(Algorithm algorithm) {
  switch (algorithm) {
    case Algorithm::Rome: return "rome";
    case Algorithm::Memit: return "memit";
    case Algorithm::Emmet: return "emmet";
  }
  return "unknown";
}

Algorithm algorithm_from_string(std::string_view name) {
  if (name == "rome") return Algorithm::Rome;
  if (name == "memit") return Algorithm::Memit;
  if (name == "emmet") return Algorithm::Emmet;
  throw Error(ErrorKind::InvalidConfig, "unknown algorithm '" + std::string(name) + "'");
}

void EditBatchMatrices::validate() const {
  if (keys.cols() < 1) throw Error(ErrorKind::InvalidConfig, "edit batch is empty");
  if (keys.cols() != values.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "keys and values have different column counts");
  }
  if (!keys.allFinite() || !values.allFinite()) {
    throw Error(ErrorKind::InvalidConfig, "edit batch contains non-finite entries");
  }
  if (!fact_ids.empty()) {
    if (static_cast<Eigen::Index>(fact_ids.size()) != keys.cols()) {
      throw Error(ErrorKind::DimensionMismatch, "fact_ids length does not match batch size");
    }
    const std::set<std::int64_t> unique(fact_ids.begin(), fact_ids.end());
    if (unique.size() != fact_ids.size()) {
      throw Error(ErrorKind::InvalidConfig, "duplicate fact ids in edit batch");
    }
  }
}

namespace {

void check_editor_shapes(const Matrix& w0, const Matrix& c0, Eigen::Index key_rows,
                         Eigen::Index value_rows) {
  if (c0.rows() != c0.cols() || c0.rows() != w0.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "C0 must be d_ffn x d_ffn matching W0 columns");
  }
  if (key_rows != w0.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "key dimension does not match W0 columns");
  }
  if (value_rows != w0.rows()) {
    throw Error(ErrorKind::DimensionMismatch, "value dimension does not match W0 rows");
  }
}

void reject_near_duplicates(const Matrix& keys) {
  const Eigen::VectorXd norms = keys.colwise().norm().transpose();
  for (Eigen::Index i = 0; i < keys.cols(); ++i) {
    for (Eigen::Index j = i + 1; j < keys.cols(); ++j) {
      const double denom = norms(i) * norms(j);
      if (denom <= 0.0) continue;
      if (keys.col(i).dot(keys.col(j)) / denom > kDuplicateKeyCosine) {
        throw Error(ErrorKind::DuplicateKey, "edit keys " + std::to_string(i) + " and " +
                                                 std::to_string(j) + " are near-parallel");
      }
    }
  }
}

}  // namespace

EditDelta rome_delta(const Matrix& w0, const Matrix& c0, const Vector& key, const Vector& value) {
  check_editor_shapes(w0, c0, key.size(), value.size());
  const Vector c0_inv_key = numerics::solve_spd(c0, key);
  const double denom = key.dot(c0_inv_key);
  if (!(denom > kDegenerateKeyTol)) {
    throw Error(ErrorKind::DegenerateKey, "k^T C0^-1 k is not positive");
  }
  const Vector residual = value - w0 * key;
  EditDelta out;
  out.delta = residual * (c0_inv_key.transpose() / denom);
  out.algorithm = Algorithm::Rome;
  out.lambda = 0.0;
  out.batch_size = 1;
  return out;
}

EditDelta memit_delta(const Matrix& w0, const Matrix& c0, const EditBatchMatrices& batch,
                      double lambda) {
  batch.validate();
  check_editor_shapes(w0, c0, batch.keys.rows(), batch.values.rows());
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    throw Error(ErrorKind::InvalidConfig, "MEMIT lambda must be finite and >= 0");
  }
  const Matrix& k = batch.keys;
  const Matrix residual = batch.values - w0 * k;
  const Matrix system = numerics::symmetrized(lambda * c0 + k * k.transpose());
  // system is symmetric, so delta^T = system^-1 K R^T.
  Matrix delta_t;
  try {
    delta_t = numerics::solve_spd(system, k * residual.transpose());
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::NotSPD) throw;
    throw Error(ErrorKind::NotSPD,
                "lambda C0 + K K^T is not positive definite (lambda = 0 needs full-rank keys)");
  }
  EditDelta out;
  out.delta = delta_t.transpose();
  out.algorithm = Algorithm::Memit;
  out.lambda = lambda;
  out.batch_size = batch.size();
  return out;
}

EditDelta emmet_delta(const Matrix& w0, const Matrix& c0, const EditBatchMatrices& batch,
                      double ridge) {
  batch.validate();
  check_editor_shapes(w0, c0, batch.keys.rows(), batch.values.rows());
  if (!(ridge >= 0.0) || !std::isfinite(ridge)) {
    throw Error(ErrorKind::InvalidConfig, "EMMET ridge must be finite and >= 0");
  }
  const Matrix& k = batch.keys;
  if (k.cols() > k.rows()) {
    throw Error(ErrorKind::SingularGram, "batch of " + std::to_string(k.cols()) +
                                             " equality constraints exceeds key dimension " +
                                             std::to_string(k.rows()));
  }
  reject_near_duplicates(k);

  const Matrix c0_inv_k = numerics::solve_spd(c0, k);  // d_ffn x E
  Matrix gram = numerics::symmetrized(k.transpose() * c0_inv_k);
  gram.diagonal().array() += ridge;

  Eigen::LLT<Matrix> llt(gram);
  const double scale = gram.diagonal().cwiseAbs().maxCoeff();
  bool ok = llt.info() == Eigen::Success && scale > 0.0;
  if (ok) {
    const Eigen::VectorXd pivots = llt.matrixL().toDenseMatrix().diagonal();
    for (Eigen::Index i = 0; i < pivots.size(); ++i) {
      ok = ok && std::isfinite(pivots(i)) && pivots(i) * pivots(i) > kGramPivotTol * scale;
    }
  }
  if (!ok) {
    throw Error(ErrorKind::SingularGram,
                "K^T C0^-1 K is singular; drop dependent keys or raise the ridge");
  }

  const Matrix residual = batch.values - w0 * k;        // d_model x E
  const Matrix weights = llt.solve(residual.transpose());  // E x d_model = G^-1 R^T
  EditDelta out;
  out.delta = weights.transpose() * c0_inv_k.transpose();
  out.algorithm = Algorithm::Emmet;
  out.lambda = ridge;
  out.batch_size = batch.size();
  return out;
}

Matrix emmet_oracle_kkt(const Matrix& w0, const Matrix& c0, const EditBatchMatrices& batch) {
  batch.validate();
  check_editor_shapes(w0, c0, batch.keys.rows(), batch.values.rows());
  const Eigen::Index n = c0.rows();
  const Eigen::Index e = batch.keys.cols();

  // Row i of delta, written as a column d: stationarity C0 d - K mu = 0,
  // feasibility K^T d = r_i. Same bordered matrix for every row.
  Matrix kkt = Matrix::Zero(n + e, n + e);
  kkt.topLeftCorner(n, n) = c0;
  kkt.topRightCorner(n, e) = -batch.keys;
  kkt.bottomLeftCorner(e, n) = batch.keys.transpose();

  const Matrix residual = batch.values - w0 * batch.keys;  // d_model x E
  Matrix rhs = Matrix::Zero(n + e, w0.rows());
  rhs.bottomRows(e) = residual.transpose();

  const Matrix solution = numerics::solve_general(kkt, rhs);
  return solution.topRows(n).transpose();
}

ObjectiveBreakdown pm_objective(const Matrix& w0, const Matrix& w_hat, const Matrix& k0,
                                const EditBatchMatrices& batch, double lambda) {
  if (w0.rows() != w_hat.rows() || w0.cols() != w_hat.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "W0 and W_hat shapes differ");
  }
  if (k0.rows() != w0.cols() || batch.keys.rows() != w0.cols() ||
      batch.values.rows() != w0.rows() || batch.keys.cols() != batch.values.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "objective operand shapes are inconsistent");
  }
  ObjectiveBreakdown out;
  out.preservation = ((w_hat - w0) * k0).norm();
  out.memorization = (w_hat * batch.keys - batch.values).norm();
  out.lambda = lambda;
  return out;
}

}  // namespace pmedit
