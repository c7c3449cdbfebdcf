#pragma once

#include "pmedit/editors.hpp"
#include "pmedit/numerics.hpp"
#include "pmedit/toy_model.hpp"

#include <cstdint>
#include <random>

namespace pmedit::testing {

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols,
                            double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

inline Vector random_vector(std::mt19937_64& rng, Eigen::Index dim, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Vector v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

/// B B^T / n + shift I, exactly symmetric.
inline Matrix random_spd(std::mt19937_64& rng, Eigen::Index n, double shift = 0.1) {
  const Matrix b = random_matrix(rng, n, n);
  Matrix a = numerics::symmetrized(b * b.transpose() / static_cast<double>(n));
  a.diagonal().array() += shift;
  return a;
}

/// Editing problem with C0 = K0 K0^T exactly, so the preservation term of the
/// objective ||(W - W0) K0||^2 equals tr(delta C0 delta^T).
struct EditInstance {
  Matrix w0;
  Matrix k0;
  Matrix c0;
  EditBatchMatrices batch;
};

inline EditInstance random_instance(std::uint64_t seed, Eigen::Index d_model, Eigen::Index d_ffn,
                                    Eigen::Index edits) {
  std::mt19937_64 rng(seed);
  EditInstance inst;
  inst.w0 = random_matrix(rng, d_model, d_ffn);
  inst.k0 = random_matrix(rng, d_ffn, 2 * d_ffn + 3);
  inst.c0 = numerics::symmetrized(inst.k0 * inst.k0.transpose());
  inst.batch.keys = random_matrix(rng, d_ffn, edits);
  inst.batch.values = random_matrix(rng, d_model, edits);
  for (Eigen::Index i = 0; i < edits; ++i) inst.batch.fact_ids.push_back(i);
  return inst;
}

/// Instance whose keys, K0 and C0 come from a toy model layer (relu keys, ridge C0).
inline EditInstance model_instance(std::uint64_t seed, std::int64_t d_model, std::int64_t d_ffn,
                                   std::int64_t edits, std::int64_t layer = 1) {
  ToyModelConfig cfg;
  cfg.num_layers = 3;
  cfg.d_model = d_model;
  cfg.d_ffn = d_ffn;
  cfg.seed = seed;
  const ToyModel model = init_model(cfg);
  const PreservationBasis basis = estimate_preservation(model, layer, 4 * d_ffn, 1e-6, seed + 1);
  std::mt19937_64 rng(seed + 2);
  EditInstance inst;
  inst.w0 = model.down(layer);
  inst.k0 = basis.k0;
  inst.c0 = basis.c0;
  inst.batch.keys.resize(d_ffn, edits);
  inst.batch.values.resize(d_model, edits);
  for (std::int64_t i = 0; i < edits; ++i) {
    const ForwardTrace t = forward(model, gaussian_vector(rng, d_model));
    inst.batch.keys.col(i) = t.keys[layer];
    inst.batch.values.col(i) = inst.w0 * t.keys[layer] + random_vector(rng, d_model);
    inst.batch.fact_ids.push_back(i);
  }
  return inst;
}

}  // namespace pmedit::testing
