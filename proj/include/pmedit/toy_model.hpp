#pragma once

#include "pmedit/numerics.hpp"

#include <json.hpp>

#include <cstdint>
#include <memory>
#include <optional>
#include <random>
#include <vector>

namespace pmedit {

enum class Activation { Relu, Tanh };

struct ToyModelConfig {
  std::int64_t num_layers = 8;
  std::int64_t d_model = 32;
  std::int64_t d_ffn = 64;
  Activation activation = Activation::Relu;
  /// Standard deviation of the initial weights; unset means 1/sqrt(d_model).
  std::optional<double> init_scale;
  std::uint64_t seed = 0;

  double effective_init_scale() const;
  /// Throws InvalidConfig.
  void validate() const;

  bool operator==(const ToyModelConfig&) const = default;
};

/// One residual feed-forward block: h' = h + down * act(up * h).
struct Block {
  std::shared_ptr<const Matrix> up;    // d_ffn x d_model
  std::shared_ptr<const Matrix> down;  // d_model x d_ffn, the editable memory
};

/// Immutable stack of residual FFN blocks. Copies share weight storage;
/// replacing one layer's down projection leaves the others shared.
class ToyModel {
 public:
  ToyModel(ToyModelConfig config, std::vector<Block> blocks);

  const ToyModelConfig& config() const { return config_; }
  std::int64_t num_layers() const { return config_.num_layers; }
  std::int64_t d_model() const { return config_.d_model; }
  std::int64_t d_ffn() const { return config_.d_ffn; }

  const Matrix& up(std::int64_t layer) const;
  const Matrix& down(std::int64_t layer) const;
  const std::vector<Block>& blocks() const { return blocks_; }

  /// Returns a copy whose layer's down projection is replaced.
  ToyModel with_down(std::int64_t layer, Matrix down) const;

 private:
  ToyModelConfig config_;
  std::vector<Block> blocks_;
};

/// Hidden states h_0..h_L and per-layer keys act(A_l h_l).
struct ForwardTrace {
  std::vector<Vector> hidden;
  std::vector<Vector> keys;

  const Vector& output() const { return hidden.back(); }
};

struct PreservationBasis {
  std::int64_t layer = 0;
  Matrix k0;  // d_ffn x N
  Matrix c0;  // d_ffn x d_ffn, (1/N) K0 K0^T + ridge I
  std::int64_t n_samples = 0;
  double ridge_eps = 1e-6;

  bool undersampled() const { return n_samples < k0.rows(); }
};

double activate(Activation act, double x);
/// Derivative of the activation; relu uses subgradient 0 at exactly 0.
double activate_grad(Activation act, double x);

ToyModel init_model(const ToyModelConfig& config);

ForwardTrace forward(const ToyModel& model, const Vector& x);

/// Runs blocks layer..L-1 starting from the input h of block `layer`.
/// With an override, block `layer` contributes v_override instead of its FFN output.
Vector forward_from(const ToyModel& model, std::int64_t layer, const Vector& h,
                    const std::optional<Vector>& v_override = std::nullopt);

PreservationBasis estimate_preservation(const ToyModel& model, std::int64_t layer,
                                        std::int64_t n_samples, double ridge_eps,
                                        std::uint64_t seed);

/// Draws a d-dimensional standard normal vector.
Vector gaussian_vector(std::mt19937_64& rng, std::int64_t dim);

nlohmann::json to_json(const ToyModelConfig& config);
ToyModelConfig config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ToyModel& model);
ToyModel model_from_json(const nlohmann::json& j);

nlohmann::json matrix_to_json(const Matrix& m);
Matrix matrix_from_json(const nlohmann::json& j);

}  // namespace pmedit
