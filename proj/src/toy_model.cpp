#include "pmedit/toy_model.hpp"

#include "pmedit/error.hpp"

#include <cmath>
#include <string>
#include <utility>

namespace pmedit {

double ToyModelConfig::effective_init_scale() const {
  return init_scale.value_or(1.0 / std::sqrt(static_cast<double>(d_model)));
}

void ToyModelConfig::validate() const {
  if (num_layers < 1) throw Error(ErrorKind::InvalidConfig, "num_layers must be >= 1");
  if (d_model < 2) throw Error(ErrorKind::InvalidConfig, "d_model must be >= 2");
  if (d_ffn < 2) throw Error(ErrorKind::InvalidConfig, "d_ffn must be >= 2");
  if (init_scale && (!(*init_scale > 0.0) || !std::isfinite(*init_scale))) {
    throw Error(ErrorKind::InvalidConfig, "init_scale must be positive");
  }
}

ToyModel::ToyModel(ToyModelConfig config, std::vector<Block> blocks)
    : config_(std::move(config)), blocks_(std::move(blocks)) {
  config_.validate();
  if (static_cast<std::int64_t>(blocks_.size()) != config_.num_layers) {
    throw Error(ErrorKind::DimensionMismatch, "block count does not match num_layers");
  }
  for (const auto& b : blocks_) {
    if (!b.up || !b.down || b.up->rows() != config_.d_ffn || b.up->cols() != config_.d_model ||
        b.down->rows() != config_.d_model || b.down->cols() != config_.d_ffn) {
      throw Error(ErrorKind::DimensionMismatch, "block weight shapes do not match config");
    }
    if (!b.up->allFinite() || !b.down->allFinite()) {
      throw Error(ErrorKind::InvalidConfig, "non-finite weights");
    }
  }
}

const Matrix& ToyModel::up(std::int64_t layer) const { return *blocks_.at(layer).up; }
const Matrix& ToyModel::down(std::int64_t layer) const { return *blocks_.at(layer).down; }

ToyModel ToyModel::with_down(std::int64_t layer, Matrix down) const {
  if (layer < 0 || layer >= num_layers()) {
    throw Error(ErrorKind::DimensionMismatch, "layer " + std::to_string(layer) + " out of range");
  }
  std::vector<Block> blocks = blocks_;
  blocks[layer].down = std::make_shared<const Matrix>(std::move(down));
  return ToyModel(config_, std::move(blocks));
}

double activate(Activation act, double x) {
  return act == Activation::Relu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

double activate_grad(Activation act, double x) {
  if (act == Activation::Relu) return x > 0.0 ? 1.0 : 0.0;
  const double t = std::tanh(x);
  return 1.0 - t * t;
}

Vector gaussian_vector(std::mt19937_64& rng, std::int64_t dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (std::int64_t i = 0; i < dim; ++i) v(i) = normal(rng);
  return v;
}

namespace {

Matrix gaussian_matrix(std::mt19937_64& rng, std::int64_t rows, std::int64_t cols, double scale) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (std::int64_t i = 0; i < rows; ++i)
    for (std::int64_t j = 0; j < cols; ++j) m(i, j) = normal(rng);
  return m;
}

Vector key_of(const ToyModel& model, std::int64_t layer, const Vector& h) {
  Vector pre = model.up(layer) * h;
  const Activation act = model.config().activation;
  for (Eigen::Index i = 0; i < pre.size(); ++i) pre(i) = activate(act, pre(i));
  return pre;
}

void require_dim(const Vector& v, std::int64_t dim, const char* what) {
  if (v.size() != dim) {
    throw Error(ErrorKind::DimensionMismatch, std::string(what) + " has dimension " +
                                                  std::to_string(v.size()) + ", expected " +
                                                  std::to_string(dim));
  }
}

}  // namespace

ToyModel init_model(const ToyModelConfig& config) {
  config.validate();
  const double scale = config.effective_init_scale();
  std::mt19937_64 rng(config.seed);
  std::vector<Block> blocks;
  blocks.reserve(config.num_layers);
  for (std::int64_t l = 0; l < config.num_layers; ++l) {
    auto up = std::make_shared<const Matrix>(gaussian_matrix(rng, config.d_ffn, config.d_model, scale));
    auto down =
        std::make_shared<const Matrix>(gaussian_matrix(rng, config.d_model, config.d_ffn, scale));
    blocks.push_back({std::move(up), std::move(down)});
  }
  return ToyModel(config, std::move(blocks));
}

ForwardTrace forward(const ToyModel& model, const Vector& x) {
  require_dim(x, model.d_model(), "input");
  if (!x.allFinite()) throw Error(ErrorKind::InvalidConfig, "non-finite input");
  ForwardTrace trace;
  trace.hidden.reserve(model.num_layers() + 1);
  trace.keys.reserve(model.num_layers());
  trace.hidden.push_back(x);
  for (std::int64_t l = 0; l < model.num_layers(); ++l) {
    trace.keys.push_back(key_of(model, l, trace.hidden.back()));
    trace.hidden.push_back(trace.hidden.back() + model.down(l) * trace.keys.back());
  }
  return trace;
}

Vector forward_from(const ToyModel& model, std::int64_t layer, const Vector& h,
                    const std::optional<Vector>& v_override) {
  if (layer < 0 || layer >= model.num_layers()) {
    throw Error(ErrorKind::DimensionMismatch, "layer " + std::to_string(layer) + " out of range");
  }
  require_dim(h, model.d_model(), "hidden state");
  Vector out;
  if (v_override) {
    require_dim(*v_override, model.d_model(), "value override");
    out = h + *v_override;
  } else {
    out = h + model.down(layer) * key_of(model, layer, h);
  }
  for (std::int64_t l = layer + 1; l < model.num_layers(); ++l) {
    out = out + model.down(l) * key_of(model, l, out);
  }
  return out;
}

PreservationBasis estimate_preservation(const ToyModel& model, std::int64_t layer,
                                        std::int64_t n_samples, double ridge_eps,
                                        std::uint64_t seed) {
  if (layer < 0 || layer >= model.num_layers()) {
    throw Error(ErrorKind::InvalidConfig, "layer " + std::to_string(layer) + " out of range");
  }
  if (n_samples < 1) throw Error(ErrorKind::InvalidConfig, "n_samples must be >= 1");
  if (!(ridge_eps > 0.0)) throw Error(ErrorKind::InvalidConfig, "ridge_eps must be > 0");

  std::mt19937_64 rng(seed);
  PreservationBasis basis;
  basis.layer = layer;
  basis.n_samples = n_samples;
  basis.ridge_eps = ridge_eps;
  basis.k0.resize(model.d_ffn(), n_samples);
  for (std::int64_t i = 0; i < n_samples; ++i) {
    const Vector x = gaussian_vector(rng, model.d_model());
    basis.k0.col(i) = forward(model, x).keys[layer];
  }
  Matrix c0 = (basis.k0 * basis.k0.transpose()) / static_cast<double>(n_samples);
  c0 = numerics::symmetrized(c0);
  c0.diagonal().array() += ridge_eps;
  basis.c0 = std::move(c0);
  return basis;
}

// ---- JSON ----

nlohmann::json matrix_to_json(const Matrix& m) {
  std::vector<double> data(m.data(), m.data() + m.size());
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Matrix matrix_from_json(const nlohmann::json& j) {
  try {
    const auto rows = j.at("rows").get<std::int64_t>();
    const auto cols = j.at("cols").get<std::int64_t>();
    const auto data = j.at("data").get<std::vector<double>>();
    if (rows < 0 || cols < 0 || static_cast<std::int64_t>(data.size()) != rows * cols) {
      throw Error(ErrorKind::SchemaMismatch, "matrix payload size does not match its shape");
    }
    Matrix m(rows, cols);
    std::copy(data.begin(), data.end(), m.data());
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, std::string("matrix: ") + e.what());
  }
}

nlohmann::json to_json(const ToyModelConfig& c) {
  nlohmann::json j = {{"num_layers", c.num_layers},
                      {"d_model", c.d_model},
                      {"d_ffn", c.d_ffn},
                      {"activation", c.activation == Activation::Relu ? "relu" : "tanh"},
                      {"seed", c.seed}};
  if (c.init_scale) j["init_scale"] = *c.init_scale;
  return j;
}

ToyModelConfig config_from_json(const nlohmann::json& j) {
  static const char* const kKnown[] = {"num_layers", "d_model", "d_ffn",
                                       "activation", "init_scale", "seed"};
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "model_config must be an object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* k : kKnown) known = known || key == k;
    if (!known) throw Error(ErrorKind::InvalidConfig, "unknown model_config field '" + key + "'");
  }
  ToyModelConfig c;
  try {
    if (!j.contains("seed")) throw Error(ErrorKind::InvalidConfig, "model_config.seed is required");
    c.seed = j.at("seed").get<std::uint64_t>();
    c.num_layers = j.value("num_layers", c.num_layers);
    c.d_model = j.value("d_model", c.d_model);
    c.d_ffn = j.value("d_ffn", c.d_ffn);
    const std::string act = j.value("activation", std::string("relu"));
    if (act == "relu") {
      c.activation = Activation::Relu;
    } else if (act == "tanh") {
      c.activation = Activation::Tanh;
    } else {
      throw Error(ErrorKind::InvalidConfig, "activation must be relu or tanh");
    }
    if (j.contains("init_scale")) {
      c.init_scale = j.at("init_scale").get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("model_config: ") + e.what());
  }
  c.validate();
  return c;
}

nlohmann::json to_json(const ToyModel& model) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& b : model.blocks()) {
    layers.push_back({{"up", matrix_to_json(*b.up)}, {"down", matrix_to_json(*b.down)}});
  }
  return {{"config", to_json(model.config())}, {"layers", std::move(layers)}};
}

ToyModel model_from_json(const nlohmann::json& j) {
  try {
    const ToyModelConfig config = config_from_json(j.at("config"));
    std::vector<Block> blocks;
    for (const auto& layer : j.at("layers")) {
      blocks.push_back({std::make_shared<const Matrix>(matrix_from_json(layer.at("up"))),
                        std::make_shared<const Matrix>(matrix_from_json(layer.at("down")))});
    }
    return ToyModel(config, std::move(blocks));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, std::string("model: ") + e.what());
  }
}

}  // namespace pmedit
