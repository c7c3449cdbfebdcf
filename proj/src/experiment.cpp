#include "pmedit/harness.hpp"

#include "pmedit/error.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <string>

namespace pmedit {

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::Singular: return "singular";
    case Strategy::Batched: return "batched";
    case Strategy::SequentialBatched: return "sequential_batched";
  }
  return "unknown";
}

Strategy strategy_from_string(std::string_view name) {
  if (name == "singular") return Strategy::Singular;
  if (name == "batched") return Strategy::Batched;
  if (name == "sequential_batched") return Strategy::SequentialBatched;
  throw Error(ErrorKind::InvalidConfig, "unknown strategy '" + std::string(name) + "'");
}

void ExperimentPlan::validate() const {
  auto fail = [](const std::string& msg) { throw Error(ErrorKind::InvalidConfig, msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (total_edits < 1) fail("total_edits must be >= 1");
  if (total_edits % batch_size != 0) {
    fail("total_edits (" + std::to_string(total_edits) + ") is not a multiple of batch_size (" +
         std::to_string(batch_size) + ")");
  }
  if (strategy == Strategy::Singular && batch_size != 1) fail("singular plans need batch_size 1");
  if (algorithm == Algorithm::Rome && batch_size != 1) fail("rome edits one fact at a time");
  if (strategy == Strategy::Batched) {
    if (algorithm == Algorithm::Rome) fail("batched plans need memit or emmet");
    if (batch_size != total_edits) fail("batched plans apply one batch: batch_size == total_edits");
  }
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
  if (layer < 0) fail("layer must be >= 0");
  if (!model_path) {
    model_config.validate();
    if (layer >= model_config.num_layers) fail("layer exceeds model depth");
  }
  if (preservation_samples < 1) fail("preservation_samples must be >= 1");
  if (!(ridge_eps > 0.0)) fail("ridge_eps must be > 0");
  value_solver.validate();
  fact_options().validate();
}

FactGenOptions ExperimentPlan::fact_options() const {
  FactGenOptions o = facts;
  o.layer = layer;
  o.seed = seed;
  o.count = std::max(o.count, total_edits);
  return o;
}

// ---- plan JSON ----

nlohmann::json to_json(const ExperimentPlan& p) {
  nlohmann::json j = {
      {"algorithm", std::string(to_string(p.algorithm))},
      {"layer", p.layer},
      {"strategy", std::string(to_string(p.strategy))},
      {"batch_size", p.batch_size},
      {"total_edits", p.total_edits},
      {"lambda", p.lambda},
      {"seed", p.seed},
      {"model_config", to_json(p.model_config)},
      {"eval_every_batch", p.eval_every_batch},
      {"facts",
       {{"count", p.facts.count},
        {"n_paraphrases", p.facts.n_paraphrases},
        {"para_noise", p.facts.para_noise},
        {"neighbor_k", p.facts.neighbor_k},
        {"pool_size", p.facts.pool_size},
        {"neighbor_noise", p.facts.neighbor_noise}}},
      {"preservation_samples", p.preservation_samples},
      {"ridge_eps", p.ridge_eps},
      {"value_solver",
       {{"max_iters", p.value_solver.max_iters},
        {"step_size", p.value_solver.step_size},
        {"decay", p.value_solver.decay},
        {"grad_tol", p.value_solver.grad_tol},
        {"target_tol", p.value_solver.target_tol}}},
      {"augment_preservation", p.augment_preservation},
  };
  if (p.model_path) j["model_path"] = *p.model_path;
  if (p.facts_path) j["facts_path"] = *p.facts_path;
  return j;
}

namespace {

void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> known,
                    const std::string& where) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, where + " must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    const bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return key == k; });
    if (!ok) throw Error(ErrorKind::InvalidConfig, "unknown field '" + key + "' in " + where);
  }
}

template <typename T>
void read_opt(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

ExperimentPlan plan_from_json(const nlohmann::json& j) {
  reject_unknown(j,
                 {"algorithm", "layer", "strategy", "batch_size", "total_edits", "lambda", "seed",
                  "model_config", "eval_every_batch", "facts", "preservation_samples", "ridge_eps",
                  "value_solver", "augment_preservation", "model_path", "facts_path"},
                 "plan");
  ExperimentPlan p;
  try {
    if (!j.contains("seed")) throw Error(ErrorKind::InvalidConfig, "plan.seed is required");
    if (!j.contains("model_config")) {
      throw Error(ErrorKind::InvalidConfig, "plan.model_config is required");
    }
    p.seed = j.at("seed").get<std::uint64_t>();
    p.model_config = config_from_json(j.at("model_config"));
    if (j.contains("algorithm")) p.algorithm = algorithm_from_string(j.at("algorithm").get<std::string>());
    if (j.contains("strategy")) p.strategy = strategy_from_string(j.at("strategy").get<std::string>());
    read_opt(j, "layer", p.layer);
    read_opt(j, "batch_size", p.batch_size);
    read_opt(j, "total_edits", p.total_edits);
    read_opt(j, "lambda", p.lambda);
    read_opt(j, "eval_every_batch", p.eval_every_batch);
    read_opt(j, "preservation_samples", p.preservation_samples);
    read_opt(j, "ridge_eps", p.ridge_eps);
    read_opt(j, "augment_preservation", p.augment_preservation);
    if (j.contains("model_path")) p.model_path = j.at("model_path").get<std::string>();
    if (j.contains("facts_path")) p.facts_path = j.at("facts_path").get<std::string>();
    if (j.contains("facts")) {
      const auto& f = j.at("facts");
      reject_unknown(f, {"count", "n_paraphrases", "para_noise", "neighbor_k", "pool_size",
                         "neighbor_noise"},
                     "plan.facts");
      read_opt(f, "count", p.facts.count);
      read_opt(f, "n_paraphrases", p.facts.n_paraphrases);
      read_opt(f, "para_noise", p.facts.para_noise);
      read_opt(f, "neighbor_k", p.facts.neighbor_k);
      read_opt(f, "pool_size", p.facts.pool_size);
      read_opt(f, "neighbor_noise", p.facts.neighbor_noise);
    }
    if (j.contains("value_solver")) {
      const auto& v = j.at("value_solver");
      reject_unknown(v, {"max_iters", "step_size", "decay", "grad_tol", "target_tol"},
                     "plan.value_solver");
      read_opt(v, "max_iters", p.value_solver.max_iters);
      read_opt(v, "step_size", p.value_solver.step_size);
      read_opt(v, "decay", p.value_solver.decay);
      read_opt(v, "grad_tol", p.value_solver.grad_tol);
      read_opt(v, "target_tol", p.value_solver.target_tol);
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("plan: ") + e.what());
  }
  p.validate();
  return p;
}

// ---- drivers ----

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + stream * 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kPreservationStream = 1;

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaMismatch, path + ": " + e.what());
  }
}

void require_emmet_capacity(const ExperimentPlan& plan, const ToyModel& model) {
  if (plan.algorithm == Algorithm::Emmet && plan.batch_size > model.d_ffn()) {
    throw Error(ErrorKind::SingularGram,
                "EMMET batch_size " + std::to_string(plan.batch_size) +
                    " exceeds d_ffn " + std::to_string(model.d_ffn()) +
                    "; the equality constraints cannot all be satisfied");
  }
}

std::vector<std::int64_t> id_range(std::int64_t begin, std::int64_t end) {
  std::vector<std::int64_t> ids;
  ids.reserve(end - begin);
  for (std::int64_t i = begin; i < end; ++i) ids.push_back(i);
  return ids;
}

PreservationBasis with_extra_keys(const PreservationBasis& basis, const Matrix& keys) {
  PreservationBasis out = basis;
  out.k0.resize(basis.k0.rows(), basis.k0.cols() + keys.cols());
  out.k0 << basis.k0, keys;
  out.n_samples = out.k0.cols();
  Matrix c0 = numerics::symmetrized((out.k0 * out.k0.transpose()) / static_cast<double>(out.n_samples));
  c0.diagonal().array() += basis.ridge_eps;
  out.c0 = std::move(c0);
  return out;
}

std::vector<MetricsReport> run_batches(const ExperimentPlan& plan, const ExperimentContext& ctx) {
  plan.validate();
  require_emmet_capacity(plan, ctx.model);
  if (ctx.facts.num_editable() < plan.total_edits) {
    throw Error(ErrorKind::InvalidConfig, "fact set has fewer editable facts than total_edits");
  }
  ToyModel model = ctx.model;
  PreservationBasis basis = ctx.basis;
  const std::int64_t batches = plan.num_batches();
  std::vector<MetricsReport> reports;
  for (std::int64_t t = 0; t < batches; ++t) {
    const auto ids = id_range(t * plan.batch_size, (t + 1) * plan.batch_size);
    const EditBatchMatrices batch =
        build_edit_batch(model, plan.layer, ctx.facts, ids, plan.value_solver);
    const Matrix& w0 = model.down(plan.layer);
    const EditDelta delta = compute_delta(plan.algorithm, w0, basis.c0, batch, plan.lambda);
    ToyModel edited = apply_edit(model, plan.layer, delta);

    if (plan.eval_every_batch || t + 1 == batches) {
      MetricsReport r =
          eval_metrics(edited, ctx.facts, id_range(0, (t + 1) * plan.batch_size), plan.layer);
      r.batch_index = t;
      r.edits_so_far = (t + 1) * plan.batch_size;
      r.objective = pm_objective(w0, edited.down(plan.layer), basis.k0, batch, plan.lambda);
      r.delta_fro = delta.delta.norm();
      reports.push_back(r);
    }
    if (plan.augment_preservation) basis = with_extra_keys(basis, batch.keys);
    model = std::move(edited);
  }
  return reports;
}

}  // namespace

PreservationBasis preservation_for(const ExperimentPlan& plan, const ToyModel& model,
                                   std::int64_t layer) {
  return estimate_preservation(model, layer, plan.preservation_samples, plan.ridge_eps,
                               mix_seed(plan.seed, kPreservationStream));
}

ExperimentContext prepare(const ExperimentPlan& plan) {
  plan.validate();
  ToyModel model = plan.model_path ? model_from_json(read_json_file(*plan.model_path))
                                   : init_model(plan.model_config);
  if (plan.layer >= model.num_layers()) {
    throw Error(ErrorKind::InvalidConfig, "layer exceeds model depth");
  }
  FactSet facts;
  if (plan.facts_path) {
    facts = facts_from_json(read_json_file(*plan.facts_path));
    if (facts.facts.front().x.size() != model.d_model()) {
      throw Error(ErrorKind::DimensionMismatch, "fact inputs do not match model d_model");
    }
  } else {
    facts = gen_facts(model, plan.fact_options());
  }
  PreservationBasis basis = preservation_for(plan, model, plan.layer);
  return ExperimentContext{std::move(model), std::move(facts), std::move(basis)};
}

EditBatchMatrices build_edit_batch(const ToyModel& model, std::int64_t layer,
                                   const FactSet& facts, const std::vector<std::int64_t>& ids,
                                   const ValueSolveOptions& opts) {
  const std::int64_t e = static_cast<std::int64_t>(ids.size());
  EditBatchMatrices batch;
  batch.keys.resize(model.d_ffn(), e);
  batch.values.resize(model.d_model(), e);
  batch.fact_ids = ids;
  parallel_for(e, [&](std::int64_t i) {
    const SyntheticFact& f = facts.at(ids[i]);
    batch.keys.col(i) = forward(model, f.x).keys[layer];
    batch.values.col(i) = solve_value(model, layer, f.x, f.t_new, opts).value;
  });
  return batch;
}

EditDelta compute_delta(Algorithm algorithm, const Matrix& w0, const Matrix& c0,
                        const EditBatchMatrices& batch, double lambda) {
  switch (algorithm) {
    case Algorithm::Rome:
      if (batch.size() != 1) throw Error(ErrorKind::InvalidConfig, "rome edits one fact at a time");
      return rome_delta(w0, c0, batch.keys.col(0), batch.values.col(0));
    case Algorithm::Memit:
      return memit_delta(w0, c0, batch, lambda);
    case Algorithm::Emmet:
      return emmet_delta(w0, c0, batch, lambda);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown algorithm");
}

ToyModel apply_edit(const ToyModel& model, std::int64_t layer, const EditDelta& delta) {
  if (layer < 0 || layer >= model.num_layers()) {
    throw Error(ErrorKind::DimensionMismatch, "layer " + std::to_string(layer) + " out of range");
  }
  const Matrix& w = model.down(layer);
  if (delta.delta.rows() != w.rows() || delta.delta.cols() != w.cols()) {
    throw Error(ErrorKind::DimensionMismatch, "delta shape does not match the edited weights");
  }
  return model.with_down(layer, w + delta.delta);
}

std::vector<MetricsReport> run_singular(const ExperimentPlan& plan, const ExperimentContext& ctx) {
  plan.validate();
  if (plan.strategy != Strategy::Singular) {
    throw Error(ErrorKind::InvalidConfig, "run_singular needs a singular plan");
  }
  if (ctx.facts.num_editable() < plan.total_edits) {
    throw Error(ErrorKind::InvalidConfig, "fact set has fewer editable facts than total_edits");
  }
  std::vector<MetricsReport> reports(plan.total_edits);
  const Matrix& w0 = ctx.model.down(plan.layer);
  parallel_for(plan.total_edits, [&](std::int64_t i) {
    const std::vector<std::int64_t> ids{i};
    const EditBatchMatrices batch =
        build_edit_batch(ctx.model, plan.layer, ctx.facts, ids, plan.value_solver);
    const EditDelta delta = compute_delta(plan.algorithm, w0, ctx.basis.c0, batch, plan.lambda);
    const ToyModel edited = apply_edit(ctx.model, plan.layer, delta);
    MetricsReport r = eval_metrics(edited, ctx.facts, ids, plan.layer);
    r.batch_index = i;
    r.edits_so_far = 1;
    r.objective = pm_objective(w0, edited.down(plan.layer), ctx.basis.k0, batch, plan.lambda);
    r.delta_fro = delta.delta.norm();
    reports[i] = r;
  });
  return reports;
}

std::vector<MetricsReport> run_singular(const ExperimentPlan& plan) {
  return run_singular(plan, prepare(plan));
}

MetricsReport run_batched(const ExperimentPlan& plan, const ExperimentContext& ctx) {
  if (plan.strategy != Strategy::Batched) {
    throw Error(ErrorKind::InvalidConfig, "run_batched needs a batched plan");
  }
  return run_batches(plan, ctx).back();
}

MetricsReport run_batched(const ExperimentPlan& plan) {
  plan.validate();
  if (plan.strategy != Strategy::Batched) {
    throw Error(ErrorKind::InvalidConfig, "run_batched needs a batched plan");
  }
  if (!plan.model_path) require_emmet_capacity(plan, init_model(plan.model_config));
  return run_batched(plan, prepare(plan));
}

std::vector<MetricsReport> run_sequential_batched(const ExperimentPlan& plan,
                                                  const ExperimentContext& ctx) {
  if (plan.strategy != Strategy::SequentialBatched) {
    throw Error(ErrorKind::InvalidConfig, "run_sequential_batched needs a sequential_batched plan");
  }
  return run_batches(plan, ctx);
}

std::vector<MetricsReport> run_sequential_batched(const ExperimentPlan& plan) {
  return run_sequential_batched(plan, prepare(plan));
}

std::vector<MetricsReport> run_plan(const ExperimentPlan& plan, const ExperimentContext& ctx) {
  switch (plan.strategy) {
    case Strategy::Singular: return {aggregate(run_singular(plan, ctx))};
    case Strategy::Batched: return {run_batched(plan, ctx)};
    case Strategy::SequentialBatched: return run_sequential_batched(plan, ctx);
  }
  throw Error(ErrorKind::InvalidConfig, "unknown strategy");
}

std::map<std::int64_t, MetricsReport> layer_sweep(const ExperimentPlan& plan,
                                                  const std::vector<std::int64_t>& layers) {
  ExperimentPlan base = plan;
  base.strategy = Strategy::Singular;
  base.batch_size = 1;
  const ExperimentContext ctx = prepare(base);
  for (const auto l : layers) {
    if (l < 0 || l >= ctx.model.num_layers()) {
      throw Error(ErrorKind::InvalidConfig, "sweep layer " + std::to_string(l) + " out of range");
    }
  }
  std::map<std::int64_t, MetricsReport> out;
  for (const auto l : layers) {
    ExperimentPlan p = base;
    p.layer = l;
    const ExperimentContext layer_ctx{ctx.model, ctx.facts, preservation_for(p, ctx.model, l)};
    out[l] = aggregate(run_singular(p, layer_ctx));
  }
  return out;
}

std::map<double, MetricsReport> lambda_sweep(const ExperimentPlan& plan,
                                             const std::vector<double>& lambdas) {
  ExperimentPlan base = plan;
  base.strategy = Strategy::Batched;
  if (base.algorithm == Algorithm::Rome) {
    throw Error(ErrorKind::InvalidConfig, "lambda sweeps need memit or emmet");
  }
  base.validate();
  if (!base.model_path) require_emmet_capacity(base, init_model(base.model_config));
  const ExperimentContext ctx = prepare(base);
  std::map<double, MetricsReport> out;
  for (const double lambda : lambdas) {
    ExperimentPlan p = base;
    p.lambda = lambda;
    out[lambda] = run_batched(p, ctx);
  }
  return out;
}

}  // namespace pmedit
