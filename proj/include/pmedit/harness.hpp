#pragma once

#include "pmedit/editors.hpp"
#include "pmedit/toy_model.hpp"
#include "pmedit/value_solver.hpp"

#include <json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace pmedit {

// ---- facts ----

struct FactGenOptions {
  std::int64_t layer = 0;
  /// Editable facts, ids 0..count-1.
  std::int64_t count = 512;
  std::int64_t n_paraphrases = 4;
  double para_noise = 0.3;
  std::int64_t neighbor_k = 4;
  /// Never-edited neighborhood facts, ids count..count+pool_size-1; 0 means count.
  std::int64_t pool_size = 0;
  /// Pool inputs are x_anchor + neighbor_noise * noise for a random editable anchor.
  double neighbor_noise = 1.0;
  std::uint64_t seed = 0;

  std::int64_t effective_pool_size() const { return pool_size > 0 ? pool_size : count; }
  void validate() const;
};

struct SyntheticFact {
  std::int64_t id = 0;
  Vector x;
  std::vector<Vector> paraphrases;
  Vector t_old;
  Vector t_new;
  std::vector<std::int64_t> neighbor_ids;
  bool editable = true;
};

struct FactSet {
  FactGenOptions options;
  std::vector<SyntheticFact> facts;  // facts[i].id == i

  std::int64_t num_editable() const { return options.count; }
  const SyntheticFact& at(std::int64_t id) const;
};

/// Deterministic in options.seed. Throws InvalidConfig.
FactSet gen_facts(const ToyModel& model, const FactGenOptions& options);

nlohmann::json to_json(const FactSet& facts);
FactSet facts_from_json(const nlohmann::json& j);

// ---- metrics ----

struct MetricsReport {
  double es = 0.0;
  double ps = 0.0;
  double ns = 0.0;
  double s = 0.0;  // percentage scale
  std::int64_t edits_so_far = 0;
  std::int64_t batch_index = 0;
  ObjectiveBreakdown objective;
  double delta_fro = 0.0;

  bool operator==(const MetricsReport& o) const;
};

/// Harmonic mean of the three fractions on the percentage scale; 0 if any is 0.
double composite_score(double es, double ps, double ns);
/// Same, with components already on the percentage scale.
double composite_score_percent(double es_pct, double ps_pct, double ns_pct);

/// ES/PS/NS of an edited model over the edited facts. Distances that tie count as failures.
MetricsReport eval_metrics(const ToyModel& edited, const FactSet& facts,
                           const std::vector<std::int64_t>& edited_ids, std::int64_t layer);

/// Component-wise mean; s recomputed from the mean components.
MetricsReport aggregate(const std::vector<MetricsReport>& reports);

// ---- plans and drivers ----

enum class Strategy { Singular, Batched, SequentialBatched };

std::string_view to_string(Strategy strategy);
Strategy strategy_from_string(std::string_view name);

struct ExperimentPlan {
  Algorithm algorithm = Algorithm::Memit;
  std::int64_t layer = 1;
  Strategy strategy = Strategy::Batched;
  std::int64_t batch_size = 32;
  std::int64_t total_edits = 32;
  double lambda = 1.0;
  std::uint64_t seed = 0;
  ToyModelConfig model_config;
  bool eval_every_batch = true;

  FactGenOptions facts;  // layer, seed and minimum count are taken from the plan
  std::int64_t preservation_samples = 2048;
  double ridge_eps = 1e-6;
  ValueSolveOptions value_solver;
  /// Sequential runs: fold each batch's keys into K0 before the next batch.
  bool augment_preservation = false;
  std::optional<std::string> model_path;
  std::optional<std::string> facts_path;

  std::int64_t num_batches() const { return batch_size > 0 ? total_edits / batch_size : 0; }
  /// Throws InvalidConfig on inconsistent plans.
  void validate() const;
  FactGenOptions fact_options() const;
};

nlohmann::json to_json(const ExperimentPlan& plan);
/// Unknown fields are rejected; seed and model_config.seed are required.
ExperimentPlan plan_from_json(const nlohmann::json& j);

/// Model, facts and preservation basis a run operates on.
struct ExperimentContext {
  ToyModel model;
  FactSet facts;
  PreservationBasis basis;
};

ExperimentContext prepare(const ExperimentPlan& plan);
PreservationBasis preservation_for(const ExperimentPlan& plan, const ToyModel& model,
                                   std::int64_t layer);

/// Keys from the current model and solved target values for the given facts.
EditBatchMatrices build_edit_batch(const ToyModel& model, std::int64_t layer,
                                   const FactSet& facts, const std::vector<std::int64_t>& ids,
                                   const ValueSolveOptions& opts);

EditDelta compute_delta(Algorithm algorithm, const Matrix& w0, const Matrix& c0,
                        const EditBatchMatrices& batch, double lambda);

/// Returns model with W_layer + delta; other layers are shared.
ToyModel apply_edit(const ToyModel& model, std::int64_t layer, const EditDelta& delta);

/// One report per fact, each edit applied to a fresh base model.
std::vector<MetricsReport> run_singular(const ExperimentPlan& plan, const ExperimentContext& ctx);
std::vector<MetricsReport> run_singular(const ExperimentPlan& plan);

MetricsReport run_batched(const ExperimentPlan& plan, const ExperimentContext& ctx);
MetricsReport run_batched(const ExperimentPlan& plan);

std::vector<MetricsReport> run_sequential_batched(const ExperimentPlan& plan,
                                                  const ExperimentContext& ctx);
std::vector<MetricsReport> run_sequential_batched(const ExperimentPlan& plan);

/// Dispatches on plan.strategy; singular runs return their per-edit reports aggregated.
std::vector<MetricsReport> run_plan(const ExperimentPlan& plan, const ExperimentContext& ctx);

std::map<std::int64_t, MetricsReport> layer_sweep(const ExperimentPlan& plan,
                                                  const std::vector<std::int64_t>& layers);
std::map<double, MetricsReport> lambda_sweep(const ExperimentPlan& plan,
                                             const std::vector<double>& lambdas);

// ---- parallelism ----

/// Worker count: PM_EDIT_THREADS if set and positive, else hardware concurrency.
std::int64_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t)>& fn);

}  // namespace pmedit
