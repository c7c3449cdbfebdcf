// Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include "pmedit/cli.hpp"
#include "pmedit/editors.hpp"
#include "pmedit/error.hpp"
#include "pmedit/harness.hpp"
#include "pmedit/numerics.hpp"
#include "pmedit/report.hpp"
#include "pmedit/value_solver.hpp"
#include "test_support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <limits>
#include <sstream>

using namespace pmedit;
using pmedit::testing::EditInstance;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

// Tracks the worst observed value against a bound.
struct Worst {
  double value = 0.0;
  void see(double v) { value = std::isnan(v) ? std::numeric_limits<double>::infinity() : std::max(value, v); }
};

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

const std::int64_t kSuiteEdits[] = {1, 2, 4, 8};
constexpr int kSuiteSize = 52;

EditInstance suite_instance(int i) {
  const std::int64_t e = kSuiteEdits[i % 4];
  // Alternate synthetic instances and instances built from a toy model layer.
  return i % 2 == 0 ? testing::random_instance(1000 + i, 32, 64, e)
                    : testing::model_instance(2000 + i, 32, 64, e, 1);
}

double relative_residual(const Matrix& w_hat, const Vector& k, const Vector& v) {
  return (w_hat * k - v).norm() / std::max(v.norm(), 1e-300);
}

Outcome criterion1() {
  const double a = composite_score(1.0, 0.9805, 0.8573);
  const double b = composite_score(1.0, 0.9805, 0.8561);
  const double c = composite_score_percent(100.0, 98.05, 85.73);
  const bool pass = std::abs(a - 94.15) <= 0.005 && std::abs(b - 94.10) <= 0.005 && std::abs(c - 94.15) <= 0.005;
  char buf[64];
  std::snprintf(buf, sizeof buf, "S=%.4f, %.4f", a, b);
  return {pass, buf};
}

Outcome criterion2() {
  Worst rome, emmet;
  for (int i = 0; i < kSuiteSize; ++i) {
    const EditInstance inst = suite_instance(i);
    const Matrix& k = inst.batch.keys;
    const Matrix& v = inst.batch.values;
    for (Eigen::Index j = 0; j < k.cols(); ++j) {
      const EditDelta d = rome_delta(inst.w0, inst.c0, k.col(j), v.col(j));
      rome.see(relative_residual(inst.w0 + d.delta, k.col(j), v.col(j)));
    }
    const Matrix w_hat = inst.w0 + emmet_delta(inst.w0, inst.c0, inst.batch).delta;
    for (Eigen::Index j = 0; j < k.cols(); ++j) emmet.see(relative_residual(w_hat, k.col(j), v.col(j)));
  }
  return {rome.value <= 1e-6 && emmet.value <= 1e-6,
          std::to_string(kSuiteSize) + " instances, max residual rome " + fmt(rome.value) + " emmet " +
              fmt(emmet.value)};
}

Outcome criterion3() {
  Worst single, kkt;
  for (int i = 0; i < kSuiteSize; ++i) {
    const EditInstance inst = suite_instance(i);
    EditBatchMatrices one;
    one.keys = inst.batch.keys.leftCols(1);
    one.values = inst.batch.values.leftCols(1);
    one.fact_ids = {0};
    const Matrix r = rome_delta(inst.w0, inst.c0, one.keys.col(0), one.values.col(0)).delta;
    single.see((r - emmet_delta(inst.w0, inst.c0, one).delta).norm());
    kkt.see((emmet_delta(inst.w0, inst.c0, inst.batch).delta - emmet_oracle_kkt(inst.w0, inst.c0, inst.batch))
                .norm());
  }
  return {single.value <= 1e-10 && kkt.value <= 1e-8,
          "rome-emmet " + fmt(single.value) + ", emmet-kkt " + fmt(kkt.value)};
}

// The objective MEMIT minimizes, weighted by the same C0 the solver sees.
double memit_objective(const EditInstance& inst, const Matrix& w_hat, double lambda) {
  const Matrix d = w_hat - inst.w0;
  return lambda * (d * inst.c0 * d.transpose()).trace() +
         (w_hat * inst.batch.keys - inst.batch.values).squaredNorm();
}

Outcome criterion4() {
  Worst stationarity;
  int instances = 0;
  for (const double lambda : {0.01, 1.0, 100.0}) {
    for (int i = 0; i < kSuiteSize; ++i) {
      const EditInstance inst = suite_instance(i);
      const Matrix& k = inst.batch.keys;
      const Matrix d = memit_delta(inst.w0, inst.c0, inst.batch, lambda).delta;
      const Matrix grad = lambda * d * inst.c0 + ((inst.w0 + d) * k - inst.batch.values) * k.transpose();
      stationarity.see(grad.norm() / (1.0 + inst.batch.values.norm() * k.norm()));
      ++instances;
    }
  }
  // Local minimality: random perturbations of every scale never improve the objective.
  int worse = 0, probes = 0;
  std::mt19937_64 rng(4242);
  std::uniform_real_distribution<double> unif(-6.0, 0.0);
  for (int i = 0; i < 10; ++i) {
    const EditInstance inst = suite_instance(i);
    const double lambda = i % 3 == 0 ? 0.01 : (i % 3 == 1 ? 1.0 : 100.0);
    const Matrix w_hat = inst.w0 + memit_delta(inst.w0, inst.c0, inst.batch, lambda).delta;
    const double best = memit_objective(inst, w_hat, lambda);
    for (int p = 0; p < 100; ++p, ++probes) {
      Matrix dir = testing::random_matrix(rng, inst.w0.rows(), inst.w0.cols());
      dir *= std::pow(10.0, unif(rng)) / dir.norm();
      const double probe = memit_objective(inst, w_hat + dir, lambda);
      worse += probe >= best * (1.0 - 1e-12);
    }
  }
  return {stationarity.value <= 1e-6 && worse == probes,
          std::to_string(instances) + " solves, max scaled residual " + fmt(stationarity.value) + ", " +
              std::to_string(worse) + "/" + std::to_string(probes) + " probes not better"};
}

ToyModel gradient_model(std::uint64_t seed) {
  ToyModelConfig c;
  c.num_layers = 3;
  c.d_model = 8;
  c.d_ffn = 12;
  c.seed = seed;
  return init_model(c);
}

// Smallest |pre-activation| downstream of `layer`; central differences across a relu kink are meaningless.
double kink_distance(const ToyModel& m, std::int64_t layer, const Vector& h, const Vector& v) {
  double best = std::numeric_limits<double>::infinity();
  Vector state = h + v;
  for (std::int64_t l = layer + 1; l < m.num_layers(); ++l) {
    Vector pre = m.up(l) * state;
    best = std::min(best, pre.cwiseAbs().minCoeff());
    for (Eigen::Index i = 0; i < pre.size(); ++i) pre(i) = activate(m.config().activation, pre(i));
    state += m.down(l) * pre;
  }
  return best;
}

Outcome criterion5() {
  Worst rel;
  int points = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const ToyModel m = gradient_model(100 + seed);
    std::mt19937_64 rng(200 + seed);
    int checked = 0;
    while (checked < 10) {
      const ForwardTrace tr = forward(m, gaussian_vector(rng, 8));
      const Vector v0 = m.down(0) * tr.keys[0];
      const Vector v = v0 + 0.5 * gaussian_vector(rng, 8);
      if (kink_distance(m, 0, tr.hidden[0], v) <= 1e-3) continue;
      const Vector target = gaussian_vector(rng, 8);
      const LossGrad lg = value_loss_grad(m, 0, tr.hidden[0], v, target, 1e-3, v0);
      Vector fd(v.size());
      const double h = 1e-5;
      for (Eigen::Index i = 0; i < v.size(); ++i) {
        Vector plus = v, minus = v;
        plus(i) += h;
        minus(i) -= h;
        fd(i) = (value_loss_grad(m, 0, tr.hidden[0], plus, target, 1e-3, v0).loss -
                 value_loss_grad(m, 0, tr.hidden[0], minus, target, 1e-3, v0).loss) / (2 * h);
      }
      rel.see((fd - lg.grad).norm() / lg.grad.norm());
      ++checked;
      ++points;
    }
  }
  ToyModelConfig bench;
  bench.seed = 11;
  const ToyModel m = init_model(bench);
  std::mt19937_64 rng(12);
  const Vector x = gaussian_vector(rng, bench.d_model);
  const Vector target = forward(m, gaussian_vector(rng, bench.d_model)).output();
  const ValueSolveResult r = solve_value(m, 1, x, target);
  const double reduction = 1.0 - r.final_loss / r.initial_loss;
  return {rel.value <= 1e-5 && reduction >= 0.9,
          std::to_string(points) + " points, max rel error " + fmt(rel.value) + ", benchmark reduction " +
              fmt(100 * reduction) + "%"};
}

Outcome criterion6() {
  bool ranks_ok = true;
  for (int i = 0; i < kSuiteSize; ++i) {
    const EditInstance inst = suite_instance(i);
    const std::int64_t e = inst.batch.keys.cols();
    ranks_ok &= numerics::numerical_rank(
                    rome_delta(inst.w0, inst.c0, inst.batch.keys.col(0), inst.batch.values.col(0)).delta) <= 1;
    ranks_ok &= numerics::numerical_rank(emmet_delta(inst.w0, inst.c0, inst.batch).delta) <= e;
    ranks_ok &= numerics::numerical_rank(memit_delta(inst.w0, inst.c0, inst.batch, 1.0).delta) <= e;
  }
  const EditInstance inst = suite_instance(0);
  const Vector k = inst.batch.keys.col(0);
  const Matrix d = rome_delta(inst.w0, inst.c0, k, inst.batch.values.col(0)).delta;
  const Vector dir = numerics::solve_spd(inst.c0, k);
  Worst probe;
  std::mt19937_64 rng(606);
  for (int i = 0; i < 20; ++i) {
    Vector p = gaussian_vector(rng, k.size());
    p -= (dir.dot(p) / dir.squaredNorm()) * dir;
    probe.see((d * p).norm());
  }
  return {ranks_ok && probe.value <= 1e-9,
          std::string(ranks_ok ? "ranks within batch size" : "rank exceeded") + ", max probe response " +
              fmt(probe.value)};
}

ExperimentPlan driver_plan(Algorithm alg, Strategy strategy, std::int64_t batch, std::int64_t total) {
  ExperimentPlan p;
  p.algorithm = alg;
  p.strategy = strategy;
  p.batch_size = batch;
  p.total_edits = total;
  p.layer = 1;
  p.lambda = alg == Algorithm::Memit ? 1.0 : 0.0;
  p.seed = 21;
  p.model_config.num_layers = 4;
  p.model_config.d_model = 16;
  p.model_config.d_ffn = 32;
  p.model_config.seed = 22;
  p.facts.count = 64;
  p.preservation_samples = 256;
  return p;
}

Outcome criterion7() {
  bool rows_equal = true;
  for (const Algorithm alg : {Algorithm::Memit, Algorithm::Emmet}) {
    const ExperimentPlan b = driver_plan(alg, Strategy::Batched, 16, 16);
    const ExperimentContext ctx = prepare(b);
    ExperimentPlan s = b;
    s.strategy = Strategy::SequentialBatched;
    const std::string batched = report::format_metrics_csv(report::rows_for("run", b, {run_batched(b, ctx)}));
    const std::string seq = report::format_metrics_csv(report::rows_for("run", s, run_sequential_batched(s, ctx)));
    rows_equal &= batched == seq;
  }

  bool budget_ok = true;
  for (const auto& [batch, total, valid] : {std::tuple{32, 100, false}, std::tuple{32, 128, true},
                                           std::tuple{1, 4096, true}, std::tuple{3, 4096, false}}) {
    const ExperimentPlan p = driver_plan(Algorithm::Memit, Strategy::SequentialBatched, batch, total);
    bool accepted = true;
    try {
      p.validate();
    } catch (const Error&) {
      accepted = false;
    }
    budget_ok &= accepted == valid && (!valid || p.batch_size * p.num_batches() == p.total_edits);
  }

  const ExperimentPlan r = driver_plan(Algorithm::Rome, Strategy::SequentialBatched, 1, 24);
  const ExperimentContext ctx = prepare(r);
  ExperimentPlan e = r;
  e.algorithm = Algorithm::Emmet;
  const auto rome = run_sequential_batched(r, ctx);
  const auto emmet = run_sequential_batched(e, ctx);
  bool trajectory = rome.size() == 24 && emmet.size() == 24;
  double drift = 0.0;
  for (std::size_t i = 0; trajectory && i < rome.size(); ++i) {
    trajectory &= rome[i].es == emmet[i].es && rome[i].ps == emmet[i].ps && rome[i].ns == emmet[i].ns &&
                  rome[i].edits_so_far == emmet[i].edits_so_far;
    drift = std::max(drift, std::abs(rome[i].delta_fro - emmet[i].delta_fro) / std::max(1.0, rome[i].delta_fro));
  }
  trajectory &= drift <= 1e-8;
  return {rows_equal && budget_ok && trajectory,
          std::string("one-batch rows ") + (rows_equal ? "identical" : "differ") + ", budgets " +
              (budget_ok ? "enforced" : "not enforced") + ", 24-step trajectory drift " + fmt(drift)};
}

double spearman_vs_index(const std::vector<double>& ys) {
  const std::size_t n = ys.size();
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0, equal = 0;
    for (std::size_t j = 0; j < n; ++j) {
      less += ys[j] < ys[i];
      equal += ys[j] == ys[i];
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = (i + 1.0) - mean, dy = rank[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  return syy == 0.0 ? 0.0 : sxy / std::sqrt(sxx * syy);
}

Outcome criterion8() {
  // Benchmark model with the default configuration and a fixed fixture seed.
  ExperimentPlan plan;
  plan.algorithm = Algorithm::Memit;
  plan.strategy = Strategy::Batched;
  plan.layer = 1;
  plan.seed = 7;
  plan.model_config.seed = 11;
  plan.facts.count = 512;
  plan.batch_size = plan.total_edits = 128;
  const ExperimentContext ctx = prepare(plan);
  std::vector<double> ns;
  std::string detail = "NS";
  for (const std::int64_t b : {8, 32, 128}) {
    ExperimentPlan p = plan;
    p.batch_size = p.total_edits = b;
    ns.push_back(run_batched(p, ctx).ns);
    detail += " " + fmt(ns.back());
  }
  const double rho = spearman_vs_index(ns);
  return {rho <= 0.0, detail + " at batch 8/32/128, spearman " + fmt(rho)};
}

std::string run_cli_edit(const fs::path& dir, const std::string& plan_path, const char* threads) {
  setenv("PM_EDIT_THREADS", threads, 1);
  std::ostringstream out, err;
  const int code = cli_main({"edit", "--config", plan_path, "--out", dir.string()}, out, err);
  unsetenv("PM_EDIT_THREADS");
  if (code != 0) throw std::runtime_error(err.str());
  return report::read_file(dir / "metrics.csv");
}

Outcome criterion9() {
  const fs::path root = fs::temp_directory_path() / "pmedit_acceptance_determinism";
  fs::remove_all(root);
  fs::create_directories(root);
  bool identical = true;
  std::string detail;
  for (const Strategy strategy : {Strategy::SequentialBatched, Strategy::Singular}) {
    ExperimentPlan p = driver_plan(Algorithm::Memit, strategy, 8, 32);
    if (strategy == Strategy::Singular) {
      p.algorithm = Algorithm::Rome;
      p.batch_size = 1;
      p.total_edits = 16;
    }
    const std::string name(to_string(strategy));
    const fs::path plan_path = root / (name + ".json");
    report::write_file_atomic(plan_path, to_json(p).dump(2));
    const std::string one = run_cli_edit(root / (name + "_1"), plan_path.string(), "1");
    const std::string four = run_cli_edit(root / (name + "_4"), plan_path.string(), "4");
    identical &= one == four && !one.empty();
    detail += name + (one == four ? " identical; " : " differs; ");
  }
  fs::remove_all(root);
  return {identical, detail + "threads 1 vs 4"};
}

Outcome criterion10() {
  Worst fro;
  bool monotone = true;
  for (int i = 0; i < 8; ++i) {
    const EditInstance inst = testing::random_instance(3000 + i, 32, 64, kSuiteEdits[i % 4]);
    double previous = std::numeric_limits<double>::infinity();
    for (const double lambda : {1.0, 1e3, 1e6, 1e9, 1e12}) {
      const double f = memit_delta(inst.w0, inst.c0, inst.batch, lambda).delta.norm();
      monotone &= f <= previous;
      previous = f;
    }
    fro.see(previous);
  }
  ExperimentPlan e = driver_plan(Algorithm::Emmet, Strategy::Batched, 16, 16);
  e.lambda = 0.0;
  bool emmet_ok = false;
  try {
    e.validate();
    const MetricsReport r = run_batched(e);
    emmet_ok = std::isfinite(r.delta_fro) && r.delta_fro > 0.0 && r.es == 1.0;
  } catch (const Error&) {
  }
  return {fro.value <= 1e-9 && monotone && emmet_ok,
          "max delta_fro at 1e12 " + fmt(fro.value) + (monotone ? ", decreasing" : ", not decreasing") +
              (emmet_ok ? ", emmet at lambda 0 ok" : ", emmet at lambda 0 failed")};
}

}  // namespace

int main() {
  const std::pair<const char*, std::function<Outcome()>> criteria[] = {
      {"composite score", criterion1},
      {"equality memorization", criterion2},
      {"editor equivalence", criterion3},
      {"memit stationarity", criterion4},
      {"value solver gradients", criterion5},
      {"rank and locality", criterion6},
      {"driver coherence", criterion7},
      {"neighborhood trend", criterion8},
      {"determinism", criterion9},
      {"lambda limits", criterion10},
  };
  int failures = 0;
  int index = 0;
  for (const auto& [name, fn] : criteria) {
    ++index;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    failures += !o.pass;
    std::printf("[%s] %2d %-24s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d/%d criteria passed\n", index - failures, index);
  return failures == 0 ? 0 : 1;
}
