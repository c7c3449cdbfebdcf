#include "pmedit/cli.hpp"

#include "pmedit/error.hpp"
#include "pmedit/harness.hpp"
#include "pmedit/report.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <sstream>

#ifndef PMEDIT_VERSION
#define PMEDIT_VERSION "0.0.0"
#endif

namespace pmedit {

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;

nlohmann::json load_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(report::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path.string() + ": " + e.what());
  }
}

FactGenOptions fact_options_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidConfig, "facts config must be an object");
  for (const auto& [key, _] : j.items()) {
    static const char* const kKnown[] = {"layer",     "count",          "n_paraphrases",
                                         "para_noise", "neighbor_k",    "pool_size",
                                         "neighbor_noise", "seed"};
    if (std::none_of(std::begin(kKnown), std::end(kKnown), [&](const char* k) { return key == k; })) {
      throw Error(ErrorKind::InvalidConfig, "unknown field '" + key + "' in facts config");
    }
  }
  if (!j.contains("seed")) throw Error(ErrorKind::InvalidConfig, "facts config needs a seed");
  FactGenOptions o;
  try {
    o.seed = j.at("seed").get<std::uint64_t>();
    o.layer = j.value("layer", o.layer);
    o.count = j.value("count", o.count);
    o.n_paraphrases = j.value("n_paraphrases", o.n_paraphrases);
    o.para_noise = j.value("para_noise", o.para_noise);
    o.neighbor_k = j.value("neighbor_k", o.neighbor_k);
    o.pool_size = j.value("pool_size", o.pool_size);
    o.neighbor_noise = j.value("neighbor_noise", o.neighbor_noise);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("facts config: ") + e.what());
  }
  return o;
}

/// Runs `body` between the initial and the final manifest write.
void with_manifest(const std::string& command, const ExperimentPlan& plan, const fs::path& out_dir,
                   const std::function<std::vector<std::string>()>& body) {
  report::RunManifest manifest;
  manifest.started = report::utc_timestamp();
  manifest.run_id = manifest.started + "-" + report::plan_hash(plan);
  manifest.plan = plan;
  manifest.command = command;
  manifest.tool_version = PMEDIT_VERSION;
  manifest.status = "running";
  const fs::path manifest_path = out_dir / "manifest.json";
  report::write_file_atomic(manifest_path, report::to_json(manifest).dump(2) + "\n");
  report::write_file_atomic(out_dir / "config.json", to_json(plan).dump(2) + "\n");
  try {
    manifest.output_paths = body();
    manifest.output_paths.insert(manifest.output_paths.begin(),
                                 {manifest_path.string(), (out_dir / "config.json").string()});
    manifest.status = "completed";
  } catch (...) {
    manifest.status = "failed";
    manifest.finished = report::utc_timestamp();
    report::write_file_atomic(manifest_path, report::to_json(manifest).dump(2) + "\n");
    throw;
  }
  manifest.finished = report::utc_timestamp();
  report::write_file_atomic(manifest_path, report::to_json(manifest).dump(2) + "\n");
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Closed-form model editing on toy residual models", "pm_edit"};
  app.require_subcommand(1);

  std::string config_path, out_path, model_path, csv_path, metric = "s", group_by = "batch_size";
  std::vector<std::int64_t> layers;
  std::vector<double> lambdas;

  auto* gen_model = app.add_subcommand("gen-model", "Initialise a toy model from a model config");
  gen_model->add_option("--config", config_path, "Model config JSON")->required();
  gen_model->add_option("--out", out_path, "Model JSON to write")->required();

  auto* gen_facts_cmd = app.add_subcommand("gen-facts", "Generate a synthetic fact set");
  gen_facts_cmd->add_option("--model", model_path, "Model JSON")->required();
  gen_facts_cmd->add_option("--config", config_path, "Facts config JSON")->required();
  gen_facts_cmd->add_option("--out", out_path, "Facts JSON to write")->required();

  auto* edit = app.add_subcommand("edit", "Run an editing plan");
  edit->add_option("--config", config_path, "Plan JSON")->required();
  edit->add_option("--out", out_path, "Run directory")->required();

  auto* layer_cmd = app.add_subcommand("layer-sweep", "Singular edits at each layer");
  layer_cmd->add_option("--config", config_path, "Plan JSON")->required();
  layer_cmd->add_option("--out", out_path, "Run directory")->required();
  layer_cmd->add_option("--layers", layers, "Layers to sweep (default: all)")->delimiter(',');

  auto* lambda_cmd = app.add_subcommand("lambda-sweep", "Batched edits over lambda values");
  lambda_cmd->add_option("--config", config_path, "Plan JSON")->required();
  lambda_cmd->add_option("--out", out_path, "Run directory")->required();
  lambda_cmd->add_option("--lambdas", lambdas, "Lambda values")->delimiter(',');

  auto* report_cmd = app.add_subcommand("report", "Plot a metrics CSV as SVG");
  report_cmd->add_option("--csv", csv_path, "Metrics CSV")->required();
  report_cmd->add_option("--metric", metric, "es | ps | ns | s");
  report_cmd->add_option("--group-by", group_by, "batch_size | lambda | layer");
  report_cmd->add_option("--out", out_path, "SVG to write")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kExitUsage;
  }

  try {
    if (*gen_model) {
      const ToyModel model = init_model(config_from_json(load_json(config_path)));
      report::write_file_atomic(out_path, to_json(model).dump() + "\n");
      out << "wrote " << out_path << "\n";
    } else if (*gen_facts_cmd) {
      const ToyModel model = model_from_json(load_json(model_path));
      const FactSet facts = gen_facts(model, fact_options_from_json(load_json(config_path)));
      report::write_file_atomic(out_path, to_json(facts).dump() + "\n");
      out << "wrote " << facts.facts.size() << " facts to " << out_path << "\n";
    } else if (*edit) {
      const ExperimentPlan plan = plan_from_json(load_json(config_path));
      const fs::path dir = out_path;
      with_manifest("edit", plan, dir, [&] {
        const ExperimentContext ctx = prepare(plan);
        const auto reports = run_plan(plan, ctx);
        const fs::path csv = dir / "metrics.csv";
        report::write_metrics_csv(report::rows_for(report::plan_hash(plan), plan, reports), csv);
        const auto& last = reports.back();
        out << to_string(plan.algorithm) << " " << to_string(plan.strategy)
            << " edits=" << last.edits_so_far << " ES=" << last.es << " PS=" << last.ps
            << " NS=" << last.ns << " S=" << last.s << "\n";
        return std::vector<std::string>{csv.string()};
      });
    } else if (*layer_cmd) {
      const ExperimentPlan plan = plan_from_json(load_json(config_path));
      if (layers.empty()) {
        const std::int64_t depth = plan.model_path
                                       ? model_from_json(load_json(*plan.model_path)).num_layers()
                                       : plan.model_config.num_layers;
        for (std::int64_t l = 0; l < depth; ++l) layers.push_back(l);
      }
      const fs::path dir = out_path;
      with_manifest("layer-sweep", plan, dir, [&] {
        const auto results = layer_sweep(plan, layers);
        const std::string base = report::plan_hash(plan);
        std::vector<report::MetricsRow> rows;
        for (const auto& [layer, r] : results) {
          ExperimentPlan p = plan;
          p.layer = layer;
          p.batch_size = 1;
          auto row = report::rows_for(report::sweep_run_id(base, "layer", layer), p, {r});
          rows.insert(rows.end(), row.begin(), row.end());
          out << "layer " << layer << " S=" << r.s << "\n";
        }
        const fs::path csv = dir / "metrics.csv";
        report::write_metrics_csv(rows, csv);
        return std::vector<std::string>{csv.string()};
      });
    } else if (*lambda_cmd) {
      const ExperimentPlan plan = plan_from_json(load_json(config_path));
      if (lambdas.empty()) {
        lambdas = plan.algorithm == Algorithm::Emmet
                      ? std::vector<double>{0.0, 1e-3, 1e-2, 1e-1, 1.0, 10.0}
                      : std::vector<double>{1e-2, 1e-1, 1.0, 10.0, 100.0, 1e3, 1e4, 1e5, 1e6};
      }
      const fs::path dir = out_path;
      with_manifest("lambda-sweep", plan, dir, [&] {
        const auto results = lambda_sweep(plan, lambdas);
        const std::string base = report::plan_hash(plan);
        std::vector<report::MetricsRow> rows;
        for (const auto& [lambda, r] : results) {
          auto row = report::rows_for(report::sweep_run_id(base, "lambda", lambda), plan, {r});
          rows.insert(rows.end(), row.begin(), row.end());
          out << "lambda " << lambda << " S=" << r.s << " delta_fro=" << r.delta_fro << "\n";
        }
        const fs::path csv = dir / "metrics.csv";
        report::write_metrics_csv(rows, csv);
        return std::vector<std::string>{csv.string()};
      });
    } else if (*report_cmd) {
      report::emit_plot_svg(csv_path, report::plot_metric_from_string(metric),
                            report::group_by_from_string(group_by), out_path);
      out << "wrote " << out_path << "\n";
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return is_numerical(e.kind()) ? kExitNumerical : kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace pmedit
