#pragma once

#include "pmedit/harness.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace pmedit::report {

inline constexpr std::string_view kCsvHeader =
    "run_id,algorithm,layer,batch_size,batch_index,edits_so_far,es,ps,ns,s,preservation,"
    "memorization,delta_fro,seed";

struct MetricsRow {
  std::string run_id;
  Algorithm algorithm = Algorithm::Memit;
  std::int64_t layer = 0;
  std::int64_t batch_size = 1;
  std::uint64_t seed = 0;
  MetricsReport report;
};

/// Rows for every report of a plan, stamped with the plan's identifying columns.
std::vector<MetricsRow> rows_for(const std::string& run_id, const ExperimentPlan& plan,
                                 const std::vector<MetricsReport>& reports);

std::string format_metrics_csv(const std::vector<MetricsRow>& rows);
/// Throws InvalidConfig on empty input, IoError on write failure. Atomic.
void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
/// Throws SchemaMismatch when the header or a row does not parse.
std::vector<MetricsRow> parse_metrics_csv(std::string_view text);
std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path);

enum class PlotMetric { Es, Ps, Ns, S };
enum class GroupBy { BatchSize, Lambda, Layer };

PlotMetric plot_metric_from_string(std::string_view name);
GroupBy group_by_from_string(std::string_view name);

/// Self-contained SVG line chart. batch_size: one line per batch size over edits_so_far.
/// layer / lambda: one line per algorithm over the sweep value recorded in run_id.
std::string render_plot_svg(const std::vector<MetricsRow>& rows, PlotMetric metric, GroupBy group_by);
void emit_plot_svg(const std::filesystem::path& csv_path, PlotMetric metric, GroupBy group_by,
                   const std::filesystem::path& out_path);

/// Stable hex id of a plan (FNV-1a over its canonical JSON).
std::string plan_hash(const ExperimentPlan& plan);
/// run_id suffixes used by sweeps so rows carry their sweep coordinate.
std::string sweep_run_id(const std::string& base, std::string_view key, double value);

/// Writes via a temporary file and rename. Throws IoError.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);
std::string read_file(const std::filesystem::path& path);

struct RunManifest {
  std::string run_id;
  ExperimentPlan plan;
  std::string command;
  std::string tool_version;
  std::string started;
  std::string finished;
  std::string status;  // running | completed | failed
  std::vector<std::string> output_paths;
};

nlohmann::json to_json(const RunManifest& manifest);
std::string utc_timestamp();

}  // namespace pmedit::report
