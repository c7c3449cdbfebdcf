#include "pmedit/report.hpp"

#include "pmedit/error.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <system_error>

namespace pmedit::report {

namespace {

std::string fixed6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

std::string sci6(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6e", v);
  return buf;
}

std::vector<std::string_view> split(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(line.substr(start, pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_int(std::string_view s, const char* column) {
  T value{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size()) {
    throw Error(ErrorKind::SchemaMismatch, std::string("bad integer in column ") + column);
  }
  return value;
}

double parse_real(std::string_view s, const char* column) {
  const std::string copy(s);
  char* end = nullptr;
  const double v = std::strtod(copy.c_str(), &end);
  if (copy.empty() || end != copy.c_str() + copy.size() || !std::isfinite(v)) {
    throw Error(ErrorKind::SchemaMismatch, std::string("bad number in column ") + column);
  }
  return v;
}

}  // namespace

std::vector<MetricsRow> rows_for(const std::string& run_id, const ExperimentPlan& plan,
                                 const std::vector<MetricsReport>& reports) {
  std::vector<MetricsRow> rows;
  rows.reserve(reports.size());
  for (const auto& r : reports) {
    rows.push_back({run_id, plan.algorithm, plan.layer, plan.batch_size, plan.seed, r});
  }
  return rows;
}

std::string format_metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out(kCsvHeader);
  out += '\n';
  for (const auto& row : rows) {
    if (row.run_id.find_first_of(",\n\r") != std::string::npos) {
      throw Error(ErrorKind::InvalidConfig, "run_id may not contain commas or newlines");
    }
    const auto& r = row.report;
    out += row.run_id;
    out += ',';
    out += to_string(row.algorithm);
    out += ',' + std::to_string(row.layer);
    out += ',' + std::to_string(row.batch_size);
    out += ',' + std::to_string(r.batch_index);
    out += ',' + std::to_string(r.edits_so_far);
    out += ',' + fixed6(r.es);
    out += ',' + fixed6(r.ps);
    out += ',' + fixed6(r.ns);
    out += ',' + fixed6(r.s);
    out += ',' + sci6(r.objective.preservation);
    out += ',' + sci6(r.objective.memorization);
    out += ',' + sci6(r.delta_fro);
    out += ',' + std::to_string(row.seed);
    out += '\n';
  }
  return out;
}

void write_metrics_csv(const std::vector<MetricsRow>& rows, const std::filesystem::path& path) {
  if (rows.empty()) throw Error(ErrorKind::InvalidConfig, "no reports to write");
  write_file_atomic(path, format_metrics_csv(rows));
}

std::vector<MetricsRow> parse_metrics_csv(std::string_view text) {
  auto lines = split(text, '\n');
  if (!lines.empty() && lines.back().empty()) lines.pop_back();
  if (lines.empty() || lines.front() != kCsvHeader) {
    throw Error(ErrorKind::SchemaMismatch, "metrics CSV header does not match the schema");
  }
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto cols = split(lines[i], ',');
    if (cols.size() != 14) {
      throw Error(ErrorKind::SchemaMismatch, "metrics CSV row " + std::to_string(i) +
                                                 " has " + std::to_string(cols.size()) +
                                                 " columns");
    }
    MetricsRow row;
    row.run_id = std::string(cols[0]);
    try {
      row.algorithm = algorithm_from_string(cols[1]);
    } catch (const Error&) {
      throw Error(ErrorKind::SchemaMismatch, "unknown algorithm in metrics CSV");
    }
    row.layer = parse_int<std::int64_t>(cols[2], "layer");
    row.batch_size = parse_int<std::int64_t>(cols[3], "batch_size");
    row.report.batch_index = parse_int<std::int64_t>(cols[4], "batch_index");
    row.report.edits_so_far = parse_int<std::int64_t>(cols[5], "edits_so_far");
    row.report.es = parse_real(cols[6], "es");
    row.report.ps = parse_real(cols[7], "ps");
    row.report.ns = parse_real(cols[8], "ns");
    row.report.s = parse_real(cols[9], "s");
    row.report.objective.preservation = parse_real(cols[10], "preservation");
    row.report.objective.memorization = parse_real(cols[11], "memorization");
    row.report.delta_fro = parse_real(cols[12], "delta_fro");
    row.seed = parse_int<std::uint64_t>(cols[13], "seed");
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<MetricsRow> read_metrics_csv(const std::filesystem::path& path) {
  return parse_metrics_csv(read_file(path));
}

// ---- plots ----

PlotMetric plot_metric_from_string(std::string_view name) {
  if (name == "es") return PlotMetric::Es;
  if (name == "ps") return PlotMetric::Ps;
  if (name == "ns") return PlotMetric::Ns;
  if (name == "s") return PlotMetric::S;
  throw Error(ErrorKind::InvalidConfig, "metric must be one of es, ps, ns, s");
}

GroupBy group_by_from_string(std::string_view name) {
  if (name == "batch_size") return GroupBy::BatchSize;
  if (name == "lambda") return GroupBy::Lambda;
  if (name == "layer") return GroupBy::Layer;
  throw Error(ErrorKind::InvalidConfig, "group-by must be one of batch_size, lambda, layer");
}

std::string sweep_run_id(const std::string& base, std::string_view key, double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6g", value);
  return base + "/" + std::string(key) + "=" + buf;
}

namespace {

constexpr double kWidth = 640.0;
constexpr double kHeight = 400.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 150.0;
constexpr double kTop = 30.0;
constexpr double kBottom = 50.0;

const char* const kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                "#9467bd", "#8c564b", "#e377c2", "#17becf"};

double metric_value(const MetricsReport& r, PlotMetric m) {
  switch (m) {
    case PlotMetric::Es: return 100.0 * r.es;
    case PlotMetric::Ps: return 100.0 * r.ps;
    case PlotMetric::Ns: return 100.0 * r.ns;
    case PlotMetric::S: return r.s;
  }
  return 0.0;
}

const char* metric_label(PlotMetric m) {
  switch (m) {
    case PlotMetric::Es: return "ES";
    case PlotMetric::Ps: return "PS";
    case PlotMetric::Ns: return "NS";
    case PlotMetric::S: return "S";
  }
  return "";
}

double sweep_value(const std::string& run_id, std::string_view key) {
  const std::string marker = "/" + std::string(key) + "=";
  const auto pos = run_id.rfind(marker);
  if (pos == std::string::npos) {
    throw Error(ErrorKind::SchemaMismatch,
                "run_id '" + run_id + "' carries no " + std::string(key) + " coordinate");
  }
  return parse_real(std::string_view(run_id).substr(pos + marker.size()), "run_id");
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

std::string escape(std::string_view s) {
  std::string out;
  for (const char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string render_plot_svg(const std::vector<MetricsRow>& rows, PlotMetric metric,
                            GroupBy group_by) {
  if (rows.empty()) throw Error(ErrorKind::SchemaMismatch, "metrics CSV has no rows");

  // group label -> (x, y) points in input order
  std::map<std::string, std::vector<std::pair<double, double>>> groups;
  std::map<std::string, double> group_order;
  std::set<double> lambda_values;
  std::string x_label;
  for (const auto& row : rows) {
    if (group_by == GroupBy::Lambda) lambda_values.insert(sweep_value(row.run_id, "lambda"));
  }
  for (const auto& row : rows) {
    const double y = metric_value(row.report, metric);
    std::string label;
    double x = 0.0;
    double order = 0.0;
    switch (group_by) {
      case GroupBy::BatchSize:
        label = "batch " + std::to_string(row.batch_size);
        order = static_cast<double>(row.batch_size);
        x = static_cast<double>(row.report.edits_so_far);
        x_label = "edits";
        break;
      case GroupBy::Layer: {
        label = std::string(to_string(row.algorithm));
        order = static_cast<double>(row.algorithm);
        const bool swept = row.run_id.find("/layer=") != std::string::npos;
        x = swept ? sweep_value(row.run_id, "layer") : static_cast<double>(row.layer);
        x_label = "layer";
        break;
      }
      case GroupBy::Lambda: {
        label = std::string(to_string(row.algorithm));
        order = static_cast<double>(row.algorithm);
        const double lambda = sweep_value(row.run_id, "lambda");
        x = static_cast<double>(std::distance(lambda_values.begin(), lambda_values.find(lambda)));
        x_label = "lambda";
        break;
      }
    }
    groups[label].emplace_back(x, y);
    group_order.emplace(label, order);
  }

  std::vector<std::string> labels;
  for (const auto& [label, _] : groups) labels.push_back(label);
  std::stable_sort(labels.begin(), labels.end(), [&](const auto& a, const auto& b) {
    return group_order.at(a) < group_order.at(b);
  });

  double x_min = 1e300, x_max = -1e300;
  for (const auto& [_, pts] : groups) {
    for (const auto& [x, y] : pts) {
      x_min = std::min(x_min, x);
      x_max = std::max(x_max, x);
    }
  }
  if (x_max <= x_min) {
    x_min -= 1.0;
    x_max += 1.0;
  }
  const double plot_w = kWidth - kLeft - kRight;
  const double plot_h = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x_min) / (x_max - x_min) * plot_w; };
  auto py = [&](double y) { return kTop + (1.0 - std::clamp(y, 0.0, 100.0) / 100.0) * plot_h; };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
      << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<g class=\"axes\" stroke=\"black\" fill=\"none\">"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop + plot_h << "\" x2=\"" << kLeft + plot_w
      << "\" y2=\"" << kTop + plot_h << "\"/>"
      << "<line x1=\"" << kLeft << "\" y1=\"" << kTop << "\" x2=\"" << kLeft << "\" y2=\""
      << kTop + plot_h << "\"/></g>\n";
  for (int tick = 0; tick <= 100; tick += 25) {
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << num(py(tick) + 4)
        << "\" font-size=\"11\" text-anchor=\"end\">" << tick << "</text>\n";
  }
  if (group_by == GroupBy::Lambda) {
    std::size_t i = 0;
    for (const double lambda : lambda_values) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%g", lambda);
      svg << "<text x=\"" << num(px(static_cast<double>(i++))) << "\" y=\"" << kTop + plot_h + 16
          << "\" font-size=\"11\" text-anchor=\"middle\">" << buf << "</text>\n";
    }
  } else {
    char lo[32], hi[32];
    std::snprintf(lo, sizeof lo, "%g", x_min);
    std::snprintf(hi, sizeof hi, "%g", x_max);
    svg << "<text x=\"" << kLeft << "\" y=\"" << kTop + plot_h + 16
        << "\" font-size=\"11\" text-anchor=\"middle\">" << lo << "</text>\n";
    svg << "<text x=\"" << kLeft + plot_w << "\" y=\"" << kTop + plot_h + 16
        << "\" font-size=\"11\" text-anchor=\"middle\">" << hi << "</text>\n";
  }
  svg << "<text x=\"" << kLeft + plot_w / 2 << "\" y=\"" << kHeight - 10
      << "\" font-size=\"12\" text-anchor=\"middle\">" << x_label << "</text>\n";
  svg << "<text x=\"" << 16 << "\" y=\"" << kTop + plot_h / 2
      << "\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 "
      << kTop + plot_h / 2 << ")\">" << metric_label(metric) << "</text>\n";

  for (std::size_t g = 0; g < labels.size(); ++g) {
    const char* color = kPalette[g % std::size(kPalette)];
    auto pts = groups.at(labels[g]);
    std::stable_sort(pts.begin(), pts.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    svg << "<polyline class=\"series\" fill=\"none\" stroke=\"" << color
        << "\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < pts.size(); ++i) {
      svg << (i ? " " : "") << num(px(pts[i].first)) << ',' << num(py(pts[i].second));
    }
    svg << "\"/>\n";
    for (const auto& [x, y] : pts) {
      svg << "<circle class=\"marker\" cx=\"" << num(px(x)) << "\" cy=\"" << num(py(y))
          << "\" r=\"3\" fill=\"" << color << "\"/>\n";
    }
  }
  for (std::size_t g = 0; g < labels.size(); ++g) {
    const double y = kTop + 10 + 18.0 * static_cast<double>(g);
    const double x = kLeft + plot_w + 15;
    svg << "<g class=\"legend-entry\"><line x1=\"" << x << "\" y1=\"" << num(y) << "\" x2=\""
        << x + 20 << "\" y2=\"" << num(y) << "\" stroke=\"" << kPalette[g % std::size(kPalette)]
        << "\" stroke-width=\"2\"/><text x=\"" << x + 26 << "\" y=\"" << num(y + 4)
        << "\" font-size=\"11\">" << escape(labels[g]) << "</text></g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plot_svg(const std::filesystem::path& csv_path, PlotMetric metric, GroupBy group_by,
                   const std::filesystem::path& out_path) {
  write_file_atomic(out_path, render_plot_svg(read_metrics_csv(csv_path), metric, group_by));
}

// ---- files ----

std::string plan_hash(const ExperimentPlan& plan) {
  const std::string canonical = to_json(plan).dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const unsigned char c : canonical) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void write_file_atomic(const std::filesystem::path& path, std::string_view contents) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot rename onto " + path.string() + ": " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json to_json(const RunManifest& m) {
  return {{"run_id", m.run_id},   {"plan", pmedit::to_json(m.plan)},
          {"command", m.command}, {"tool_version", m.tool_version},
          {"started", m.started}, {"finished", m.finished.empty() ? nlohmann::json() : nlohmann::json(m.finished)},
          {"status", m.status},   {"output_paths", m.output_paths}};
}

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y%m%dT%H%M%SZ", &tm);
  return buf;
}

}  // namespace pmedit::report
