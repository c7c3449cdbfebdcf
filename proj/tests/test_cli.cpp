#include "pmedit/cli.hpp"
#include "pmedit/report.hpp"

#include <doctest.h>

#include <filesystem>
#include <sstream>

using namespace pmedit;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli_main(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("pmedit_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string write(const fs::path& path, const nlohmann::json& j) {
  report::write_file_atomic(path, j.dump(2));
  return path.string();
}

nlohmann::json small_plan() {
  return {{"algorithm", "memit"},
          {"strategy", "sequential_batched"},
          {"layer", 1},
          {"batch_size", 8},
          {"total_edits", 32},
          {"lambda", 1.0},
          {"seed", 3},
          {"model_config", {{"num_layers", 3}, {"d_model", 12}, {"d_ffn", 24}, {"seed", 5}}},
          {"facts", {{"count", 32}}},
          {"preservation_samples", 128}};
}

std::vector<std::string> column(const std::string& csv, std::size_t index) {
  std::vector<std::string> out;
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    std::size_t start = 0;
    for (std::size_t c = 0; c < index; ++c) start = line.find(',', start) + 1;
    out.push_back(line.substr(start, line.find(',', start) - start));
  }
  return out;
}

std::string drop_first_column(const std::string& csv) {
  std::istringstream in(csv);
  std::string line, out;
  while (std::getline(in, line)) out += line.substr(line.find(',') + 1) + "\n";
  return out;
}

}  // namespace

TEST_CASE("edit happy path") {
  const fs::path dir = temp_dir("edit");
  const std::string plan = write(dir / "plan.json", small_plan());
  const Run r = cli({"edit", "--config", plan, "--out", (dir / "run").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(fs::exists(dir / "run" / "config.json"));
  const std::string csv = report::read_file(dir / "run" / "metrics.csv");
  CHECK(column(csv, 5) == std::vector<std::string>{"8", "16", "24", "32"});

  const auto manifest = nlohmann::json::parse(report::read_file(dir / "run" / "manifest.json"));
  CHECK(manifest["status"] == "completed");
  CHECK(manifest["finished"].is_string());
  CHECK(manifest["output_paths"].size() == 3);
  const std::string run_id = manifest["run_id"];
  CHECK(run_id.find(column(csv, 0).front()) != std::string::npos);

  // Same seed again: identical bytes outside the manifest.
  const std::string config = report::read_file(dir / "run" / "config.json");
  REQUIRE(cli({"edit", "--config", plan, "--out", (dir / "run").string()}).code == 0);
  CHECK(report::read_file(dir / "run" / "metrics.csv") == csv);
  CHECK(report::read_file(dir / "run" / "config.json") == config);
}

TEST_CASE("usage errors exit 1") {
  Run r = cli({"frobnicate"});
  CHECK(r.code == 1);
  CHECK(r.err.find("gen-model") != std::string::npos);
  CHECK(cli({}).code == 1);
  CHECK(cli({"edit", "--config"}).code == 1);

  const fs::path dir = temp_dir("usage");
  nlohmann::json plan = small_plan();
  plan["batchsize"] = 8;
  r = cli({"edit", "--config", write(dir / "typo.json", plan), "--out", (dir / "o").string()});
  CHECK(r.code == 1);
  CHECK(r.err.find("batchsize") != std::string::npos);

  plan = small_plan();
  plan.erase("seed");
  CHECK(cli({"edit", "--config", write(dir / "noseed.json", plan), "--out", (dir / "o").string()}).code == 1);
  CHECK(cli({"edit", "--config", (dir / "missing.json").string(), "--out", (dir / "o").string()}).code == 1);
  CHECK(cli({"--help"}).code == 0);
}

TEST_CASE("EMMET batch wider than d_ffn exits 2") {
  const fs::path dir = temp_dir("gram");
  nlohmann::json plan = small_plan();
  plan["algorithm"] = "emmet";
  plan["strategy"] = "batched";
  plan["lambda"] = 0.0;
  plan["batch_size"] = 32;
  plan["total_edits"] = 32;
  const Run r = cli({"edit", "--config", write(dir / "plan.json", plan), "--out", (dir / "run").string()});
  CHECK(r.code == 2);
  CHECK(r.err.find("SingularGram") != std::string::npos);
  const auto manifest = nlohmann::json::parse(report::read_file(dir / "run" / "manifest.json"));
  CHECK(manifest["status"] == "failed");
}

TEST_CASE("saved model and facts reproduce the inline run") {
  const fs::path dir = temp_dir("files");
  const nlohmann::json plan = small_plan();
  REQUIRE(cli({"gen-model", "--config", write(dir / "model_config.json", plan["model_config"]), "--out",
               (dir / "model.json").string()}).code == 0);
  const nlohmann::json facts_cfg = {{"layer", 1}, {"count", 32}, {"seed", 3}};
  const Run g = cli({"gen-facts", "--model", (dir / "model.json").string(), "--config",
                     write(dir / "facts_config.json", facts_cfg), "--out", (dir / "facts.json").string()});
  INFO(g.err);
  REQUIRE(g.code == 0);

  nlohmann::json from_files = plan;
  from_files["model_path"] = (dir / "model.json").string();
  from_files["facts_path"] = (dir / "facts.json").string();
  REQUIRE(cli({"edit", "--config", write(dir / "inline.json", plan), "--out", (dir / "a").string()}).code == 0);
  REQUIRE(cli({"edit", "--config", write(dir / "files.json", from_files), "--out", (dir / "b").string()}).code == 0);
  CHECK(drop_first_column(report::read_file(dir / "a" / "metrics.csv")) ==
        drop_first_column(report::read_file(dir / "b" / "metrics.csv")));

  nlohmann::json bad_facts = facts_cfg;
  bad_facts["para_noise"] = 0.0;
  CHECK(cli({"gen-facts", "--model", (dir / "model.json").string(), "--config",
             write(dir / "bad.json", bad_facts), "--out", (dir / "x.json").string()}).code == 1);
}

TEST_CASE("sweeps and report") {
  const fs::path dir = temp_dir("sweeps");
  nlohmann::json plan = small_plan();
  plan["strategy"] = "batched";
  plan["batch_size"] = 16;
  plan["total_edits"] = 16;
  Run r = cli({"lambda-sweep", "--config", write(dir / "lambda.json", plan), "--out", (dir / "lam").string(),
               "--lambdas", "0.01,1,100"});
  INFO(r.err);
  REQUIRE(r.code == 0);
  const auto rows = report::read_metrics_csv(dir / "lam" / "metrics.csv");
  REQUIRE(rows.size() == 3);
  CHECK(rows[0].report.delta_fro > rows[1].report.delta_fro);
  CHECK(rows[1].report.delta_fro > rows[2].report.delta_fro);
  REQUIRE(cli({"report", "--csv", (dir / "lam" / "metrics.csv").string(), "--metric", "ns", "--group-by",
               "lambda", "--out", (dir / "lam.svg").string()}).code == 0);
  CHECK(report::read_file(dir / "lam.svg").find("<polyline") != std::string::npos);

  plan["algorithm"] = "rome";
  plan["strategy"] = "singular";
  plan["batch_size"] = 1;
  plan["total_edits"] = 8;
  r = cli({"layer-sweep", "--config", write(dir / "layer.json", plan), "--out", (dir / "lay").string()});
  INFO(r.err);
  REQUIRE(r.code == 0);
  CHECK(report::read_metrics_csv(dir / "lay" / "metrics.csv").size() == 3);
  CHECK(cli({"report", "--csv", (dir / "lay" / "metrics.csv").string(), "--group-by", "layer", "--out",
             (dir / "lay.svg").string()}).code == 0);
  CHECK(cli({"report", "--csv", (dir / "lay" / "metrics.csv").string(), "--metric", "gpa", "--out",
             (dir / "x.svg").string()}).code == 1);
}
