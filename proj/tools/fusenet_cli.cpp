// fusenet: run / validate experiment configs and re-derive sharing graphs.
// Exit codes: 0 success, 1 config error, 2 runtime or divergence error.

#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fusenet/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 1;
constexpr int kRuntimeError = 2;

fusenet::InfluenceMetric parse_metric(const std::string& s) {
  if (s == "weight") return fusenet::InfluenceMetric::weight;
  if (s == "inverse_distance") return fusenet::InfluenceMetric::inverse_distance;
  throw fusenet::ConfigError("--metric must be weight or inverse_distance");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Robust joint training of networks across related datasets"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Suppress progress output");

  std::string run_config;
  auto* run = app.add_subcommand("run", "Train per a config and write outputs");
  run->add_option("config", run_config, "Config JSON")->required();

  std::string validate_config;
  auto* validate = app.add_subcommand("validate", "Parse a config and check its data without training");
  validate->add_option("config", validate_config, "Config JSON")->required();

  std::string snapshot, out_dir, metric = "weight";
  std::size_t k = 3;
  auto* graph = app.add_subcommand("graph", "Re-derive sharing_l*.dot from a weights snapshot");
  graph->add_option("snapshot", snapshot, "weights.json written by run")->required();
  graph->add_option("--k", k, "Mutual top-k neighbourhood size")->capture_default_str();
  graph->add_option("--out", out_dir, "Output directory (default: the snapshot's directory)");
  graph->add_option("--metric", metric, "weight or inverse_distance")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfigError;
  }

  try {
    if (*run) {
      const auto cfg = fusenet::load_config(run_config);
      fusenet::LogFn log;
      if (!quiet) log = [](const std::string& s) { std::cerr << s << '\n'; };
      const auto result = fusenet::run_experiment(cfg, log);
      std::cout << "wrote " << (result.output_dir / "summary.json").string() << '\n';
    } else if (*validate) {
      const auto cfg = fusenet::load_config(validate_config);
      const auto data = fusenet::prepare(cfg);
      std::size_t records = 0;
      for (const auto& d : data) records += d.records();
      std::cout << "ok: task " << fusenet::to_string(cfg.task) << ", " << data.size() << " datasets, " << records
                << " records\n";
    } else if (*graph) {
      const auto paths = fusenet::graph_from_snapshot(
          snapshot, k, parse_metric(metric), out_dir.empty() ? std::nullopt : std::optional<fusenet::fs::path>(out_dir));
      for (const auto& p : paths) std::cout << "wrote " << p.string() << '\n';
    }
  } catch (const fusenet::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kConfigError;
  } catch (const fusenet::DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << '\n';
    return kRuntimeError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntimeError;
  }
  return kOk;
}
