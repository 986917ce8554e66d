// shd: command-line front end for the self-homodyne detection simulator.
#include <CLI11.hpp>
#include <iostream>
#include <map>

#include "shd/scenario.hpp"

namespace {

using Command = shd::CommandOutput (*)(const shd::ScenarioConfig&, const shd::RunOptions&);

const std::map<std::string, std::pair<Command, std::string>>& commands() {
  static const std::map<std::string, std::pair<Command, std::string>> table{
      {"fringe-scan", {shd::cmd_fringe_scan, "Ramp the mirror and record the interference fringes"}},
      {"calibrate", {shd::cmd_calibrate, "Calibrate volts to metres and check it on a known tone"}},
      {"imprecision-sweep", {shd::cmd_imprecision_sweep, "Imprecision floor versus scattered power"}},
      {"cool-sweep", {shd::cmd_cool_sweep, "Mode temperature versus feedback gain"}},
      {"modes", {shd::cmd_modes, "Coupled radial modes versus spring gain"}},
      {"efficiency-report", {shd::cmd_efficiency_report, "Collection and detection efficiency budget"}},
      {"psd", {shd::cmd_psd, "Power spectra of both detection channels"}},
  };
  return table;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Self-homodyne detection of a levitated particle: simulation and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(SHD_VERSION));

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  unsigned threads = 1;
  app.add_option("-c,--config", config_path, "Scenario JSON; defaults are used when omitted")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", seed, "Override the scenario seed");
  app.add_option("-o,--out", out_dir, "Output directory (overrides the config)");
  app.add_option("-j,--threads", threads, "Worker threads for sweeps")->check(CLI::Range(1u, 1024u));

  for (const auto& [name, entry] : commands()) app.add_subcommand(name, entry.second);

  CLI11_PARSE(app, argc, argv);

  const std::string name = app.get_subcommands().front()->get_name();
  std::optional<shd::ScenarioConfig> cfg;
  std::filesystem::path dir = out_dir.value_or("out");
  try {
    cfg = config_path.empty() ? shd::ScenarioConfig{} : shd::load_config(config_path);
    if (seed) cfg->seed = cfg->sim.seed = *seed;
    if (!out_dir) dir = cfg->output_dir;
    cfg->output_dir = dir.string();
    cfg->validate();

    const shd::CommandOutput out = commands().at(name).first(*cfg, shd::RunOptions{threads});
    const auto files = shd::write_outputs(dir, name, *cfg, out);
    for (const auto& f : files) std::cout << (dir / f).string() << "\n";
    for (const auto& e : out.errors) std::cerr << "shd " << name << ": " << e << "\n";
    return out.errors.empty() ? 0 : 1;
  } catch (const std::exception& e) {
    std::cerr << "shd " << name << ": " << e.what() << "\n";
    try {
      shd::write_error_manifest(dir, name, cfg, e.what());
    } catch (const std::exception& inner) {
      std::cerr << "shd: could not write manifest: " << inner.what() << "\n";
    }
    return 2;
  }
}
