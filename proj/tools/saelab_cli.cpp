#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "saelab/config.hpp"
#include "saelab/harness.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Synthetic sparse-autoencoder experiments"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;

  const std::pair<const char*, const char*> commands[] = {
      {"gen", "generate H, V and data statistics"},
      {"train", "generate data, train and evaluate"},
      {"eval", "evaluate stored parameters from --out"},
      {"sweep", "train once per sweep.values entry"},
      {"ident", "identifiability report on generated data"},
      {"theory", "modified bias-adaptation dynamics"},
  };
  for (const auto& [name, help] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out_dir, "output directory")->required();
    sub->add_option("--seed", seed, "overrides global.seed");
  }

  CLI11_PARSE(app, argc, argv);
  const std::string stage_name = app.get_subcommands().front()->get_name();

  try {
    std::ifstream in(config_path);
    std::stringstream text;
    text << in.rdbuf();
    saelab::ExperimentConfig cfg = saelab::parse_config(text.str());
    if (seed) cfg.seed = *seed;
    saelab::run_experiment(cfg, saelab::stage_from_string(stage_name), out_dir);
    std::cout << "wrote " << (std::filesystem::path(out_dir) / "manifest.json").string() << "\n";
  } catch (const saelab::ConfigError& e) {
    std::cerr << config_path << ": " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 0;
}
