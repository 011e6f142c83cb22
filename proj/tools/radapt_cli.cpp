#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "radapt/harness.hpp"
#include "radapt/kernels.hpp"

namespace {

nlohmann::json load_config(const std::string& path) {
  if (path.empty()) return nlohmann::json::object();
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open config: " + path);
  return nlohmann::json::parse(f);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"R-Adapt laboratory: training, attacks, defense and analysis"};
  app.require_subcommand(1);
  app.fallthrough();  // accept global options after the subcommand

  std::string config_path;
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  int threads = 0;
  app.add_option("--config", config_path, "JSON config file")->capture_default_str();
  app.add_option("--seed", seed, "master seed")->capture_default_str();
  app.add_option("--out", out_dir, "output directory")->capture_default_str();
  app.add_option("--threads", threads, "worker threads (0 = hardware default)");

  const char* pipelines[] = {"train",  "aft",     "anchor-opt", "attack-eval",
                             "cka",    "spectrum", "replace",   "insensitivity",
                             "shapley", "sweep",   "pipeline"};
  const char* descriptions[] = {
      "train a standard model",
      "adversarially fine-tune a model",
      "optimize a data-driven anchor",
      "clean + robust accuracy under an attack",
      "cross-model CKA layer map",
      "spectral shift map of patch kernels",
      "progressive unit replacement curve",
      "block-1 attention insensitivity scores",
      "Shapley head attribution",
      "GIF/FRA, alpha, cutoff and anchor-size ablations",
      "full preset: train, AFT, anchors, evaluations, all reports"};
  for (std::size_t i = 0; i < std::size(pipelines); ++i) {
    app.add_subcommand(pipelines[i], descriptions[i]);
  }

  CLI11_PARSE(app, argc, argv);

  try {
    if (threads > 0) radapt::kernels::set_threads(threads);
    radapt::ExperimentSpec spec;
    spec.pipeline = app.get_subcommands().front()->get_name();
    spec.config = load_config(config_path);
    spec.out_dir = out_dir;
    spec.seed = seed;
    return radapt::run(spec);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
