// tkf: keyframe extraction, evaluation and manifest inspection.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "tkf/log.hpp"
#include "tkf/pipeline.hpp"

namespace {

struct ExtractFlags {
  std::string input;
  std::string config;
  std::string out;
  bool stub = false;
  std::optional<double> sampling_rate;
  std::optional<int> workers;
  std::optional<std::string> endpoint;
  bool dumps = false;
};

struct EvalFlags {
  std::string manifests;
  std::string ground_truth;
  std::string config;
  std::optional<double> tau;
  std::string out;
};

// Defaults, then the config file, then the environment, then flags.
tkf::PipelineConfig resolve_config(const ExtractFlags& f) {
  tkf::PipelineConfig c = f.config.empty() ? tkf::PipelineConfig{} : tkf::load_config(f.config);
  tkf::apply_env_overrides(c);
  if (!f.out.empty()) c.output_dir = f.out;
  if (f.sampling_rate) c.sampling_rate = *f.sampling_rate;
  if (f.workers) c.workers = *f.workers;
  if (f.endpoint) c.providers.endpoint = *f.endpoint;
  if (f.dumps) c.write_dumps = true;
  if (f.stub) c.providers.mode = tkf::ProviderMode::stub;
  tkf::validate_config(c);
  return c;
}

int run_extract(const ExtractFlags& f) {
  tkf::PipelineConfig config;
  try {
    config = resolve_config(f);
  } catch (const std::exception& e) {
    std::cerr << "tkf extract: config: " << e.what() << "\n";
    return 2;
  }
  try {
    const auto m = tkf::run_extract(config, f.input);
    std::cout << m.keyframes.size() << " keyframes from " << m.counts.sampled << " sampled frames ("
              << m.n_clusters << " clusters) -> "
              << (std::filesystem::path(config.output_dir) / tkf::kManifestName).string() << "\n";
    return 0;
  } catch (const std::exception& e) {
    // StageError text starts with the stage name.
    std::cerr << "tkf extract: " << e.what() << "\n";
  }
  return 1;
}

int run_eval(const EvalFlags& f) {
  try {
    double tau = 1.0;
    if (!f.config.empty()) tau = tkf::load_config(f.config).eval_tau;
    if (f.tau) tau = *f.tau;
    if (!(tau >= 0.0)) throw tkf::ConfigError("--tau must be non-negative");
    const auto report = tkf::run_eval(f.manifests, f.ground_truth, tau);
    const std::string text = tkf::to_json(report);
    if (!f.out.empty()) {
      std::ofstream out(f.out, std::ios::binary | std::ios::trunc);
      if (!(out << text)) throw std::runtime_error("cannot write " + f.out);
    }
    std::cout << text;
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "tkf eval: " << e.what() << "\n";
    return 1;
  }
}

int run_inspect(const std::string& path, bool as_json) {
  try {
    const auto m = tkf::load_manifest(path);
    std::cout << (as_json ? tkf::manifest_to_json(m) : tkf::inspect_manifest(m));
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "tkf inspect: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal keyframe extraction"};
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Log stage progress to stderr");

  ExtractFlags ex;
  auto* extract = app.add_subcommand("extract", "Extract keyframes from a video or PNG frame directory");
  extract->add_option("--input", ex.input, "Video file or frame directory")->required();
  extract->add_option("--config", ex.config, "JSON config file");
  extract->add_option("--out", ex.out, "Output directory (overrides output_dir)");
  extract->add_flag("--stub-providers", ex.stub, "Use the offline deterministic providers");
  extract->add_option("--sampling-rate", ex.sampling_rate, "Frames per second to sample");
  extract->add_option("--workers", ex.workers, "Worker threads");
  extract->add_option("--endpoint", ex.endpoint, "Sidecar URL");
  extract->add_flag("--dumps", ex.dumps, "Also write feature, embedding and grid dumps");

  EvalFlags ev;
  auto* eval = app.add_subcommand("eval", "Score manifests against ground truth");
  eval->add_option("--manifests", ev.manifests, "Directory searched for manifest.json files")->required();
  eval->add_option("--ground-truth", ev.ground_truth, "Directory of <video_id>.json files")->required();
  eval->add_option("--tau", ev.tau, "Match tolerance in seconds (default 1.0)");
  eval->add_option("--config", ev.config, "JSON config file supplying eval_tau");
  eval->add_option("--out", ev.out, "Also write the report here");

  std::string manifest_path;
  bool as_json = false;
  auto* inspect = app.add_subcommand("inspect", "Pretty-print a manifest");
  inspect->add_option("manifest", manifest_path, "Path to manifest.json")->required();
  inspect->add_flag("--json", as_json, "Print normalized JSON instead");

  CLI11_PARSE(app, argc, argv);
  tkf::log::set_level(verbose ? tkf::log::Level::info : tkf::log::Level::warning);

  if (*extract) return run_extract(ex);
  if (*eval) return run_eval(ev);
  if (*inspect) return run_inspect(manifest_path, as_json);
  return EXIT_FAILURE;
}
