#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "amp_evolve/config.hpp"
#include "amp_evolve/experiment.hpp"
#include "amp_evolve/io.hpp"

namespace {

int default_jobs() {
  if (const char* env = std::getenv("AMP_EVOLVE_JOBS")) {
    try {
      const int k = std::stoi(env);
      if (k >= 1) return k;
    } catch (const std::exception&) {
    }
    std::cerr << "warning: ignoring AMP_EVOLVE_JOBS='" << env << "'\n";
  }
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace amp_evolve;
  CLI::App app{"amp-evolve: AMP runs, state evolution and finite-n verification"};
  std::string mode_name;
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  int jobs = default_jobs();
  bool emit = false;
  app.add_option("mode", mode_name,
                 "run-amp | se-predict | verify-theorem1 | verify-propositions | universality-sweep | validate-ensemble")
      ->required();
  app.add_option("--config", config_path, "JSON config file")->required()->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out_dir, "output directory (overrides output.dir)");
  auto* seed_opt = app.add_option("--seed", seed, "base seed override");
  app.add_option("--jobs", jobs, "concurrent replications (default: AMP_EVOLVE_JOBS or 1)")->check(CLI::PositiveNumber);
  app.add_flag("--emit-canonical", emit, "print the canonical config and exit");
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  const auto mode = parse_mode(mode_name);
  if (!mode) {
    std::cerr << "error: unknown mode '" << mode_name << "'\n";
    return kExitUsage;
  }

  try {
    const std::string text = read_file(config_path);
    ExperimentConfig cfg = parse_config_text(text);
    cfg.mode = *mode;
    if (*seed_opt) cfg.seed = seed;
    if (*out_opt) cfg.output_dir = out_dir;
    if (emit) {
      std::cout << emit_canonical(cfg);
      return kExitOk;
    }
    if (cfg.mode != Mode::ValidateEnsemble) validate_config(cfg);
    RunContext ctx;
    ctx.out_dir = cfg.output_dir;
    ctx.jobs = jobs;
    const int code = run_experiment(cfg, ctx);
    std::cerr << to_string(cfg.mode) << ": exit " << code << " (artifacts in " << ctx.out_dir.string() << ")\n";
    return code;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.exit_code();
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.kind()) << "]: " << e.what() << "\n";
    return kExitSemantic;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
}
