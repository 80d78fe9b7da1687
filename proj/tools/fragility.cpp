#include <CLI11.hpp>

#include "fragility/cli_io.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Fragility field priors, updates and online-learning experiments"};
  app.require_subcommand(1);
  app.set_version_flag("--version", fragility::kArtifactVersion);

  fragility::CommandOptions options;
  std::uint64_t seed = 0;
  std::string chosen;
  for (const auto& [name, help] :
       {std::pair{"prior", "Build the hazard-based prior field for an inventory"},
        std::pair{"update", "Assimilate weighted observations into a field"},
        std::pair{"experiment", "Run the batched online-learning experiment"}}) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config", options.config, "JSON config file")->required();
    sub->add_option("--out", options.out, "Output directory");
    sub->add_option("--seed", seed, "Override the config seed");
    sub->add_flag("--dry-run", options.dry_run, "Validate inputs and write nothing");
    sub->callback([&chosen, name = std::string(name)] { chosen = name; });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return fragility::kExitInputError;
  }
  for (auto* sub : app.get_subcommands()) {
    if (sub->count("--seed") > 0) options.seed = seed;
  }
  return fragility::run_command(chosen, options);
}
