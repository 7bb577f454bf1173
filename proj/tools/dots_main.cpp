#include <CLI11.hpp>

#include <iostream>

#include "dots/cli.hpp"
#include "dots/version.hpp"

namespace {

int run(int argc, char** argv) {
  CLI::App app{"Decoupled operation/topology search for cell architectures"};
  app.set_version_flag("--version", dots::kToolVersion);
  app.require_subcommand(1);

  std::string config_path, genotype_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir, dot_file;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* opt = sub->add_option("--config", config_path, "run configuration file");
    if (needs_config) opt->required();
    sub->add_option("--seed", seed, "override the run seed");
    sub->add_option("--out", out_dir, "override the output directory");
  };

  auto* search = app.add_subcommand("search", "two-stage architecture search");
  add_common(search, true);

  auto* rankcorr =
      app.add_subcommand("rankcorr", "rank-correlation experiment with brute-force truth");
  add_common(rankcorr, true);

  auto* eval = app.add_subcommand("eval", "train a genotype stand-alone and report accuracy");
  add_common(eval, true);
  eval->add_option("--genotype", genotype_path, "genotype file")->required();

  auto* exp = app.add_subcommand("export-dot", "render a genotype as a DOT graph");
  exp->add_option("--genotype", genotype_path, "genotype file")->required();
  exp->add_option("--out", dot_file, "write to a file instead of stdout");

  auto* validate = app.add_subcommand("validate", "check a genotype file");
  validate->add_option("--genotype", genotype_path, "genotype file")->required();
  validate->add_option("--config", config_path, "cell/policy context");

  CLI11_PARSE(app, argc, argv);

  const dots::CliOverrides overrides{seed, out_dir};
  if (search->parsed()) return dots::cmd_search(config_path, overrides);
  if (rankcorr->parsed()) return dots::cmd_rankcorr(config_path, overrides);
  if (eval->parsed()) return dots::cmd_eval(genotype_path, config_path, overrides);
  if (exp->parsed()) return dots::cmd_export_dot(genotype_path, dot_file);
  if (validate->parsed()) {
    std::optional<std::string> cfg;
    if (!config_path.empty()) cfg = config_path;
    return dots::cmd_validate(genotype_path, cfg);
  }
  return 0;
}

void print_error(const char* category, const std::string& message) {
  std::cerr << "{\"error\":{\"category\":\"" << category << "\",\"message\":"
            << nlohmann::json(message).dump() << "}}" << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::invalid_argument& e) {
    print_error("invalid-input", e.what());
    return 2;
  } catch (const std::runtime_error& e) {
    print_error("io", e.what());
    return 3;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return 4;
  }
}
