#pragma once

#include <optional>
#include <string>

#include "dots/pipeline.hpp"

namespace dots {

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
};

// Command implementations shared by the binary and the tests. They throw on
// failure; the binary maps exception types to machine-readable error
// categories on stderr.

// Runs both search stages end to end; writes genotype.json (plus the
// operation-weight-policy genotype when stage 1 ran), checkpoint.json and
// metrics.csv into the output directory.
int cmd_search(const std::string& config_path, const CliOverrides& overrides = {});

// Runs the rank-correlation experiment over the configured seeds; writes
// experiment.csv, summary.json and the stand-alone accuracy cache.
int cmd_rankcorr(const std::string& config_path, const CliOverrides& overrides = {});

// Trains the genotype stand-alone over the configured seeds; writes eval.json
// and prints per-seed accuracies.
int cmd_eval(const std::string& genotype_path, const std::string& config_path,
             const CliOverrides& overrides = {});

// Renders a genotype as a DOT digraph (stdout, or a file when given).
int cmd_export_dot(const std::string& genotype_path,
                   const std::optional<std::string>& out_file = std::nullopt);

// Validates a genotype file; exit 0 when valid, 1 with a violation report
// otherwise.
int cmd_validate(const std::string& genotype_path,
                 const std::optional<std::string>& config_path = std::nullopt);

std::string export_dot_text(const Genotype& g);

// Applies seed/out overrides on top of a loaded config.
RunConfig resolve_config(const std::string& config_path, const CliOverrides& overrides);

}  // namespace dots
