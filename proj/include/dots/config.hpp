#pragma once

#include <string>

#include <json.hpp>

#include "dots/eval.hpp"
#include "dots/search.hpp"

namespace dots {

struct RankcorrConfig {
  int target_node = 0;  // 0 selects the last intermediate node
  int experiment_seeds = 5;
  int acc_seeds = 3;
  int threads = 0;  // 0 selects hardware concurrency
  bool run_baselines = false;
  double sigmoid_threshold = 0.5;
  // Pinned context for every non-target node; empty selects the built-in
  // default layout.
  std::vector<GenotypeNode> base_nodes;
};

struct RunConfig {
  std::uint64_t seed = 1;
  std::string out_dir = "runs/out";
  TaskConfig task;
  CellSpec cell;
  StagePlan plan;
  OptimizerConfig optim;
  AnnealConfig anneal;
  StandaloneConfig standalone;
  RankcorrConfig rankcorr;
  // Topology stage re-initializes network weights by default; set to inherit
  // the operation-stage weights instead.
  bool inherit_weights = false;
};

RunConfig default_config();

nlohmann::json config_to_json(const RunConfig& cfg);
// Strict: any unknown key anywhere in the document is an error naming the key.
RunConfig config_from_json(const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);

// Effective-run fingerprint embedded in every artifact; excludes out_dir.
std::string config_hash(const RunConfig& cfg);

}  // namespace dots
