#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dots/config.hpp"
#include "dots/eval.hpp"
#include "dots/search.hpp"

namespace dots {

// Stage-1 supernet options: every non-pinned node relaxed over the canonical
// operation set, grouped per the strategy, plain-sum aggregation.
SupernetOptions stage1_options(const RunConfig& cfg,
                               const std::map<int, NodeMode>& node_modes = {});

// Stage-2 supernet options: retained candidates only, combination-weight
// aggregation under the configured policy.
SupernetOptions stage2_options(const RunConfig& cfg,
                               const std::map<Edge, std::vector<OpKind>>& retained,
                               const std::map<int, NodeMode>& node_modes = {});

// Baseline options: a single operation per edge and edge-level aggregation.
SupernetOptions baseline_stage_options(const RunConfig& cfg, BaselineKind kind,
                                       const std::map<Edge, std::vector<OpKind>>& retained,
                                       const AlphaSnapshot* alpha,
                                       const std::map<int, NodeMode>& node_modes = {});

// Retained candidates for the "external" strategy, from a JSON file of
// {"edges": [{"from", "to", "ops": [...]}]}.
std::map<Edge, std::vector<OpKind>> load_external_ops(const std::string& path,
                                                      const CellSpec& cell);

struct SearchArtifacts {
  std::optional<OperationSearchResult> op;  // absent under the external strategy
  TopologySearchResult topo;
  std::optional<BaselineResult> baseline;
  Genotype genotype;                        // combination-weight derivation
  std::optional<Genotype> genotype_darts;   // operation-weight derivation
  std::vector<MetricsRow> metrics;
  nlohmann::json final_state;               // topology-stage supernet snapshot
};

// The full two-stage pipeline on one task. Deterministic for a fixed config
// and seed.
SearchArtifacts run_search(const RunConfig& cfg, const SyntheticTask& task,
                           const MetricsSink& sink = nullptr);

// Built-in pinned context for the rank experiment: one pure-signal node, one
// pure-noise node, one mixing node, leaving the target node's edges with
// clearly graded usefulness.
std::vector<GenotypeNode> default_rankcorr_base(const CellSpec& cell);

struct ExperimentRecord {
  int combination_id = 0;
  EdgeCombination combo;
  double acc_mean = 0.0;
  double acc_std = 0.0;
  double score_op = 0.0;
  double score_combo = 0.0;
  std::optional<double> score_pcdarts, score_sigmoid;
};

struct RankSeedResult {
  std::uint64_t experiment_seed = 0;
  std::vector<ExperimentRecord> records;
  std::optional<double> tau_op, tau_combo, tau_pcdarts, tau_sigmoid;
  std::string status;  // "ok" or "no-signal"
  Genotype base;
};

// One rank-correlation experiment: hybrid search on the target node, variant
// enumeration, brute-force stand-alone ground truth (cached), and the tau of
// every importance signal against it.
RankSeedResult rank_experiment(const RunConfig& cfg, std::uint64_t experiment_seed,
                               AccuracyCache& cache);

// Continuation bundle: parameters, optimizer buffers and the epoch cursor.
// Batch orderings are derived statelessly from (seed, epoch), so this is all
// the state a resumed run needs.
nlohmann::json sgd_state_to_json(const Sgd& opt);
void sgd_state_from_json(const nlohmann::json& j, Sgd& opt);

}  // namespace dots
