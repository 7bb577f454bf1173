#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dots/anneal.hpp"
#include "dots/data.hpp"
#include "dots/optim.hpp"
#include "dots/supernet.hpp"

namespace dots {

enum class OperationStrategy { kDartsTop1, kDartsTop2, kGroupV1, kGroupV2, kExternal };

const char* strategy_name(OperationStrategy s);
OperationStrategy strategy_from_name(const std::string& name);

enum class BaselineKind { kNone, kPcdartsEdgeWeight, kEdgeLevelSigmoid };

const char* baseline_name(BaselineKind b);
BaselineKind baseline_from_name(const std::string& name);

struct StagePlan {
  int operation_epochs = 30;
  int topology_epochs = 40;
  OperationStrategy strategy = OperationStrategy::kGroupV2;
  TopologyPolicy policy = TopologyPolicy::kPairwise;
  BaselineKind baseline = BaselineKind::kNone;
  std::string external_ops_file;  // retained candidates for kExternal
};

struct OptimizerConfig {
  double lr0 = 0.025;  // network weights, cosine annealed to 0 per stage
  double momentum = 0.9;
  double weight_decay = 3e-4;
  std::optional<double> grad_clip = 5.0;
  double arch_lr = 0.3;  // architecture weights, constant
  double arch_momentum = 0.9;
  double arch_weight_decay = 1e-3;
  std::optional<double> arch_grad_clip;  // none by default
  int batch_size = 64;
};

struct AnnealConfig {
  double t0 = 10.0;
  double t_final = 0.02;
};

// Flattened per-edge operation-weight snapshot (groups laid back into
// candidate order), the input to derivations and importance reports.
struct AlphaSnapshot {
  std::map<Edge, std::vector<OpKind>> ops;
  std::map<Edge, std::vector<std::vector<int>>> groups;
  std::map<Edge, Eigen::ArrayXd> logits;

  // Per-edge normalized operation weights: softmax at T=1 within each group.
  Eigen::ArrayXd normalized(const Edge& e) const;
  // max over non-Zero candidates of the raw logit; derivation-ranking key.
  double edge_importance_logit(const Edge& e) const;
  // max over non-Zero candidates of the normalized weight.
  double edge_importance(const Edge& e) const;
};

struct OperationSearchResult {
  std::map<Edge, std::vector<OpKind>> retained;
  AlphaSnapshot alpha;
  std::vector<double> epoch_losses;
};

struct TopologySearchResult {
  std::map<int, Eigen::ArrayXd> beta_logits;
  std::map<int, TopologySpace> spaces;
  std::map<Edge, std::vector<OpKind>> edge_candidates;
  std::map<Edge, Eigen::ArrayXd> alpha2_logits;  // multi-op edges only
  std::vector<std::map<Edge, int>> argmax_history;  // per epoch
  std::vector<double> epoch_losses;
  std::vector<double> temperatures;
};

struct MetricsRow {
  int epoch = 0;
  std::string stage;
  double loss = 0.0;
  std::optional<double> t_beta;
  std::map<int, double> max_beta;  // per node
  double lr_w = 0.0;
  double lr_arch = 0.0;
};

using MetricsSink = std::function<void(const MetricsRow&)>;

// One first-order bi-level step: architecture weights take a gradient step on
// the validation loss with frozen network weights, then the network weights
// take a step on the training loss with frozen architecture weights.
void bilevel_step(Supernet& net, Sgd& opt_w, Sgd& opt_arch, const Batch& train_batch,
                  const Batch& val_batch, double lr_w, double lr_arch);

// One-level step: a single backward pass on the training loss updates both
// parameter sets from the same gradients.
void one_level_step(Supernet& net, Sgd& opt_w, Sgd& opt_arch, const Batch& train_batch,
                    double lr_w, double lr_arch);

OperationSearchResult operation_search(Supernet& net, const DataSplit& train,
                                       const DataSplit& val, const StagePlan& plan,
                                       const OptimizerConfig& optim, const Rng& order_rng,
                                       const MetricsSink& sink = nullptr);

TopologySearchResult topology_search(Supernet& net, const DataSplit& train,
                                     const StagePlan& plan, const OptimizerConfig& optim,
                                     const AnnealConfig& anneal, const Rng& order_rng,
                                     const MetricsSink& sink = nullptr);

// Reads a stage-1 snapshot back out of a supernet.
AlphaSnapshot snapshot_alpha(const Supernet& net);

// Retention rules. darts_top1/top2 exclude Zero; group strategies keep the
// per-group winner, Zero included.
std::map<Edge, std::vector<OpKind>> retain_candidates(const AlphaSnapshot& alpha,
                                                      OperationStrategy strategy);

// DARTS hard pruning: per edge the best non-Zero candidate, per node the two
// incoming edges with the largest importance. Ranking reads raw logits, so
// the result is invariant under strictly monotone transforms of the logits.
Genotype derive_darts_policy(const AlphaSnapshot& alpha, const CellSpec& spec);

// Combination-weight pruning: per node the argmax combination; per chosen
// edge the retained operation (argmax of the co-trained weights under group
// search); edges resolving to Zero are dropped and noted in metadata.
Genotype derive_dots_policy(const TopologySearchResult& topo, const CellSpec& spec,
                            TopologyPolicy policy);

// Per-edge operation choice for building stand-alone variants: final non-Zero
// winner of the topology stage (falls back to the strongest non-Zero
// candidate when Zero won).
std::map<Edge, OpKind> variant_edge_ops(const TopologySearchResult& topo);

struct ImportanceReport {
  int node = 0;
  TopologySpace space;
  std::vector<double> score_op;     // sum over combination edges of edge importance
  std::vector<double> score_combo;  // normalized combination weight; empty if no beta
};

ImportanceReport importance_report(const AlphaSnapshot& alpha,
                                   const std::optional<TopologySearchResult>& topo,
                                   const TopologySpace& space);

struct BaselineResult {
  BaselineKind kind = BaselineKind::kNone;
  std::map<int, Eigen::ArrayXd> edge_weights;  // softmax weights or sigmoid gates
  Genotype genotype;
  std::vector<double> epoch_losses;
};

// Trains an ablation baseline in place of the topology stage. `net` must use
// the matching edge-level aggregation.
BaselineResult run_baseline(Supernet& net, BaselineKind kind, const DataSplit& train,
                            const StagePlan& plan, const OptimizerConfig& optim,
                            const Rng& order_rng, double sigmoid_threshold = 0.5,
                            const MetricsSink& sink = nullptr);

// Combination score under a baseline: sum of its edges' weights.
std::vector<double> baseline_combo_scores(const BaselineResult& baseline,
                                          const TopologySpace& space);

// Edge selection rules used by the baselines. Slots are 0-based and returned
// ascending; ties break toward the lower slot.
std::vector<int> pcdarts_select_edges(const Eigen::ArrayXd& weights);
// Keeps every gate above the threshold; falls back to the single highest gate
// when none clears it (second member reports the fallback).
std::pair<std::vector<int>, bool> sigmoid_select_edges(const Eigen::ArrayXd& gates,
                                                       double threshold);

}  // namespace dots
