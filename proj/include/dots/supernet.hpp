#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "dots/anneal.hpp"
#include "dots/ops.hpp"
#include "dots/rng.hpp"
#include "dots/search_space.hpp"
#include "dots/tensor.hpp"

namespace dots {

// Named parameter registry. Creation order is deterministic and every value
// is derived from the run seed plus the parameter name, so two nets built
// from the same seed agree regardless of surrounding code paths.
class ParamStore {
 public:
  enum class Init { kZeros, kOnes, kFanIn };

  explicit ParamStore(Rng init_rng) : rng_(std::move(init_rng)) {}

  Tensor add(const std::string& name, Shape shape, Init init, int fan_in = 0);
  const std::vector<std::pair<std::string, Tensor>>& items() const { return items_; }
  std::vector<Tensor> tensors() const;
  Tensor* find(const std::string& name);

 private:
  Rng rng_;
  std::vector<std::pair<std::string, Tensor>> items_;
};

// One parameterized candidate operation on an edge. Convolutions follow the
// relu -> conv -> norm block convention; separable convs apply
// depthwise+pointwise twice, dilated convs once with dilation 2. Pooling is
// followed by the same normalization; skip is the identity and zero emits a
// constant zero feature.
class OpModule {
 public:
  OpModule(OpKind kind, int channels, const std::string& prefix, ParamStore& params);

  Tensor apply(const Tensor& x) const;
  OpKind kind() const { return kind_; }

 private:
  OpKind kind_;
  std::vector<Tensor> p_;
};

// Differentiable edge-importance aggregation: gamma_i = sum over combinations
// containing slot i of beta_c / N(c). beta must be the normalized
// combination distribution of `space`'s node.
Tensor aggregate_gamma(const Tensor& beta_normalized, const TopologySpace& space);

// sum_o weights[o] * candidate_o(x); rejects an empty candidate list.
Tensor mixed_forward(const std::vector<OpModule>& candidates, const Tensor& x,
                     const Tensor& weights);

// x_j = sum_i gamma[i] * edge_features[i]
Tensor node_forward(const std::vector<Tensor>& edge_features, const Tensor& gamma);

// How an intermediate node combines its incoming edges.
enum class NodeAggregation {
  kSum,              // operation-search stage: plain sum (gamma == 1)
  kGammaCombination, // topology stage: combination weights -> gamma
  kEdgeSoftmax,      // baseline: one softmax weight per edge
  kEdgeSigmoid,      // baseline: one sigmoid gate per edge
};

struct PinnedEdge {
  int from = 0;
  OpKind op = OpKind::kZero;
};

// A node is either relaxed (mixed ops on all incoming edges, aggregation per
// the stage) or pinned to a fixed set of discrete edges.
struct NodeMode {
  bool relaxed = true;
  std::vector<PinnedEdge> pinned;
};

struct SupernetOptions {
  CellSpec cell;
  int input_channels = 3;
  int classes = 8;
  NodeAggregation aggregation = NodeAggregation::kSum;
  TopologyPolicy policy = TopologyPolicy::kPairwise;
  // Candidate list per relaxed edge; required for every relaxed edge.
  std::map<Edge, std::vector<OpKind>> candidates;
  // Optional per-edge group structure (indices into the candidate list).
  // Present -> independent softmax per group in the operation stage.
  std::map<Edge, std::vector<std::vector<int>>> groups;
  // Node modes; missing nodes default to relaxed.
  std::map<int, NodeMode> node_modes;
};

struct RelaxedEdge {
  Edge edge;
  std::vector<OpKind> ops;
  std::vector<std::vector<int>> groups;  // at least one group
  std::vector<Tensor> alpha;             // one logit tensor per group; empty
                                         // when only one candidate exists
  std::vector<OpModule> modules;
};

struct Batch {
  Tensor x0, x1;            // per-input-node planes [B, C, H, W]
  std::vector<int> labels;  // length B
};

// The relaxed cell network: two stems, one cell, global pooling and a linear
// classifier. Architecture parameters (alpha/beta/edge logits) and network
// weights are disjoint sets; the stage drivers update each with its own rule.
class Supernet {
 public:
  Supernet(SupernetOptions options, std::uint64_t seed);

  Tensor forward_logits(const Batch& batch);
  Tensor forward_loss(const Batch& batch);

  std::vector<Tensor> network_params() const;  // w
  std::vector<Tensor> arch_params() const;     // alpha' + beta' (or edge logits)

  void set_alpha_temperature(double t);
  void set_beta_temperature(double t);
  double alpha_temperature() const { return t_alpha_; }
  double beta_temperature() const { return t_beta_; }

  std::vector<RelaxedEdge>& relaxed_edges() { return relaxed_; }
  const std::vector<RelaxedEdge>& relaxed_edges() const { return relaxed_; }
  const RelaxedEdge* find_edge(const Edge& e) const;
  std::map<int, Tensor>& beta() { return beta_; }
  const std::map<int, TopologySpace>& spaces() const { return spaces_; }
  std::map<int, Tensor>& edge_logits() { return edge_logits_; }
  const SupernetOptions& options() const { return options_; }
  ParamStore& params() { return params_; }

  // Named snapshot of everything learnable, for checkpoints.
  nlohmann::json state_to_json() const;
  void state_from_json(const nlohmann::json& j);

 private:
  Tensor stem(const Tensor& x, int index);
  Tensor edge_features(const RelaxedEdge& re, const Tensor& x);

  SupernetOptions options_;
  ParamStore params_;
  std::vector<RelaxedEdge> relaxed_;
  std::map<int, std::vector<std::pair<int, OpModule>>> pinned_;  // node -> (from, op)
  std::map<int, Tensor> beta_;
  std::map<int, TopologySpace> spaces_;
  std::map<int, Tensor> edge_logits_;
  std::vector<Tensor> stem_params_;  // pw/scale/shift per input node
  Tensor head_w_, head_b_;
  std::vector<std::pair<std::string, Tensor>> arch_named_;
  double t_alpha_ = 1.0;
  double t_beta_ = 1.0;
};

// Builds a fully pinned supernet (a discrete stand-alone network) from a
// genotype. Nodes absent from the genotype contribute zero features.
SupernetOptions standalone_options(const Genotype& g, const CellSpec& cell,
                                   int input_channels, int classes);

}  // namespace dots
