#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dots/common.hpp"

namespace dots {

// Candidate operations for an edge. Order is canonical and index-stable.
enum class OpKind {
  kZero = 0,
  kSkipConnect,
  kAvgPool3x3,
  kMaxPool3x3,
  kSepConv3x3,
  kSepConv5x5,
  kDilConv3x3,
  kDilConv5x5,
};

const char* op_name(OpKind k);
OpKind op_from_name(const std::string& name);

struct OperationSet {
  std::vector<OpKind> ops;
  // Optional partition; disjoint groups whose union equals `ops`.
  std::vector<std::vector<OpKind>> groups;

  static OperationSet canonical();
  bool is_canonical() const;
  bool has_groups() const { return !groups.empty(); }
  void validate() const;
};

// Group scheme with one topology-related and one topology-agnostic group.
OperationSet group_partition_v2(const OperationSet& ops);
// Finer scheme with four pair groups; retained count equals the group count.
OperationSet group_partition_v1(const OperationSet& ops);

struct Edge {
  int from = 0;
  int to = 0;
  auto operator<=>(const Edge&) const = default;
};

std::string edge_key(const Edge& e);

// Cell DAG skeleton. Nodes are numbered from 1: inputs 1 and 2, then
// intermediate nodes 3..2+K. Intermediate node j receives one edge from every
// predecessor 1..j-1; the cell output concatenates all intermediate features.
struct CellSpec {
  int num_input_nodes = 2;
  int num_intermediate_nodes = 4;
  int channels = 8;

  int num_nodes() const { return num_input_nodes + num_intermediate_nodes; }
  int first_intermediate() const { return num_input_nodes + 1; }
  bool is_intermediate(int node) const {
    return node >= first_intermediate() && node <= num_nodes();
  }
  int incoming_count(int node) const { return node - 1; }
  std::vector<int> predecessors(int node) const;
  std::vector<Edge> all_edges() const;
};

// Subset of a node's incoming edges as a bit mask over local edge slots
// (slot i <-> predecessor node i+1).
struct EdgeCombination {
  int node = 0;
  int n = 0;              // incoming-edge count
  std::uint32_t mask = 0; // at least one bit set

  int size() const;
  bool contains_slot(int slot) const { return (mask >> slot) & 1u; }
  std::vector<int> code() const;         // e1..en as 0/1
  std::vector<int> slots() const;        // ascending local slot indices
  std::string to_string() const;         // e.g. "<1,3>"
};

enum class TopologyPolicy { kPairwise, kFlexible };

const char* policy_name(TopologyPolicy p);
TopologyPolicy policy_from_name(const std::string& name);

struct TopologySpace {
  int node = 0;
  int n = 0;
  TopologyPolicy policy = TopologyPolicy::kPairwise;
  std::vector<EdgeCombination> combinations;

  int size() const { return static_cast<int>(combinations.size()); }
};

// All C(n,2) pairs in lexicographic (i1,i2) order.
TopologySpace build_pairwise_space(int node, int n);
// All 2^n - 1 nonempty codes in increasing binary value (slot 0 = LSB).
TopologySpace build_flexible_space(int node, int n);

struct GenotypeEdge {
  int from = 0;
  OpKind op = OpKind::kZero;
};

struct GenotypeNode {
  int node = 0;
  std::vector<int> code;  // chosen combination, one bit per incoming edge
  std::vector<GenotypeEdge> edges;
};

// Discrete cell description. `edges` may be a subset of `code` when an edge
// resolved to Zero and was dropped.
struct Genotype {
  TopologyPolicy policy = TopologyPolicy::kPairwise;
  std::vector<GenotypeNode> nodes;
  nlohmann::json metadata = nlohmann::json::object();

  const GenotypeNode* find_node(int node) const;
};

nlohmann::json genotype_to_json(const Genotype& g);
Genotype genotype_from_json(const nlohmann::json& j);
std::string genotype_dump(const Genotype& g);

// Structure-only fingerprint (metadata excluded).
std::uint64_t genotype_hash(const Genotype& g);

struct Violation {
  std::string code;
  std::string message;
  int node = 0;  // 0 when not node-specific
};

struct ValidationReport {
  std::vector<Violation> violations;
  bool ok() const { return violations.empty(); }
  std::string to_string() const;
};

ValidationReport validate_genotype(const Genotype& g, const CellSpec& spec,
                                   TopologyPolicy policy);

}  // namespace dots
