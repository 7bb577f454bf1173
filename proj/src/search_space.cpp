#include "dots/search_space.hpp"

#include <algorithm>
#include <bit>
#include <map>
#include <set>
#include <sstream>

namespace dots {

namespace {

const std::vector<std::pair<OpKind, const char*>>& op_table() {
  static const std::vector<std::pair<OpKind, const char*>> table = {
      {OpKind::kZero, "zero"},
      {OpKind::kSkipConnect, "skip_connect"},
      {OpKind::kAvgPool3x3, "avg_pool_3x3"},
      {OpKind::kMaxPool3x3, "max_pool_3x3"},
      {OpKind::kSepConv3x3, "sep_conv_3x3"},
      {OpKind::kSepConv5x5, "sep_conv_5x5"},
      {OpKind::kDilConv3x3, "dil_conv_3x3"},
      {OpKind::kDilConv5x5, "dil_conv_5x5"},
  };
  return table;
}

}  // namespace

const char* op_name(OpKind k) {
  for (const auto& [op, name] : op_table()) {
    if (op == k) return name;
  }
  throw std::invalid_argument("op_name: unknown operation id " +
                              std::to_string(static_cast<int>(k)));
}

OpKind op_from_name(const std::string& name) {
  for (const auto& [op, n] : op_table()) {
    if (name == n) return op;
  }
  throw std::invalid_argument("op_from_name: unknown operation \"" + name + "\"");
}

OperationSet OperationSet::canonical() {
  OperationSet s;
  for (const auto& [op, name] : op_table()) {
    (void)name;
    s.ops.push_back(op);
  }
  return s;
}

bool OperationSet::is_canonical() const {
  return ops == OperationSet::canonical().ops;
}

void OperationSet::validate() const {
  check(!ops.empty(), "OperationSet: empty");
  std::set<OpKind> seen(ops.begin(), ops.end());
  check(seen.size() == ops.size(), "OperationSet: duplicate operation identifiers");
  if (groups.empty()) return;
  std::set<OpKind> covered;
  for (const auto& g : groups) {
    check(!g.empty(), "OperationSet: empty group");
    for (OpKind k : g) {
      check(seen.count(k) == 1, "OperationSet: group member not in set");
      check(covered.insert(k).second, "OperationSet: groups overlap");
    }
  }
  check(covered.size() == ops.size(), "OperationSet: groups do not cover the set");
}

OperationSet group_partition_v2(const OperationSet& ops) {
  check(ops.is_canonical(), "group_partition_v2: requires the canonical 8-operation set");
  OperationSet out = ops;
  out.groups = {
      {OpKind::kZero, OpKind::kSkipConnect, OpKind::kAvgPool3x3, OpKind::kMaxPool3x3},
      {OpKind::kSepConv3x3, OpKind::kSepConv5x5, OpKind::kDilConv3x3, OpKind::kDilConv5x5},
  };
  out.validate();
  return out;
}

OperationSet group_partition_v1(const OperationSet& ops) {
  check(ops.is_canonical(), "group_partition_v1: requires the canonical 8-operation set");
  OperationSet out = ops;
  out.groups = {
      {OpKind::kZero, OpKind::kSkipConnect},
      {OpKind::kAvgPool3x3, OpKind::kMaxPool3x3},
      {OpKind::kSepConv3x3, OpKind::kDilConv3x3},
      {OpKind::kSepConv5x5, OpKind::kDilConv5x5},
  };
  out.validate();
  return out;
}

std::string edge_key(const Edge& e) {
  return std::to_string(e.from) + "->" + std::to_string(e.to);
}

std::vector<int> CellSpec::predecessors(int node) const {
  check(is_intermediate(node), "CellSpec::predecessors: node " + std::to_string(node) +
                                   " is not an intermediate node");
  std::vector<int> p;
  for (int i = 1; i < node; ++i) p.push_back(i);
  return p;
}

std::vector<Edge> CellSpec::all_edges() const {
  std::vector<Edge> edges;
  for (int j = first_intermediate(); j <= num_nodes(); ++j) {
    for (int i = 1; i < j; ++i) edges.push_back({i, j});
  }
  return edges;
}

int EdgeCombination::size() const { return std::popcount(mask); }

std::vector<int> EdgeCombination::code() const {
  std::vector<int> c(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) c[static_cast<std::size_t>(i)] = contains_slot(i) ? 1 : 0;
  return c;
}

std::vector<int> EdgeCombination::slots() const {
  std::vector<int> s;
  for (int i = 0; i < n; ++i) {
    if (contains_slot(i)) s.push_back(i);
  }
  return s;
}

std::string EdgeCombination::to_string() const {
  std::ostringstream os;
  os << '<';
  bool first = true;
  for (int s : slots()) {
    if (!first) os << ',';
    os << (s + 1);
    first = false;
  }
  os << '>';
  return os.str();
}

const char* policy_name(TopologyPolicy p) {
  return p == TopologyPolicy::kPairwise ? "pairwise" : "flexible";
}

TopologyPolicy policy_from_name(const std::string& name) {
  if (name == "pairwise") return TopologyPolicy::kPairwise;
  if (name == "flexible") return TopologyPolicy::kFlexible;
  throw std::invalid_argument("policy_from_name: unknown topology policy \"" + name + "\"");
}

TopologySpace build_pairwise_space(int node, int n) {
  check(n >= 2, "build_pairwise_space: need at least 2 incoming edges, got " +
                    std::to_string(n));
  check(n <= 16, "build_pairwise_space: n too large");
  TopologySpace space;
  space.node = node;
  space.n = n;
  space.policy = TopologyPolicy::kPairwise;
  for (int i1 = 0; i1 < n; ++i1) {
    for (int i2 = i1 + 1; i2 < n; ++i2) {
      space.combinations.push_back(
          {node, n, (1u << i1) | (1u << i2)});
    }
  }
  return space;
}

TopologySpace build_flexible_space(int node, int n) {
  check(n >= 1, "build_flexible_space: need at least 1 incoming edge");
  check(n <= 16, "build_flexible_space: n too large");
  TopologySpace space;
  space.node = node;
  space.n = n;
  space.policy = TopologyPolicy::kFlexible;
  const std::uint32_t total = (1u << n) - 1u;
  for (std::uint32_t m = 1; m <= total; ++m) {
    space.combinations.push_back({node, n, m});
  }
  return space;
}

const GenotypeNode* Genotype::find_node(int node) const {
  for (const GenotypeNode& gn : nodes) {
    if (gn.node == node) return &gn;
  }
  return nullptr;
}

nlohmann::json genotype_to_json(const Genotype& g) {
  nlohmann::json j;
  j["policy"] = policy_name(g.policy);
  j["nodes"] = nlohmann::json::array();
  std::vector<GenotypeNode> nodes = g.nodes;
  std::sort(nodes.begin(), nodes.end(),
            [](const GenotypeNode& a, const GenotypeNode& b) { return a.node < b.node; });
  for (const GenotypeNode& gn : nodes) {
    nlohmann::json jn;
    jn["node"] = gn.node;
    jn["code"] = gn.code;
    jn["edges"] = nlohmann::json::array();
    std::vector<GenotypeEdge> edges = gn.edges;
    std::sort(edges.begin(), edges.end(),
              [](const GenotypeEdge& a, const GenotypeEdge& b) { return a.from < b.from; });
    for (const GenotypeEdge& e : edges) {
      jn["edges"].push_back({{"from", e.from}, {"op", op_name(e.op)}});
    }
    j["nodes"].push_back(jn);
  }
  if (!g.metadata.empty()) j["metadata"] = g.metadata;
  return j;
}

Genotype genotype_from_json(const nlohmann::json& j) {
  check(j.is_object(), "genotype: expected a JSON object");
  check(j.contains("policy") && j.contains("nodes"),
        "genotype: missing required field \"policy\" or \"nodes\"");
  Genotype g;
  g.policy = policy_from_name(j.at("policy").get<std::string>());
  for (const auto& jn : j.at("nodes")) {
    GenotypeNode gn;
    gn.node = jn.at("node").get<int>();
    if (jn.contains("code")) gn.code = jn.at("code").get<std::vector<int>>();
    for (const auto& je : jn.at("edges")) {
      gn.edges.push_back({je.at("from").get<int>(),
                          op_from_name(je.at("op").get<std::string>())});
    }
    if (gn.code.empty()) {
      // Code defaults to the recorded edges.
      int max_from = 0;
      for (const auto& e : gn.edges) max_from = std::max(max_from, e.from);
      gn.code.assign(static_cast<std::size_t>(std::max(gn.node - 1, max_from)), 0);
      for (const auto& e : gn.edges) {
        if (e.from >= 1 && e.from <= static_cast<int>(gn.code.size())) {
          gn.code[static_cast<std::size_t>(e.from - 1)] = 1;
        }
      }
    }
    g.nodes.push_back(std::move(gn));
  }
  if (j.contains("metadata")) g.metadata = j.at("metadata");
  return g;
}

std::string genotype_dump(const Genotype& g) { return genotype_to_json(g).dump(2) + "\n"; }

std::uint64_t genotype_hash(const Genotype& g) {
  Genotype bare = g;
  bare.metadata = nlohmann::json::object();
  return fnv1a64(genotype_to_json(bare).dump());
}

std::string ValidationReport::to_string() const {
  if (ok()) return "valid";
  std::ostringstream os;
  for (const Violation& v : violations) {
    os << v.code;
    if (v.node) os << " (node " << v.node << ")";
    os << ": " << v.message << "\n";
  }
  return os.str();
}

ValidationReport validate_genotype(const Genotype& g, const CellSpec& spec,
                                   TopologyPolicy policy) {
  ValidationReport report;
  auto flag = [&report](const std::string& code, const std::string& msg, int node = 0) {
    report.violations.push_back({code, msg, node});
  };

  if (g.policy != policy) {
    flag("policy-mismatch", std::string("genotype declares policy ") +
                                policy_name(g.policy) + ", expected " + policy_name(policy));
  }

  const OperationSet canon = OperationSet::canonical();
  std::set<int> seen_nodes;
  for (const GenotypeNode& gn : g.nodes) {
    if (!spec.is_intermediate(gn.node)) {
      flag("unknown-node", "node index " + std::to_string(gn.node) +
                               " is not an intermediate node of the cell", gn.node);
      continue;
    }
    if (!seen_nodes.insert(gn.node).second) {
      flag("duplicate-node", "node appears more than once", gn.node);
      continue;
    }
    const int n_in = spec.incoming_count(gn.node);
    if (static_cast<int>(gn.code.size()) != n_in) {
      flag("code-length", "combination code has " + std::to_string(gn.code.size()) +
                              " entries, node has " + std::to_string(n_in) +
                              " incoming edges", gn.node);
    }
    int popcount = 0;
    for (int b : gn.code) {
      if (b != 0 && b != 1) {
        flag("code-value", "combination code entries must be 0 or 1", gn.node);
        break;
      }
      popcount += b;
    }
    if (policy == TopologyPolicy::kPairwise && popcount != 2) {
      flag("edge-count", "pairwise policy requires exactly 2 chosen edges, got " +
                             std::to_string(popcount), gn.node);
    }
    if (policy == TopologyPolicy::kFlexible && popcount == 0) {
      flag("empty-combination", "flexible policy requires at least one chosen edge",
           gn.node);
    }
    std::set<int> seen_from;
    for (const GenotypeEdge& e : gn.edges) {
      if (e.from < 1 || e.from >= gn.node) {
        flag("predecessor-ordering", "edge (" + std::to_string(e.from) + "," +
                                         std::to_string(gn.node) +
                                         ") does not reference a valid predecessor",
             gn.node);
        continue;
      }
      if (!seen_from.insert(e.from).second) {
        flag("duplicate-edge", "edge from node " + std::to_string(e.from) +
                                   " appears more than once", gn.node);
      }
      if (e.from <= static_cast<int>(gn.code.size()) &&
          gn.code[static_cast<std::size_t>(e.from - 1)] != 1) {
        flag("code-mismatch", "edge from node " + std::to_string(e.from) +
                                  " is not part of the chosen combination", gn.node);
      }
      if (std::find(canon.ops.begin(), canon.ops.end(), e.op) == canon.ops.end()) {
        flag("unknown-operation", "operation id out of range", gn.node);
      } else if (e.op == OpKind::kZero) {
        flag("zero-operation", "final genotypes record Zero-resolved edges as absent",
             gn.node);
      }
    }
  }
  for (int j = spec.first_intermediate(); j <= spec.num_nodes(); ++j) {
    if (!seen_nodes.count(j)) {
      bool listed = false;
      for (const GenotypeNode& gn : g.nodes) listed = listed || gn.node == j;
      if (!listed) flag("missing-node", "no entry for intermediate node", j);
    }
  }
  return report;
}

}  // namespace dots
