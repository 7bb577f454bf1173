#include "dots/search.hpp"

#include <algorithm>
#include <cmath>

namespace dots {

const char* strategy_name(OperationStrategy s) {
  switch (s) {
    case OperationStrategy::kDartsTop1: return "darts_top1";
    case OperationStrategy::kDartsTop2: return "darts_top2";
    case OperationStrategy::kGroupV1: return "group_v1";
    case OperationStrategy::kGroupV2: return "group_v2";
    case OperationStrategy::kExternal: return "external";
  }
  throw std::invalid_argument("strategy_name: unknown strategy");
}

OperationStrategy strategy_from_name(const std::string& name) {
  for (OperationStrategy s :
       {OperationStrategy::kDartsTop1, OperationStrategy::kDartsTop2,
        OperationStrategy::kGroupV1, OperationStrategy::kGroupV2,
        OperationStrategy::kExternal}) {
    if (name == strategy_name(s)) return s;
  }
  throw std::invalid_argument("strategy_from_name: unknown strategy \"" + name + "\"");
}

const char* baseline_name(BaselineKind b) {
  switch (b) {
    case BaselineKind::kNone: return "none";
    case BaselineKind::kPcdartsEdgeWeight: return "pcdarts_edge_weight";
    case BaselineKind::kEdgeLevelSigmoid: return "edge_level_sigmoid";
  }
  throw std::invalid_argument("baseline_name: unknown baseline");
}

BaselineKind baseline_from_name(const std::string& name) {
  for (BaselineKind b : {BaselineKind::kNone, BaselineKind::kPcdartsEdgeWeight,
                         BaselineKind::kEdgeLevelSigmoid}) {
    if (name == baseline_name(b)) return b;
  }
  throw std::invalid_argument("baseline_from_name: unknown baseline \"" + name + "\"");
}

Eigen::ArrayXd AlphaSnapshot::normalized(const Edge& e) const {
  const auto& kinds = ops.at(e);
  const auto& grp = groups.at(e);
  const Eigen::ArrayXd& lg = logits.at(e);
  Eigen::ArrayXd out(lg.size());
  for (const auto& g : grp) {
    Eigen::ArrayXd sub(static_cast<Eigen::Index>(g.size()));
    for (std::size_t i = 0; i < g.size(); ++i) sub[static_cast<Eigen::Index>(i)] = lg[g[i]];
    Eigen::ArrayXd w = softmax_t_values(sub, 1.0);
    for (std::size_t i = 0; i < g.size(); ++i) out[g[i]] = w[static_cast<Eigen::Index>(i)];
  }
  (void)kinds;
  return out;
}

double AlphaSnapshot::edge_importance_logit(const Edge& e) const {
  const auto& kinds = ops.at(e);
  const Eigen::ArrayXd& lg = logits.at(e);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == OpKind::kZero) continue;
    best = std::max(best, lg[static_cast<Eigen::Index>(i)]);
  }
  return best;
}

double AlphaSnapshot::edge_importance(const Edge& e) const {
  const auto& kinds = ops.at(e);
  const Eigen::ArrayXd w = normalized(e);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < kinds.size(); ++i) {
    if (kinds[i] == OpKind::kZero) continue;
    best = std::max(best, w[static_cast<Eigen::Index>(i)]);
  }
  return best;
}

void bilevel_step(Supernet& net, Sgd& opt_w, Sgd& opt_arch, const Batch& train_batch,
                  const Batch& val_batch, double lr_w, double lr_arch) {
  opt_arch.zero_grad();
  opt_w.zero_grad();
  Tensor val_loss = net.forward_loss(val_batch);
  val_loss.backward();
  opt_arch.step(lr_arch);

  opt_arch.zero_grad();
  opt_w.zero_grad();
  Tensor train_loss = net.forward_loss(train_batch);
  train_loss.backward();
  opt_w.step(lr_w);
}

void one_level_step(Supernet& net, Sgd& opt_w, Sgd& opt_arch, const Batch& train_batch,
                    double lr_w, double lr_arch) {
  opt_w.zero_grad();
  opt_arch.zero_grad();
  Tensor loss = net.forward_loss(train_batch);
  loss.backward();
  opt_arch.step(lr_arch);
  opt_w.step(lr_w);
}

namespace {

std::vector<std::vector<int>> make_batches(const std::vector<int>& order, int batch_size) {
  std::vector<std::vector<int>> batches;
  const int n = static_cast<int>(order.size());
  const int b = std::min(batch_size, n);
  for (int at = 0; at + b <= n; at += b) {
    batches.emplace_back(order.begin() + at, order.begin() + at + b);
  }
  if (batches.empty()) batches.push_back(order);
  return batches;
}

double batch_loss(Supernet& net, const Batch& batch) {
  return net.forward_loss(batch).item();
}

int argmax_logits(const Eigen::ArrayXd& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v[i] > v[best]) best = static_cast<int>(i);
  }
  return best;
}

std::map<Edge, int> record_argmax(const Supernet& net) {
  std::map<Edge, int> out;
  for (const RelaxedEdge& re : net.relaxed_edges()) {
    if (re.ops.size() < 2) continue;
    out[re.edge] = argmax_logits(re.alpha[0].value());
  }
  return out;
}

std::map<int, double> record_max_beta(Supernet& net, double t_beta) {
  std::map<int, double> out;
  for (auto& [node, b] : net.beta()) {
    out[node] = softmax_t_values(b.value(), t_beta).maxCoeff();
  }
  return out;
}

}  // namespace

AlphaSnapshot snapshot_alpha(const Supernet& net) {
  AlphaSnapshot snap;
  for (const RelaxedEdge& re : net.relaxed_edges()) {
    snap.ops[re.edge] = re.ops;
    snap.groups[re.edge] = re.groups;
    Eigen::ArrayXd flat = Eigen::ArrayXd::Zero(static_cast<Eigen::Index>(re.ops.size()));
    if (re.ops.size() >= 2) {
      for (std::size_t gi = 0; gi < re.groups.size(); ++gi) {
        const Eigen::ArrayXd& lg = re.alpha[gi].value();
        for (std::size_t k = 0; k < re.groups[gi].size(); ++k) {
          flat[re.groups[gi][k]] = lg[static_cast<Eigen::Index>(k)];
        }
      }
    }
    snap.logits[re.edge] = std::move(flat);
  }
  return snap;
}

OperationSearchResult operation_search(Supernet& net, const DataSplit& train,
                                       const DataSplit& val, const StagePlan& plan,
                                       const OptimizerConfig& optim, const Rng& order_rng,
                                       const MetricsSink& sink) {
  check(train.samples > 0 && val.samples > 0, "operation_search: empty data split");
  check(plan.strategy != OperationStrategy::kExternal,
        "operation_search: external strategy injects retained candidates; there is "
        "nothing to search");
  check(plan.operation_epochs > 0, "operation_search: need at least one epoch");

  Sgd opt_w(net.network_params(), optim.momentum, optim.weight_decay, optim.grad_clip);
  Sgd opt_arch(net.arch_params(), optim.arch_momentum, optim.arch_weight_decay,
               optim.arch_grad_clip);
  const Rng train_rng = order_rng.child("op/train");
  const Rng val_rng = order_rng.child("op/val");

  OperationSearchResult result;
  for (int epoch = 0; epoch < plan.operation_epochs; ++epoch) {
    const double lr_w = cosine_lr(epoch, plan.operation_epochs, optim.lr0);
    const auto train_batches =
        make_batches(epoch_order(train, train_rng, epoch), optim.batch_size);
    const auto val_batches = make_batches(epoch_order(val, val_rng, epoch), optim.batch_size);
    double loss_sum = 0.0;
    for (std::size_t k = 0; k < train_batches.size(); ++k) {
      const Batch tb = train.make_batch(train_batches[k]);
      const Batch vb = val.make_batch(val_batches[k % val_batches.size()]);
      bilevel_step(net, opt_w, opt_arch, tb, vb, lr_w, optim.arch_lr);
      loss_sum += batch_loss(net, tb);
    }
    const double mean_loss = loss_sum / static_cast<double>(train_batches.size());
    result.epoch_losses.push_back(mean_loss);
    if (sink) {
      sink({epoch, "operation", mean_loss, std::nullopt, {}, lr_w, optim.arch_lr});
    }
  }
  result.alpha = snapshot_alpha(net);
  result.retained = retain_candidates(result.alpha, plan.strategy);
  return result;
}

TopologySearchResult topology_search(Supernet& net, const DataSplit& train,
                                     const StagePlan& plan, const OptimizerConfig& optim,
                                     const AnnealConfig& anneal, const Rng& order_rng,
                                     const MetricsSink& sink) {
  check(train.samples > 0, "topology_search: empty data split");
  check(plan.topology_epochs > 0, "topology_search: need at least one epoch");
  bool multi_op = false;
  for (const RelaxedEdge& re : net.relaxed_edges()) {
    check(!re.ops.empty(), "topology_search: empty retained-candidate list on edge " +
                               edge_key(re.edge));
    multi_op = multi_op || re.ops.size() >= 2;
  }

  const int steps = std::max(plan.topology_epochs - 1, 1);
  AnnealSchedule beta_sched =
      AnnealSchedule::exponential(anneal.t0, anneal.t_final, steps);
  std::optional<AnnealSchedule> alpha_sched;
  if (multi_op) alpha_sched = dual_temperature(beta_sched, true);

  Sgd opt_w(net.network_params(), optim.momentum, optim.weight_decay, optim.grad_clip);
  Sgd opt_arch(net.arch_params(), optim.arch_momentum, optim.arch_weight_decay,
               optim.arch_grad_clip);
  const Rng train_rng = order_rng.child("topo/train");

  TopologySearchResult result;
  for (int epoch = 0; epoch < plan.topology_epochs; ++epoch) {
    const double t_beta = beta_sched.temperature_at(epoch);
    net.set_beta_temperature(t_beta);
    if (alpha_sched) net.set_alpha_temperature(alpha_sched->temperature_at(epoch));
    const double lr_w = cosine_lr(epoch, plan.topology_epochs, optim.lr0);
    const auto batches = make_batches(epoch_order(train, train_rng, epoch), optim.batch_size);
    double loss_sum = 0.0;
    for (const auto& idx : batches) {
      const Batch tb = train.make_batch(idx);
      one_level_step(net, opt_w, opt_arch, tb, lr_w, optim.arch_lr);
      loss_sum += batch_loss(net, tb);
    }
    const double mean_loss = loss_sum / static_cast<double>(batches.size());
    result.epoch_losses.push_back(mean_loss);
    result.temperatures.push_back(t_beta);
    result.argmax_history.push_back(record_argmax(net));
    if (sink) {
      sink({epoch, "topology", mean_loss, t_beta, record_max_beta(net, t_beta), lr_w,
            optim.arch_lr});
    }
  }

  for (auto& [node, b] : net.beta()) result.beta_logits[node] = b.value();
  result.spaces = net.spaces();
  for (const RelaxedEdge& re : net.relaxed_edges()) {
    result.edge_candidates[re.edge] = re.ops;
    if (re.ops.size() >= 2) result.alpha2_logits[re.edge] = re.alpha[0].value();
  }
  return result;
}

std::map<Edge, std::vector<OpKind>> retain_candidates(const AlphaSnapshot& alpha,
                                                      OperationStrategy strategy) {
  std::map<Edge, std::vector<OpKind>> retained;
  for (const auto& [edge, kinds] : alpha.ops) {
    const Eigen::ArrayXd& lg = alpha.logits.at(edge);
    std::vector<OpKind> keep;
    switch (strategy) {
      case OperationStrategy::kDartsTop1:
      case OperationStrategy::kDartsTop2: {
        const int want = strategy == OperationStrategy::kDartsTop1 ? 1 : 2;
        std::vector<int> order;
        for (int i = 0; i < static_cast<int>(kinds.size()); ++i) {
          if (kinds[static_cast<std::size_t>(i)] != OpKind::kZero) order.push_back(i);
        }
        std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
          return lg[a] > lg[b];
        });
        check(static_cast<int>(order.size()) >= want,
              "retain_candidates: not enough non-Zero candidates on edge " +
                  edge_key(edge));
        order.resize(static_cast<std::size_t>(want));
        std::sort(order.begin(), order.end());
        for (int i : order) keep.push_back(kinds[static_cast<std::size_t>(i)]);
        break;
      }
      case OperationStrategy::kGroupV1:
      case OperationStrategy::kGroupV2: {
        const auto& grp = alpha.groups.at(edge);
        check(grp.size() >= 2, "retain_candidates: group strategy needs a grouped "
                               "operation set on edge " + edge_key(edge));
        for (const auto& g : grp) {
          int best = g[0];
          for (int idx : g) {
            if (lg[idx] > lg[best]) best = idx;
          }
          keep.push_back(kinds[static_cast<std::size_t>(best)]);
        }
        break;
      }
      case OperationStrategy::kExternal:
        throw std::invalid_argument("retain_candidates: external strategy has no alpha");
    }
    retained[edge] = std::move(keep);
  }
  return retained;
}

Genotype derive_darts_policy(const AlphaSnapshot& alpha, const CellSpec& spec) {
  Genotype g;
  g.policy = TopologyPolicy::kPairwise;
  for (int j = spec.first_intermediate(); j <= spec.num_nodes(); ++j) {
    const int n_in = spec.incoming_count(j);
    std::vector<std::pair<double, int>> ranked;  // (-importance, from)
    for (int i = 1; i < j; ++i) {
      ranked.emplace_back(-alpha.edge_importance_logit({i, j}), i);
    }
    std::sort(ranked.begin(), ranked.end());
    const int keep = std::min(2, n_in);
    GenotypeNode gn;
    gn.node = j;
    gn.code.assign(static_cast<std::size_t>(n_in), 0);
    std::vector<int> chosen;
    for (int k = 0; k < keep; ++k) chosen.push_back(ranked[static_cast<std::size_t>(k)].second);
    std::sort(chosen.begin(), chosen.end());
    for (int from : chosen) {
      gn.code[static_cast<std::size_t>(from - 1)] = 1;
      const Edge e{from, j};
      const auto& kinds = alpha.ops.at(e);
      const Eigen::ArrayXd& lg = alpha.logits.at(e);
      int best = -1;
      for (int idx = 0; idx < static_cast<int>(kinds.size()); ++idx) {
        if (kinds[static_cast<std::size_t>(idx)] == OpKind::kZero) continue;
        if (best < 0 || lg[idx] > lg[best]) best = idx;
      }
      check(best >= 0, "derive_darts_policy: no non-Zero candidate on edge " + edge_key(e));
      gn.edges.push_back({from, kinds[static_cast<std::size_t>(best)]});
    }
    g.nodes.push_back(std::move(gn));
  }
  g.metadata["derivation"] = "operation_weights";
  return g;
}

namespace {

OpKind stage2_edge_winner(const TopologySearchResult& topo, const Edge& e) {
  const auto& kinds = topo.edge_candidates.at(e);
  if (kinds.size() == 1) return kinds[0];
  const Eigen::ArrayXd& lg = topo.alpha2_logits.at(e);
  return kinds[static_cast<std::size_t>(argmax_logits(lg))];
}

}  // namespace

Genotype derive_dots_policy(const TopologySearchResult& topo, const CellSpec& spec,
                            TopologyPolicy policy) {
  Genotype g;
  g.policy = policy;
  nlohmann::json warnings = nlohmann::json::array();
  for (const auto& [node, space] : topo.spaces) {
    const Eigen::ArrayXd& bl = topo.beta_logits.at(node);
    const int m = argmax_logits(bl);
    const EdgeCombination& combo = space.combinations[static_cast<std::size_t>(m)];
    GenotypeNode gn;
    gn.node = node;
    gn.code = combo.code();
    for (int slot : combo.slots()) {
      const int from = slot + 1;
      const OpKind op = stage2_edge_winner(topo, {from, node});
      if (op == OpKind::kZero) {
        warnings.push_back("node " + std::to_string(node) + ": edge from " +
                           std::to_string(from) + " resolved to zero and was dropped");
        continue;
      }
      gn.edges.push_back({from, op});
    }
    if (policy == TopologyPolicy::kPairwise && gn.edges.size() != 2) {
      warnings.push_back("node " + std::to_string(node) + ": " +
                         std::to_string(gn.edges.size()) +
                         " edges remain under the pairwise policy");
    }
    g.nodes.push_back(std::move(gn));
    (void)spec;
  }
  g.metadata["derivation"] = "combination_weights";
  if (!warnings.empty()) g.metadata["warnings"] = warnings;
  return g;
}

std::map<Edge, OpKind> variant_edge_ops(const TopologySearchResult& topo) {
  std::map<Edge, OpKind> out;
  for (const auto& [edge, kinds] : topo.edge_candidates) {
    OpKind winner = stage2_edge_winner(topo, edge);
    if (winner == OpKind::kZero) {
      int best = -1;
      const Eigen::ArrayXd* lg =
          kinds.size() >= 2 ? &topo.alpha2_logits.at(edge) : nullptr;
      for (int i = 0; i < static_cast<int>(kinds.size()); ++i) {
        if (kinds[static_cast<std::size_t>(i)] == OpKind::kZero) continue;
        if (best < 0 || (lg && (*lg)[i] > (*lg)[best])) best = i;
      }
      check(best >= 0, "variant_edge_ops: only Zero retained on edge " + edge_key(edge));
      winner = kinds[static_cast<std::size_t>(best)];
    }
    out[edge] = winner;
  }
  return out;
}

ImportanceReport importance_report(const AlphaSnapshot& alpha,
                                   const std::optional<TopologySearchResult>& topo,
                                   const TopologySpace& space) {
  ImportanceReport report;
  report.node = space.node;
  report.space = space;
  for (const EdgeCombination& c : space.combinations) {
    double s = 0.0;
    for (int slot : c.slots()) {
      s += alpha.edge_importance({slot + 1, space.node});
    }
    report.score_op.push_back(s);
  }
  if (topo) {
    auto it = topo->beta_logits.find(space.node);
    if (it != topo->beta_logits.end()) {
      check(static_cast<int>(it->second.size()) == space.size(),
            "importance_report: beta size does not match the topology space");
      // Reported at unit temperature: rank-equivalent to any T and free of the
      // underflow ties a hard-annealed softmax would produce.
      Eigen::ArrayXd b = softmax_t_values(it->second, 1.0);
      report.score_combo.assign(b.data(), b.data() + b.size());
    }
  }
  return report;
}

BaselineResult run_baseline(Supernet& net, BaselineKind kind, const DataSplit& train,
                            const StagePlan& plan, const OptimizerConfig& optim,
                            const Rng& order_rng, double sigmoid_threshold,
                            const MetricsSink& sink) {
  check(kind != BaselineKind::kNone, "run_baseline: no baseline selected");
  const NodeAggregation want = kind == BaselineKind::kPcdartsEdgeWeight
                                   ? NodeAggregation::kEdgeSoftmax
                                   : NodeAggregation::kEdgeSigmoid;
  check(net.options().aggregation == want,
        "run_baseline: supernet aggregation does not match the baseline");
  check(train.samples > 0, "run_baseline: empty data split");

  Sgd opt_w(net.network_params(), optim.momentum, optim.weight_decay, optim.grad_clip);
  Sgd opt_arch(net.arch_params(), optim.arch_momentum, optim.arch_weight_decay,
               optim.arch_grad_clip);
  const Rng train_rng = order_rng.child("baseline/train");

  BaselineResult result;
  result.kind = kind;
  for (int epoch = 0; epoch < plan.topology_epochs; ++epoch) {
    const double lr_w = cosine_lr(epoch, plan.topology_epochs, optim.lr0);
    const auto batches = make_batches(epoch_order(train, train_rng, epoch), optim.batch_size);
    double loss_sum = 0.0;
    for (const auto& idx : batches) {
      const Batch tb = train.make_batch(idx);
      one_level_step(net, opt_w, opt_arch, tb, lr_w, optim.arch_lr);
      loss_sum += batch_loss(net, tb);
    }
    const double mean_loss = loss_sum / static_cast<double>(batches.size());
    result.epoch_losses.push_back(mean_loss);
    if (sink) {
      sink({epoch, baseline_name(kind), mean_loss, std::nullopt, {}, lr_w, optim.arch_lr});
    }
  }

  Genotype g;
  g.policy = kind == BaselineKind::kPcdartsEdgeWeight ? TopologyPolicy::kPairwise
                                                      : TopologyPolicy::kFlexible;
  nlohmann::json notes = nlohmann::json::array();
  for (auto& [node, logits] : net.edge_logits()) {
    const int n_in = static_cast<int>(logits.size());
    Eigen::ArrayXd w;
    if (kind == BaselineKind::kPcdartsEdgeWeight) {
      w = softmax_t_values(logits.value(), 1.0);
    } else {
      w = 1.0 / (1.0 + (-logits.value()).exp());
    }
    result.edge_weights[node] = w;

    GenotypeNode gn;
    gn.node = node;
    gn.code.assign(static_cast<std::size_t>(n_in), 0);
    std::vector<int> chosen;
    if (kind == BaselineKind::kPcdartsEdgeWeight) {
      chosen = pcdarts_select_edges(w);
    } else {
      const auto [slots, fell_back] = sigmoid_select_edges(w, sigmoid_threshold);
      chosen = slots;
      if (fell_back) {
        notes.push_back("node " + std::to_string(node) +
                        ": no edge above the threshold; kept the single highest "
                        "gate");
      }
    }
    for (int slot : chosen) {
      const Edge e{slot + 1, node};
      const auto* re = net.find_edge(e);
      check(re != nullptr && !re->ops.empty(), "run_baseline: missing edge candidates");
      OpKind op = re->ops[0];
      if (re->ops.size() >= 2) {
        op = re->ops[static_cast<std::size_t>(argmax_logits(re->alpha[0].value()))];
      }
      gn.code[static_cast<std::size_t>(slot)] = 1;
      if (op != OpKind::kZero) gn.edges.push_back({slot + 1, op});
    }
    g.nodes.push_back(std::move(gn));
  }
  g.metadata["derivation"] = baseline_name(kind);
  if (!notes.empty()) g.metadata["notes"] = notes;
  result.genotype = std::move(g);
  return result;
}

std::vector<int> pcdarts_select_edges(const Eigen::ArrayXd& weights) {
  std::vector<std::pair<double, int>> ranked;
  for (int i = 0; i < static_cast<int>(weights.size()); ++i) {
    ranked.emplace_back(-weights[i], i);
  }
  std::sort(ranked.begin(), ranked.end());
  std::vector<int> chosen;
  for (int k = 0; k < std::min<int>(2, static_cast<int>(ranked.size())); ++k) {
    chosen.push_back(ranked[static_cast<std::size_t>(k)].second);
  }
  std::sort(chosen.begin(), chosen.end());
  return chosen;
}

std::pair<std::vector<int>, bool> sigmoid_select_edges(const Eigen::ArrayXd& gates,
                                                       double threshold) {
  std::vector<int> chosen;
  for (int i = 0; i < static_cast<int>(gates.size()); ++i) {
    if (gates[i] > threshold) chosen.push_back(i);
  }
  if (!chosen.empty()) return {chosen, false};
  int best = 0;
  for (int i = 1; i < static_cast<int>(gates.size()); ++i) {
    if (gates[i] > gates[best]) best = i;
  }
  return {{best}, true};
}

std::vector<double> baseline_combo_scores(const BaselineResult& baseline,
                                          const TopologySpace& space) {
  const Eigen::ArrayXd& w = baseline.edge_weights.at(space.node);
  check(static_cast<int>(w.size()) == space.n,
        "baseline_combo_scores: weight length does not match the space");
  std::vector<double> scores;
  scores.reserve(static_cast<std::size_t>(space.size()));
  for (const EdgeCombination& c : space.combinations) {
    double s = 0.0;
    for (int slot : c.slots()) s += w[slot];
    scores.push_back(s);
  }
  return scores;
}

}  // namespace dots
