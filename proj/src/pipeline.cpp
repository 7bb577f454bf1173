#include "dots/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <thread>

namespace dots {

namespace {

std::vector<std::vector<int>> group_indices(const OperationSet& ops) {
  std::vector<std::vector<int>> out;
  for (const auto& grp : ops.groups) {
    std::vector<int> idx;
    for (OpKind k : grp) {
      auto it = std::find(ops.ops.begin(), ops.ops.end(), k);
      idx.push_back(static_cast<int>(it - ops.ops.begin()));
    }
    out.push_back(std::move(idx));
  }
  return out;
}

OperationSet strategy_operation_set(OperationStrategy strategy) {
  OperationSet ops = OperationSet::canonical();
  if (strategy == OperationStrategy::kGroupV1) ops = group_partition_v1(ops);
  if (strategy == OperationStrategy::kGroupV2) ops = group_partition_v2(ops);
  return ops;
}

bool node_is_relaxed(const std::map<int, NodeMode>& modes, int node) {
  auto it = modes.find(node);
  return it == modes.end() || it->second.relaxed;
}

}  // namespace

SupernetOptions stage1_options(const RunConfig& cfg,
                               const std::map<int, NodeMode>& node_modes) {
  SupernetOptions opt;
  opt.cell = cfg.cell;
  opt.input_channels = cfg.task.channels;
  opt.classes = cfg.task.classes;
  opt.aggregation = NodeAggregation::kSum;
  opt.policy = cfg.plan.policy;
  opt.node_modes = node_modes;
  const OperationSet ops = strategy_operation_set(cfg.plan.strategy);
  const auto groups = group_indices(ops);
  for (int j = opt.cell.first_intermediate(); j <= opt.cell.num_nodes(); ++j) {
    if (!node_is_relaxed(node_modes, j)) continue;
    for (int i = 1; i < j; ++i) {
      opt.candidates[{i, j}] = ops.ops;
      if (!groups.empty()) opt.groups[{i, j}] = groups;
    }
  }
  return opt;
}

SupernetOptions stage2_options(const RunConfig& cfg,
                               const std::map<Edge, std::vector<OpKind>>& retained,
                               const std::map<int, NodeMode>& node_modes) {
  SupernetOptions opt;
  opt.cell = cfg.cell;
  opt.input_channels = cfg.task.channels;
  opt.classes = cfg.task.classes;
  opt.aggregation = NodeAggregation::kGammaCombination;
  opt.policy = cfg.plan.policy;
  opt.node_modes = node_modes;
  for (int j = opt.cell.first_intermediate(); j <= opt.cell.num_nodes(); ++j) {
    if (!node_is_relaxed(node_modes, j)) continue;
    for (int i = 1; i < j; ++i) {
      auto it = retained.find({i, j});
      check(it != retained.end() && !it->second.empty(),
            "stage2_options: no retained candidates for edge " + edge_key({i, j}));
      opt.candidates[{i, j}] = it->second;
    }
  }
  return opt;
}

SupernetOptions baseline_stage_options(const RunConfig& cfg, BaselineKind kind,
                                       const std::map<Edge, std::vector<OpKind>>& retained,
                                       const AlphaSnapshot* alpha,
                                       const std::map<int, NodeMode>& node_modes) {
  check(kind != BaselineKind::kNone, "baseline_stage_options: no baseline selected");
  SupernetOptions opt;
  opt.cell = cfg.cell;
  opt.input_channels = cfg.task.channels;
  opt.classes = cfg.task.classes;
  opt.aggregation = kind == BaselineKind::kPcdartsEdgeWeight
                        ? NodeAggregation::kEdgeSoftmax
                        : NodeAggregation::kEdgeSigmoid;
  opt.policy = cfg.plan.policy;
  opt.node_modes = node_modes;
  for (int j = opt.cell.first_intermediate(); j <= opt.cell.num_nodes(); ++j) {
    if (!node_is_relaxed(node_modes, j)) continue;
    for (int i = 1; i < j; ++i) {
      const Edge e{i, j};
      auto it = retained.find(e);
      check(it != retained.end() && !it->second.empty(),
            "baseline_stage_options: no retained candidates for edge " + edge_key(e));
      // Baselines carry a single operation per edge: the strongest non-Zero
      // retained candidate under the stage-1 weights.
      OpKind pick = it->second[0];
      if (it->second.size() > 1) {
        check(alpha != nullptr, "baseline_stage_options: multi-op retention needs the "
                                "stage-1 snapshot");
        const auto& kinds = alpha->ops.at(e);
        const Eigen::ArrayXd& lg = alpha->logits.at(e);
        double best = -std::numeric_limits<double>::infinity();
        bool found = false;
        for (OpKind cand : it->second) {
          if (cand == OpKind::kZero) continue;
          auto kit = std::find(kinds.begin(), kinds.end(), cand);
          const double v = lg[static_cast<Eigen::Index>(kit - kinds.begin())];
          if (!found || v > best) {
            best = v;
            pick = cand;
            found = true;
          }
        }
        check(found, "baseline_stage_options: only Zero retained on edge " + edge_key(e));
      }
      opt.candidates[e] = {pick};
    }
  }
  return opt;
}

std::map<Edge, std::vector<OpKind>> load_external_ops(const std::string& path,
                                                      const CellSpec& cell) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("external ops: cannot open \"" + path + "\"");
  nlohmann::json j;
  in >> j;
  check(j.is_object() && j.contains("edges"), "external ops: expected {\"edges\": [...]}");
  std::map<Edge, std::vector<OpKind>> out;
  for (const auto& je : j.at("edges")) {
    const Edge e{je.at("from").get<int>(), je.at("to").get<int>()};
    check(cell.is_intermediate(e.to) && e.from >= 1 && e.from < e.to,
          "external ops: edge " + edge_key(e) + " is not part of the cell");
    std::vector<OpKind> ops;
    for (const auto& name : je.at("ops")) ops.push_back(op_from_name(name.get<std::string>()));
    check(!ops.empty(), "external ops: empty candidate list on edge " + edge_key(e));
    out[e] = std::move(ops);
  }
  for (const Edge& e : cell.all_edges()) {
    check(out.count(e) == 1, "external ops: missing edge " + edge_key(e));
  }
  return out;
}

namespace {

void copy_matching_params(Supernet& from, Supernet& to) {
  for (const auto& [name, src] : from.params().items()) {
    if (Tensor* dst = to.params().find(name)) {
      if (dst->shape() == src.shape()) dst->value() = src.value();
    }
  }
}

}  // namespace

SearchArtifacts run_search(const RunConfig& cfg, const SyntheticTask& task,
                           const MetricsSink& sink) {
  SearchArtifacts art;
  auto collect = [&art, &sink](const MetricsRow& row) {
    art.metrics.push_back(row);
    if (sink) sink(row);
  };

  const Rng run_rng(cfg.seed);
  std::map<Edge, std::vector<OpKind>> retained;
  std::optional<Supernet> net1;

  if (cfg.plan.strategy == OperationStrategy::kExternal) {
    check(!cfg.plan.external_ops_file.empty(),
          "run_search: external strategy requires plan.external_ops_file");
    retained = load_external_ops(cfg.plan.external_ops_file, cfg.cell);
  } else {
    // Operation search: bi-level on a 50/50 split of the training set.
    const int half = task.train.samples / 2;
    check(half > 0, "run_search: training split too small to halve");
    const DataSplit op_train = task.train.slice(0, half);
    const DataSplit op_val = task.train.slice(half, task.train.samples);
    net1.emplace(stage1_options(cfg), run_rng.child("stage1").seed());
    OperationSearchResult op = operation_search(*net1, op_train, op_val, cfg.plan,
                                                cfg.optim, run_rng.child("stage1"),
                                                collect);
    art.genotype_darts = derive_darts_policy(op.alpha, cfg.cell);
    retained = op.retained;
    art.op = std::move(op);
  }

  // Topology search: one-level on the full training set, fresh beta, network
  // weights re-initialized (or inherited when configured).
  Supernet net2(stage2_options(cfg, retained), run_rng.child("stage2").seed());
  if (cfg.inherit_weights && net1) copy_matching_params(*net1, net2);
  art.topo = topology_search(net2, task.train, cfg.plan, cfg.optim, cfg.anneal,
                             run_rng.child("stage2"), collect);
  art.genotype = derive_dots_policy(art.topo, cfg.cell, cfg.plan.policy);
  art.final_state = net2.state_to_json();

  if (cfg.plan.baseline != BaselineKind::kNone) {
    const AlphaSnapshot* alpha = art.op ? &art.op->alpha : nullptr;
    Supernet bnet(baseline_stage_options(cfg, cfg.plan.baseline, retained, alpha),
                  run_rng.child("baseline").seed());
    art.baseline = run_baseline(bnet, cfg.plan.baseline, task.train, cfg.plan, cfg.optim,
                                run_rng.child("baseline"), cfg.rankcorr.sigmoid_threshold,
                                collect);
  }
  return art;
}

std::vector<GenotypeNode> default_rankcorr_base(const CellSpec& cell) {
  check(cell.num_intermediate_nodes >= 2,
        "default_rankcorr_base: need at least 2 intermediate nodes");
  std::vector<GenotypeNode> base;
  const int first = cell.first_intermediate();
  const int last = cell.num_nodes();
  for (int j = first; j < last; ++j) {
    GenotypeNode gn;
    gn.node = j;
    gn.code.assign(static_cast<std::size_t>(j - 1), 0);
    if (j == first) {
      // Clean copy of the signal-bearing input.
      gn.edges.push_back({1, OpKind::kSkipConnect});
    } else if (j == first + 1) {
      // Clean copy of the noise input.
      gn.edges.push_back({2, OpKind::kSkipConnect});
    } else {
      // Smoothed mix of its two predecessors: still informative as a
      // downstream input, but pooling adds no feature extraction of its own.
      gn.edges.push_back({j - 2, OpKind::kAvgPool3x3});
      gn.edges.push_back({j - 1, OpKind::kMaxPool3x3});
    }
    for (const GenotypeEdge& e : gn.edges) {
      gn.code[static_cast<std::size_t>(e.from - 1)] = 1;
    }
    base.push_back(std::move(gn));
  }
  return base;
}

RankSeedResult rank_experiment(const RunConfig& cfg, std::uint64_t experiment_seed,
                               AccuracyCache& cache) {
  RankSeedResult result;
  result.experiment_seed = experiment_seed;

  const Rng exp_rng(experiment_seed);
  const SyntheticTask task = generate_task(cfg.task, exp_rng.child("task").seed());

  const int target = cfg.rankcorr.target_node > 0 ? cfg.rankcorr.target_node
                                                  : cfg.cell.num_nodes();
  check(cfg.cell.is_intermediate(target), "rank_experiment: target node " +
                                              std::to_string(target) +
                                              " is not an intermediate node");

  std::vector<GenotypeNode> base_nodes = cfg.rankcorr.base_nodes.empty()
                                             ? default_rankcorr_base(cfg.cell)
                                             : cfg.rankcorr.base_nodes;
  std::map<int, NodeMode> modes;
  for (GenotypeNode& gn : base_nodes) {
    check(gn.node != target, "rank_experiment: base_nodes must not pin the target node");
    check(cfg.cell.is_intermediate(gn.node), "rank_experiment: base node " +
                                                 std::to_string(gn.node) +
                                                 " is not an intermediate node");
    NodeMode m;
    m.relaxed = false;
    for (const GenotypeEdge& e : gn.edges) m.pinned.push_back({e.from, e.op});
    modes[gn.node] = m;
    if (gn.code.size() != static_cast<std::size_t>(gn.node - 1)) {
      gn.code.assign(static_cast<std::size_t>(gn.node - 1), 0);
      for (const GenotypeEdge& e : gn.edges) {
        gn.code[static_cast<std::size_t>(e.from - 1)] = 1;
      }
    }
  }
  for (int j = cfg.cell.first_intermediate(); j <= cfg.cell.num_nodes(); ++j) {
    check(j == target || modes.count(j) == 1,
          "rank_experiment: node " + std::to_string(j) +
              " is neither the target nor pinned by base_nodes");
  }

  // Hybrid search: only the target node is relaxed, so the learned scores and
  // the brute-force ground truth describe the same surrounding network.
  const int half = task.train.samples / 2;
  check(half > 0, "rank_experiment: training split too small to halve");
  const DataSplit op_train = task.train.slice(0, half);
  const DataSplit op_val = task.train.slice(half, task.train.samples);

  check(cfg.plan.strategy != OperationStrategy::kExternal,
        "rank_experiment: external strategy is not rankable");
  Supernet net1(stage1_options(cfg, modes), exp_rng.child("stage1").seed());
  OperationSearchResult op = operation_search(net1, op_train, op_val, cfg.plan, cfg.optim,
                                              exp_rng.child("stage1"));

  Supernet net2(stage2_options(cfg, op.retained, modes), exp_rng.child("stage2").seed());
  TopologySearchResult topo = topology_search(net2, task.train, cfg.plan, cfg.optim,
                                              cfg.anneal, exp_rng.child("stage2"));

  const TopologySpace& space = topo.spaces.at(target);

  // Base genotype carries the pinned context; variants only change the target
  // node. Flexible policy so sparse base nodes validate.
  Genotype base;
  base.policy = TopologyPolicy::kFlexible;
  base.nodes = base_nodes;
  result.base = base;

  const std::map<Edge, OpKind> edge_ops = variant_edge_ops(topo);
  std::map<int, OpKind> target_ops;
  for (const auto& [e, op_kind] : edge_ops) {
    if (e.to == target) target_ops[e.from] = op_kind;
  }
  const std::vector<Genotype> variants =
      enumerate_variants(target, space, base, target_ops);

  // Brute-force ground truth, cached by genotype so every signal ranks the
  // identical accuracy vector.
  const int acc_seeds = std::max(1, cfg.rankcorr.acc_seeds);
  struct Job {
    int variant;
    int seed_index;
    std::string key;
    std::uint64_t seed;
  };
  std::vector<Job> jobs;
  std::vector<std::vector<double>> accs(variants.size(),
                                        std::vector<double>(static_cast<std::size_t>(acc_seeds), 0.0));
  for (std::size_t v = 0; v < variants.size(); ++v) {
    const std::string ghash = hex64(genotype_hash(variants[v]));
    for (int s = 0; s < acc_seeds; ++s) {
      const std::uint64_t seed =
          exp_rng.child("standalone/" + ghash + "/" + std::to_string(s)).seed();
      const std::string key =
          AccuracyCache::key(variants[v], task, cfg.standalone, cfg.cell, seed);
      if (auto hit = cache.lookup(key)) {
        accs[v][static_cast<std::size_t>(s)] = *hit;
      } else {
        jobs.push_back({static_cast<int>(v), s, key, seed});
      }
    }
  }

  if (!jobs.empty()) {
    int threads = cfg.rankcorr.threads > 0
                      ? cfg.rankcorr.threads
                      : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    auto worker = [&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        const Job& job = jobs[i];
        const double acc = train_standalone(variants[static_cast<std::size_t>(job.variant)],
                                            task, cfg.standalone, cfg.cell, job.seed);
        accs[static_cast<std::size_t>(job.variant)][static_cast<std::size_t>(job.seed_index)] = acc;
        cache.store(job.key, acc);
      }
    };
    pool.reserve(static_cast<std::size_t>(threads));
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  const ImportanceReport report = importance_report(op.alpha, topo, space);

  std::optional<BaselineResult> pcdarts, sigmoid;
  if (cfg.rankcorr.run_baselines) {
    {
      Supernet bnet(baseline_stage_options(cfg, BaselineKind::kPcdartsEdgeWeight,
                                           op.retained, &op.alpha, modes),
                    exp_rng.child("baseline_pcdarts").seed());
      pcdarts = run_baseline(bnet, BaselineKind::kPcdartsEdgeWeight, task.train, cfg.plan,
                             cfg.optim, exp_rng.child("baseline_pcdarts"),
                             cfg.rankcorr.sigmoid_threshold);
    }
    {
      Supernet bnet(baseline_stage_options(cfg, BaselineKind::kEdgeLevelSigmoid,
                                           op.retained, &op.alpha, modes),
                    exp_rng.child("baseline_sigmoid").seed());
      sigmoid = run_baseline(bnet, BaselineKind::kEdgeLevelSigmoid, task.train, cfg.plan,
                             cfg.optim, exp_rng.child("baseline_sigmoid"),
                             cfg.rankcorr.sigmoid_threshold);
    }
  }
  std::vector<double> pcdarts_scores, sigmoid_scores;
  if (pcdarts) pcdarts_scores = baseline_combo_scores(*pcdarts, space);
  if (sigmoid) sigmoid_scores = baseline_combo_scores(*sigmoid, space);

  std::vector<double> acc_means;
  for (std::size_t v = 0; v < variants.size(); ++v) {
    double mean = 0.0;
    for (double a : accs[v]) mean += a;
    mean /= static_cast<double>(acc_seeds);
    double var = 0.0;
    for (double a : accs[v]) var += (a - mean) * (a - mean);
    const double stddev = acc_seeds > 1 ? std::sqrt(var / (acc_seeds - 1)) : 0.0;

    ExperimentRecord rec;
    rec.combination_id = static_cast<int>(v);
    rec.combo = space.combinations[v];
    rec.acc_mean = mean;
    rec.acc_std = stddev;
    rec.score_op = report.score_op[v];
    rec.score_combo = report.score_combo[v];
    if (!pcdarts_scores.empty()) rec.score_pcdarts = pcdarts_scores[v];
    if (!sigmoid_scores.empty()) rec.score_sigmoid = sigmoid_scores[v];
    result.records.push_back(rec);
    acc_means.push_back(mean);
  }

  result.tau_op = kendall_tau(report.score_op, acc_means);
  result.tau_combo = kendall_tau(report.score_combo, acc_means);
  if (!pcdarts_scores.empty()) result.tau_pcdarts = kendall_tau(pcdarts_scores, acc_means);
  if (!sigmoid_scores.empty()) result.tau_sigmoid = kendall_tau(sigmoid_scores, acc_means);
  result.status = result.tau_combo && result.tau_op ? "ok" : "no-signal";
  return result;
}

nlohmann::json sgd_state_to_json(const Sgd& opt) {
  nlohmann::json j;
  j["momentum"] = nlohmann::json::array();
  Sgd& mut = const_cast<Sgd&>(opt);
  for (const Eigen::ArrayXd& v : mut.momentum_buffers()) {
    std::vector<double> data(v.data(), v.data() + v.size());
    j["momentum"].push_back(data);
  }
  return j;
}

void sgd_state_from_json(const nlohmann::json& j, Sgd& opt) {
  const auto& arr = j.at("momentum");
  check(arr.size() == opt.momentum_buffers().size(),
        "sgd state: buffer count mismatch");
  for (std::size_t i = 0; i < opt.momentum_buffers().size(); ++i) {
    const auto data = arr[i].get<std::vector<double>>();
    Eigen::ArrayXd& v = opt.momentum_buffers()[i];
    check(static_cast<std::int64_t>(data.size()) == v.size(),
          "sgd state: buffer length mismatch");
    for (std::int64_t k = 0; k < v.size(); ++k) v[k] = data[static_cast<std::size_t>(k)];
  }
}

}  // namespace dots
