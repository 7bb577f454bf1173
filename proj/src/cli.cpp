#include "dots/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "dots/version.hpp"

namespace dots {

namespace {

namespace fs = std::filesystem;

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write \"" + path.string() + "\"");
  out << content;
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  write_text(path, j.dump(2) + "\n");
}

std::string artifact_comment(const RunConfig& cfg) {
  return "config_hash=" + config_hash(cfg) + " seed=" + std::to_string(cfg.seed) +
         " tool_version=" + kToolVersion;
}

nlohmann::json artifact_metadata(const RunConfig& cfg) {
  return {{"config_hash", config_hash(cfg)},
          {"seed", cfg.seed},
          {"tool_version", kToolVersion}};
}

std::string code_string(const std::vector<int>& code) {
  std::string s;
  for (int b : code) s += b ? '1' : '0';
  return s;
}

std::string metrics_csv(const RunConfig& cfg, const std::vector<MetricsRow>& rows) {
  std::string out = "# " + artifact_comment(cfg) + "\n";
  out += "epoch,stage,loss,t_beta";
  std::vector<int> nodes;
  for (int j = cfg.cell.first_intermediate(); j <= cfg.cell.num_nodes(); ++j) {
    nodes.push_back(j);
    out += ",max_beta_node" + std::to_string(j);
  }
  out += ",lr_w,lr_arch\n";
  for (const MetricsRow& r : rows) {
    out += std::to_string(r.epoch) + "," + r.stage + "," + fmt_double(r.loss) + ",";
    if (r.t_beta) out += fmt_double(*r.t_beta);
    for (int j : nodes) {
      out += ",";
      auto it = r.max_beta.find(j);
      if (it != r.max_beta.end()) out += fmt_double(it->second);
    }
    out += "," + fmt_double(r.lr_w) + "," + fmt_double(r.lr_arch) + "\n";
  }
  return out;
}

Genotype load_genotype_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open genotype \"" + path + "\"");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("genotype: parse error in \"" + path + "\": " + e.what());
  }
  return genotype_from_json(j);
}

std::uint64_t task_seed(const RunConfig& cfg) {
  return Rng(cfg.seed).child("task").seed();
}

}  // namespace

RunConfig resolve_config(const std::string& config_path, const CliOverrides& overrides) {
  RunConfig cfg = load_config_file(config_path);
  if (overrides.seed) cfg.seed = *overrides.seed;
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  return cfg;
}

int cmd_search(const std::string& config_path, const CliOverrides& overrides) {
  const RunConfig cfg = resolve_config(config_path, overrides);
  fs::create_directories(cfg.out_dir);

  const SyntheticTask task = generate_task(cfg.task, task_seed(cfg));
  SearchArtifacts art = run_search(cfg, task);

  const nlohmann::json meta = artifact_metadata(cfg);
  Genotype g = art.genotype;
  for (const auto& [k, v] : meta.items()) g.metadata[k] = v;
  g.metadata["strategy"] = strategy_name(cfg.plan.strategy);
  write_text(fs::path(cfg.out_dir) / "genotype.json", genotype_dump(g));

  if (art.genotype_darts) {
    Genotype gd = *art.genotype_darts;
    for (const auto& [k, v] : meta.items()) gd.metadata[k] = v;
    gd.metadata["strategy"] = strategy_name(cfg.plan.strategy);
    write_text(fs::path(cfg.out_dir) / "genotype_darts.json", genotype_dump(gd));
  }

  nlohmann::json ckpt;
  ckpt["format"] = "dots-checkpoint-v1";
  ckpt["stage"] = "final";
  for (const auto& [k, v] : meta.items()) ckpt[k] = v;
  ckpt["state"] = art.final_state;
  write_json(fs::path(cfg.out_dir) / "checkpoint.json", ckpt);

  write_text(fs::path(cfg.out_dir) / "metrics.csv", metrics_csv(cfg, art.metrics));

  std::cout << "search: wrote " << (fs::path(cfg.out_dir) / "genotype.json").string()
            << "\n";
  return 0;
}

int cmd_rankcorr(const std::string& config_path, const CliOverrides& overrides) {
  const RunConfig cfg = resolve_config(config_path, overrides);
  fs::create_directories(cfg.out_dir);

  AccuracyCache cache;
  const fs::path cache_path = fs::path(cfg.out_dir) / "acc_cache.json";
  cache.load_file(cache_path.string());

  const Rng seed_rng(cfg.seed);
  std::vector<RankSeedResult> results;
  const int n_seeds = std::max(1, cfg.rankcorr.experiment_seeds);
  for (int i = 0; i < n_seeds; ++i) {
    const std::uint64_t exp_seed = seed_rng.child("exp/" + std::to_string(i)).seed();
    results.push_back(rank_experiment(cfg, exp_seed, cache));
    cache.save_file(cache_path.string());
  }

  const bool with_baselines = cfg.rankcorr.run_baselines;
  std::string csv = "# " + artifact_comment(cfg) + "\n";
  csv += "experiment_seed,combination_id,code,acc_mean,acc_std,score_op,score_combo";
  if (with_baselines) csv += ",score_pcdarts,score_sigmoid";
  csv += "\n";
  for (const RankSeedResult& r : results) {
    for (const ExperimentRecord& rec : r.records) {
      csv += std::to_string(r.experiment_seed) + "," + std::to_string(rec.combination_id) +
             "," + code_string(rec.combo.code()) + "," + fmt_double(rec.acc_mean) + "," +
             fmt_double(rec.acc_std) + "," + fmt_double(rec.score_op) + "," +
             fmt_double(rec.score_combo);
      if (with_baselines) {
        csv += ",";
        if (rec.score_pcdarts) csv += fmt_double(*rec.score_pcdarts);
        csv += ",";
        if (rec.score_sigmoid) csv += fmt_double(*rec.score_sigmoid);
      }
      csv += "\n";
    }
  }
  write_text(fs::path(cfg.out_dir) / "experiment.csv", csv);

  auto tau_array = [&results](std::optional<double> RankSeedResult::*field) {
    nlohmann::json arr = nlohmann::json::array();
    for (const RankSeedResult& r : results) {
      const auto& v = r.*field;
      if (v) {
        arr.push_back(*v);
      } else {
        arr.push_back(nullptr);
      }
    }
    return arr;
  };
  auto mean_of = [&results](std::optional<double> RankSeedResult::*field) -> nlohmann::json {
    double sum = 0.0;
    int n = 0;
    for (const RankSeedResult& r : results) {
      if (r.*field) {
        sum += *(r.*field);
        ++n;
      }
    }
    if (n == 0) return nullptr;
    return sum / n;
  };

  int combo_wins = 0;
  for (const RankSeedResult& r : results) {
    if (r.tau_combo && r.tau_op && *r.tau_combo > *r.tau_op) ++combo_wins;
  }

  nlohmann::json summary;
  const nlohmann::json meta = artifact_metadata(cfg);
  for (const auto& [k, v] : meta.items()) summary[k] = v;
  nlohmann::json seeds = nlohmann::json::array();
  nlohmann::json statuses = nlohmann::json::array();
  for (const RankSeedResult& r : results) {
    seeds.push_back(r.experiment_seed);
    statuses.push_back(r.status);
  }
  summary["seeds"] = seeds;
  summary["status"] = statuses;
  summary["tau_op"] = tau_array(&RankSeedResult::tau_op);
  summary["tau_combo"] = tau_array(&RankSeedResult::tau_combo);
  summary["tau_op_mean"] = mean_of(&RankSeedResult::tau_op);
  summary["tau_combo_mean"] = mean_of(&RankSeedResult::tau_combo);
  summary["combo_wins"] = combo_wins;
  if (with_baselines) {
    summary["tau_pcdarts"] = tau_array(&RankSeedResult::tau_pcdarts);
    summary["tau_sigmoid"] = tau_array(&RankSeedResult::tau_sigmoid);
    summary["tau_pcdarts_mean"] = mean_of(&RankSeedResult::tau_pcdarts);
    summary["tau_sigmoid_mean"] = mean_of(&RankSeedResult::tau_sigmoid);
  }
  write_json(fs::path(cfg.out_dir) / "summary.json", summary);

  std::cout << "rankcorr: tau_combo_mean="
            << summary["tau_combo_mean"].dump() << " tau_op_mean="
            << summary["tau_op_mean"].dump() << "\n";
  return 0;
}

int cmd_eval(const std::string& genotype_path, const std::string& config_path,
             const CliOverrides& overrides) {
  const RunConfig cfg = resolve_config(config_path, overrides);
  fs::create_directories(cfg.out_dir);
  const Genotype g = load_genotype_file(genotype_path);
  const SyntheticTask task = generate_task(cfg.task, task_seed(cfg));

  const Rng rng(cfg.seed);
  std::vector<double> accs;
  nlohmann::json seed_list = nlohmann::json::array();
  const int n = std::max(1, cfg.standalone.seeds);
  for (int s = 0; s < n; ++s) {
    const std::uint64_t seed = rng.child("eval/" + std::to_string(s)).seed();
    seed_list.push_back(seed);
    accs.push_back(train_standalone(g, task, cfg.standalone, cfg.cell, seed));
    std::cout << "seed " << seed << ": accuracy " << fmt_double(accs.back()) << "\n";
  }
  double mean = 0.0;
  for (double a : accs) mean += a;
  mean /= static_cast<double>(accs.size());
  double var = 0.0;
  for (double a : accs) var += (a - mean) * (a - mean);
  const double stddev = accs.size() > 1 ? std::sqrt(var / (accs.size() - 1)) : 0.0;

  nlohmann::json j;
  const nlohmann::json meta = artifact_metadata(cfg);
  for (const auto& [k, v] : meta.items()) j[k] = v;
  j["genotype_hash"] = hex64(genotype_hash(g));
  j["seeds"] = seed_list;
  j["accuracies"] = accs;
  j["mean"] = mean;
  j["std"] = stddev;
  write_json(fs::path(cfg.out_dir) / "eval.json", j);

  std::cout << "mean " << fmt_double(mean) << " +- " << fmt_double(stddev) << "\n";
  return 0;
}

std::string export_dot_text(const Genotype& g) {
  auto dot_name = [](int node) {
    if (node == 1) return std::string("in1");
    if (node == 2) return std::string("in2");
    return "c_" + std::to_string(node - 2);
  };
  int max_node = 2;
  for (const GenotypeNode& gn : g.nodes) max_node = std::max(max_node, gn.node);

  std::string out = "digraph cell {\n";
  out += "  // tool_version=" + std::string(kToolVersion);
  if (g.metadata.contains("config_hash")) {
    out += " config_hash=" + g.metadata["config_hash"].get<std::string>();
  }
  if (g.metadata.contains("seed")) {
    out += " seed=" + g.metadata["seed"].dump();
  }
  out += "\n  rankdir=LR;\n";
  out += "  in1 [shape=box];\n  in2 [shape=box];\n";
  for (int j = 3; j <= max_node; ++j) out += "  " + dot_name(j) + " [shape=ellipse];\n";
  out += "  out [shape=doubleoctagon];\n";
  std::vector<GenotypeNode> nodes = g.nodes;
  std::sort(nodes.begin(), nodes.end(),
            [](const GenotypeNode& a, const GenotypeNode& b) { return a.node < b.node; });
  for (const GenotypeNode& gn : nodes) {
    std::vector<GenotypeEdge> edges = gn.edges;
    std::sort(edges.begin(), edges.end(),
              [](const GenotypeEdge& a, const GenotypeEdge& b) { return a.from < b.from; });
    for (const GenotypeEdge& e : edges) {
      out += "  " + dot_name(e.from) + " -> " + dot_name(gn.node) + " [label=\"" +
             op_name(e.op) + "\"];\n";
    }
  }
  for (const GenotypeNode& gn : nodes) {
    out += "  " + dot_name(gn.node) + " -> out [style=dashed];\n";
  }
  out += "}\n";
  return out;
}

int cmd_export_dot(const std::string& genotype_path,
                   const std::optional<std::string>& out_file) {
  const Genotype g = load_genotype_file(genotype_path);
  const std::string dot = export_dot_text(g);
  if (out_file) {
    write_text(*out_file, dot);
  } else {
    std::cout << dot;
  }
  return 0;
}

int cmd_validate(const std::string& genotype_path,
                 const std::optional<std::string>& config_path) {
  const Genotype g = load_genotype_file(genotype_path);
  CellSpec cell;
  TopologyPolicy policy = g.policy;
  if (config_path) {
    const RunConfig cfg = load_config_file(*config_path);
    cell = cfg.cell;
    policy = cfg.plan.policy;
  } else {
    int max_node = 3;
    for (const GenotypeNode& gn : g.nodes) max_node = std::max(max_node, gn.node);
    cell.num_intermediate_nodes = max_node - 2;
  }
  const ValidationReport report = validate_genotype(g, cell, policy);
  nlohmann::json j;
  j["valid"] = report.ok();
  j["violations"] = nlohmann::json::array();
  for (const Violation& v : report.violations) {
    j["violations"].push_back({{"code", v.code}, {"message", v.message}, {"node", v.node}});
  }
  std::cout << j.dump(2) << "\n";
  return report.ok() ? 0 : 1;
}

}  // namespace dots
