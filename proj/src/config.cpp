#include "dots/config.hpp"

#include <fstream>
#include <set>

namespace dots {

namespace {

// Tracks which keys a section reader consumed; leftovers are hard errors so a
// typo cannot silently fall back to a default.
class Section {
 public:
  Section(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    check(j_.is_object(), "config: section \"" + path_ + "\" must be an object");
  }

  ~Section() noexcept(false) {
    if (std::uncaught_exceptions()) return;
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!used_.count(it.key())) {
        throw std::invalid_argument("config: unknown key \"" + path_ + it.key() + "\"");
      }
    }
  }

  bool has(const std::string& key) {
    if (j_.contains(key)) {
      return true;
    }
    return false;
  }

  template <typename T>
  void read(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    try {
      out = j_.at(key).get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw std::invalid_argument("config: bad value for \"" + path_ + key + "\": " +
                                  e.what());
    }
  }

  void read_optional_double(const std::string& key, std::optional<double>& out) {
    if (!j_.contains(key)) return;
    used_.insert(key);
    const auto& v = j_.at(key);
    if (v.is_null()) {
      out = std::nullopt;
    } else {
      out = v.get<double>();
    }
  }

  const nlohmann::json* sub(const std::string& key) {
    if (!j_.contains(key)) return nullptr;
    used_.insert(key);
    return &j_.at(key);
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string> used_;
};

nlohmann::json optional_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

}  // namespace

RunConfig default_config() { return RunConfig{}; }

nlohmann::json config_to_json(const RunConfig& cfg) {
  nlohmann::json j;
  j["seed"] = cfg.seed;
  j["out_dir"] = cfg.out_dir;
  j["inherit_weights"] = cfg.inherit_weights;

  j["task"] = {
      {"channels", cfg.task.channels},
      {"height", cfg.task.height},
      {"width", cfg.task.width},
      {"classes", cfg.task.classes},
      {"train_samples", cfg.task.train_samples},
      {"val_samples", cfg.task.val_samples},
      {"test_samples", cfg.task.test_samples},
      {"node_signal", cfg.task.node_signal},
      {"noise_std", cfg.task.noise_std},
      {"template_scale", cfg.task.template_scale},
      {"channel_mean_scale", cfg.task.channel_mean_scale},
  };
  j["cell"] = {
      {"intermediate_nodes", cfg.cell.num_intermediate_nodes},
      {"channels", cfg.cell.channels},
  };
  j["plan"] = {
      {"operation_epochs", cfg.plan.operation_epochs},
      {"topology_epochs", cfg.plan.topology_epochs},
      {"strategy", strategy_name(cfg.plan.strategy)},
      {"policy", policy_name(cfg.plan.policy)},
      {"baseline", baseline_name(cfg.plan.baseline)},
      {"external_ops_file", cfg.plan.external_ops_file},
  };
  j["optim"] = {
      {"lr0", cfg.optim.lr0},
      {"momentum", cfg.optim.momentum},
      {"weight_decay", cfg.optim.weight_decay},
      {"grad_clip", optional_to_json(cfg.optim.grad_clip)},
      {"arch_lr", cfg.optim.arch_lr},
      {"arch_momentum", cfg.optim.arch_momentum},
      {"arch_weight_decay", cfg.optim.arch_weight_decay},
      {"arch_grad_clip", optional_to_json(cfg.optim.arch_grad_clip)},
      {"batch_size", cfg.optim.batch_size},
  };
  j["anneal"] = {
      {"t0", cfg.anneal.t0},
      {"t_final", cfg.anneal.t_final},
  };
  j["standalone"] = {
      {"epochs", cfg.standalone.epochs},
      {"batch_size", cfg.standalone.batch_size},
      {"channels", cfg.standalone.channels},
      {"lr0", cfg.standalone.lr0},
      {"momentum", cfg.standalone.momentum},
      {"weight_decay", cfg.standalone.weight_decay},
      {"grad_clip", optional_to_json(cfg.standalone.grad_clip)},
      {"eval_batch", cfg.standalone.eval_batch},
      {"seeds", cfg.standalone.seeds},
  };
  nlohmann::json base = nlohmann::json::array();
  for (const GenotypeNode& gn : cfg.rankcorr.base_nodes) {
    nlohmann::json edges = nlohmann::json::array();
    for (const GenotypeEdge& e : gn.edges) {
      edges.push_back({{"from", e.from}, {"op", op_name(e.op)}});
    }
    base.push_back({{"node", gn.node}, {"edges", edges}});
  }
  j["rankcorr"] = {
      {"target_node", cfg.rankcorr.target_node},
      {"experiment_seeds", cfg.rankcorr.experiment_seeds},
      {"acc_seeds", cfg.rankcorr.acc_seeds},
      {"threads", cfg.rankcorr.threads},
      {"run_baselines", cfg.rankcorr.run_baselines},
      {"sigmoid_threshold", cfg.rankcorr.sigmoid_threshold},
      {"base_nodes", base},
  };
  return j;
}

RunConfig config_from_json(const nlohmann::json& j) {
  RunConfig cfg;
  Section root(j, "");
  root.read("seed", cfg.seed);
  root.read("out_dir", cfg.out_dir);
  root.read("inherit_weights", cfg.inherit_weights);

  if (const nlohmann::json* s = root.sub("task")) {
    Section sec(*s, "task.");
    sec.read("channels", cfg.task.channels);
    sec.read("height", cfg.task.height);
    sec.read("width", cfg.task.width);
    sec.read("classes", cfg.task.classes);
    sec.read("train_samples", cfg.task.train_samples);
    sec.read("val_samples", cfg.task.val_samples);
    sec.read("test_samples", cfg.task.test_samples);
    sec.read("node_signal", cfg.task.node_signal);
    sec.read("noise_std", cfg.task.noise_std);
    sec.read("template_scale", cfg.task.template_scale);
    sec.read("channel_mean_scale", cfg.task.channel_mean_scale);
  }
  if (const nlohmann::json* s = root.sub("cell")) {
    Section sec(*s, "cell.");
    sec.read("intermediate_nodes", cfg.cell.num_intermediate_nodes);
    sec.read("channels", cfg.cell.channels);
  }
  if (const nlohmann::json* s = root.sub("plan")) {
    Section sec(*s, "plan.");
    sec.read("operation_epochs", cfg.plan.operation_epochs);
    sec.read("topology_epochs", cfg.plan.topology_epochs);
    std::string name;
    sec.read("strategy", name);
    if (!name.empty()) cfg.plan.strategy = strategy_from_name(name);
    name.clear();
    sec.read("policy", name);
    if (!name.empty()) cfg.plan.policy = policy_from_name(name);
    name.clear();
    sec.read("baseline", name);
    if (!name.empty()) cfg.plan.baseline = baseline_from_name(name);
    sec.read("external_ops_file", cfg.plan.external_ops_file);
  }
  if (const nlohmann::json* s = root.sub("optim")) {
    Section sec(*s, "optim.");
    sec.read("lr0", cfg.optim.lr0);
    sec.read("momentum", cfg.optim.momentum);
    sec.read("weight_decay", cfg.optim.weight_decay);
    sec.read_optional_double("grad_clip", cfg.optim.grad_clip);
    sec.read("arch_lr", cfg.optim.arch_lr);
    sec.read("arch_momentum", cfg.optim.arch_momentum);
    sec.read("arch_weight_decay", cfg.optim.arch_weight_decay);
    sec.read_optional_double("arch_grad_clip", cfg.optim.arch_grad_clip);
    sec.read("batch_size", cfg.optim.batch_size);
  }
  if (const nlohmann::json* s = root.sub("anneal")) {
    Section sec(*s, "anneal.");
    sec.read("t0", cfg.anneal.t0);
    sec.read("t_final", cfg.anneal.t_final);
  }
  if (const nlohmann::json* s = root.sub("standalone")) {
    Section sec(*s, "standalone.");
    sec.read("epochs", cfg.standalone.epochs);
    sec.read("batch_size", cfg.standalone.batch_size);
    sec.read("channels", cfg.standalone.channels);
    sec.read("lr0", cfg.standalone.lr0);
    sec.read("momentum", cfg.standalone.momentum);
    sec.read("weight_decay", cfg.standalone.weight_decay);
    sec.read_optional_double("grad_clip", cfg.standalone.grad_clip);
    sec.read("eval_batch", cfg.standalone.eval_batch);
    sec.read("seeds", cfg.standalone.seeds);
  }
  if (const nlohmann::json* s = root.sub("rankcorr")) {
    Section sec(*s, "rankcorr.");
    sec.read("target_node", cfg.rankcorr.target_node);
    sec.read("experiment_seeds", cfg.rankcorr.experiment_seeds);
    sec.read("acc_seeds", cfg.rankcorr.acc_seeds);
    sec.read("threads", cfg.rankcorr.threads);
    sec.read("run_baselines", cfg.rankcorr.run_baselines);
    sec.read("sigmoid_threshold", cfg.rankcorr.sigmoid_threshold);
    if (const nlohmann::json* b = sec.sub("base_nodes")) {
      check(b->is_array(), "config: rankcorr.base_nodes must be an array");
      for (const auto& jn : *b) {
        Section node_sec(jn, "rankcorr.base_nodes[].");
        GenotypeNode gn;
        node_sec.read("node", gn.node);
        if (const nlohmann::json* edges = node_sec.sub("edges")) {
          for (const auto& je : *edges) {
            Section edge_sec(je, "rankcorr.base_nodes[].edges[].");
            GenotypeEdge e;
            edge_sec.read("from", e.from);
            std::string opname;
            edge_sec.read("op", opname);
            e.op = op_from_name(opname);
            gn.edges.push_back(e);
          }
        }
        cfg.rankcorr.base_nodes.push_back(std::move(gn));
      }
    }
  }
  return cfg;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open \"" + path + "\"");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument("config: parse error in \"" + path + "\": " + e.what());
  }
  return config_from_json(j);
}

std::string config_hash(const RunConfig& cfg) {
  nlohmann::json j = config_to_json(cfg);
  j.erase("out_dir");
  return hex64(fnv1a64(j.dump()));
}

}  // namespace dots
