#include "dots/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace dots {

namespace {

DataSplit generate_split(const TaskConfig& cfg, int samples,
                         const std::vector<Eigen::ArrayXd>& templates, Rng rng) {
  DataSplit s;
  s.samples = samples;
  s.channels = cfg.channels;
  s.height = cfg.height;
  s.width = cfg.width;
  const std::int64_t plane = s.plane_size();

  // Round-robin labels shuffled: class priors uniform within one sample.
  std::vector<int> labels(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) labels[static_cast<std::size_t>(i)] = i % cfg.classes;
  Rng label_rng = rng.child("labels");
  label_rng.shuffle(labels);
  s.labels = labels;

  Rng noise = rng.child("noise");
  s.x.resize(static_cast<std::size_t>(samples) * static_cast<std::size_t>(s.sample_size()));
  std::size_t at = 0;
  for (int i = 0; i < samples; ++i) {
    const int k = labels[static_cast<std::size_t>(i)];
    for (int node = 0; node < 2; ++node) {
      const double strength = cfg.node_signal[static_cast<std::size_t>(node)];
      const Eigen::ArrayXd& tmpl =
          templates[static_cast<std::size_t>(node * cfg.classes + k)];
      for (std::int64_t p = 0; p < plane; ++p) {
        s.x[at++] = strength * tmpl[p] + cfg.noise_std * noise.normal();
      }
    }
  }
  return s;
}

}  // namespace

std::uint64_t SyntheticTask::fingerprint() const {
  nlohmann::json j;
  j["channels"] = cfg.channels;
  j["height"] = cfg.height;
  j["width"] = cfg.width;
  j["classes"] = cfg.classes;
  j["train"] = cfg.train_samples;
  j["val"] = cfg.val_samples;
  j["test"] = cfg.test_samples;
  j["node_signal"] = cfg.node_signal;
  j["noise_std"] = cfg.noise_std;
  j["template_scale"] = cfg.template_scale;
  j["channel_mean_scale"] = cfg.channel_mean_scale;
  j["seed"] = seed;
  return fnv1a64(j.dump());
}

SyntheticTask generate_task(const TaskConfig& cfg, std::uint64_t seed) {
  check(cfg.classes >= 2, "generate_task: need at least 2 classes");
  check(cfg.channels >= 1 && cfg.height >= 1 && cfg.width >= 1,
        "generate_task: bad input shape");
  check(cfg.train_samples > 0 && cfg.test_samples > 0,
        "generate_task: need train and test samples");
  check(cfg.node_signal.size() == 2,
        "generate_task: node_signal must list one strength per input node");

  Rng rng(seed);
  const std::int64_t plane =
      static_cast<std::int64_t>(cfg.channels) * cfg.height * cfg.width;
  std::vector<Eigen::ArrayXd> templates;
  templates.reserve(static_cast<std::size_t>(2 * cfg.classes));
  const std::int64_t hw = static_cast<std::int64_t>(cfg.height) * cfg.width;
  for (int node = 0; node < 2; ++node) {
    for (int k = 0; k < cfg.classes; ++k) {
      Rng t = rng.child("template/" + std::to_string(node) + "/" + std::to_string(k));
      Eigen::ArrayXd means(cfg.channels);
      for (int c = 0; c < cfg.channels; ++c) means[c] = cfg.channel_mean_scale * t.normal();
      Eigen::ArrayXd arr(plane);
      for (std::int64_t p = 0; p < plane; ++p) {
        arr[p] = means[static_cast<int>(p / hw)] + cfg.template_scale * t.normal();
      }
      templates.push_back(std::move(arr));
    }
  }

  SyntheticTask task;
  task.cfg = cfg;
  task.seed = seed;
  task.train = generate_split(cfg, cfg.train_samples, templates, rng.child("train"));
  if (cfg.val_samples > 0) {
    task.val = generate_split(cfg, cfg.val_samples, templates, rng.child("val"));
  }
  task.test = generate_split(cfg, cfg.test_samples, templates, rng.child("test"));
  return task;
}

double eval_accuracy(Supernet& net, const DataSplit& split, int eval_batch) {
  check(split.samples > 0, "eval_accuracy: empty split");
  check(eval_batch > 0, "eval_accuracy: eval batch must be positive");
  int correct = 0;
  const std::vector<int> idx = split.all_indices();
  for (int at = 0; at < split.samples; at += eval_batch) {
    const int end = std::min(at + eval_batch, split.samples);
    const std::vector<int> chunk(idx.begin() + at, idx.begin() + end);
    Batch b = split.make_batch(chunk);
    Tensor logits = net.forward_logits(b);
    const int classes = logits.shape()[1];
    for (int r = 0; r < static_cast<int>(chunk.size()); ++r) {
      int best = 0;
      for (int c = 1; c < classes; ++c) {
        if (logits.value()[static_cast<std::int64_t>(r) * classes + c] >
            logits.value()[static_cast<std::int64_t>(r) * classes + best]) {
          best = c;
        }
      }
      if (best == b.labels[static_cast<std::size_t>(r)]) ++correct;
    }
  }
  return static_cast<double>(correct) / split.samples;
}

double train_standalone(const Genotype& g, const SyntheticTask& task,
                        const StandaloneConfig& cfg, const CellSpec& cell,
                        std::uint64_t seed) {
  CellSpec net_cell = cell;
  net_cell.channels = cfg.channels;
  const ValidationReport report = validate_genotype(g, net_cell, g.policy);
  check(report.ok(), "train_standalone: invalid genotype\n" + report.to_string());

  Supernet net(standalone_options(g, net_cell, task.cfg.channels, task.cfg.classes), seed);
  Sgd opt(net.network_params(), cfg.momentum, cfg.weight_decay, cfg.grad_clip);
  const Rng order = Rng(seed).child("order");
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cosine_lr(epoch, cfg.epochs, cfg.lr0);
    std::vector<int> idx = epoch_order(task.train, order, epoch);
    const int b = std::min(cfg.batch_size, task.train.samples);
    for (int at = 0; at + b <= task.train.samples; at += b) {
      const std::vector<int> chunk(idx.begin() + at, idx.begin() + at + b);
      Batch batch = task.train.make_batch(chunk);
      opt.zero_grad();
      Tensor loss = net.forward_loss(batch);
      loss.backward();
      opt.step(lr);
    }
  }
  return eval_accuracy(net, task.test, cfg.eval_batch);
}

std::vector<Genotype> enumerate_variants(int node, const TopologySpace& space,
                                         const Genotype& base,
                                         const std::map<int, OpKind>& edge_ops) {
  check(space.size() <= 64,
        "enumerate_variants: topology space has " + std::to_string(space.size()) +
            " combinations; brute force is guarded to 64. Sample combinations instead.");
  check(space.node == node, "enumerate_variants: space does not describe the node");
  std::vector<Genotype> out;
  out.reserve(static_cast<std::size_t>(space.size()));
  for (const EdgeCombination& c : space.combinations) {
    Genotype g = base;
    g.metadata = nlohmann::json::object();
    GenotypeNode gn;
    gn.node = node;
    gn.code = c.code();
    for (int slot : c.slots()) {
      const int from = slot + 1;
      auto it = edge_ops.find(from);
      check(it != edge_ops.end(), "enumerate_variants: no operation assigned to edge (" +
                                      std::to_string(from) + "," + std::to_string(node) +
                                      ")");
      if (it->second != OpKind::kZero) gn.edges.push_back({from, it->second});
    }
    bool replaced = false;
    for (GenotypeNode& existing : g.nodes) {
      if (existing.node == node) {
        existing = gn;
        replaced = true;
        break;
      }
    }
    if (!replaced) g.nodes.push_back(gn);
    out.push_back(std::move(g));
  }
  return out;
}

std::optional<double> kendall_tau(const std::vector<double>& a,
                                  const std::vector<double>& b) {
  check(a.size() == b.size(), "kendall_tau: score lists differ in length");
  check(a.size() >= 2, "kendall_tau: need at least 2 scores");
  const int n = static_cast<int>(a.size());
  std::int64_t concordant = 0, discordant = 0, ties_a = 0, ties_b = 0;
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      const double da = a[static_cast<std::size_t>(i)] - a[static_cast<std::size_t>(j)];
      const double db = b[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(j)];
      if (da == 0.0) ++ties_a;
      if (db == 0.0) ++ties_b;
      if (da == 0.0 || db == 0.0) continue;
      if ((da > 0.0) == (db > 0.0)) {
        ++concordant;
      } else {
        ++discordant;
      }
    }
  }
  const std::int64_t n0 = static_cast<std::int64_t>(n) * (n - 1) / 2;
  const double denom = std::sqrt(static_cast<double>(n0 - ties_a)) *
                       std::sqrt(static_cast<double>(n0 - ties_b));
  if (denom == 0.0) return std::nullopt;
  return static_cast<double>(concordant - discordant) / denom;
}

std::optional<double> AccuracyCache::lookup(const std::string& key) const {
  std::lock_guard<std::mutex> lock(mu_);
  auto it = map_.find(key);
  if (it == map_.end()) return std::nullopt;
  return it->second;
}

void AccuracyCache::store(const std::string& key, double accuracy) {
  std::lock_guard<std::mutex> lock(mu_);
  map_[key] = accuracy;
}

std::string AccuracyCache::key(const Genotype& g, const SyntheticTask& task,
                               const StandaloneConfig& cfg, const CellSpec& cell,
                               std::uint64_t seed) {
  nlohmann::json j;
  j["genotype"] = hex64(genotype_hash(g));
  j["task"] = hex64(task.fingerprint());
  j["epochs"] = cfg.epochs;
  j["batch"] = cfg.batch_size;
  j["channels"] = cfg.channels;
  j["lr0"] = cfg.lr0;
  j["momentum"] = cfg.momentum;
  j["weight_decay"] = cfg.weight_decay;
  j["grad_clip"] = cfg.grad_clip ? *cfg.grad_clip : 0.0;
  j["eval_batch"] = cfg.eval_batch;
  j["cell_nodes"] = cell.num_intermediate_nodes;
  j["seed"] = seed;
  return hex64(fnv1a64(j.dump()));
}

void AccuracyCache::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) return;
  nlohmann::json j;
  in >> j;
  std::lock_guard<std::mutex> lock(mu_);
  for (auto it = j.begin(); it != j.end(); ++it) {
    map_[it.key()] = it.value().get<double>();
  }
}

void AccuracyCache::save_file(const std::string& path) const {
  nlohmann::json j = nlohmann::json::object();
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (const auto& [k, v] : map_) j[k] = v;
  }
  std::ofstream out(path);
  check(static_cast<bool>(out), "AccuracyCache: cannot write " + path);
  out << j.dump(1) << "\n";
}

std::size_t AccuracyCache::size() const {
  std::lock_guard<std::mutex> lock(mu_);
  return map_.size();
}

}  // namespace dots
