#pragma once

#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "dots/data.hpp"
#include "dots/search.hpp"

namespace dots {

// Deterministic synthetic classification task. Each sample carries one image
// plane per cell input node; plane p of a class-k sample is
// node_signal[p] * template[p][k] + noise_std * gaussian noise, so an input
// node with zero signal strength is pure noise and the edges fed by it are
// genuinely uninformative. A class template combines a per-channel mean
// (survives global average pooling) and spatial detail (rewards
// convolutions): template = channel_mean_scale * mean_c + template_scale *
// detail_chw.
struct TaskConfig {
  int channels = 3;
  int height = 8;
  int width = 8;
  int classes = 8;
  int train_samples = 512;
  int val_samples = 256;
  int test_samples = 512;
  std::vector<double> node_signal = {1.0, 0.0};
  double noise_std = 1.0;
  double template_scale = 1.0;
  double channel_mean_scale = 1.0;
};

struct SyntheticTask {
  TaskConfig cfg;
  std::uint64_t seed = 0;
  DataSplit train, val, test;

  std::uint64_t fingerprint() const;
};

SyntheticTask generate_task(const TaskConfig& cfg, std::uint64_t seed);

struct StandaloneConfig {
  int epochs = 30;
  int batch_size = 64;
  int channels = 16;
  double lr0 = 0.025;
  double momentum = 0.9;
  double weight_decay = 3e-4;
  std::optional<double> grad_clip = 5.0;
  int eval_batch = 256;
  int seeds = 3;  // repeat count for accuracy reports
};

// Trains the discrete network described by the genotype from scratch and
// returns test accuracy. Fully seeded; identical seeds give bitwise identical
// results.
double train_standalone(const Genotype& g, const SyntheticTask& task,
                        const StandaloneConfig& cfg, const CellSpec& cell,
                        std::uint64_t seed);

double eval_accuracy(Supernet& net, const DataSplit& split, int eval_batch);

// One genotype per combination of `space`, everything else copied from
// `base`; the enumerated node's edges take their operation from `edge_ops`
// (keyed by predecessor). Guarded to brute-forceable sizes.
std::vector<Genotype> enumerate_variants(int node, const TopologySpace& space,
                                         const Genotype& base,
                                         const std::map<int, OpKind>& edge_ops);

// Kendall rank correlation with the tau-b tie correction. Empty result when
// the correction degenerates (all pairs tied in one list).
std::optional<double> kendall_tau(const std::vector<double>& a,
                                  const std::vector<double>& b);

// Stand-alone accuracies keyed by (genotype, task, training config, seed);
// shared across threads and persistable, so repeated experiments rank against
// the identical ground-truth vector.
class AccuracyCache {
 public:
  std::optional<double> lookup(const std::string& key) const;
  void store(const std::string& key, double accuracy);
  static std::string key(const Genotype& g, const SyntheticTask& task,
                         const StandaloneConfig& cfg, const CellSpec& cell,
                         std::uint64_t seed);
  void load_file(const std::string& path);   // ignores a missing file
  void save_file(const std::string& path) const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::map<std::string, double> map_;
};

}  // namespace dots
