#pragma once

#include <cstdint>
#include <vector>

#include "dots/rng.hpp"
#include "dots/supernet.hpp"

namespace dots {

// Labeled samples with one image plane per cell input node, stored
// contiguously as [sample][input_node][channel][h][w].
struct DataSplit {
  int samples = 0;
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<double> x;
  std::vector<int> labels;

  std::int64_t plane_size() const {
    return static_cast<std::int64_t>(channels) * height * width;
  }
  std::int64_t sample_size() const { return 2 * plane_size(); }

  Batch make_batch(const std::vector<int>& indices) const;
  std::vector<int> all_indices() const;
  // Contiguous sample range as its own split.
  DataSplit slice(int begin, int end) const;
  std::uint64_t checksum() const;
};

// Seeded epoch ordering: identity permutation shuffled by a child stream.
std::vector<int> epoch_order(const DataSplit& split, const Rng& base, int epoch);

}  // namespace dots
