#include "dots/data.hpp"

namespace dots {

Batch DataSplit::make_batch(const std::vector<int>& indices) const {
  check(!indices.empty(), "DataSplit::make_batch: empty index list");
  const int b = static_cast<int>(indices.size());
  const std::int64_t plane = plane_size();
  Eigen::ArrayXd x0(b * plane), x1(b * plane);
  std::vector<int> lab(indices.size());
  for (int k = 0; k < b; ++k) {
    const int idx = indices[static_cast<std::size_t>(k)];
    check(idx >= 0 && idx < samples, "DataSplit::make_batch: index out of range");
    const std::int64_t base = static_cast<std::int64_t>(idx) * sample_size();
    for (std::int64_t i = 0; i < plane; ++i) {
      x0[static_cast<std::int64_t>(k) * plane + i] = x[static_cast<std::size_t>(base + i)];
      x1[static_cast<std::int64_t>(k) * plane + i] =
          x[static_cast<std::size_t>(base + plane + i)];
    }
    lab[static_cast<std::size_t>(k)] = labels[static_cast<std::size_t>(idx)];
  }
  Batch batch;
  batch.x0 = Tensor::leaf({b, channels, height, width}, std::move(x0));
  batch.x1 = Tensor::leaf({b, channels, height, width}, std::move(x1));
  batch.labels = std::move(lab);
  return batch;
}

std::vector<int> DataSplit::all_indices() const {
  std::vector<int> idx(static_cast<std::size_t>(samples));
  for (int i = 0; i < samples; ++i) idx[static_cast<std::size_t>(i)] = i;
  return idx;
}

DataSplit DataSplit::slice(int begin, int end) const {
  check(begin >= 0 && end <= samples && begin < end, "DataSplit::slice: bad range");
  DataSplit out;
  out.samples = end - begin;
  out.channels = channels;
  out.height = height;
  out.width = width;
  const std::int64_t ss = sample_size();
  out.x.assign(x.begin() + static_cast<std::int64_t>(begin) * ss,
               x.begin() + static_cast<std::int64_t>(end) * ss);
  out.labels.assign(labels.begin() + begin, labels.begin() + end);
  return out;
}

std::uint64_t DataSplit::checksum() const {
  std::uint64_t h = fnv1a64(x.data(), x.size() * sizeof(double));
  h = fnv1a64(labels.data(), labels.size() * sizeof(int), h);
  return h;
}

std::vector<int> epoch_order(const DataSplit& split, const Rng& base, int epoch) {
  std::vector<int> idx = split.all_indices();
  Rng r = base.child("epoch/" + std::to_string(epoch));
  r.shuffle(idx);
  return idx;
}

}  // namespace dots
