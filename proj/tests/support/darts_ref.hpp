#pragma once

// Independently coded mixed-operation cell forward (plain loops, no reuse of
// the tensor engine): per-edge softmax-weighted candidate sum, plain node
// sums, concat, global average pooling, linear head. Used to cross-check the
// supernet forward in its operation-search configuration.

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "dots/supernet.hpp"

namespace testsupport {

struct RefTensor {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> v;

  double at(int s, int ch, int y, int x) const {
    return v[static_cast<std::size_t>(((s * c + ch) * h + y) * w + x)];
  }
  double& at(int s, int ch, int y, int x) {
    return v[static_cast<std::size_t>(((s * c + ch) * h + y) * w + x)];
  }
  static RefTensor zeros(int n, int c, int h, int w) {
    RefTensor t{n, c, h, w, {}};
    t.v.assign(static_cast<std::size_t>(n) * c * h * w, 0.0);
    return t;
  }
};

class DartsReference {
 public:
  explicit DartsReference(dots::Supernet& net) : opts_(net.options()) {
    for (const auto& [name, t] : net.params().items()) {
      params_[name] = {t.shape(), std::vector<double>(t.value().data(),
                                                      t.value().data() + t.size())};
    }
    for (const dots::RelaxedEdge& re : net.relaxed_edges()) {
      EdgeInfo info;
      info.ops = re.ops;
      if (re.ops.size() >= 2) {
        if (re.groups.size() != 1) {
          throw std::invalid_argument("DartsReference: expects a single softmax group");
        }
        const Eigen::ArrayXd& a = re.alpha[0].value();
        info.alpha.assign(a.data(), a.data() + a.size());
      } else {
        info.alpha = {0.0};
      }
      edges_[dots::edge_key(re.edge)] = std::move(info);
    }
  }

  std::vector<double> logits(const dots::Batch& batch) const {
    const int cin = opts_.input_channels;
    const int ch = opts_.cell.channels;
    RefTensor x0 = from_batch(batch.x0.value(), batch.x0.shape());
    RefTensor x1 = from_batch(batch.x1.value(), batch.x1.shape());
    (void)cin;

    std::map<int, RefTensor> feat;
    feat[1] = stem(x0, "stem0");
    feat[2] = stem(x1, "stem1");
    for (int j = opts_.cell.first_intermediate(); j <= opts_.cell.num_nodes(); ++j) {
      RefTensor acc = RefTensor::zeros(feat[1].n, ch, feat[1].h, feat[1].w);
      for (int i = 1; i < j; ++i) {
        const EdgeInfo& info = edges_.at(dots::edge_key({i, j}));
        const std::vector<double> w = softmax1(info.alpha);
        const std::string prefix = "edge_" + dots::edge_key({i, j});
        for (std::size_t o = 0; o < info.ops.size(); ++o) {
          RefTensor y = apply_op(info.ops[o], feat[i], prefix);
          for (std::size_t k = 0; k < acc.v.size(); ++k) acc.v[k] += w[o] * y.v[k];
        }
      }
      feat[j] = std::move(acc);
    }

    // concat -> global average pool -> linear
    const int nodes = opts_.cell.num_intermediate_nodes;
    const int batch_n = feat[1].n;
    std::vector<double> gap(static_cast<std::size_t>(batch_n) * nodes * ch, 0.0);
    for (int k = 0; k < nodes; ++k) {
      const RefTensor& f = feat.at(opts_.cell.first_intermediate() + k);
      for (int s = 0; s < batch_n; ++s) {
        for (int c = 0; c < ch; ++c) {
          double m = 0.0;
          for (int y = 0; y < f.h; ++y) {
            for (int x = 0; x < f.w; ++x) m += f.at(s, c, y, x);
          }
          gap[static_cast<std::size_t>(s * nodes * ch + k * ch + c)] =
              m / static_cast<double>(f.h * f.w);
        }
      }
    }
    const auto& hw = params_.at("head.w");
    const auto& hb = params_.at("head.b");
    const int classes = hw.first[1];
    const int features = hw.first[0];
    std::vector<double> out(static_cast<std::size_t>(batch_n) * classes, 0.0);
    for (int s = 0; s < batch_n; ++s) {
      for (int c = 0; c < classes; ++c) {
        double acc = hb.second[static_cast<std::size_t>(c)];
        for (int f = 0; f < features; ++f) {
          acc += gap[static_cast<std::size_t>(s * features + f)] *
                 hw.second[static_cast<std::size_t>(f * classes + c)];
        }
        out[static_cast<std::size_t>(s * classes + c)] = acc;
      }
    }
    return out;
  }

 private:
  struct EdgeInfo {
    std::vector<dots::OpKind> ops;
    std::vector<double> alpha;
  };

  static RefTensor from_batch(const Eigen::ArrayXd& v, const dots::Shape& shape) {
    RefTensor t{shape[0], shape[1], shape[2], shape[3], {}};
    t.v.assign(v.data(), v.data() + v.size());
    return t;
  }

  static std::vector<double> softmax1(const std::vector<double>& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    std::vector<double> e(z.size());
    double sum = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
      e[i] = std::exp(z[i] - m);
      sum += e[i];
    }
    for (double& v : e) v /= sum;
    return e;
  }

  const std::pair<dots::Shape, std::vector<double>>& p(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) {
      throw std::invalid_argument("DartsReference: missing parameter " + name);
    }
    return it->second;
  }

  RefTensor stem(const RefTensor& x, const std::string& prefix) const {
    RefTensor y = pointwise(x, prefix + ".pw");
    return bnorm(y, prefix + ".ns", prefix + ".nb");
  }

  RefTensor pointwise(const RefTensor& x, const std::string& name) const {
    const auto& [shape, w] = p(name);
    const int co = shape[0], ci = shape[1];
    RefTensor y = RefTensor::zeros(x.n, co, x.h, x.w);
    for (int s = 0; s < x.n; ++s) {
      for (int o = 0; o < co; ++o) {
        for (int c = 0; c < ci; ++c) {
          const double wv = w[static_cast<std::size_t>(o * ci + c)];
          for (int yy = 0; yy < x.h; ++yy) {
            for (int xx = 0; xx < x.w; ++xx) {
              y.at(s, o, yy, xx) += wv * x.at(s, c, yy, xx);
            }
          }
        }
      }
    }
    return y;
  }

  RefTensor depthwise(const RefTensor& x, const std::string& name, int dilation) const {
    const auto& [shape, w] = p(name);
    const int k = shape[1];
    const int pad = dilation * (k - 1) / 2;
    RefTensor y = RefTensor::zeros(x.n, x.c, x.h, x.w);
    for (int s = 0; s < x.n; ++s) {
      for (int c = 0; c < x.c; ++c) {
        for (int yy = 0; yy < x.h; ++yy) {
          for (int xx = 0; xx < x.w; ++xx) {
            double acc = 0.0;
            for (int r = 0; r < k; ++r) {
              const int sy = yy + dilation * r - pad;
              if (sy < 0 || sy >= x.h) continue;
              for (int t = 0; t < k; ++t) {
                const int sx = xx + dilation * t - pad;
                if (sx < 0 || sx >= x.w) continue;
                acc += w[static_cast<std::size_t>((c * k + r) * k + t)] * x.at(s, c, sy, sx);
              }
            }
            y.at(s, c, yy, xx) = acc;
          }
        }
      }
    }
    return y;
  }

  RefTensor bnorm(const RefTensor& x, const std::string& sname,
                  const std::string& bname) const {
    const auto& scale = p(sname).second;
    const auto& shift = p(bname).second;
    RefTensor y = RefTensor::zeros(x.n, x.c, x.h, x.w);
    const double set = static_cast<double>(x.n) * x.h * x.w;
    for (int c = 0; c < x.c; ++c) {
      double mean = 0.0;
      for (int s = 0; s < x.n; ++s) {
        for (int yy = 0; yy < x.h; ++yy) {
          for (int xx = 0; xx < x.w; ++xx) mean += x.at(s, c, yy, xx);
        }
      }
      mean /= set;
      double var = 0.0;
      for (int s = 0; s < x.n; ++s) {
        for (int yy = 0; yy < x.h; ++yy) {
          for (int xx = 0; xx < x.w; ++xx) {
            const double d = x.at(s, c, yy, xx) - mean;
            var += d * d;
          }
        }
      }
      var /= set;
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int s = 0; s < x.n; ++s) {
        for (int yy = 0; yy < x.h; ++yy) {
          for (int xx = 0; xx < x.w; ++xx) {
            y.at(s, c, yy, xx) =
                scale[static_cast<std::size_t>(c)] * ((x.at(s, c, yy, xx) - mean) * inv) +
                shift[static_cast<std::size_t>(c)];
          }
        }
      }
    }
    return y;
  }

  static RefTensor relu(const RefTensor& x) {
    RefTensor y = x;
    for (double& v : y.v) v = std::max(v, 0.0);
    return y;
  }

  RefTensor pool(const RefTensor& x, bool take_max) const {
    RefTensor y = RefTensor::zeros(x.n, x.c, x.h, x.w);
    for (int s = 0; s < x.n; ++s) {
      for (int c = 0; c < x.c; ++c) {
        for (int yy = 0; yy < x.h; ++yy) {
          for (int xx = 0; xx < x.w; ++xx) {
            double acc = take_max ? -1e300 : 0.0;
            int count = 0;
            for (int r = -1; r <= 1; ++r) {
              const int sy = yy + r;
              if (sy < 0 || sy >= x.h) continue;
              for (int t = -1; t <= 1; ++t) {
                const int sx = xx + t;
                if (sx < 0 || sx >= x.w) continue;
                const double v = x.at(s, c, sy, sx);
                if (take_max) {
                  acc = std::max(acc, v);
                } else {
                  acc += v;
                }
                ++count;
              }
            }
            y.at(s, c, yy, xx) = take_max ? acc : acc / count;
          }
        }
      }
    }
    return y;
  }

  RefTensor conv_block(const RefTensor& x, const std::string& prefix, int dilation) const {
    RefTensor y = relu(x);
    y = depthwise(y, prefix + ".dw", dilation);
    y = pointwise(y, prefix + ".pw");
    return bnorm(y, prefix + ".ns", prefix + ".nb");
  }

  RefTensor apply_op(dots::OpKind kind, const RefTensor& x, const std::string& prefix) const {
    using dots::OpKind;
    switch (kind) {
      case OpKind::kZero:
        return RefTensor::zeros(x.n, x.c, x.h, x.w);
      case OpKind::kSkipConnect:
        return x;
      case OpKind::kAvgPool3x3:
        return bnorm(pool(x, false), prefix + ".avg_pool_3x3.ns",
                     prefix + ".avg_pool_3x3.nb");
      case OpKind::kMaxPool3x3:
        return bnorm(pool(x, true), prefix + ".max_pool_3x3.ns",
                     prefix + ".max_pool_3x3.nb");
      case OpKind::kSepConv3x3: {
        RefTensor t = conv_block(x, prefix + ".sep_conv_3x3.b1", 1);
        return conv_block(t, prefix + ".sep_conv_3x3.b2", 1);
      }
      case OpKind::kSepConv5x5: {
        RefTensor t = conv_block(x, prefix + ".sep_conv_5x5.b1", 1);
        return conv_block(t, prefix + ".sep_conv_5x5.b2", 1);
      }
      case OpKind::kDilConv3x3:
        return conv_block(x, prefix + ".dil_conv_3x3.b1", 2);
      case OpKind::kDilConv5x5:
        return conv_block(x, prefix + ".dil_conv_5x5.b1", 2);
    }
    throw std::invalid_argument("DartsReference: unknown op");
  }

  dots::SupernetOptions opts_;
  std::map<std::string, std::pair<dots::Shape, std::vector<double>>> params_;
  std::map<std::string, EdgeInfo> edges_;
};

}  // namespace testsupport
