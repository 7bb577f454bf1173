#include "dots/supernet.hpp"

#include <algorithm>
#include <cmath>

namespace dots {

Tensor ParamStore::add(const std::string& name, Shape shape, Init init, int fan_in) {
  for (const auto& [n, t] : items_) {
    check(n != name, "ParamStore: duplicate parameter name \"" + name + "\"");
  }
  const std::int64_t count = numel(shape);
  Eigen::ArrayXd data(count);
  switch (init) {
    case Init::kZeros:
      data.setZero();
      break;
    case Init::kOnes:
      data.setOnes();
      break;
    case Init::kFanIn: {
      check(fan_in > 0, "ParamStore: fan_in required for fan-in init");
      Rng r = rng_.child(name);
      const double stddev = std::sqrt(2.0 / fan_in);
      for (std::int64_t i = 0; i < count; ++i) data[i] = r.normal(stddev);
      break;
    }
  }
  Tensor t = Tensor::leaf(std::move(shape), std::move(data), /*requires_grad=*/true);
  items_.emplace_back(name, t);
  return t;
}

std::vector<Tensor> ParamStore::tensors() const {
  std::vector<Tensor> out;
  out.reserve(items_.size());
  for (const auto& [n, t] : items_) out.push_back(t);
  return out;
}

Tensor* ParamStore::find(const std::string& name) {
  for (auto& [n, t] : items_) {
    if (n == name) return &t;
  }
  return nullptr;
}

OpModule::OpModule(OpKind kind, int channels, const std::string& prefix,
                   ParamStore& params)
    : kind_(kind) {
  const int c = channels;
  auto conv_block = [&](const std::string& tag, int k) {
    p_.push_back(params.add(prefix + "." + tag + ".dw", {c, k, k}, ParamStore::Init::kFanIn,
                            k * k));
    p_.push_back(params.add(prefix + "." + tag + ".pw", {c, c}, ParamStore::Init::kFanIn, c));
    p_.push_back(params.add(prefix + "." + tag + ".ns", {c}, ParamStore::Init::kOnes));
    p_.push_back(params.add(prefix + "." + tag + ".nb", {c}, ParamStore::Init::kZeros));
  };
  switch (kind) {
    case OpKind::kZero:
    case OpKind::kSkipConnect:
      break;
    case OpKind::kAvgPool3x3:
    case OpKind::kMaxPool3x3:
      p_.push_back(params.add(prefix + ".ns", {c}, ParamStore::Init::kOnes));
      p_.push_back(params.add(prefix + ".nb", {c}, ParamStore::Init::kZeros));
      break;
    case OpKind::kSepConv3x3:
      conv_block("b1", 3);
      conv_block("b2", 3);
      break;
    case OpKind::kSepConv5x5:
      conv_block("b1", 5);
      conv_block("b2", 5);
      break;
    case OpKind::kDilConv3x3:
      conv_block("b1", 3);
      break;
    case OpKind::kDilConv5x5:
      conv_block("b1", 5);
      break;
  }
}

Tensor OpModule::apply(const Tensor& x) const {
  switch (kind_) {
    case OpKind::kZero:
      return zeros_like(x);
    case OpKind::kSkipConnect:
      return x;
    case OpKind::kAvgPool3x3:
      return batch_stat_norm(avg_pool3x3(x), p_[0], p_[1]);
    case OpKind::kMaxPool3x3:
      return batch_stat_norm(max_pool3x3(x), p_[0], p_[1]);
    case OpKind::kSepConv3x3:
    case OpKind::kSepConv5x5: {
      Tensor t = batch_stat_norm(
          pointwise_conv2d(depthwise_conv2d(relu(x), p_[0]), p_[1]), p_[2], p_[3]);
      return batch_stat_norm(
          pointwise_conv2d(depthwise_conv2d(relu(t), p_[4]), p_[5]), p_[6], p_[7]);
    }
    case OpKind::kDilConv3x3:
    case OpKind::kDilConv5x5:
      return batch_stat_norm(
          pointwise_conv2d(depthwise_conv2d(relu(x), p_[0], /*dilation=*/2), p_[1]), p_[2],
          p_[3]);
  }
  throw std::invalid_argument("OpModule::apply: unknown operation");
}

Tensor aggregate_gamma(const Tensor& beta_normalized, const TopologySpace& space) {
  check(static_cast<int>(beta_normalized.size()) == space.size(),
        "aggregate_gamma: beta has " + std::to_string(beta_normalized.size()) +
            " entries, space has " + std::to_string(space.size()));
  detail::require_finite(beta_normalized, "aggregate_gamma");
  const int n = space.n;
  for (const EdgeCombination& c : space.combinations) {
    check(c.n == n && c.mask != 0 && (c.mask >> n) == 0,
          "aggregate_gamma: combination references an edge outside the node's "
          "predecessors");
  }
  // Row i of the aggregation matrix has 1/N(c) at every combination c that
  // contains slot i.
  auto space_copy = std::make_shared<TopologySpace>(space);
  return detail::make_node(
      "aggregate_gamma", {n}, {beta_normalized.node()},
      [space_copy, n](TensorNode& node) {
        const Eigen::ArrayXd& b = node.parents[0]->value;
        node.value = Eigen::ArrayXd::Zero(n);
        for (int m = 0; m < static_cast<int>(space_copy->combinations.size()); ++m) {
          const EdgeCombination& c = space_copy->combinations[static_cast<std::size_t>(m)];
          const double share = b[m] / c.size();
          for (int i = 0; i < n; ++i) {
            if (c.contains_slot(i)) node.value[i] += share;
          }
        }
      },
      [space_copy, n](TensorNode& node) {
        if (!node.parents[0]->needs_grad) return;
        for (int m = 0; m < static_cast<int>(space_copy->combinations.size()); ++m) {
          const EdgeCombination& c = space_copy->combinations[static_cast<std::size_t>(m)];
          double acc = 0.0;
          for (int i = 0; i < n; ++i) {
            if (c.contains_slot(i)) acc += node.grad[i];
          }
          node.parents[0]->grad[m] += acc / c.size();
        }
      });
}

Tensor mixed_forward(const std::vector<OpModule>& candidates, const Tensor& x,
                     const Tensor& weights) {
  check(!candidates.empty(), "mixed_forward: empty candidate list");
  std::vector<Tensor> outs;
  outs.reserve(candidates.size());
  for (const OpModule& m : candidates) outs.push_back(m.apply(x));
  return weighted_sum(outs, weights);
}

Tensor node_forward(const std::vector<Tensor>& edge_features, const Tensor& gamma) {
  return weighted_sum(edge_features, gamma);
}

Supernet::Supernet(SupernetOptions options, std::uint64_t seed)
    : options_(std::move(options)), params_(Rng(seed).child("init")) {
  const CellSpec& cell = options_.cell;
  check(cell.num_input_nodes == 2, "Supernet: cell must have exactly 2 input nodes");
  check(cell.num_intermediate_nodes >= 1, "Supernet: need at least one intermediate node");
  check(options_.input_channels >= 1 && options_.classes >= 2,
        "Supernet: invalid input channels or class count");
  const int c = cell.channels;

  for (int i = 0; i < 2; ++i) {
    const std::string prefix = "stem" + std::to_string(i);
    stem_params_.push_back(params_.add(prefix + ".pw", {c, options_.input_channels},
                                       ParamStore::Init::kFanIn, options_.input_channels));
    stem_params_.push_back(params_.add(prefix + ".ns", {c}, ParamStore::Init::kOnes));
    stem_params_.push_back(params_.add(prefix + ".nb", {c}, ParamStore::Init::kZeros));
  }

  for (int j = cell.first_intermediate(); j <= cell.num_nodes(); ++j) {
    NodeMode mode;
    auto it = options_.node_modes.find(j);
    if (it != options_.node_modes.end()) mode = it->second;

    if (!mode.relaxed) {
      std::vector<std::pair<int, OpModule>> pins;
      for (const PinnedEdge& pe : mode.pinned) {
        check(pe.from >= 1 && pe.from < j,
              "Supernet: pinned edge (" + std::to_string(pe.from) + "," +
                  std::to_string(j) + ") lacks a valid predecessor");
        pins.emplace_back(pe.from, OpModule(pe.op, c,
                                            "pin.edge_" + edge_key({pe.from, j}) + "." +
                                                op_name(pe.op),
                                            params_));
      }
      pinned_[j] = std::move(pins);
      continue;
    }

    for (int i = 1; i < j; ++i) {
      const Edge e{i, j};
      auto cit = options_.candidates.find(e);
      check(cit != options_.candidates.end() && !cit->second.empty(),
            "Supernet: no candidate operations for relaxed edge " + edge_key(e));
      RelaxedEdge re;
      re.edge = e;
      re.ops = cit->second;
      auto git = options_.groups.find(e);
      if (git != options_.groups.end() && !git->second.empty()) {
        re.groups = git->second;
        std::vector<bool> covered(re.ops.size(), false);
        for (const auto& grp : re.groups) {
          check(!grp.empty(), "Supernet: empty candidate group on edge " + edge_key(e));
          for (int idx : grp) {
            check(idx >= 0 && idx < static_cast<int>(re.ops.size()) &&
                      !covered[static_cast<std::size_t>(idx)],
                  "Supernet: bad group structure on edge " + edge_key(e));
            covered[static_cast<std::size_t>(idx)] = true;
          }
        }
        check(std::all_of(covered.begin(), covered.end(), [](bool b) { return b; }),
              "Supernet: groups must cover all candidates on edge " + edge_key(e));
      } else {
        std::vector<int> all(re.ops.size());
        for (std::size_t k = 0; k < re.ops.size(); ++k) all[k] = static_cast<int>(k);
        re.groups = {all};
      }
      for (OpKind kind : re.ops) {
        re.modules.emplace_back(kind, c,
                                "edge_" + edge_key(e) + "." + op_name(kind), params_);
      }
      if (re.ops.size() >= 2) {
        for (std::size_t gi = 0; gi < re.groups.size(); ++gi) {
          const std::string name =
              "alpha.edge_" + edge_key(e) + ".g" + std::to_string(gi);
          Tensor a = Tensor::zeros({static_cast<int>(re.groups[gi].size())},
                                   /*requires_grad=*/true);
          arch_named_.emplace_back(name, a);
          re.alpha.push_back(a);
        }
      }
      relaxed_.push_back(std::move(re));
    }

    const int n_in = cell.incoming_count(j);
    switch (options_.aggregation) {
      case NodeAggregation::kSum:
        break;
      case NodeAggregation::kGammaCombination: {
        TopologySpace space = options_.policy == TopologyPolicy::kPairwise
                                  ? build_pairwise_space(j, n_in)
                                  : build_flexible_space(j, n_in);
        Tensor b = Tensor::zeros({space.size()}, /*requires_grad=*/true);
        arch_named_.emplace_back("beta.node" + std::to_string(j), b);
        beta_[j] = b;
        spaces_[j] = std::move(space);
        break;
      }
      case NodeAggregation::kEdgeSoftmax:
      case NodeAggregation::kEdgeSigmoid: {
        Tensor l = Tensor::zeros({n_in}, /*requires_grad=*/true);
        arch_named_.emplace_back("edge_logits.node" + std::to_string(j), l);
        edge_logits_[j] = l;
        break;
      }
    }
  }

  const int concat_c = cell.num_intermediate_nodes * c;
  head_w_ = params_.add("head.w", {concat_c, options_.classes}, ParamStore::Init::kFanIn,
                        concat_c);
  head_b_ = params_.add("head.b", {options_.classes}, ParamStore::Init::kZeros);
}

Tensor Supernet::stem(const Tensor& x, int index) {
  const std::size_t base = static_cast<std::size_t>(index) * 3;
  return batch_stat_norm(pointwise_conv2d(x, stem_params_[base]), stem_params_[base + 1],
                         stem_params_[base + 2]);
}

Tensor Supernet::edge_features(const RelaxedEdge& re, const Tensor& x) {
  if (re.ops.size() == 1) return re.modules[0].apply(x);
  if (re.groups.size() == 1) {
    Tensor w = softmax_t(re.alpha[0], t_alpha_);
    return mixed_forward(re.modules, x, w);
  }
  // Independent relaxation per group; group outputs add.
  Tensor acc;
  for (std::size_t gi = 0; gi < re.groups.size(); ++gi) {
    std::vector<Tensor> outs;
    outs.reserve(re.groups[gi].size());
    for (int idx : re.groups[gi]) {
      outs.push_back(re.modules[static_cast<std::size_t>(idx)].apply(x));
    }
    Tensor w = softmax_t(re.alpha[gi], 1.0);
    Tensor g = weighted_sum(outs, w);
    acc = acc.valid() ? add(acc, g) : g;
  }
  return acc;
}

const RelaxedEdge* Supernet::find_edge(const Edge& e) const {
  for (const RelaxedEdge& re : relaxed_) {
    if (re.edge == e) return &re;
  }
  return nullptr;
}

Tensor Supernet::forward_logits(const Batch& batch) {
  const CellSpec& cell = options_.cell;
  check(batch.x0.valid() && batch.x1.valid(), "Supernet: missing input planes");
  std::map<int, Tensor> feat;
  feat[1] = stem(batch.x0, 0);
  feat[2] = stem(batch.x1, 1);

  for (int j = cell.first_intermediate(); j <= cell.num_nodes(); ++j) {
    auto pit = pinned_.find(j);
    if (pit != pinned_.end()) {
      if (pit->second.empty()) {
        const Shape& s = feat[1].shape();
        feat[j] = Tensor::zeros(s);
      } else {
        Tensor acc;
        for (const auto& [from, module] : pit->second) {
          Tensor t = module.apply(feat[from]);
          acc = acc.valid() ? add(acc, t) : t;
        }
        feat[j] = acc;
      }
      continue;
    }

    std::vector<Tensor> edge_feats;
    edge_feats.reserve(static_cast<std::size_t>(j - 1));
    for (int i = 1; i < j; ++i) {
      const RelaxedEdge* re = find_edge({i, j});
      check(re != nullptr, "Supernet: missing relaxed edge " + edge_key({i, j}));
      edge_feats.push_back(edge_features(*re, feat[i]));
    }
    const int n_in = cell.incoming_count(j);
    switch (options_.aggregation) {
      case NodeAggregation::kSum:
        feat[j] = weighted_sum(edge_feats, Tensor::full({n_in}, 1.0));
        break;
      case NodeAggregation::kGammaCombination: {
        Tensor bn = softmax_t(beta_.at(j), t_beta_);
        Tensor gamma = aggregate_gamma(bn, spaces_.at(j));
        feat[j] = node_forward(edge_feats, gamma);
        break;
      }
      case NodeAggregation::kEdgeSoftmax:
        feat[j] = weighted_sum(edge_feats, softmax_t(edge_logits_.at(j), 1.0));
        break;
      case NodeAggregation::kEdgeSigmoid:
        feat[j] = weighted_sum(edge_feats, sigmoid(edge_logits_.at(j)));
        break;
    }
  }

  std::vector<Tensor> concat_in;
  for (int j = cell.first_intermediate(); j <= cell.num_nodes(); ++j) {
    concat_in.push_back(feat[j]);
  }
  Tensor out = concat_channels(concat_in);
  return linear(global_avg_pool(out), head_w_, head_b_);
}

Tensor Supernet::forward_loss(const Batch& batch) {
  return cross_entropy(forward_logits(batch), batch.labels);
}

std::vector<Tensor> Supernet::network_params() const { return params_.tensors(); }

std::vector<Tensor> Supernet::arch_params() const {
  std::vector<Tensor> out;
  out.reserve(arch_named_.size());
  for (const auto& [n, t] : arch_named_) out.push_back(t);
  return out;
}

void Supernet::set_alpha_temperature(double t) {
  check(t > 0.0, "Supernet: alpha temperature must be positive");
  t_alpha_ = t;
}

void Supernet::set_beta_temperature(double t) {
  check(t > 0.0, "Supernet: beta temperature must be positive");
  t_beta_ = t;
}

namespace {

nlohmann::json tensor_entry(const std::string& name, const Tensor& t) {
  nlohmann::json j;
  j["name"] = name;
  j["shape"] = t.shape();
  std::vector<double> data(t.value().data(), t.value().data() + t.size());
  j["data"] = data;
  return j;
}

void load_tensor_entry(const nlohmann::json& j, Tensor& t) {
  const auto shape = j.at("shape").get<Shape>();
  check(shape == t.shape(), "checkpoint: shape mismatch for \"" +
                                j.at("name").get<std::string>() + "\"");
  const auto data = j.at("data").get<std::vector<double>>();
  check(static_cast<std::int64_t>(data.size()) == t.size(),
        "checkpoint: data length mismatch");
  for (std::int64_t i = 0; i < t.size(); ++i) {
    t.value()[i] = data[static_cast<std::size_t>(i)];
  }
}

}  // namespace

nlohmann::json Supernet::state_to_json() const {
  nlohmann::json j;
  j["params"] = nlohmann::json::array();
  for (const auto& [name, t] : params_.items()) j["params"].push_back(tensor_entry(name, t));
  j["arch"] = nlohmann::json::array();
  for (const auto& [name, t] : arch_named_) j["arch"].push_back(tensor_entry(name, t));
  j["t_alpha"] = t_alpha_;
  j["t_beta"] = t_beta_;
  return j;
}

void Supernet::state_from_json(const nlohmann::json& j) {
  auto restore = [this](const nlohmann::json& arr, bool arch) {
    for (const auto& entry : arr) {
      const std::string name = entry.at("name").get<std::string>();
      Tensor* t = nullptr;
      if (arch) {
        for (auto& [n, a] : arch_named_) {
          if (n == name) t = &a;
        }
      } else {
        t = params_.find(name);
      }
      check(t != nullptr, "checkpoint: unknown tensor \"" + name + "\"");
      load_tensor_entry(entry, *t);
    }
  };
  restore(j.at("params"), false);
  restore(j.at("arch"), true);
  t_alpha_ = j.at("t_alpha").get<double>();
  t_beta_ = j.at("t_beta").get<double>();
}

SupernetOptions standalone_options(const Genotype& g, const CellSpec& cell,
                                   int input_channels, int classes) {
  SupernetOptions opt;
  opt.cell = cell;
  opt.input_channels = input_channels;
  opt.classes = classes;
  opt.aggregation = NodeAggregation::kSum;
  opt.policy = g.policy;
  for (int j = cell.first_intermediate(); j <= cell.num_nodes(); ++j) {
    NodeMode mode;
    mode.relaxed = false;
    if (const GenotypeNode* gn = g.find_node(j)) {
      for (const GenotypeEdge& e : gn->edges) mode.pinned.push_back({e.from, e.op});
    }
    opt.node_modes[j] = mode;
  }
  return opt;
}

}  // namespace dots
