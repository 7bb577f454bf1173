#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dots/pipeline.hpp"
#include "dots/search.hpp"
#include "support/fd.hpp"

using namespace dots;

namespace {

Batch random_batch(int b, int c, int h, int w, int classes, Rng& rng) {
  Batch batch;
  batch.x0 = testsupport::randn_leaf({b, c, h, w}, rng, 1.0, false);
  batch.x1 = testsupport::randn_leaf({b, c, h, w}, rng, 1.0, false);
  for (int i = 0; i < b; ++i) {
    batch.labels.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(classes))));
  }
  return batch;
}

SupernetOptions tiny_stage2_options(TopologyPolicy policy = TopologyPolicy::kPairwise) {
  SupernetOptions opt;
  opt.cell.num_intermediate_nodes = 2;
  opt.cell.channels = 4;
  opt.input_channels = 3;
  opt.classes = 4;
  opt.aggregation = NodeAggregation::kGammaCombination;
  opt.policy = policy;
  for (int j = 3; j <= 4; ++j) {
    for (int i = 1; i < j; ++i) {
      opt.candidates[{i, j}] = {OpKind::kSkipConnect, OpKind::kSepConv3x3};
    }
  }
  return opt;
}

// Mean squared difference between a mixed Zero/Skip edge and the input
// itself: the skip candidate strictly dominates.
Tensor toy_loss(const Tensor& alpha, const Tensor& x) {
  Tensor w = softmax_t(alpha, 1.0);
  Tensor out = weighted_sum({zeros_like(x), x}, w);
  Tensor diff = weighted_sum({out, x}, Tensor::from({1.0, -1.0}, {2}));
  return reduce_mean(mul(diff, diff));
}

}  // namespace

TEST_CASE("architecture weights climb monotonically when a candidate dominates") {
  Rng rng(5);
  Tensor x = testsupport::randn_leaf({1, 2, 4, 4}, rng, 1.0, false);
  Tensor alpha = Tensor::zeros({2}, true);
  Sgd opt({alpha}, 0.0, 0.0);

  double prev_skip_logit = alpha.value()[1];
  double first_loss = toy_loss(alpha, x).item();
  double loss_at_10 = 0.0;
  for (int step = 0; step < 50; ++step) {
    opt.zero_grad();
    Tensor loss = toy_loss(alpha, x);
    loss.backward();
    opt.step(0.5);
    if (step < 10) {
      CHECK(alpha.value()[1] > prev_skip_logit);
      prev_skip_logit = alpha.value()[1];
    }
    if (step == 10) loss_at_10 = loss.item();
  }
  const double final_loss = toy_loss(alpha, x).item();
  CHECK(final_loss < loss_at_10);
  CHECK(final_loss < first_loss);
  CHECK(alpha.value()[1] > alpha.value()[0]);
}

TEST_CASE("zero architecture learning rate freezes the architecture weights") {
  Rng rng(6);
  Tensor x = testsupport::randn_leaf({1, 2, 4, 4}, rng, 1.0, false);
  Tensor alpha = Tensor::zeros({2}, true);
  Sgd opt({alpha}, 0.9, 0.0);
  const Eigen::ArrayXd before = alpha.value();
  for (int step = 0; step < 5; ++step) {
    opt.zero_grad();
    Tensor loss = toy_loss(alpha, x);
    loss.backward();
    opt.step(0.0);
  }
  for (Eigen::Index i = 0; i < before.size(); ++i) CHECK(alpha.value()[i] == before[i]);
}

TEST_CASE("bilevel step updates alpha on the validation loss and w on the training loss") {
  SupernetOptions opt;
  opt.cell.num_intermediate_nodes = 1;
  opt.cell.channels = 4;
  opt.input_channels = 3;
  opt.classes = 3;
  opt.aggregation = NodeAggregation::kSum;
  for (int i = 1; i < 3; ++i) {
    opt.candidates[{i, 3}] = {OpKind::kZero, OpKind::kSkipConnect, OpKind::kSepConv3x3};
  }
  Supernet net(opt, 7);
  Sgd opt_w(net.network_params(), 0.9, 0.0, 5.0);
  Sgd opt_arch(net.arch_params(), 0.9, 0.0);
  Rng rng(8);
  Batch train = random_batch(4, 3, 5, 5, 3, rng);
  Batch val = random_batch(4, 3, 5, 5, 3, rng);

  SUBCASE("with zero arch lr alpha is bitwise unchanged while w moves") {
    std::vector<Eigen::ArrayXd> alpha_before;
    for (const Tensor& a : net.arch_params()) alpha_before.push_back(a.value());
    const Eigen::ArrayXd w_before = net.network_params()[0].value();
    for (int s = 0; s < 3; ++s) {
      bilevel_step(net, opt_w, opt_arch, train, val, 0.05, 0.0);
    }
    const auto alpha_after = net.arch_params();
    for (std::size_t i = 0; i < alpha_after.size(); ++i) {
      for (Eigen::Index k = 0; k < alpha_after[i].size(); ++k) {
        CHECK(alpha_after[i].value()[k] == alpha_before[i][k]);
      }
    }
    CHECK((net.network_params()[0].value() != w_before).any());
  }

  SUBCASE("with zero network lr w is bitwise unchanged while alpha moves") {
    const Eigen::ArrayXd w_before = net.network_params()[2].value();
    bilevel_step(net, opt_w, opt_arch, train, val, 0.0, 0.3);
    bool alpha_moved = false;
    for (const Tensor& a : net.arch_params()) {
      alpha_moved = alpha_moved || (a.value() != 0.0).any();
    }
    CHECK(alpha_moved);
    for (Eigen::Index k = 0; k < w_before.size(); ++k) {
      CHECK(net.network_params()[2].value()[k] == w_before[k]);
    }
  }
}

TEST_CASE("one-level step with zero arch lr matches a plain training control bitwise") {
  Rng rng(10);
  Batch train = random_batch(4, 3, 5, 5, 4, rng);

  Supernet a(tiny_stage2_options(), 99);
  Sgd a_w(a.network_params(), 0.9, 3e-4, 5.0);
  Sgd a_arch(a.arch_params(), 0.9, 0.0);
  std::vector<double> a_losses;
  for (int s = 0; s < 5; ++s) {
    a_losses.push_back(a.forward_loss(train).item());
    one_level_step(a, a_w, a_arch, train, 0.05, 0.0);
  }

  // Control: identical supernet, architecture parameters never updated.
  Supernet b(tiny_stage2_options(), 99);
  Sgd b_w(b.network_params(), 0.9, 3e-4, 5.0);
  std::vector<double> b_losses;
  for (int s = 0; s < 5; ++s) {
    b_losses.push_back(b.forward_loss(train).item());
    b_w.zero_grad();
    Tensor loss = b.forward_loss(train);
    loss.backward();
    b_w.step(0.05);
  }

  for (int s = 0; s < 5; ++s) {
    CHECK(a_losses[static_cast<std::size_t>(s)] == b_losses[static_cast<std::size_t>(s)]);
  }
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    const auto& at = a.params().items()[i].second;
    const auto& bt = b.params().items()[i].second;
    for (Eigen::Index k = 0; k < at.size(); ++k) CHECK(at.value()[k] == bt.value()[k]);
  }
}

namespace {

// Snapshot with two candidates {Zero, SkipConnect} per edge; the skip logit
// sets the edge importance directly.
AlphaSnapshot snapshot_for(const CellSpec& cell, const std::map<Edge, double>& skip_logit) {
  AlphaSnapshot snap;
  for (const Edge& e : cell.all_edges()) {
    snap.ops[e] = {OpKind::kZero, OpKind::kSkipConnect};
    snap.groups[e] = {{0, 1}};
    Eigen::ArrayXd lg(2);
    lg << 0.0, skip_logit.count(e) ? skip_logit.at(e) : 0.0;
    snap.logits[e] = lg;
  }
  return snap;
}

}  // namespace

TEST_CASE("retention rules") {
  CellSpec cell;
  cell.num_intermediate_nodes = 1;
  AlphaSnapshot snap;
  const Edge e{1, 3};
  const Edge e2{2, 3};
  snap.ops[e] = OperationSet::canonical().ops;
  snap.ops[e2] = OperationSet::canonical().ops;

  SUBCASE("darts_top1 keeps the argmax and never Zero") {
    Eigen::ArrayXd lg = Eigen::ArrayXd::Zero(8);
    lg[0] = 10.0;                       // Zero dominates but is excluded
    lg[4] = 2.0;                        // sep_conv_3x3
    snap.groups[e] = {{0, 1, 2, 3, 4, 5, 6, 7}};
    snap.logits[e] = lg;
    snap.groups[e2] = snap.groups[e];
    snap.logits[e2] = Eigen::ArrayXd::Zero(8);
    auto retained = retain_candidates(snap, OperationStrategy::kDartsTop1);
    CHECK(retained.at(e) == std::vector<OpKind>{OpKind::kSepConv3x3});
    CHECK(retained.at(e2) == std::vector<OpKind>{OpKind::kSkipConnect});  // tie: lowest index
  }

  SUBCASE("darts_top2 keeps the two best non-Zero candidates") {
    Eigen::ArrayXd lg = Eigen::ArrayXd::Zero(8);
    lg[4] = 2.0;
    lg[7] = 1.5;
    snap.groups[e] = {{0, 1, 2, 3, 4, 5, 6, 7}};
    snap.logits[e] = lg;
    snap.groups[e2] = snap.groups[e];
    snap.logits[e2] = lg;
    auto retained = retain_candidates(snap, OperationStrategy::kDartsTop2);
    CHECK(retained.at(e) ==
          std::vector<OpKind>{OpKind::kSepConv3x3, OpKind::kDilConv5x5});
  }

  SUBCASE("group_v2 keeps one winner per group, Zero included") {
    std::vector<std::vector<int>> groups = {{0, 1, 2, 3}, {4, 5, 6, 7}};
    snap.groups[e] = groups;
    snap.groups[e2] = groups;
    Eigen::ArrayXd lg = Eigen::ArrayXd::Zero(8);
    lg[1] = 1.0;  // skip wins group 1
    lg[4] = 0.5;  // sep3 wins group 2
    snap.logits[e] = lg;
    Eigen::ArrayXd lg2 = Eigen::ArrayXd::Zero(8);
    lg2[0] = 2.0;  // Zero wins group 1: the edge may vanish at derivation
    lg2[6] = 0.5;
    snap.logits[e2] = lg2;
    auto retained = retain_candidates(snap, OperationStrategy::kGroupV2);
    CHECK(retained.at(e) ==
          std::vector<OpKind>{OpKind::kSkipConnect, OpKind::kSepConv3x3});
    CHECK(retained.at(e2) == std::vector<OpKind>{OpKind::kZero, OpKind::kDilConv3x3});
  }
}

TEST_CASE("derive_darts_policy keeps the two strongest edges per node") {
  CellSpec cell;
  cell.num_intermediate_nodes = 2;  // nodes 3 (2 preds) and 4 (3 preds)

  SUBCASE("importances 0.9 / 0.1 / 0.5 keep edges 1 and 3") {
    AlphaSnapshot snap = snapshot_for(cell, {{{1, 4}, 0.9}, {{2, 4}, 0.1}, {{3, 4}, 0.5}});
    Genotype g = derive_darts_policy(snap, cell);
    const GenotypeNode* n4 = g.find_node(4);
    REQUIRE(n4 != nullptr);
    REQUIRE(n4->edges.size() == 2);
    CHECK(n4->edges[0].from == 1);
    CHECK(n4->edges[1].from == 3);
    CHECK(n4->code == std::vector<int>{1, 0, 1});
    for (const GenotypeEdge& e : n4->edges) CHECK(e.op == OpKind::kSkipConnect);
  }

  SUBCASE("ties keep the lowest-indexed edges") {
    AlphaSnapshot snap = snapshot_for(cell, {});
    Genotype g = derive_darts_policy(snap, cell);
    const GenotypeNode* n4 = g.find_node(4);
    REQUIRE(n4 != nullptr);
    CHECK(n4->code == std::vector<int>{1, 1, 0});
  }

  SUBCASE("invariant under strictly monotone transforms of the logits") {
    Rng rng(31);
    for (int trial = 0; trial < 20; ++trial) {
      std::map<Edge, double> imp;
      for (const Edge& e : cell.all_edges()) imp[e] = rng.normal();
      AlphaSnapshot snap = snapshot_for(cell, imp);
      const Genotype base = derive_darts_policy(snap, cell);
      const std::vector<std::function<double(double)>> transforms{
          [](double x) { return 2.0 * x + 3.0; },
          [](double x) { return std::tanh(x); },
          [](double x) { return x * x * x; },
          [](double x) { return std::exp(x); },
      };
      for (const auto& f : transforms) {
        AlphaSnapshot warped = snap;
        for (auto& [e, lg] : warped.logits) {
          for (Eigen::Index i = 0; i < lg.size(); ++i) lg[i] = f(lg[i]);
        }
        CHECK(genotype_hash(derive_darts_policy(warped, cell)) == genotype_hash(base));
      }
    }
  }
}

TEST_CASE("derive_dots_policy selects the argmax combination") {
  CellSpec cell;
  cell.num_intermediate_nodes = 2;

  TopologySearchResult topo;
  topo.spaces[3] = build_pairwise_space(3, 2);
  topo.spaces[4] = build_pairwise_space(4, 3);
  topo.beta_logits[3] = Eigen::ArrayXd::Zero(1);
  Eigen::ArrayXd b4 = Eigen::ArrayXd::Zero(3);
  b4[0] = 2.0;  // <1,2>
  topo.beta_logits[4] = b4;
  for (const Edge& e : cell.all_edges()) {
    topo.edge_candidates[e] = {OpKind::kSepConv3x3};
  }

  SUBCASE("one-hot beta keeps edges 1 and 2") {
    Genotype g = derive_dots_policy(topo, cell, TopologyPolicy::kPairwise);
    const GenotypeNode* n4 = g.find_node(4);
    REQUIRE(n4 != nullptr);
    CHECK(n4->code == std::vector<int>{1, 1, 0});
    REQUIRE(n4->edges.size() == 2);
    CHECK(n4->edges[0].from == 1);
    CHECK(n4->edges[1].from == 2);
    CHECK(validate_genotype(g, cell, TopologyPolicy::kPairwise).ok());
  }

  SUBCASE("flexible argmax code keeps three edges") {
    TopologySearchResult flex = topo;
    flex.spaces[4] = build_flexible_space(4, 3);
    Eigen::ArrayXd bf = Eigen::ArrayXd::Zero(7);
    bf[6] = 5.0;  // code [1,1,1]
    flex.beta_logits[4] = bf;
    flex.spaces[3] = build_flexible_space(3, 2);
    flex.beta_logits[3] = Eigen::ArrayXd::Zero(3);
    Genotype g = derive_dots_policy(flex, cell, TopologyPolicy::kFlexible);
    const GenotypeNode* n4 = g.find_node(4);
    REQUIRE(n4 != nullptr);
    CHECK(n4->edges.size() == 3);
  }

  SUBCASE("Zero winners are dropped with a warning, not an error") {
    TopologySearchResult z = topo;
    z.edge_candidates[{1, 4}] = {OpKind::kZero, OpKind::kSepConv3x3};
    Eigen::ArrayXd a2(2);
    a2 << 1.0, 0.0;  // Zero wins
    z.alpha2_logits[{1, 4}] = a2;
    Genotype g = derive_dots_policy(z, cell, TopologyPolicy::kPairwise);
    const GenotypeNode* n4 = g.find_node(4);
    REQUIRE(n4 != nullptr);
    CHECK(n4->edges.size() == 1);  // edge from 1 vanished
    CHECK(n4->code == std::vector<int>{1, 1, 0});
    REQUIRE(g.metadata.contains("warnings"));
    CHECK(g.metadata["warnings"].size() >= 1);
  }
}

TEST_CASE("variant_edge_ops prefers the final non-Zero winner") {
  TopologySearchResult topo;
  topo.edge_candidates[{1, 3}] = {OpKind::kMaxPool3x3};
  topo.edge_candidates[{2, 3}] = {OpKind::kZero, OpKind::kDilConv3x3};
  Eigen::ArrayXd a(2);
  a << 3.0, 1.0;  // Zero wins; fall back to the best non-Zero
  topo.alpha2_logits[{2, 3}] = a;
  auto ops = variant_edge_ops(topo);
  CHECK(ops.at({1, 3}) == OpKind::kMaxPool3x3);
  CHECK(ops.at({2, 3}) == OpKind::kDilConv3x3);
}

TEST_CASE("importance_report spec cases") {
  CellSpec cell;
  cell.num_intermediate_nodes = 4;
  const int node = 6;
  TopologySpace space = build_pairwise_space(node, 5);

  // Normalized importances 0.8/0.6/0.1/0.1/0.1 via two-candidate softmax.
  auto logit_for = [](double weight) { return std::log(weight / (1.0 - weight)); };
  std::map<Edge, double> skip;
  skip[{1, node}] = logit_for(0.8);
  skip[{2, node}] = logit_for(0.6);
  skip[{3, node}] = logit_for(0.1);
  skip[{4, node}] = logit_for(0.1);
  skip[{5, node}] = logit_for(0.1);
  AlphaSnapshot snap = snapshot_for(cell, skip);

  ImportanceReport report = importance_report(snap, std::nullopt, space);
  REQUIRE(report.score_op.size() == 10);
  CHECK(report.score_combo.empty());
  int best = 0;
  for (int i = 1; i < 10; ++i) {
    if (report.score_op[static_cast<std::size_t>(i)] >
        report.score_op[static_cast<std::size_t>(best)]) {
      best = i;
    }
  }
  CHECK(space.combinations[static_cast<std::size_t>(best)].slots() ==
        std::vector<int>{0, 1});
  CHECK(report.score_op[static_cast<std::size_t>(best)] ==
        doctest::Approx(1.4).epsilon(1e-9));

  TopologySearchResult topo;
  topo.spaces[node] = space;
  topo.beta_logits[node] = Eigen::ArrayXd::Zero(10);
  ImportanceReport both = importance_report(snap, topo, space);
  REQUIRE(both.score_combo.size() == 10);
  for (double s : both.score_combo) CHECK(s == doctest::Approx(0.1).epsilon(1e-12));
}

TEST_CASE("baseline edge selection rules") {
  Eigen::ArrayXd w(3);
  w << 0.5, 0.3, 0.2;
  CHECK(pcdarts_select_edges(w) == std::vector<int>{0, 1});

  Eigen::ArrayXd gates(3);
  gates << 1.0 / (1.0 + std::exp(-2.0)), 1.0 / (1.0 + std::exp(2.0)),
      1.0 / (1.0 + std::exp(-0.1));
  auto [slots, fallback] = sigmoid_select_edges(gates, 0.5);
  CHECK(slots == std::vector<int>{0, 2});
  CHECK_FALSE(fallback);

  Eigen::ArrayXd low(3);
  low << 0.1, 0.4, 0.2;
  auto [slots2, fallback2] = sigmoid_select_edges(low, 0.5);
  CHECK(slots2 == std::vector<int>{1});
  CHECK(fallback2);
}

TEST_CASE("operation_search rejects an empty data split") {
  SupernetOptions opt;
  opt.cell.num_intermediate_nodes = 1;
  opt.cell.channels = 2;
  opt.input_channels = 1;
  opt.classes = 2;
  for (int i = 1; i < 3; ++i) opt.candidates[{i, 3}] = {OpKind::kSkipConnect};
  Supernet net(opt, 1);
  DataSplit empty;
  empty.channels = 1;
  empty.height = 2;
  empty.width = 2;
  StagePlan plan;
  OptimizerConfig optim;
  CHECK_THROWS_WITH_AS(
      operation_search(net, empty, empty, plan, optim, Rng(1)),
      doctest::Contains("empty data split"), std::invalid_argument);
}

TEST_CASE("training state restores for a bit-identical continuation") {
  Rng rng(55);
  Batch b1 = random_batch(4, 3, 5, 5, 4, rng);
  Batch b2 = random_batch(4, 3, 5, 5, 4, rng);

  auto run_steps = [&](Supernet& net, Sgd& w, Sgd& arch, int from, int to) {
    for (int s = from; s < to; ++s) {
      const Batch& batch = (s % 2 == 0) ? b1 : b2;
      one_level_step(net, w, arch, batch, 0.05, 0.2);
    }
  };

  Supernet full(tiny_stage2_options(), 123);
  Sgd full_w(full.network_params(), 0.9, 3e-4, 5.0);
  Sgd full_arch(full.arch_params(), 0.9, 0.0);
  run_steps(full, full_w, full_arch, 0, 6);

  Supernet first(tiny_stage2_options(), 123);
  Sgd first_w(first.network_params(), 0.9, 3e-4, 5.0);
  Sgd first_arch(first.arch_params(), 0.9, 0.0);
  run_steps(first, first_w, first_arch, 0, 3);
  const nlohmann::json net_state = first.state_to_json();
  const nlohmann::json w_state = sgd_state_to_json(first_w);
  const nlohmann::json arch_state = sgd_state_to_json(first_arch);

  Supernet resumed(tiny_stage2_options(), 999);  // different init, fully restored
  resumed.state_from_json(nlohmann::json::parse(net_state.dump()));
  Sgd resumed_w(resumed.network_params(), 0.9, 3e-4, 5.0);
  Sgd resumed_arch(resumed.arch_params(), 0.9, 0.0);
  sgd_state_from_json(nlohmann::json::parse(w_state.dump()), resumed_w);
  sgd_state_from_json(nlohmann::json::parse(arch_state.dump()), resumed_arch);
  run_steps(resumed, resumed_w, resumed_arch, 3, 6);

  for (std::size_t i = 0; i < full.params().items().size(); ++i) {
    const auto& a = full.params().items()[i].second;
    const auto& b = resumed.params().items()[i].second;
    for (Eigen::Index k = 0; k < a.size(); ++k) CHECK(a.value()[k] == b.value()[k]);
  }
  const std::vector<Tensor> full_arch_params = full.arch_params();
  const std::vector<Tensor> resumed_arch_params = resumed.arch_params();
  REQUIRE(full_arch_params.size() == resumed_arch_params.size());
  for (std::size_t i = 0; i < full_arch_params.size(); ++i) {
    for (Eigen::Index k = 0; k < full_arch_params[i].size(); ++k) {
      CHECK(full_arch_params[i].value()[k] == resumed_arch_params[i].value()[k]);
    }
  }
}
