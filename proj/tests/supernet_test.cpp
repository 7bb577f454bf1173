#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "dots/anneal.hpp"
#include "dots/supernet.hpp"
#include "support/darts_ref.hpp"
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

}  // namespace

TEST_CASE("mixed_forward spec cases") {
  Rng rng(1);
  ParamStore store(rng.child("init"));
  std::vector<OpModule> cands;
  cands.emplace_back(OpKind::kSkipConnect, 4, "t.skip", store);
  cands.emplace_back(OpKind::kZero, 4, "t.zero", store);
  Tensor x = testsupport::randn_leaf({2, 4, 5, 5}, rng, 1.0, false);

  SUBCASE("one-hot weight on skip reproduces the input") {
    Tensor w = Tensor::from({1.0, 0.0}, {2});
    Tensor y = mixed_forward(cands, x, w);
    for (Eigen::Index i = 0; i < x.size(); ++i) CHECK(y.value()[i] == x.value()[i]);
  }

  SUBCASE("all-zero candidates give a zero tensor") {
    std::vector<OpModule> zeros;
    zeros.emplace_back(OpKind::kZero, 4, "t.z1", store);
    zeros.emplace_back(OpKind::kZero, 4, "t.z2", store);
    Tensor y = mixed_forward(zeros, x, Tensor::from({0.25, 0.75}, {2}));
    CHECK((y.value() == 0.0).all());
    CHECK(y.shape() == x.shape());
  }

  SUBCASE("uniform mixture equals the mean of separately computed candidates") {
    std::vector<OpModule> two;
    two.emplace_back(OpKind::kSepConv3x3, 4, "t.sep", store);
    two.emplace_back(OpKind::kMaxPool3x3, 4, "t.max", store);
    Tensor y = mixed_forward(two, x, Tensor::from({0.5, 0.5}, {2}));
    Tensor a = two[0].apply(x);
    Tensor b = two[1].apply(x);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      CHECK(y.value()[i] ==
            doctest::Approx(0.5 * a.value()[i] + 0.5 * b.value()[i]).epsilon(1e-14));
    }
  }

  SUBCASE("empty candidate list is rejected") {
    CHECK_THROWS_WITH_AS(mixed_forward({}, x, Tensor::zeros({1})),
                         doctest::Contains("empty candidate"), std::invalid_argument);
  }
}

TEST_CASE("aggregate_gamma spec cases") {
  SUBCASE("uniform beta over 3 pairwise combinations spreads evenly") {
    TopologySpace space = build_pairwise_space(4, 3);
    Tensor beta = Tensor::from({1.0 / 3, 1.0 / 3, 1.0 / 3}, {3});
    Tensor gamma = aggregate_gamma(beta, space);
    for (int i = 0; i < 3; ++i) {
      CHECK(gamma.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
  }

  SUBCASE("one-hot beta on <1,2> of n=3") {
    TopologySpace space = build_pairwise_space(4, 3);
    Tensor beta = Tensor::from({1.0, 0.0, 0.0}, {3});
    Tensor gamma = aggregate_gamma(beta, space);
    CHECK(gamma.value()[0] == doctest::Approx(0.5));
    CHECK(gamma.value()[1] == doctest::Approx(0.5));
    CHECK(gamma.value()[2] == 0.0);
  }

  SUBCASE("flexible one-hot on the full code") {
    TopologySpace space = build_flexible_space(4, 3);
    Eigen::ArrayXd b = Eigen::ArrayXd::Zero(space.size());
    b[space.size() - 1] = 1.0;  // code [1,1,1]
    Tensor gamma = aggregate_gamma(Tensor::leaf({space.size()}, b), space);
    for (int i = 0; i < 3; ++i) {
      CHECK(gamma.value()[i] == doctest::Approx(1.0 / 3).epsilon(1e-12));
    }
  }

  SUBCASE("gamma sums to one and stays nonnegative for random beta") {
    Rng rng(7);
    for (int n = 2; n <= 6; ++n) {
      for (int policy = 0; policy < 2; ++policy) {
        TopologySpace space = policy == 0 ? build_pairwise_space(n + 1, n)
                                          : build_flexible_space(n + 1, n);
        for (int trial = 0; trial < 50; ++trial) {
          Tensor logits = testsupport::randn_leaf({space.size()}, rng, 2.0, false);
          Tensor beta = softmax_t(logits, 0.5 + rng.uniform());
          Tensor gamma = aggregate_gamma(beta, space);
          CHECK(std::abs(gamma.value().sum() - 1.0) < 1e-9);
          CHECK((gamma.value() >= 0.0).all());
        }
      }
    }
  }

  SUBCASE("gamma is zero exactly where no combination carries the edge") {
    TopologySpace space = build_pairwise_space(5, 4);
    Eigen::ArrayXd b = Eigen::ArrayXd::Zero(space.size());
    b[0] = 0.6;  // <1,2>
    b[1] = 0.4;  // <1,3>
    Tensor gamma = aggregate_gamma(Tensor::leaf({space.size()}, b), space);
    CHECK(gamma.value()[0] > 0.0);
    CHECK(gamma.value()[1] > 0.0);
    CHECK(gamma.value()[2] > 0.0);
    CHECK(gamma.value()[3] == 0.0);
  }

  SUBCASE("combination outside the node's predecessors is rejected") {
    TopologySpace space = build_pairwise_space(4, 3);
    space.combinations[0].mask = 1u << 3;  // slot 3 does not exist for n=3
    Tensor beta = Tensor::from({1.0, 0.0, 0.0}, {3});
    CHECK_THROWS_WITH_AS(aggregate_gamma(beta, space), doctest::Contains("outside"),
                         std::invalid_argument);
  }

  SUBCASE("beta length must match the space") {
    TopologySpace space = build_pairwise_space(4, 3);
    CHECK_THROWS_AS(aggregate_gamma(Tensor::zeros({4}), space), std::invalid_argument);
  }
}

TEST_CASE("node_forward spec cases") {
  Rng rng(21);
  Tensor x1 = testsupport::randn_leaf({1, 3, 4, 4}, rng, 1.0, false);
  Tensor x2 = testsupport::randn_leaf({1, 3, 4, 4}, rng, 1.0, false);

  SUBCASE("one-hot gamma with skip returns the predecessor feature") {
    Tensor gamma = Tensor::from({1.0, 0.0}, {2});
    Tensor y = node_forward({x1, x2}, gamma);
    for (Eigen::Index i = 0; i < y.size(); ++i) CHECK(y.value()[i] == x1.value()[i]);
  }

  SUBCASE("zero features stay zero under any gamma") {
    Tensor z = Tensor::zeros({1, 3, 4, 4});
    Tensor y = node_forward({z, z}, Tensor::from({0.5, 0.5}, {2}));
    CHECK((y.value() == 0.0).all());
  }

  SUBCASE("random two-edge case matches the hand-computed sum") {
    Tensor gamma = Tensor::from({0.3, 0.7}, {2});
    Tensor y = node_forward({x1, x2}, gamma);
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      CHECK(y.value()[i] ==
            doctest::Approx(0.3 * x1.value()[i] + 0.7 * x2.value()[i]).epsilon(1e-14));
    }
  }

  SUBCASE("shape mismatch across predecessors is rejected") {
    Tensor small = Tensor::zeros({1, 2, 4, 4});
    CHECK_THROWS_WITH_AS(node_forward({x1, small}, Tensor::from({0.5, 0.5}, {2})),
                         doctest::Contains("shape mismatch"), std::invalid_argument);
  }
}

TEST_CASE("anneal schedule") {
  SUBCASE("theta derived for 1000 steps from 10 to 0.02") {
    AnnealSchedule s = AnnealSchedule::exponential(10.0, 0.02, 1000);
    CHECK(s.theta == doctest::Approx(0.99380).epsilon(1e-4));
    CHECK(s.temperature_at(0) == 10.0);
    CHECK(std::abs(s.temperature_at(1000) - 0.02) < 1e-9);
  }

  SUBCASE("advance matches the closed form within 1e-12") {
    AnnealSchedule s = AnnealSchedule::exponential(10.0, 0.02, 40);
    long double t0 = 10.0L;
    for (int t = 0; t <= 40; ++t) {
      const long double closed =
          t0 * std::pow(static_cast<long double>(s.theta), static_cast<long double>(t));
      CHECK(std::abs(s.temperature() - static_cast<double>(closed)) < 1e-12);
      if (t > 0) CHECK(s.temperature() < s.temperature_at(t - 1));
      s.advance();
    }
  }

  SUBCASE("constant schedule is allowed for ablations") {
    AnnealSchedule s = AnnealSchedule::constant(1.0, 10);
    s.advance();
    s.advance();
    CHECK(s.temperature() == 1.0);
  }

  SUBCASE("max beta approaches one monotonically as temperature falls") {
    Rng rng(5);
    Eigen::ArrayXd logits(6);
    for (int i = 0; i < 6; ++i) logits[i] = rng.normal();
    logits[2] += 1.0;  // unique max
    AnnealSchedule s = AnnealSchedule::exponential(10.0, 0.02, 39);
    double prev = 0.0;
    for (int t = 0; t <= 39; ++t) {
      const double m = softmax_t_values(logits, s.temperature_at(t)).maxCoeff();
      CHECK(m >= prev);
      prev = m;
    }
    CHECK(prev > 0.999);
  }
}

TEST_CASE("dual temperature") {
  AnnealSchedule beta = AnnealSchedule::exponential(10.0, 0.02, 39);
  AnnealSchedule alpha = dual_temperature(beta, true);
  CHECK(alpha.temperature_at(0) == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(alpha.temperature_at(39) == doctest::Approx(2e-5).epsilon(1e-9));
  for (int t = 0; t <= 39; ++t) {
    CHECK(alpha.temperature_at(t) ==
          doctest::Approx(beta.temperature_at(t) / 1000.0).epsilon(1e-12));
  }
  CHECK_THROWS_AS(dual_temperature(beta, false), std::invalid_argument);

  // Group logits with gap 0.5 at T=0.01 are effectively one-hot.
  Eigen::ArrayXd z(2);
  z << 0.5, 0.0;
  const double top = softmax_t_values(z, 0.01).maxCoeff();
  CHECK(top >= 1.0 - std::exp(-50.0) * 1.0);
}

TEST_CASE("supernet forward matches the independent mixed-cell reference") {
  {
    // 2 intermediate nodes, full candidate set, gamma == 1, T = 1.
    CellSpec cell;
    cell.num_intermediate_nodes = 2;
    cell.channels = 4;
    SupernetOptions opt;
    opt.cell = cell;
    opt.input_channels = 3;
    opt.classes = 5;
    opt.aggregation = NodeAggregation::kSum;
    for (int j = 3; j <= 4; ++j) {
      for (int i = 1; i < j; ++i) {
        opt.candidates[{i, j}] = OperationSet::canonical().ops;
      }
    }
    Supernet net(opt, 2024);

    // Give the architecture weights a non-uniform value.
    Rng arng(77);
    for (RelaxedEdge& re : net.relaxed_edges()) {
      for (Eigen::Index i = 0; i < re.alpha[0].size(); ++i) {
        re.alpha[0].value()[i] = arng.normal();
      }
    }

    Rng rng(31);
    Batch batch = random_batch(3, 3, 6, 6, 5, rng);
    Tensor logits = net.forward_logits(batch);
    testsupport::DartsReference ref(net);
    const std::vector<double> expected = ref.logits(batch);
    REQUIRE(static_cast<std::int64_t>(expected.size()) == logits.size());
    double max_diff = 0.0;
    for (Eigen::Index i = 0; i < logits.size(); ++i) {
      max_diff = std::max(max_diff,
                          std::abs(logits.value()[i] - expected[static_cast<std::size_t>(i)]));
    }
    CHECK(max_diff < 1e-10);
  }
}

TEST_CASE("supernet state round-trips bitwise") {
  CellSpec cell;
  cell.num_intermediate_nodes = 2;
  cell.channels = 4;
  SupernetOptions opt;
  opt.cell = cell;
  opt.input_channels = 3;
  opt.classes = 4;
  opt.aggregation = NodeAggregation::kGammaCombination;
  opt.policy = TopologyPolicy::kPairwise;
  for (int j = 3; j <= 4; ++j) {
    for (int i = 1; i < j; ++i) {
      opt.candidates[{i, j}] = {OpKind::kSkipConnect, OpKind::kSepConv3x3};
    }
  }
  Supernet a(opt, 1);
  Rng rng(9);
  for (auto& [name, t] : a.params().items()) {
    (void)name;
    const_cast<Tensor&>(t).value()[0] += rng.normal();
  }
  const nlohmann::json state = a.state_to_json();
  const std::string text = state.dump();

  Supernet b(opt, 2);
  b.state_from_json(nlohmann::json::parse(text));
  for (std::size_t i = 0; i < a.params().items().size(); ++i) {
    const auto& [an, at] = a.params().items()[i];
    const auto& [bn, bt] = b.params().items()[i];
    REQUIRE(an == bn);
    for (Eigen::Index k = 0; k < at.size(); ++k) CHECK(at.value()[k] == bt.value()[k]);
  }
}

TEST_CASE("standalone network from a genotype") {
  CellSpec cell;
  cell.num_intermediate_nodes = 2;
  cell.channels = 4;
  Genotype g;
  g.policy = TopologyPolicy::kFlexible;
  GenotypeNode n3;
  n3.node = 3;
  n3.code = {1, 0};
  n3.edges = {{1, OpKind::kSkipConnect}};
  GenotypeNode n4;
  n4.node = 4;
  n4.code = {0, 1, 1};
  n4.edges = {{2, OpKind::kSepConv3x3}, {3, OpKind::kMaxPool3x3}};
  g.nodes = {n3, n4};

  Supernet net(standalone_options(g, cell, 3, 4), 11);
  CHECK(net.arch_params().empty());
  Rng rng(3);
  Batch batch = random_batch(2, 3, 5, 5, 4, rng);
  Tensor logits = net.forward_logits(batch);
  CHECK(logits.shape() == Shape{2, 4});
  CHECK(logits.value().isFinite().all());

  // A genotype node with no surviving edges contributes zero features but the
  // network still runs.
  Genotype sparse = g;
  sparse.nodes[1].edges.clear();
  Supernet net2(standalone_options(sparse, cell, 3, 4), 11);
  Tensor logits2 = net2.forward_logits(batch);
  CHECK(logits2.value().isFinite().all());
}
