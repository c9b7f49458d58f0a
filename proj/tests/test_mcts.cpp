#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "coopmcts/error.hpp"
#include "coopmcts/mcts.hpp"

using namespace coopmcts;

namespace {

Scene empty_road(double v = 10, double v_desired = 15) {
  Scene s;
  s.lanes = {{0, 0.0, 3.5}};
  s.road_length = 1000;
  AgentState a;
  a.x = 20;
  a.v = v;
  a.v_desired = v_desired;
  s.agents = {a};
  return s;
}

Scene two_agents() {
  Scene s;
  s.lanes = {{0, 0.0, 3.5}, {1, 3.5, 3.5}};
  s.road_length = 1000;
  AgentState a;
  a.x = 20;
  a.v = 10;
  a.v_desired = 10;
  AgentState b = a;
  b.x = 35;
  b.y = 3.5;
  b.lane_desired = 1;
  s.agents = {a, b};
  return s;
}

// Asymptotic two-sample Kolmogorov-Smirnov p-value.
double ks_p_value(std::vector<double> a, std::vector<double> b) {
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  double d = 0;
  std::size_t i = 0, j = 0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / a.size() - static_cast<double>(j) / b.size()));
  }
  const double ne = static_cast<double>(a.size()) * b.size() / (a.size() + b.size());
  const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
  double q = 0;
  for (int k = 1; k <= 100; ++k) q += 2 * ((k % 2) ? 1 : -1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(q, 0.0, 1.0);
}

void expect_consistent(const SearchTree& tree) {
  for (std::size_t n = 0; n < tree.nodes.size(); ++n) {
    const Node& node = tree.nodes[n];
    int sum = 0;
    for (const Edge& e : node.edges) {
      sum += e.visits;
      ASSERT_GE(e.visits, 1);
      ASSERT_TRUE(std::isfinite(e.q));
      ASSERT_NEAR(e.q, e.return_sum / e.visits, 1e-9 * std::max(1.0, std::abs(e.q)));
    }
    ASSERT_EQ(node.visits, 1 + sum) << "node " << n;
  }
}

}  // namespace

TEST(Uct, Examples) {
  EXPECT_DOUBLE_EQ(uct(1, 4, 1, 1), 3.0);
  EXPECT_DOUBLE_EQ(uct(1, 4, 1, 1, 0.5), 2.0);
  EXPECT_EQ(uct(0.3, 17, 5, 1.4, 1.0), uct(0.3, 17, 5, 1.4));
  EXPECT_DOUBLE_EQ(uct(0, 100, 4, 2, 1, UctMode::kSqrtLogRatio), 2 * std::sqrt(std::log(100.0) / 4));
}

TEST(Expandable, WideningLaw) {
  EXPECT_TRUE(expandable(0, 1, 2.0, 0.5));
  EXPECT_FALSE(expandable(2, 1, 2.0, 0.5));
  EXPECT_TRUE(expandable(19, 100, 2.0, 0.5));
  EXPECT_FALSE(expandable(20, 100, 2.0, 0.5));
}

TEST(Select, Examples) {
  SearchConfig cfg;
  Node node;
  node.visits = 2;
  node.edges = {Edge{{}, 1, 0.5}};
  EXPECT_EQ(select(node, cfg), 0);

  node.visits = 5;
  node.edges = {Edge{{}, 2, 0.0}, Edge{{}, 2, 1.0}};
  EXPECT_EQ(select(node, cfg), 1);

  node.edges = {Edge{{}, 2, 1.0}, Edge{{}, 2, 1.0}};
  EXPECT_EQ(select(node, cfg), 0);
}

TEST(Select, InvariantToConstantShift) {
  Rng rng(1);
  std::uniform_real_distribution<double> q(-50, 50), shift(-1000, 1000);
  std::uniform_int_distribution<int> n(1, 30);
  SearchConfig cfg;
  for (int trial = 0; trial < 500; ++trial) {
    Node node;
    node.visits = 1;
    for (int i = 0; i < 6; ++i) {
      node.edges.push_back(Edge{{}, n(rng), q(rng)});
      node.visits += node.edges.back().visits;
    }
    const int before = select(node, cfg);
    const double c = std::round(shift(rng));  // exact in binary, so ties survive too
    for (auto& e : node.edges) e.q += c;
    ASSERT_EQ(select(node, cfg), before);
  }
}

TEST(ExpandUniform, CollapsedBounds) {
  Rng rng(2);
  const ActionBounds point{1.5, 1.5, -0.5, -0.5};
  const JointAction a = sample_uniform_action(3, rng, point);
  for (const auto& x : a) EXPECT_EQ(x, (Action{1.5, -0.5}));
}

TEST(ExpandUniform, MeanAtMidpoint) {
  Rng rng(3);
  const ActionBounds b{-2, 6, -3, 1};
  double dv = 0, dy = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const JointAction a = sample_uniform_action(1, rng, b);
    ASSERT_TRUE(b.contains(a[0]));
    dv += a[0].dv;
    dy += a[0].dy;
  }
  EXPECT_NEAR(dv / n, 2.0, 0.02 * 8);
  EXPECT_NEAR(dy / n, -1.0, 0.02 * 4);
}

TEST(ExpandUniform, SeedReproducible) {
  Rng a(4), b(4);
  for (int i = 0; i < 100; ++i) ASSERT_EQ(sample_uniform_action(2, a, {}), sample_uniform_action(2, b, {}));
}

TEST(ExpandBiased, NearDeltaHitsTarget) {
  Rng rng(5);
  AgentPriors priors = {FactoredActionGmm{Gmm1D::single(2.0, 1e-10), Gmm1D::single(-1.0, 1e-10)}};
  for (int i = 0; i < 100; ++i) {
    const JointAction a = sample_biased_action(priors, 1, rng, {});
    EXPECT_NEAR(a[0].dv, 2.0, 1e-3);
    EXPECT_NEAR(a[0].dy, -1.0, 1e-3);
  }
}

TEST(ExpandBiased, WideMixtureIndistinguishableFromUniform) {
  const ActionBounds b;
  // Centred with a standard deviation equal to the range width: inside the
  // bounds the truncated density is within a few percent of flat.
  const AgentPriors priors = {
      FactoredActionGmm{Gmm1D::single(0.0, 10.0 * 10.0), Gmm1D::single(0.0, 7.0 * 7.0)}};
  Rng r1(6), r2(7);
  std::vector<double> bdv, bdy, udv, udy;
  for (int i = 0; i < 10000; ++i) {
    const JointAction x = sample_biased_action(priors, 1, r1, b);
    const JointAction y = sample_uniform_action(1, r2, b);
    bdv.push_back(x[0].dv);
    bdy.push_back(x[0].dy);
    udv.push_back(y[0].dv);
    udy.push_back(y[0].dy);
  }
  EXPECT_GT(ks_p_value(bdv, udv), 0.01);
  EXPECT_GT(ks_p_value(bdy, udy), 0.01);
  // Sanity check of the test itself: a narrow mixture is detected.
  const AgentPriors narrow = {FactoredActionGmm{Gmm1D::single(0.0, 1.0), Gmm1D::single(0.0, 1.0)}};
  std::vector<double> ndv;
  for (int i = 0; i < 10000; ++i) ndv.push_back(sample_biased_action(narrow, 1, r1, b)[0].dv);
  EXPECT_LT(ks_p_value(ndv, udv), 1e-6);
}

TEST(ExpandBiased, SeedsReproduceAndFallbackReported) {
  const AgentPriors priors = {std::nullopt, FactoredActionGmm{Gmm1D::single(1, 0.5), Gmm1D::single(0, 0.5)}};
  Rng a(8), b(8);
  std::vector<int> fa, fb;
  for (int i = 0; i < 50; ++i)
    ASSERT_EQ(sample_biased_action(priors, 2, a, {}, &fa), sample_biased_action(priors, 2, b, {}, &fb));
  EXPECT_EQ(fa.size(), 50u);
  EXPECT_TRUE(std::all_of(fa.begin(), fa.end(), [](int i) { return i == 0; }));
}

TEST(NormalizedPrior, Bounds) {
  const AgentPriors p = {FactoredActionGmm{Gmm1D::single(1, 0.25), Gmm1D::single(0, 0.25)}};
  EXPECT_NEAR(normalized_prior(p, {{1, 0}}, 0.05), 1.0, 1e-12);
  EXPECT_EQ(normalized_prior(p, {{-5, 3}}, 0.05), 0.05);
  const double mid = normalized_prior(p, {{1.5, 0}}, 0.05);
  EXPECT_NEAR(mid, std::exp(-0.25 / (2 * 0.25)), 1e-12);
  EXPECT_EQ(normalized_prior({std::nullopt}, {{3, 3}}, 0.05), 1.0);
}

TEST(Simulate, LeafAtHorizonIsZero) {
  const Scene s = empty_road();
  SearchConfig cfg;
  Rng rng(9);
  const CollisionChecker checker(s);
  EXPECT_EQ(simulate(s, checker, s.agents, cfg.horizon, rng, cfg), 0.0);
}

TEST(Simulate, IdleAtGoalIsZero) {
  const Scene s = empty_road(12, 12);
  SearchConfig cfg;
  cfg.bounds = {0, 0, 0, 0};
  Rng rng(10);
  const CollisionChecker checker(s);
  EXPECT_EQ(simulate(s, checker, s.agents, 0, rng, cfg), 0.0);
}

TEST(Simulate, ForcedCollisionPenalized) {
  Scene s = empty_road(10, 10);
  s.obstacles = {{30.0, 0.0, 2.0, 3.5}};
  SearchConfig cfg;
  cfg.bounds = {0, 0, 0, 0};
  Rng rng(11);
  const CollisionChecker checker(s);
  EXPECT_LE(simulate(s, checker, s.agents, 0, rng, cfg), cfg.reward.collision_penalty);
}

TEST(Backpropagate, Examples) {
  SearchTree tree;
  tree.nodes.resize(2);
  tree.nodes[0].edges = {Edge{}};
  tree.nodes[0].edges[0].child = 1;
  const std::vector<PathStep> path{{0, 0}};
  backpropagate(tree, path, 7.0);
  EXPECT_EQ(tree.nodes[0].edges[0].q, 7.0);
  tree.nodes[0].edges[0] = Edge{};
  tree.nodes[0].visits = 1;
  backpropagate(tree, path, 2.0);
  backpropagate(tree, path, 4.0);
  EXPECT_EQ(tree.nodes[0].edges[0].q, 3.0);
  EXPECT_EQ(tree.nodes[0].visits, 3);
}

TEST(Backpropagate, MatchesBatchMean) {
  Rng rng(12);
  std::uniform_real_distribution<double> r(-1000, 100);
  std::uniform_int_distribution<int> len(1, 500);
  for (int seq = 0; seq < 1000; ++seq) {
    SearchTree tree;
    tree.nodes.resize(2);
    tree.nodes[0].edges = {Edge{}};
    const std::vector<PathStep> path{{0, 0}};
    std::vector<double> returns(len(rng));
    for (double& x : returns) {
      x = r(rng);
      backpropagate(tree, path, x);
    }
    const double mean = std::accumulate(returns.begin(), returns.end(), 0.0) / returns.size();
    ASSERT_LE(std::abs(tree.nodes[0].edges[0].q - mean), 1e-9 * std::max(1.0, std::abs(mean)));
  }
}

TEST(Search, OneIterationOneChild) {
  SearchConfig cfg;
  cfg.iterations = 1;
  const SearchResult r = search(two_agents(), cfg);
  ASSERT_EQ(r.root_children.size(), 1u);
  EXPECT_EQ(r.best, r.root_children[0].action);
  EXPECT_EQ(r.best_index, 0);
}

TEST(Search, TreeBookkeepingHolds) {
  for (int iterations : {1, 2, 7, 50, 400}) {
    SearchConfig cfg;
    cfg.seed = iterations;
    Planner p(two_agents(), cfg);
    p.run(iterations);
    expect_consistent(p.tree());
    EXPECT_EQ(p.tree().root().visits, iterations + 1);
  }
}

TEST(Search, AnytimeAndBestIsMostVisited) {
  SearchConfig cfg;
  cfg.seed = 3;
  Planner p(two_agents(), cfg);
  for (int i = 1; i <= 200; ++i) {
    p.iterate();
    const SearchResult r = p.result();
    ASSERT_GE(r.best_index, 0);
    for (const auto& c : r.root_children) {
      ASSERT_LE(c.visits, r.root_children[r.best_index].visits);
      if (c.visits == r.root_children[r.best_index].visits) ASSERT_LE(c.q, r.root_children[r.best_index].q);
    }
  }
}

TEST(Search, DeterministicUnderSeed) {
  SearchConfig cfg;
  cfg.iterations = 300;
  cfg.seed = 42;
  const SearchResult a = search(two_agents(), cfg);
  const SearchResult b = search(two_agents(), cfg);
  EXPECT_EQ(a.best, b.best);
  EXPECT_EQ(a.iteration_returns, b.iteration_returns);
}

TEST(Search, MdnWithoutIntegrationEqualsBaseline) {
  const MdnWeights w = MdnWeights::zeros(MdnMetadata{});
  const FunctionPrior no_prior([](std::span<const Scene> h) { return AgentPriors(h.back().agents.size()); });
  SearchConfig base;
  base.iterations = 300;
  base.seed = 5;
  const SearchResult b = search(two_agents(), base);

  SearchConfig mdn = base;
  mdn.strategy = Strategy::kMdn;
  mdn.integration = Integration::kNone;
  const SearchResult m1 = search(two_agents(), mdn, &w);
  EXPECT_EQ(m1.iteration_returns, b.iteration_returns);
  EXPECT_EQ(m1.best, b.best);

  // Selection weighting with a prior that is identically 1.
  mdn.selection_bias = true;
  const SearchResult m2 = search(two_agents(), mdn, &no_prior);
  EXPECT_EQ(m2.iteration_returns, b.iteration_returns);
}

TEST(Search, MdnStrategyRequiresPrior) {
  SearchConfig cfg;
  cfg.strategy = Strategy::kMdn;
  EXPECT_THROW(search(two_agents(), cfg), ConfigError);
}

TEST(Search, RootIntegrationPredictsOnce) {
  int calls = 0;
  const FunctionPrior counting([&](std::span<const Scene> h) {
    ++calls;
    return AgentPriors(h.back().agents.size(),
                       FactoredActionGmm{Gmm1D::single(0, 1), Gmm1D::single(0, 0.5)});
  });
  SearchConfig cfg;
  cfg.iterations = 200;
  cfg.strategy = Strategy::kMdn;
  cfg.integration = Integration::kRoot;
  Planner root(two_agents(), cfg, &counting);
  root.run(200);
  EXPECT_EQ(calls, 1);

  calls = 0;
  cfg.integration = Integration::kAll;
  Planner all(two_agents(), cfg, &counting);
  all.run(200);
  int expanded = 0;
  for (const auto& n : all.tree().nodes) expanded += n.edges.empty() ? 0 : 1;
  EXPECT_EQ(calls, expanded);
  EXPECT_EQ(all.fallback_count(), 0);
}

TEST(Search, NearDeltaPriorConcentratesRootChildren) {
  const FunctionPrior spike([](std::span<const Scene> h) {
    return AgentPriors(h.back().agents.size(),
                       FactoredActionGmm{Gmm1D::single(1.0, 1e-8), Gmm1D::single(0.0, 1e-8)});
  });
  SearchConfig cfg;
  cfg.iterations = 100;
  cfg.strategy = Strategy::kMdn;
  const SearchResult r = search(two_agents(), cfg, &spike);
  for (const auto& c : r.root_children)
    for (const auto& a : c.action) {
      EXPECT_NEAR(a.dv, 1.0, 1e-3);
      EXPECT_NEAR(a.dy, 0.0, 1e-3);
    }
}

TEST(Search, EmptyRoadImprovesOnUniform) {
  // Expected |v' - v_desired| under a uniform dv on [-5, 5] with v = 10,
  // v_desired = 15: E|dv - 5| = 5.
  int better = 0;
  for (int seed = 0; seed < 5; ++seed) {
    SearchConfig cfg;
    cfg.iterations = 500;
    cfg.seed = seed;
    const SearchResult r = search(empty_road(), cfg);
    if (std::abs(10 + r.best[0].dv - 15) < 5.0) ++better;
  }
  EXPECT_EQ(better, 5);
}

TEST(Standalone, NearDeltaReturnsSpike) {
  Rng rng(13);
  const AgentPriors p = {FactoredActionGmm{Gmm1D::single(-2, 1e-10), Gmm1D::single(1, 1e-10)}};
  const JointAction a = standalone_policy(p, 1, rng, {});
  EXPECT_NEAR(a[0].dv, -2, 1e-3);
  EXPECT_NEAR(a[0].dy, 1, 1e-3);
}

TEST(Standalone, BimodalPicksAMode) {
  const Gmm1D bimodal{{0.5, 0.5}, {-2, 2}, {0.1, 0.1}};
  const FactoredActionGmm f{bimodal, Gmm1D::single(0, 0.1)};
  const double mode_density = joint_density(f, {2, 0});
  for (int seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const JointAction a = standalone_policy({f}, 1, rng, {});
    EXPECT_GE(joint_density(f, a[0]), 0.99 * mode_density);
  }
}

TEST(Standalone, Deterministic) {
  const AgentPriors p = {FactoredActionGmm{Gmm1D{{0.3, 0.7}, {-1, 2}, {1, 2}}, Gmm1D::single(0, 1)}};
  Rng a(14), b(14);
  EXPECT_EQ(standalone_policy(p, 1, a, {}), standalone_policy(p, 1, b, {}));
}

TEST(MdnPrior, MapsSlotsToAgents) {
  MdnMetadata m;
  m.features.grid_rows = 32;
  m.features.grid_cols = 16;
  m.n1 = m.n2 = m.n3 = m.n4 = m.n5 = 8;
  const MdnWeights w = MdnWeights::random(m, 15);
  const MdnPrior prior(w);
  const std::vector<Scene> h{two_agents()};
  const AgentPriors p = prior.predict(h);
  ASSERT_EQ(p.size(), 2u);
  ASSERT_TRUE(p[0] && p[1]);
  const MdnPrediction raw = predict_policy(w, h, 0);
  EXPECT_EQ(*p[0], raw.slots[0]);
  EXPECT_EQ(*p[1], raw.slots[1]);

  Rng rng(16);
  const JointAction a = mdn_standalone_policy(w, h, rng, 100);
  EXPECT_EQ(a.size(), 2u);
}

TEST(SearchConfig, Validation) {
  SearchConfig cfg;
  cfg.c = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.pw_alpha = 1.5;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.prior_floor = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_strategy("mdn"), Strategy::kMdn);
  EXPECT_EQ(parse_integration("all"), Integration::kAll);
  EXPECT_THROW(parse_integration("leaf"), ConfigError);
}
