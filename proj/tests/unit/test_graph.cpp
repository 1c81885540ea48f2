#include <gtest/gtest.h>

#include <sstream>

#include "test_support.hpp"

using namespace mobclip;
using namespace mobclip::graph;
using mobclip::testing::random_graph;

namespace {

const CellId A = CellId::make(6, 0, 0);
const CellId B = CellId::make(6, 1, 0);
const CellId C = CellId::make(6, 0, 1);

double w(const MobilityGraph& g, CellId a, CellId b) { return g.weight(*g.index_of(a), *g.index_of(b)); }

/// Star: hub 0 joined to leaves 1..k with the given weights.
MobilityGraph star(const std::vector<double>& weights) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> e;
  for (std::uint32_t k = 0; k < weights.size(); ++k) e[{0, k + 1}] = weights[k];
  return from_edge_map(mobclip::testing::line_cells(weights.size() + 1), e);
}

}  // namespace

TEST(BuildGraph, CliqueRule) {
  const std::vector<EventRecord> ev{{"u", A, 0}, {"u", B, 0}, {"u", C, 0}};
  const auto g = build_graph(ev);
  EXPECT_EQ(g.node_count(), 3u);
  EXPECT_EQ(g.edge_count(), 3u);
  EXPECT_EQ(w(g, A, B), 1);
  EXPECT_EQ(w(g, A, C), 1);
  EXPECT_EQ(w(g, B, C), 1);
}

TEST(BuildGraph, SingleCellGivesNoEdges) {
  const auto g = build_graph(std::vector<EventRecord>{{"u", A, 0}, {"u", A, 0}});
  EXPECT_EQ(g.edge_count(), 0u);
  EXPECT_EQ(g.node_count(), 1u);
}

TEST(BuildGraph, BucketsSumAndRepeatsCountOnce) {
  const std::vector<EventRecord> ev{{"u", A, 1}, {"u", B, 1}, {"u", A, 2}, {"u", B, 2}, {"u", B, 2}};
  const auto g = build_graph(ev);
  EXPECT_EQ(w(g, A, B), 2);
  EXPECT_EQ(g.edge_count(), 1u);
}

TEST(BuildGraph, EntitiesAreSeparateGroups) {
  const std::vector<EventRecord> ev{{"u", A, 0}, {"v", B, 0}};
  EXPECT_EQ(build_graph(ev).edge_count(), 0u);
}

TEST(BuildGraph, EmptyStream) {
  const auto g = build_graph(std::vector<EventRecord>{});
  EXPECT_EQ(g.node_count(), 0u);
  EXPECT_EQ(g.edge_count(), 0u);
}

TEST(BuildGraph, OrderInvariantAndShardInvariant) {
  std::mt19937_64 rng(1);
  std::vector<EventRecord> ev;
  std::uniform_int_distribution<int> cell(0, 30), ent(0, 40), bucket(0, 5);
  for (int i = 0; i < 2000; ++i)
    ev.push_back({"e" + std::to_string(ent(rng)), CellId::make(6, cell(rng), 0), bucket(rng)});
  const auto ref = build_graph(ev);
  ref.validate();
  for (int t = 0; t < 10; ++t) {
    std::shuffle(ev.begin(), ev.end(), rng);
    EXPECT_EQ(build_graph(ev), ref);
    EXPECT_EQ(build_graph(ev, 3), ref);
  }
}

TEST(BuildGraph, NegativeBucketRejected) {
  GraphBuilder b;
  EXPECT_THROW(b.add({"u", A, -1}), ValidationError);
}

TEST(Graph, ValidateCatchesAsymmetry) {
  const std::vector<CellId> nodes{A, B};
  EXPECT_THROW(MobilityGraph(nodes, {0, 1, 2}, {1, 0}, {1.0, 2.0}), ValidationError);
  EXPECT_THROW(MobilityGraph(nodes, {0, 1, 1}, {0}, {1.0}), ValidationError);
  EXPECT_THROW(MobilityGraph(nodes, {0, 1, 2}, {1, 0}, {-1.0, -1.0}), ValidationError);
}

TEST(TopK, KeepsHighestWeight) {
  const auto g = star({10, 5, 1});
  const auto kept = select_topk(g, 0.10);
  ASSERT_EQ(kept[0].size(), 1u);
  EXPECT_EQ(kept[0][0], 1u);  // the weight-10 leaf
  const auto s = sample_topk(g, 0.10);
  // Each leaf has degree 1 and keeps its only edge, so the union restores all three.
  EXPECT_EQ(s.edge_count(), 3u);
}

TEST(TopK, KeepCount) {
  EXPECT_EQ(keep_count(0.1, 3), 1u);
  EXPECT_EQ(keep_count(0.1, 30), 3u);
  EXPECT_EQ(keep_count(0.1, 31), 4u);
  EXPECT_EQ(keep_count(0.5, 1), 1u);
  EXPECT_EQ(keep_count(1.0, 7), 7u);
  EXPECT_EQ(keep_count(0.3, 0), 0u);
}

TEST(TopK, TieBreakPrefersSmallerCellId) {
  const auto g = star({4, 4, 4, 2});
  const auto kept = select_topk(g, 0.5);
  ASSERT_EQ(kept[0].size(), 2u);
  EXPECT_EQ(kept[0][0], 1u);
  EXPECT_EQ(kept[0][1], 2u);
}

TEST(TopK, RatioOneIsIdentity) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 20; ++t) {
    const auto g = random_graph(15, 0.3, rng);
    EXPECT_EQ(sample_topk(g, 1.0), g);
  }
}

TEST(TopK, RandomGraphsMatchSortOracle) {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> ratio(0.01, 1.0);
  for (int t = 0; t < 100; ++t) {
    const auto g = random_graph(20, 0.4, rng, 4);
    const double r = ratio(rng);
    const auto kept = select_topk(g, r);
    for (std::size_t i = 0; i < g.node_count(); ++i) {
      // Oracle: rank every neighbor by (weight desc, cell id asc).
      std::vector<std::pair<double, CellId>> all;
      for (auto j : g.neighbors(i)) all.push_back({g.weight(i, j), g.nodes()[j]});
      std::sort(all.begin(), all.end(), [](auto& a, auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
      const auto k = static_cast<std::size_t>(std::ceil(r * static_cast<double>(all.size()) - 1e-9));
      std::set<std::uint32_t> want;
      for (std::size_t t2 = 0; t2 < std::max<std::size_t>(k, all.empty() ? 0 : 1) && t2 < all.size(); ++t2)
        want.insert(static_cast<std::uint32_t>(*g.index_of(all[t2].second)));
      EXPECT_EQ(std::set<std::uint32_t>(kept[i].begin(), kept[i].end()), want);
    }
    const auto s = sample_topk(g, r);
    s.validate();
    EXPECT_EQ(s.nodes(), g.nodes());
    for (std::size_t i = 0; i < s.node_count(); ++i)
      for (auto j : s.neighbors(i)) EXPECT_EQ(s.weight(i, j), g.weight(i, j));
  }
}

TEST(TopK, MonotoneNesting) {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto g = random_graph(18, 0.5, rng, 3);
    std::vector<double> ratios{0.05, 0.1, 0.2, 0.35, 0.5, 0.8, 1.0};
    for (std::size_t k = 0; k + 1 < ratios.size(); ++k) {
      const auto lo = select_topk(g, ratios[k]);
      const auto hi = select_topk(g, ratios[k + 1]);
      for (std::size_t i = 0; i < g.node_count(); ++i)
        EXPECT_TRUE(std::includes(hi[i].begin(), hi[i].end(), lo[i].begin(), lo[i].end()));
    }
  }
}

TEST(TopK, EveryNonIsolatedNodeKeepsAnEdge) {
  std::mt19937_64 rng(5);
  const auto g = random_graph(40, 0.2, rng);
  const auto s = sample_topk(g, 0.01);
  for (std::size_t i = 0; i < g.node_count(); ++i)
    if (g.degree(i) > 0) EXPECT_GT(s.degree(i), 0u);
}

TEST(TopK, RatioValidation) {
  const auto g = star({1, 2});
  EXPECT_THROW(sample_topk(g, 0.0), ValidationError);
  EXPECT_THROW(sample_topk(g, 1.5), ValidationError);
  EXPECT_THROW(sample_random(g, -0.1, 1), ValidationError);
}

TEST(RandomSample, IdentityDeterminismAndStructure) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 20; ++t) {
    const auto g = random_graph(16, 0.4, rng);
    EXPECT_EQ(sample_random(g, 1.0, rng()), g);
    const auto seed = rng();
    const auto a = sample_random(g, 0.3, seed);
    EXPECT_EQ(a, sample_random(g, 0.3, seed));
    a.validate();
    for (std::size_t i = 0; i < a.node_count(); ++i)
      for (auto j : a.neighbors(i)) EXPECT_EQ(a.weight(i, j), g.weight(i, j));
    const auto kept = select_random(g, 0.3, seed);
    for (std::size_t i = 0; i < g.node_count(); ++i) EXPECT_EQ(kept[i].size(), keep_count(0.3, g.degree(i)));
  }
}

TEST(RandomSample, StarEdgeFrequencyWithinThreeSigma) {
  // Per-node selection at the hub of a 10-edge star: ceil(0.25 * 10) = 3
  // edges, so each edge is kept with probability 3/10.
  const auto g = star(std::vector<double>(10, 1.0));
  const int trials = 10'000;
  std::vector<int> hits(11, 0);
  for (int s = 0; s < trials; ++s) {
    const auto kept = select_random(g, 0.25, static_cast<std::uint64_t>(s));
    for (auto j : kept[0]) ++hits[j];
  }
  const double p = 0.3;
  const double sigma = std::sqrt(trials * p * (1 - p));
  for (int j = 1; j <= 10; ++j) EXPECT_NEAR(hits[j], trials * p, 3 * sigma) << "leaf " << j;
}

TEST(GraphIO, EventsBothLayouts) {
  const auto grid = hexgrid::GridConfig::level6_analog({31.0, 121.0}, 31.0);
  std::istringstream is("# comment\nu\t" + std::to_string(A.packed()) + "\t3\nv\t31.0\t121.0\t4\n\n");
  std::vector<EventRecord> got;
  read_events(is, &grid, [&](EventRecord&& e) { got.push_back(std::move(e)); });
  ASSERT_EQ(got.size(), 2u);
  EXPECT_EQ(got[0].cell, A);
  EXPECT_EQ(got[0].bucket, 3);
  EXPECT_EQ(got[1].cell, CellId::make(6, 0, 0));
  EXPECT_EQ(got[1].entity_id, "v");
}

TEST(GraphIO, MalformedEventsReportLine) {
  auto expect_line = [](const std::string& text, std::int64_t line) {
    std::istringstream is(text);
    try {
      read_events(is, nullptr, [](EventRecord&&) {});
      FAIL() << "no error for: " << text;
    } catch (const ParseError& e) {
      EXPECT_EQ(e.line(), line) << e.what();
    }
  };
  expect_line("u\t1\t0\nu\tx\t0\n", 2);
  expect_line("u\t1\n", 1);
  expect_line("u\t1\t0\n\nu\t1\t-2\n", 3);
  expect_line("u\t31\t121\t0\n", 1);  // lat/lon rows need a grid
}

TEST(GraphIO, BinaryRoundTripAndTruncation) {
  std::mt19937_64 rng(8);
  const auto g = random_graph(25, 0.3, rng);
  std::ostringstream os;
  write_graph(os, g);
  const std::string bytes = os.str();
  std::istringstream is(bytes);
  EXPECT_EQ(read_graph(is), g);
  EXPECT_EQ(bytes.substr(0, 4), "MGR1");
  std::istringstream cut(bytes.substr(0, bytes.size() - 3));
  try {
    read_graph(cut);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_GE(e.byte_offset(), static_cast<std::int64_t>(bytes.size()) - 8);
  }
  std::istringstream bad("MGR2" + bytes.substr(4));
  EXPECT_THROW(read_graph(bad), ParseError);
}

TEST(GraphIO, EdgeListRoundTripSumsDuplicates) {
  std::mt19937_64 rng(9);
  const auto g = random_graph(12, 0.5, rng);
  std::ostringstream os;
  write_edge_list(os, g);
  std::istringstream is(os.str());
  const auto back = read_edge_list(is);
  // Isolated nodes do not appear in an edge list.
  EXPECT_EQ(back.edge_count(), g.edge_count());
  for (std::size_t i = 0; i < back.node_count(); ++i)
    for (auto j : back.neighbors(i))
      EXPECT_EQ(back.weight(i, j), w(g, back.nodes()[i], back.nodes()[j]));
  std::istringstream dup(std::to_string(A.packed()) + "\t" + std::to_string(B.packed()) + "\t2\n" +
                         std::to_string(B.packed()) + "\t" + std::to_string(A.packed()) + "\t3\n");
  EXPECT_EQ(w(read_edge_list(dup), A, B), 5.0);
}
