#include <gtest/gtest.h>

#include "test_support.hpp"

using namespace mobclip;
using namespace mobclip::mobenc;
using mobclip::testing::rel_err;

namespace {

/// Dense normalized adjacency built from degrees of the binary adjacency.
Eigen::MatrixXd dense_norm(const graph::MobilityGraph& g, NormMode mode) {
  const Eigen::MatrixXd w = mobclip::testing::dense_weights(g);
  const Eigen::MatrixXd adj = (w.array() > 0).cast<double>();
  const Eigen::VectorXd deg = adj.rowwise().sum();
  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(adj.rows(), adj.cols());
  for (Eigen::Index i = 0; i < adj.rows(); ++i)
    for (Eigen::Index j = 0; j < adj.cols(); ++j)
      if (adj(i, j) > 0) a(i, j) = mode == NormMode::symmetric ? 1.0 / std::sqrt(deg[i] * deg[j]) : 1.0 / std::sqrt(deg[i]);
  return a;
}

Eigen::MatrixXd dense_sum_of_powers(const Eigen::MatrixXd& a, int layers) {
  Eigen::MatrixXd out = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  Eigen::MatrixXd p = out;
  for (int l = 0; l < layers; ++l) {
    p = a * p;
    out += p;
  }
  return out;
}

}  // namespace

TEST(LightGcn, ZeroLayersIsIdentity) {
  std::mt19937_64 rng(1);
  const auto g = mobclip::testing::random_graph(9, 0.4, rng);
  const RowMatrixXd x = mobclip::testing::gaussian(9, 4, rng);
  EXPECT_EQ(propagate(x, make_plan(g, 0)), x);
  EXPECT_EQ(propagate_backward(x, make_plan(g, 0)), x);
}

TEST(LightGcn, ThreeNodePath) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> e{{{0, 1}, 3.0}, {{1, 2}, 1.0}};
  const auto g = graph::from_edge_map(mobclip::testing::line_cells(3), e);
  const RowMatrixXd out = propagate<double>(RowMatrixXd::Identity(3, 3), make_plan(g, 1, NormMode::symmetric));
  const double s = 1.0 / std::sqrt(2.0);
  Eigen::Matrix3d want;
  want << 1, s, 0, s, 1, s, 0, s, 1;
  EXPECT_LT((out - want).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(LightGcn, IsolatedNodeKeepsItsRow) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> e{{{0, 1}, 1.0}};
  const auto g = graph::from_edge_map(mobclip::testing::line_cells(3), e);
  std::mt19937_64 rng(2);
  const RowMatrixXd x = mobclip::testing::gaussian(3, 5, rng);
  for (int layers : {0, 1, 4}) EXPECT_EQ(propagate(x, make_plan(g, layers)).row(2), x.row(2));
}

TEST(LightGcn, MatchesDenseOracle) {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> nodes(1, 12);
  std::uniform_real_distribution<double> dens(0.1, 0.9);
  for (int t = 0; t < 100; ++t) {
    const auto g = mobclip::testing::random_graph(static_cast<std::size_t>(nodes(rng)), dens(rng), rng);
    const RowMatrixXd x = mobclip::testing::gaussian(static_cast<Eigen::Index>(g.node_count()), 6, rng);
    for (auto mode : {NormMode::symmetric, NormMode::row})
      for (int layers = 0; layers <= 3; ++layers) {
        const Eigen::MatrixXd m = dense_sum_of_powers(dense_norm(g, mode), layers);
        const auto plan = make_plan(g, layers, mode);
        EXPECT_LT((propagate(x, plan) - m * x).cwiseAbs().maxCoeff(), 1e-10);
        EXPECT_LT((propagate_backward(x, plan) - m.transpose() * x).cwiseAbs().maxCoeff(), 1e-10);
      }
  }
}

TEST(LightGcn, Linearity) {
  std::mt19937_64 rng(4);
  const auto g = mobclip::testing::random_graph(10, 0.4, rng);
  const auto plan = make_plan(g, 3);
  const RowMatrixXd x = mobclip::testing::gaussian(10, 4, rng), y = mobclip::testing::gaussian(10, 4, rng);
  const double a = 0.7, b = -2.5;
  const RowMatrixXd lhs = propagate<double>(a * x + b * y, plan);
  const RowMatrixXd rhs = a * propagate(x, plan) + b * propagate(y, plan);
  EXPECT_LT((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(LightGcn, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(5);
  for (auto mode : {NormMode::symmetric, NormMode::row})
    for (int t = 0; t < 20; ++t) {
      const auto g = mobclip::testing::random_graph(8, 0.4, rng);
      const auto plan = make_plan(g, 2, mode);
      RowMatrixXd x = mobclip::testing::gaussian(8, 3, rng);
      const RowMatrixXd w = mobclip::testing::gaussian(8, 3, rng);
      auto f = [&] { return (propagate(x, plan).array() * w.array()).sum(); };
      const RowMatrixXd grad = propagate_backward(w, plan);
      const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(grad.data(), grad.size());
      EXPECT_LT(rel_err(flat, mobclip::testing::numeric_grad(x.data(), x.size(), f)), 1e-6);
    }
}

TEST(LightGcn, SymmetricAdjointEqualsForward) {
  std::mt19937_64 rng(6);
  const auto g = mobclip::testing::random_graph(11, 0.3, rng);
  const auto plan = make_plan(g, 2, NormMode::symmetric);
  const RowMatrixXd x = mobclip::testing::gaussian(11, 5, rng);
  EXPECT_LT((propagate(x, plan) - propagate_backward(x, plan)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(LightGcn, EdgeWeightsAreIgnored) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> e1{{{0, 1}, 1.0}, {{1, 2}, 1.0}};
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> e2{{{0, 1}, 9.0}, {{1, 2}, 0.5}};
  const auto cells = mobclip::testing::line_cells(3);
  const auto p1 = make_plan(graph::from_edge_map(cells, e1));
  const auto p2 = make_plan(graph::from_edge_map(cells, e2));
  EXPECT_EQ(p1.values, p2.values);
}

TEST(LightGcn, EncoderHasOnlyTheNodeTable) {
  std::mt19937_64 rng(7);
  const auto g = mobclip::testing::random_graph(6, 0.5, rng);
  MobilityEncoder enc{mobclip::testing::gaussian(6, 4, rng), make_plan(g, 2)};
  EXPECT_EQ(enc.parameter_count(), 24u);
  // Propagation output is invariant to anything but the table: identical
  // tables give identical outputs and the plan holds no trainable state.
  static_assert(std::is_same_v<decltype(PropagationPlan::values), std::vector<double>>);
  EXPECT_EQ(enc.forward(), propagate(enc.table, enc.plan));
}

TEST(LightGcn, ShapeMismatch) {
  std::mt19937_64 rng(8);
  const auto g = mobclip::testing::random_graph(5, 0.5, rng);
  const auto plan = make_plan(g, 2);
  EXPECT_THROW(propagate<double>(RowMatrixXd::Zero(4, 3), plan), ValidationError);
  EXPECT_THROW(propagate_backward<double>(RowMatrixXd::Zero(6, 3), plan), ValidationError);
  EXPECT_THROW(make_plan(g, -1), ConfigError);
  EXPECT_THROW(parse_norm_mode("mean"), ConfigError);
}

TEST(LightGcn, InitFromLineMatchesById) {
  std::map<std::pair<std::uint32_t, std::uint32_t>, double> e{{{0, 1}, 1.0}};
  const auto cells = mobclip::testing::line_cells(3);
  const auto g = graph::from_edge_map(cells, e);
  RowMatrixXd v(2, 2);
  v << 1, 2, 3, 4;
  const EmbeddingTable line({cells[2], cells[0]}, v);
  const RowMatrixXd t = init_from(g, line);
  EXPECT_EQ(t.row(0), v.row(1));
  EXPECT_TRUE(t.row(1).isZero(0));
  EXPECT_EQ(t.row(2), v.row(0));
}
