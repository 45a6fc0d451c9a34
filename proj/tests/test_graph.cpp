#include <gtest/gtest.h>

#include <algorithm>
#include <random>

#include "mgkoop/graph.hpp"

using namespace mgkoop;

namespace {

// 1-based edge list as printed for the two communication topologies.
CommGraph graph_from_one_based(int n, std::vector<std::pair<int, int>> pairs) {
  std::vector<Edge> edges;
  for (auto [a, b] : pairs) edges.push_back({a - 1, b - 1});
  return CommGraph::from_edges(n, edges);
}

CommGraph l1() { return graph_from_one_based(5, {{1, 2}, {2, 3}, {3, 4}, {3, 5}, {1, 4}}); }
CommGraph l2() { return graph_from_one_based(5, {{1, 2}, {1, 3}, {1, 4}, {1, 5}}); }

}  // namespace

TEST(CommGraph, FirstTopologyMatchesPrintedLaplacian) {
  Matrix expected(5, 5);
  expected << 2, -1, 0, -1, 0,
             -1, 2, -1, 0, 0,
              0, -1, 3, -1, -1,
             -1, 0, -1, 2, 0,
              0, 0, -1, 0, 1;
  EXPECT_EQ(l1().laplacian(), expected);
}

TEST(CommGraph, StarTopologyMatchesPrintedLaplacian) {
  Matrix expected(5, 5);
  expected << 4, -1, -1, -1, -1,
             -1, 1, 0, 0, 0,
             -1, 0, 1, 0, 0,
             -1, 0, 0, 1, 0,
             -1, 0, 0, 0, 1;
  EXPECT_EQ(l2().laplacian(), expected);
}

TEST(CommGraph, SingleEdge) {
  const std::vector<Edge> e{{0, 1}};
  Matrix expected(2, 2);
  expected << 1, -1, -1, 1;
  EXPECT_EQ(CommGraph::from_edges(2, e).laplacian(), expected);
}

TEST(CommGraph, RejectsSelfLoopDuplicateAndOutOfRange) {
  const std::vector<Edge> loop{{1, 1}};
  EXPECT_THROW(CommGraph::from_edges(3, loop), std::invalid_argument);
  const std::vector<Edge> dup{{0, 1}, {1, 0}};
  EXPECT_THROW(CommGraph::from_edges(3, dup), std::invalid_argument);
  const std::vector<Edge> range{{0, 3}};
  EXPECT_THROW(CommGraph::from_edges(3, range), std::invalid_argument);
}

TEST(CommGraph, Neighbors) {
  EXPECT_EQ(l1().neighbors(2), (std::vector<int>{1, 3, 4}));
  EXPECT_EQ(l2().neighbors(4), (std::vector<int>{0}));
}

TEST(Connectivity, Examples) {
  const auto c1 = is_connected(l1());
  EXPECT_TRUE(c1.connected);
  EXPECT_GT(c1.algebraic_connectivity, 0.0);

  const std::vector<Edge> split{{0, 1}, {2, 3}};
  const auto c2 = is_connected(CommGraph::from_edges(4, split));
  EXPECT_FALSE(c2.connected);
  EXPECT_NEAR(c2.algebraic_connectivity, 0.0, 1e-9);

  std::vector<Edge> complete;
  for (int a = 0; a < 5; ++a) {
    for (int b = a + 1; b < 5; ++b) complete.push_back({a, b});
  }
  // spectrum of K_n is {0, n, ..., n}
  EXPECT_NEAR(is_connected(CommGraph::from_edges(5, complete)).algebraic_connectivity, 5.0, 1e-9);
}

TEST(Laplacian, PropertiesOnRandomGraphs) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 9);
    std::vector<Edge> edges;
    for (int a = 0; a < n; ++a) {
      for (int b = a + 1; b < n; ++b) {
        if (rng() % 3 == 0) edges.push_back({a, b});
      }
    }
    const CommGraph g = CommGraph::from_edges(n, edges);
    const Matrix& l = g.laplacian();
    EXPECT_EQ((l * Vector::Ones(n)).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(l, l.transpose());
    for (int i = 0; i < n; ++i) {
      EXPECT_GE(l(i, i), 0.0);
      for (int j = 0; j < n; ++j) {
        if (i != j) EXPECT_TRUE(l(i, j) == 0.0 || l(i, j) == -1.0);
      }
    }
    for (const auto& z : eigenvalues(l).values) EXPECT_GE(z.real(), -1e-10);

    std::vector<Edge> shuffled = edges;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto& e : shuffled) {
      if (rng() % 2) std::swap(e.a, e.b);
    }
    EXPECT_EQ(CommGraph::from_edges(n, shuffled).laplacian(), l);
  }
}

TEST(SwitchSchedule, LeftClosedSwitch) {
  SwitchSchedule s(l1());
  s.add(5.0, l2());
  EXPECT_EQ(s.active_graph(4.9).laplacian(), l1().laplacian());
  EXPECT_EQ(s.active_graph(5.0).laplacian(), l2().laplacian());
  EXPECT_EQ(s.active_graph(9.0).laplacian(), l2().laplacian());
}

TEST(SwitchSchedule, SingleEntryAlwaysActive) {
  const SwitchSchedule s(l1());
  EXPECT_EQ(s.active_graph(0.0).laplacian(), l1().laplacian());
  EXPECT_EQ(s.active_graph(1e6).laplacian(), l1().laplacian());
}

TEST(SwitchSchedule, RejectsDisconnectedUnsortedAndEarlyQuery) {
  SwitchSchedule s(l1());
  const std::vector<Edge> split{{0, 1}, {2, 3}, {3, 4}};
  EXPECT_THROW(s.add(5.0, CommGraph::from_edges(5, split)), std::invalid_argument);
  s.add(5.0, l2());
  EXPECT_THROW(s.add(4.0, l1()), std::invalid_argument);
  EXPECT_THROW(s.active_graph(-1.0), std::out_of_range);
  EXPECT_THROW(SwitchSchedule{}.active_graph(0.0), std::exception);
}
