#pragma once

#include <span>
#include <utility>
#include <vector>

#include "mgkoop/numerics.hpp"

namespace mgkoop {

/// Undirected edge between two agents (0-based).
struct Edge {
  int a = 0;
  int b = 0;
};

/// Unweighted, undirected communication graph with its Laplacian.
class CommGraph {
 public:
  /// Throws std::invalid_argument on out-of-range nodes, self loops or
  /// duplicate edges.
  static CommGraph from_edges(int n, std::span<const Edge> edges);

  int size() const { return static_cast<int>(adjacency_.rows()); }
  const Matrix& adjacency() const { return adjacency_; }
  const Matrix& laplacian() const { return laplacian_; }
  const std::vector<Edge>& edges() const { return edges_; }

  /// Neighbours of agent i in ascending order.
  std::vector<int> neighbors(int i) const;

 private:
  Matrix adjacency_;
  Matrix laplacian_;
  std::vector<Edge> edges_;
};

struct Connectivity {
  bool connected = false;
  double algebraic_connectivity = 0.0;  // second-smallest Laplacian eigenvalue
};

Connectivity is_connected(const CommGraph& g);

/// Time-ordered graph switches. The graph registered at time t is active on
/// [t, next switch).
class SwitchSchedule {
 public:
  SwitchSchedule() = default;
  explicit SwitchSchedule(CommGraph initial);

  /// Appends a switch; times must be non-decreasing and the graph connected.
  void add(double time, CommGraph graph);

  const CommGraph& active_graph(double t) const;
  const std::vector<std::pair<double, CommGraph>>& events() const { return events_; }
  bool empty() const { return events_.empty(); }

 private:
  std::vector<std::pair<double, CommGraph>> events_;
};

}  // namespace mgkoop
