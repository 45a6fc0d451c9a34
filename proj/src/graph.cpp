#include "mgkoop/graph.hpp"

#include <algorithm>
#include <sstream>

namespace mgkoop {

CommGraph CommGraph::from_edges(int n, std::span<const Edge> edges) {
  if (n <= 0) throw std::invalid_argument("from_edges: graph needs at least one node");
  CommGraph g;
  g.adjacency_ = Matrix::Zero(n, n);
  for (const Edge& e : edges) {
    if (e.a < 0 || e.b < 0 || e.a >= n || e.b >= n) {
      std::ostringstream msg;
      msg << "from_edges: edge (" << e.a << "," << e.b << ") out of range for n=" << n;
      throw std::invalid_argument(msg.str());
    }
    if (e.a == e.b) throw std::invalid_argument("from_edges: self loop");
    if (g.adjacency_(e.a, e.b) != 0.0) throw std::invalid_argument("from_edges: duplicate edge");
    g.adjacency_(e.a, e.b) = 1.0;
    g.adjacency_(e.b, e.a) = 1.0;
  }
  g.laplacian_ = -g.adjacency_;
  g.laplacian_.diagonal() = g.adjacency_.rowwise().sum();
  // canonical edge list so that permuted inputs give identical graphs
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      if (g.adjacency_(i, j) != 0.0) g.edges_.push_back({i, j});
    }
  }
  return g;
}

std::vector<int> CommGraph::neighbors(int i) const {
  if (i < 0 || i >= size()) throw std::out_of_range("neighbors: agent index");
  std::vector<int> out;
  for (int j = 0; j < size(); ++j) {
    if (adjacency_(i, j) != 0.0) out.push_back(j);
  }
  return out;
}

Connectivity is_connected(const CommGraph& g) {
  if (g.size() == 1) return {true, 0.0};
  Eigen::SelfAdjointEigenSolver<Matrix> solver(g.laplacian(), Eigen::EigenvaluesOnly);
  const double lambda2 = solver.eigenvalues()(1);
  return {lambda2 > 1e-9, lambda2};
}

SwitchSchedule::SwitchSchedule(CommGraph initial) { add(0.0, std::move(initial)); }

void SwitchSchedule::add(double time, CommGraph graph) {
  if (!events_.empty()) {
    if (time < events_.back().first) {
      throw std::invalid_argument("SwitchSchedule: events must be time-sorted");
    }
    if (graph.size() != events_.front().second.size()) {
      throw std::invalid_argument("SwitchSchedule: graph size changed");
    }
  }
  if (!is_connected(graph).connected) {
    throw std::invalid_argument("SwitchSchedule: graph is not connected");
  }
  events_.emplace_back(time, std::move(graph));
}

const CommGraph& SwitchSchedule::active_graph(double t) const {
  if (events_.empty()) throw std::logic_error("active_graph: empty schedule");
  if (t < events_.front().first) {
    throw std::out_of_range("active_graph: query before the first event");
  }
  auto it = std::upper_bound(events_.begin(), events_.end(), t,
                             [](double time, const auto& ev) { return time < ev.first; });
  return std::prev(it)->second;
}

}  // namespace mgkoop
