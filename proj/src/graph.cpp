#include "hyperskel/graph.hpp"

#include <deque>
#include <stdexcept>

namespace hyperskel {

AdjacencyStrategy parse_strategy(const std::string& name) {
  if (name == "uniform") return AdjacencyStrategy::kUniform;
  if (name == "distance") return AdjacencyStrategy::kDistance;
  throw std::invalid_argument("unknown adjacency strategy: " + name);
}

namespace {

using Edges = std::vector<std::pair<std::size_t, std::size_t>>;

void add_self_loops(Edges& e, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) e.emplace_back(i, i);
}

}  // namespace

SkeletonGraph build_graph(const std::string& layout, AdjacencyStrategy strategy,
                          std::size_t max_hop) {
  SkeletonGraph g;
  g.layout = layout;
  g.max_hop = max_hop;
  if (layout == "left" || layout == "right") {
    g.num_nodes = 21;
    add_self_loops(g.edges, 21);
    for (std::size_t f = 0; f < 5; ++f) {
      std::size_t prev = 0;
      for (std::size_t k = 1; k <= 4; ++k) {
        const std::size_t j = 4 * f + k;
        g.edges.emplace_back(prev, j);
        prev = j;
      }
    }
    g.center = 0;
  } else if (layout == "body") {
    g.num_nodes = 9;
    add_self_loops(g.edges, 9);
    for (std::size_t i = 1; i < 5; ++i) g.edges.emplace_back(0, i);
    for (auto e : Edges{{3, 5}, {5, 7}, {4, 6}, {6, 8}}) g.edges.push_back(e);
    g.center = 0;
  } else if (layout == "face" || layout == "face_all") {
    g.num_nodes = 16;
    add_self_loops(g.edges, 16);
    for (std::size_t i = 0; i < 16; ++i) g.edges.emplace_back(i, (i + 1) % 16);
    g.center = 8;
  } else {
    throw std::invalid_argument("unknown skeleton layout: " + layout);
  }

  const std::size_t V = g.num_nodes;
  std::vector<std::vector<std::size_t>> nbr(V);
  for (auto [i, j] : g.edges) {
    if (i == j) continue;
    nbr[i].push_back(j);
    nbr[j].push_back(i);
  }
  // Breadth-first search from every joint, stopping at max_hop.
  g.hop.assign(V * V, kUnreachable);
  for (std::size_t s = 0; s < V; ++s) {
    std::deque<std::size_t> queue{s};
    g.hop[s * V + s] = 0.0;
    while (!queue.empty()) {
      const std::size_t u = queue.front();
      queue.pop_front();
      const double du = g.hop[s * V + u];
      if (du >= static_cast<double>(max_hop)) continue;
      for (std::size_t w : nbr[u]) {
        if (g.hop[s * V + w] == kUnreachable) {
          g.hop[s * V + w] = du + 1.0;
          queue.push_back(w);
        }
      }
    }
  }

  std::vector<double> a(V * V, 0.0);
  for (std::size_t i = 0; i < V * V; ++i) {
    const double h = g.hop[i];
    if (strategy == AdjacencyStrategy::kUniform) {
      a[i] = h <= 1.0 ? 1.0 : 0.0;
    } else {
      a[i] = h == kUnreachable ? 0.0 : 1.0 / (h + 1e-6);
    }
  }
  for (std::size_t i = 0; i < V; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < V; ++j) s += a[i * V + j];
    for (std::size_t j = 0; j < V; ++j) a[i * V + j] /= s + 1e-6;
  }
  g.A = Tensor({1, V, V}, std::move(a));
  return g;
}

}  // namespace hyperskel
