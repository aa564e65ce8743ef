#pragma once

// Random graphs and parameters shared by the unit and acceptance tests.

#include <algorithm>
#include <cstdint>
#include <vector>

#include "dgnn/hetgraph.hpp"
#include "dgnn/model.hpp"
#include "dgnn/rng.hpp"

namespace dgnn::testing {

struct GraphShape {
  std::uint32_t users = 0;
  std::uint32_t items = 0;
  std::uint32_t relations = 0;
};

/// Random counts with users + items + relations <= max_nodes (users, items
/// >= 1) and a random subset of possible edges of each type.
inline graph::HeteroGraph random_small_graph(Rng& rng, std::size_t max_nodes,
                                             double density = 0.3) {
  const auto users = static_cast<std::uint32_t>(1 + rng.uniform_index(max_nodes / 3));
  const auto items = static_cast<std::uint32_t>(1 + rng.uniform_index(max_nodes / 3));
  const auto rest = max_nodes - users - items;
  const auto relations = static_cast<std::uint32_t>(rng.uniform_index(std::min<std::size_t>(rest, 5) + 1));
  graph::EdgeList y, s, t;
  for (graph::NodeId u = 0; u < users; ++u) {
    for (graph::NodeId v = 0; v < items; ++v) {
      if (rng.uniform01() < density) y.push_back({u, v});
    }
    for (graph::NodeId w = u + 1; w < users; ++w) {
      if (rng.uniform01() < density) s.push_back({u, w});
    }
  }
  for (graph::NodeId v = 0; v < items; ++v) {
    for (graph::NodeId r = 0; r < relations; ++r) {
      if (rng.uniform01() < density) t.push_back({v, r});
    }
  }
  return graph::build_graph(y, s, t, users, items, relations);
}

/// Initialized parameters with every entry perturbed so that layer-norm
/// affine terms, biases and keys are all exercised.
inline core::ModelParams random_params(const graph::HeteroGraph& g,
                                       std::uint32_t dim, std::uint32_t layers,
                                       std::uint32_t units, std::uint64_t seed,
                                       core::ModelVariant variant = {},
                                       double noise = 0.5) {
  auto p = core::initialize_params(core::dims_for(g, dim, layers, units), variant, seed);
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  for (double& x : p.values()) x += noise * rng.normal();
  return p;
}

}  // namespace dgnn::testing
