#include "dgnn/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "dgnn/rng.hpp"

namespace dgnn::synth {

namespace {

constexpr double kExcluded = -1e9;

double gumbel(Rng& rng) {
  double u = rng.uniform01();
  while (u <= 0.0) u = rng.uniform01();
  return -std::log(-std::log(u));
}

/// Indices of the k largest logits after Gumbel perturbation: a draw of k
/// items without replacement with probability proportional to exp(logit).
std::vector<std::uint32_t> gumbel_top_k(const std::vector<double>& logits,
                                        std::size_t k, Rng& rng) {
  std::vector<std::pair<double, std::uint32_t>> keyed(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) {
    keyed[i] = {logits[i] + gumbel(rng), static_cast<std::uint32_t>(i)};
  }
  k = std::min(k, keyed.size());
  std::partial_sort(keyed.begin(), keyed.begin() + static_cast<long>(k),
                    keyed.end(), [](const auto& a, const auto& b) {
                      return a.first != b.first ? a.first > b.first
                                                : a.second < b.second;
                    });
  std::vector<std::uint32_t> out(k);
  for (std::size_t i = 0; i < k; ++i) out[i] = keyed[i].second;
  return out;
}

}  // namespace

graph::HeteroGraph Dataset::build() const {
  return graph::build_graph(interactions, social, item_relations, users, items,
                            relations);
}

void Dataset::write(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  graph::write_edge_file(dir / "interactions.tsv", interactions);
  graph::write_edge_file(dir / "social.tsv", social);
  graph::write_edge_file(dir / "item_relations.tsv", item_relations);
}

Dataset generate_planted(const PlantedConfig& c) {
  if (c.factors == 0 || c.relations % c.factors != 0 || c.relations == 0) {
    throw std::invalid_argument("planted data: relations must be a multiple of factors");
  }
  if (c.min_interactions > c.max_interactions || c.min_friends > c.max_friends) {
    throw std::invalid_argument("planted data: min exceeds max");
  }
  Rng rng(derive_seed(c.seed, SeedPurpose::Synthetic));
  const std::uint32_t cells_per_factor = c.relations / c.factors;

  std::vector<std::uint32_t> user_cell(c.users);
  std::vector<std::uint32_t> item_cell(c.items);
  for (auto& cell : user_cell) cell = static_cast<std::uint32_t>(rng.uniform_index(c.relations));
  for (auto& cell : item_cell) cell = static_cast<std::uint32_t>(rng.uniform_index(c.relations));
  std::vector<double> popularity(c.items);
  for (auto& p : popularity) p = c.popularity_sd * rng.normal();

  auto affinity = [cells_per_factor](std::uint32_t a, std::uint32_t b,
                                     double same_cell, double same_factor) {
    if (a == b) return same_cell;
    if (a / cells_per_factor == b / cells_per_factor) return same_factor;
    return 0.0;
  };

  Dataset ds;
  ds.users = c.users;
  ds.items = c.items;
  ds.relations = c.relations;

  std::vector<double> logits(c.items);
  for (std::uint32_t u = 0; u < c.users; ++u) {
    for (std::uint32_t v = 0; v < c.items; ++v) {
      logits[v] = affinity(user_cell[u], item_cell[v], c.interaction_cell_logit,
                           c.interaction_factor_logit) +
                  popularity[v];
    }
    const std::size_t n =
        c.min_interactions +
        rng.uniform_index(c.max_interactions - c.min_interactions + 1);
    for (std::uint32_t v : gumbel_top_k(logits, n, rng)) {
      ds.interactions.push_back({u, v});
    }
  }

  std::vector<bool> contrast(c.users);
  for (std::uint32_t u = 0; u < c.users; ++u) {
    contrast[u] = rng.uniform01() < c.contrast_fraction;
  }
  const auto partner = [&c](std::uint32_t cell) {
    return (cell + c.relations / 2) % c.relations;
  };
  std::vector<double> social_logits(c.users);
  for (std::uint32_t u = 0; u < c.users; ++u) {
    const std::uint32_t wanted =
        contrast[u] ? partner(user_cell[u]) : user_cell[u];
    for (std::uint32_t w = 0; w < c.users; ++w) {
      social_logits[w] =
          w == u || contrast[w] != contrast[u]
              ? kExcluded
              : affinity(wanted, user_cell[w], c.social_cell_logit,
                         c.social_factor_logit);
    }
    const std::size_t n =
        c.min_friends + rng.uniform_index(c.max_friends - c.min_friends + 1);
    for (std::uint32_t w : gumbel_top_k(social_logits, n, rng)) {
      if (social_logits[w] <= kExcluded) continue;
      ds.social.push_back({u, w});
    }
  }

  for (std::uint32_t v = 0; v < c.items; ++v) {
    ds.item_relations.push_back({v, item_cell[v]});
    if (rng.uniform01() < c.extra_relation_prob) {
      ds.item_relations.push_back(
          {v, static_cast<std::uint32_t>(rng.uniform_index(c.relations))});
    }
  }

  ds.user_cells = std::move(user_cell);
  ds.item_cells = std::move(item_cell);
  std::sort(ds.interactions.begin(), ds.interactions.end());
  std::sort(ds.social.begin(), ds.social.end());
  std::sort(ds.item_relations.begin(), ds.item_relations.end());
  ds.item_relations.erase(
      std::unique(ds.item_relations.begin(), ds.item_relations.end()),
      ds.item_relations.end());
  return ds;
}

Dataset generate_uniform(std::uint32_t users, std::uint32_t items,
                         std::uint32_t relations, std::size_t interactions,
                         std::size_t social, std::size_t item_relations,
                         std::uint64_t seed) {
  Rng rng(derive_seed(seed, SeedPurpose::Synthetic, 1));
  auto draw = [&rng](std::size_t count, std::uint32_t rows, std::uint32_t cols,
                     bool undirected) {
    std::set<graph::Edge> edges;
    const std::size_t cap = undirected ? std::size_t{rows} * (rows - 1) / 2
                                       : std::size_t{rows} * cols;
    count = std::min(count, cap);
    while (edges.size() < count) {
      auto a = static_cast<std::uint32_t>(rng.uniform_index(rows));
      auto b = static_cast<std::uint32_t>(rng.uniform_index(cols));
      if (undirected) {
        if (a == b) continue;
        if (a > b) std::swap(a, b);
      }
      edges.insert({a, b});
    }
    return graph::EdgeList(edges.begin(), edges.end());
  };
  Dataset ds;
  ds.users = users;
  ds.items = items;
  ds.relations = relations;
  ds.interactions = draw(interactions, users, items, false);
  ds.social = draw(social, users, users, true);
  ds.item_relations = relations ? draw(item_relations, items, relations, false)
                                : graph::EdgeList{};
  return ds;
}

}  // namespace dgnn::synth
