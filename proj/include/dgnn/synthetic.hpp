#pragma once

// Planted-factor data generator used by the benchmarks, the acceptance suite
// and the `synth` command.

#include <cstdint>
#include <filesystem>
#include <vector>

#include "dgnn/hetgraph.hpp"

namespace dgnn::synth {

/// Users and items each belong to one taste cell (factor x sub-cluster);
/// relation nodes are the cells. Interactions favour the user's cell, then
/// its factor. Most users befriend users of their own cell; a `contrast`
/// fraction befriend each other across partner cells (cell + relations / 2),
/// so the meaning of a social tie depends on who receives it.
struct PlantedConfig {
  std::uint32_t users = 200;
  std::uint32_t items = 500;
  std::uint32_t relations = 20;  // cells; must be a multiple of factors
  std::uint32_t factors = 5;
  std::uint32_t min_interactions = 4;
  std::uint32_t max_interactions = 14;
  std::uint32_t min_friends = 3;
  std::uint32_t max_friends = 8;
  double interaction_cell_logit = 6.0;
  double interaction_factor_logit = 2.0;
  double popularity_sd = 0.5;
  double social_cell_logit = 4.0;
  double social_factor_logit = 2.0;
  double contrast_fraction = 0.3;
  double extra_relation_prob = 0.1;
  std::uint64_t seed = 7;
};

struct Dataset {
  std::uint32_t users = 0;
  std::uint32_t items = 0;
  std::uint32_t relations = 0;
  graph::EdgeList interactions;
  graph::EdgeList social;
  graph::EdgeList item_relations;
  /// Planted cell of every user and item; empty for uniform graphs.
  std::vector<std::uint32_t> user_cells;
  std::vector<std::uint32_t> item_cells;

  graph::HeteroGraph build() const;
  /// Writes interactions.tsv, social.tsv and item_relations.tsv.
  void write(const std::filesystem::path& dir) const;
};

Dataset generate_planted(const PlantedConfig& config);

/// Uniformly random distinct edges of each type (social ties unordered), for
/// scaling measurements.
Dataset generate_uniform(std::uint32_t users, std::uint32_t items,
                         std::uint32_t relations, std::size_t interactions,
                         std::size_t social, std::size_t item_relations,
                         std::uint64_t seed);

}  // namespace dgnn::synth
