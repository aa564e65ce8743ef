#pragma once

// Collaborative heterogeneous graph over users, items and meta-relation
// nodes, with ingestion, leave-one-out splitting and BPR triplet sampling.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgnn/rng.hpp"

namespace dgnn::graph {

using NodeId = std::uint32_t;

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  auto operator<=>(const Edge&) const = default;
};

using EdgeList = std::vector<Edge>;

enum class EdgeKind { Interaction, Social, ItemRelation };

class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : std::runtime_error(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

class BuildError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SamplingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Compressed sparse rows; each row sorted ascending without duplicates.
class Adjacency {
 public:
  Adjacency() : offsets_(1, 0) {}
  /// Builds `rows` rows from (row, col) pairs; duplicates are dropped.
  static Adjacency from_pairs(std::size_t rows, std::vector<Edge> pairs);

  std::size_t rows() const { return offsets_.size() - 1; }
  std::size_t edge_count() const { return targets_.size(); }
  std::size_t degree(std::size_t r) const {
    return offsets_[r + 1] - offsets_[r];
  }
  std::span<const NodeId> neighbors(std::size_t r) const {
    return std::span<const NodeId>(targets_).subspan(offsets_[r], degree(r));
  }
  bool contains(std::size_t r, NodeId c) const;

  std::span<const std::size_t> offsets() const { return offsets_; }
  std::span<const NodeId> targets() const { return targets_; }

  bool operator==(const Adjacency&) const = default;

 private:
  std::vector<std::size_t> offsets_;
  std::vector<NodeId> targets_;
};

/// Immutable typed adjacency. Interactions and item relations are stored in
/// both directions; social ties are symmetric without self-loops.
class HeteroGraph {
 public:
  HeteroGraph() = default;

  std::uint32_t num_users() const { return num_users_; }
  std::uint32_t num_items() const { return num_items_; }
  std::uint32_t num_relations() const { return num_relations_; }
  std::size_t num_nodes() const {
    return std::size_t{num_users_} + num_items_ + num_relations_;
  }

  /// N_Y(u): items of user u.
  const Adjacency& user_items() const { return user_items_; }
  /// N_Y(v): users of item v.
  const Adjacency& item_users() const { return item_users_; }
  /// N_S(u): social neighbors of user u.
  const Adjacency& user_friends() const { return user_friends_; }
  /// N_T(v): relation nodes of item v.
  const Adjacency& item_relations() const { return item_relations_; }
  /// N_T(r): items attached to relation node r.
  const Adjacency& relation_items() const { return relation_items_; }

  std::size_t interaction_count() const { return user_items_.edge_count(); }
  /// Non-zeros of the symmetric social matrix (each tie counted twice).
  std::size_t social_entry_count() const { return user_friends_.edge_count(); }
  std::size_t item_relation_count() const {
    return item_relations_.edge_count();
  }

  double interaction_density() const;
  double social_density() const;

  EdgeList interaction_edges() const;
  EdgeList social_edges() const;
  EdgeList item_relation_edges() const;

  /// Same node counts, with the social and/or item-relation edges removed.
  HeteroGraph without(bool drop_social, bool drop_item_relations) const;

  /// Same graph minus the listed (user, item) interactions.
  HeteroGraph without_interactions(const EdgeList& removed) const;

  bool operator==(const HeteroGraph&) const = default;

  friend HeteroGraph build_graph(const EdgeList&, const EdgeList&,
                                 const EdgeList&, std::uint32_t, std::uint32_t,
                                 std::uint32_t);

 private:
  std::uint32_t num_users_ = 0;
  std::uint32_t num_items_ = 0;
  std::uint32_t num_relations_ = 0;
  Adjacency user_items_;
  Adjacency item_users_;
  Adjacency user_friends_;
  Adjacency item_relations_;
  Adjacency relation_items_;
};

/// Reads `src<TAB>dst` lines; blank lines and `#` comments are skipped.
/// Returns the sorted, deduplicated edge list.
EdgeList load_edge_file(const std::filesystem::path& path, EdgeKind kind);

/// Parses edge text already in memory; same contract as load_edge_file.
EdgeList parse_edges(std::string_view text, EdgeKind kind);

void write_edge_file(const std::filesystem::path& path, const EdgeList& edges);

/// interactions: (user, item); social: (user, user); item_relations:
/// (item, relation). Social ties are symmetrized and self-ties dropped.
HeteroGraph build_graph(const EdgeList& interactions, const EdgeList& social,
                        const EdgeList& item_relations, std::uint32_t num_users,
                        std::uint32_t num_items, std::uint32_t num_relations);

inline constexpr std::size_t kEvalNegatives = 100;

struct TestCase {
  NodeId user = 0;
  NodeId item = 0;
  std::vector<NodeId> negatives;  // kEvalNegatives items, none interacted
  bool operator==(const TestCase&) const = default;
};

struct Split {
  std::uint64_t seed = 0;
  HeteroGraph train_graph;
  std::vector<TestCase> test;  // ordered by user id
  /// Users with fewer than two interactions.
  std::size_t skipped_sparse = 0;
  /// Users with fewer than kEvalNegatives non-interacted items.
  std::size_t skipped_saturated = 0;

  bool operator==(const Split&) const = default;
};

/// Holds out one uniformly chosen interaction per user with >= 2
/// interactions, and draws kEvalNegatives fixed negatives per test user.
Split split_leave_one_out(const HeteroGraph& graph, std::uint64_t seed);

void write_split_manifest(const std::filesystem::path& path, const Split& split);
std::string format_split_manifest(const Split& split);
/// Reconstructs the split against the full graph it was drawn from.
Split read_split_manifest(const std::filesystem::path& path,
                          const HeteroGraph& full_graph);

struct Triplet {
  NodeId user = 0;
  NodeId positive = 0;
  NodeId negative = 0;
  bool operator==(const Triplet&) const = default;
};

/// Uniform observed edge, negative by rejection. A user with every item
/// observed is resampled; after a bounded budget SamplingError is thrown.
Triplet sample_bpr_triplet(const HeteroGraph& train_graph, Rng& rng);

}  // namespace dgnn::graph
