#include <gtest/gtest.h>

#include <filesystem>

#include "dgnn/synthetic.hpp"

using namespace dgnn;
using namespace dgnn::synth;

TEST(Planted, SameSeedSameData) {
  const auto a = generate_planted({});
  const auto b = generate_planted({});
  EXPECT_EQ(a.interactions, b.interactions);
  EXPECT_EQ(a.social, b.social);
  EXPECT_EQ(a.item_relations, b.item_relations);
  PlantedConfig other;
  other.seed = 8;
  EXPECT_NE(generate_planted(other).interactions, a.interactions);
}

TEST(Planted, InteractionCountsWithinBounds) {
  const PlantedConfig cfg;
  const auto g = generate_planted(cfg).build();
  for (graph::NodeId u = 0; u < g.num_users(); ++u) {
    EXPECT_GE(g.user_items().degree(u), cfg.min_interactions);
    EXPECT_LE(g.user_items().degree(u), cfg.max_interactions);
  }
}

TEST(Planted, InteractionsConcentrateInUserCell) {
  const auto data = generate_planted({});
  std::size_t same = 0;
  for (const auto& e : data.interactions) same += data.user_cells[e.src] == data.item_cells[e.dst];
  // A cell holds 1/20 of the items; the planted logit must dominate that.
  EXPECT_GT(static_cast<double>(same) / data.interactions.size(), 0.5);
}

TEST(Planted, EveryItemLinksToItsCell) {
  const auto data = generate_planted({});
  const auto g = data.build();
  for (graph::NodeId v = 0; v < g.num_items(); ++v) {
    EXPECT_TRUE(g.item_relations().contains(v, data.item_cells[v])) << v;
  }
}

TEST(Planted, SocialTiesAreSymmetricWithoutSelfLoops) {
  const auto g = generate_planted({}).build();
  for (graph::NodeId u = 0; u < g.num_users(); ++u) {
    for (graph::NodeId w : g.user_friends().neighbors(u)) {
      EXPECT_NE(u, w);
      EXPECT_TRUE(g.user_friends().contains(w, u));
    }
  }
}

TEST(Planted, RelationsMustDivideIntoFactors) {
  PlantedConfig cfg;
  cfg.relations = 7;
  EXPECT_THROW(generate_planted(cfg), std::invalid_argument);
}

TEST(Uniform, ExactEdgeCounts) {
  const auto g = generate_uniform(30, 40, 5, 200, 50, 60, 3).build();
  EXPECT_EQ(g.interaction_count(), 200u);
  EXPECT_EQ(g.social_entry_count(), 100u);
  EXPECT_EQ(g.item_relation_count(), 60u);
}

TEST(Dataset, WriteThenLoadRoundTrips) {
  const auto data = generate_planted({});
  const auto dir = std::filesystem::temp_directory_path() / "dgnn_synth_roundtrip";
  data.write(dir);
  const auto g = graph::build_graph(
      graph::load_edge_file(dir / "interactions.tsv", graph::EdgeKind::Interaction),
      graph::load_edge_file(dir / "social.tsv", graph::EdgeKind::Social),
      graph::load_edge_file(dir / "item_relations.tsv", graph::EdgeKind::ItemRelation),
      data.users, data.items, data.relations);
  EXPECT_EQ(g, data.build());
}
