#include "dgnn/hetgraph.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <limits>
#include <sstream>
#include <string_view>

namespace dgnn::graph {

namespace {

std::string_view kind_name(EdgeKind kind) {
  switch (kind) {
    case EdgeKind::Interaction: return "interaction";
    case EdgeKind::Social: return "social";
    case EdgeKind::ItemRelation: return "item_relation";
  }
  return "edge";
}

NodeId parse_id(std::string_view field, std::size_t line_no) {
  if (field.empty()) {
    throw ParseError("line " + std::to_string(line_no) + ": empty id field",
                     line_no);
  }
  long long value = 0;
  const auto [ptr, ec] =
      std::from_chars(field.data(), field.data() + field.size(), value);
  if (ec == std::errc::result_out_of_range) {
    throw RangeError("line " + std::to_string(line_no) + ": id out of range");
  }
  if (ec != std::errc() || ptr != field.data() + field.size()) {
    throw ParseError("line " + std::to_string(line_no) +
                         ": expected decimal id, got '" + std::string(field) +
                         "'",
                     line_no);
  }
  if (value < 0) {
    throw RangeError("line " + std::to_string(line_no) + ": negative id " +
                     std::to_string(value));
  }
  if (value > std::numeric_limits<NodeId>::max()) {
    throw RangeError("line " + std::to_string(line_no) + ": id " +
                     std::to_string(value) + " exceeds 32-bit range");
  }
  return static_cast<NodeId>(value);
}

void sort_unique(EdgeList& edges) {
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

EdgeList reversed(const EdgeList& edges) {
  EdgeList out;
  out.reserve(edges.size());
  for (const auto& e : edges) out.push_back({e.dst, e.src});
  return out;
}

EdgeList adjacency_edges(const Adjacency& adj) {
  EdgeList out;
  out.reserve(adj.edge_count());
  for (std::size_t r = 0; r < adj.rows(); ++r) {
    for (NodeId c : adj.neighbors(r)) out.push_back({static_cast<NodeId>(r), c});
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

Adjacency Adjacency::from_pairs(std::size_t rows, std::vector<Edge> pairs) {
  sort_unique(pairs);
  Adjacency adj;
  adj.offsets_.assign(rows + 1, 0);
  adj.targets_.reserve(pairs.size());
  for (const auto& e : pairs) {
    ++adj.offsets_[e.src + 1];
    adj.targets_.push_back(e.dst);
  }
  for (std::size_t r = 0; r < rows; ++r) adj.offsets_[r + 1] += adj.offsets_[r];
  return adj;
}

bool Adjacency::contains(std::size_t r, NodeId c) const {
  const auto row = neighbors(r);
  return std::binary_search(row.begin(), row.end(), c);
}

// ---------------------------------------------------------------------------

double HeteroGraph::interaction_density() const {
  if (num_users_ == 0 || num_items_ == 0) return 0.0;
  return static_cast<double>(interaction_count()) /
         (static_cast<double>(num_users_) * static_cast<double>(num_items_));
}

double HeteroGraph::social_density() const {
  if (num_users_ == 0) return 0.0;
  return static_cast<double>(social_entry_count()) /
         (static_cast<double>(num_users_) * static_cast<double>(num_users_));
}

EdgeList HeteroGraph::interaction_edges() const {
  return adjacency_edges(user_items_);
}
EdgeList HeteroGraph::social_edges() const {
  return adjacency_edges(user_friends_);
}
EdgeList HeteroGraph::item_relation_edges() const {
  return adjacency_edges(item_relations_);
}

HeteroGraph HeteroGraph::without(bool drop_social,
                                 bool drop_item_relations) const {
  HeteroGraph g = *this;
  if (drop_social) g.user_friends_ = Adjacency::from_pairs(num_users_, {});
  if (drop_item_relations) {
    g.item_relations_ = Adjacency::from_pairs(num_items_, {});
    g.relation_items_ = Adjacency::from_pairs(num_relations_, {});
  }
  return g;
}

HeteroGraph HeteroGraph::without_interactions(const EdgeList& removed) const {
  EdgeList sorted_removed = removed;
  sort_unique(sorted_removed);
  EdgeList kept;
  for (const auto& e : interaction_edges()) {
    if (!std::binary_search(sorted_removed.begin(), sorted_removed.end(), e)) {
      kept.push_back(e);
    }
  }
  HeteroGraph g = *this;
  g.user_items_ = Adjacency::from_pairs(num_users_, kept);
  g.item_users_ = Adjacency::from_pairs(num_items_, reversed(kept));
  return g;
}

// ---------------------------------------------------------------------------

EdgeList parse_edges(std::string_view text, EdgeKind kind) {
  (void)kind;
  EdgeList edges;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const std::size_t end = std::min(text.find('\n', pos), text.size());
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") == std::string_view::npos) {
      if (end == text.size()) break;
      continue;
    }
    if (line.front() == '#') continue;
    const std::size_t tab = line.find('\t');
    if (tab == std::string_view::npos ||
        line.find('\t', tab + 1) != std::string_view::npos) {
      throw ParseError("line " + std::to_string(line_no) +
                           ": expected '<src>\\t<dst>'",
                       line_no);
    }
    const NodeId src = parse_id(line.substr(0, tab), line_no);
    const NodeId dst = parse_id(line.substr(tab + 1), line_no);
    edges.push_back({src, dst});
    if (end == text.size()) break;
  }
  sort_unique(edges);
  return edges;
}

EdgeList load_edge_file(const std::filesystem::path& path, EdgeKind kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + std::string(kind_name(kind)) +
                             " file: " + path.string());
  }
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_edges(buffer.str(), kind);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what(), e.line());
  } catch (const RangeError& e) {
    throw RangeError(path.string() + ": " + e.what());
  }
}

void write_edge_file(const std::filesystem::path& path, const EdgeList& edges) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& e : edges) out << e.src << '\t' << e.dst << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

HeteroGraph build_graph(const EdgeList& interactions, const EdgeList& social,
                        const EdgeList& item_relations, std::uint32_t num_users,
                        std::uint32_t num_items, std::uint32_t num_relations) {
  auto check = [](const EdgeList& edges, std::string_view name,
                  std::uint32_t src_limit, std::string_view src_kind,
                  std::uint32_t dst_limit, std::string_view dst_kind) {
    for (std::size_t i = 0; i < edges.size(); ++i) {
      const auto& e = edges[i];
      if (e.src >= src_limit || e.dst >= dst_limit) {
        std::ostringstream msg;
        msg << name << " edge #" << i << " (" << e.src << ", " << e.dst
            << "): ";
        if (e.src >= src_limit) {
          msg << src_kind << " id " << e.src << " >= " << src_limit;
        } else {
          msg << dst_kind << " id " << e.dst << " >= " << dst_limit;
        }
        throw BuildError(msg.str());
      }
    }
  };
  check(interactions, "interaction", num_users, "user", num_items, "item");
  check(social, "social", num_users, "user", num_users, "user");
  check(item_relations, "item_relation", num_items, "item", num_relations,
        "relation");

  EdgeList ties;
  ties.reserve(social.size() * 2);
  for (const auto& e : social) {
    if (e.src == e.dst) continue;
    ties.push_back(e);
    ties.push_back({e.dst, e.src});
  }

  HeteroGraph g;
  g.num_users_ = num_users;
  g.num_items_ = num_items;
  g.num_relations_ = num_relations;
  g.user_items_ = Adjacency::from_pairs(num_users, interactions);
  g.item_users_ = Adjacency::from_pairs(num_items, reversed(interactions));
  g.user_friends_ = Adjacency::from_pairs(num_users, std::move(ties));
  g.item_relations_ = Adjacency::from_pairs(num_items, item_relations);
  g.relation_items_ =
      Adjacency::from_pairs(num_relations, reversed(item_relations));
  return g;
}

// ---------------------------------------------------------------------------

Split split_leave_one_out(const HeteroGraph& graph, std::uint64_t seed) {
  Split split;
  split.seed = seed;
  Rng holdout_rng(derive_seed(seed, SeedPurpose::Split));
  Rng negative_rng(derive_seed(seed, SeedPurpose::Negatives));

  const auto& items = graph.user_items();
  EdgeList held_out;
  for (NodeId u = 0; u < graph.num_users(); ++u) {
    const auto row = items.neighbors(u);
    if (row.size() < 2) {
      ++split.skipped_sparse;
      continue;
    }
    if (graph.num_items() - row.size() < kEvalNegatives) {
      ++split.skipped_saturated;
      continue;
    }
    const NodeId positive = row[holdout_rng.uniform_index(row.size())];

    TestCase tc{u, positive, {}};
    tc.negatives.reserve(kEvalNegatives);
    std::vector<NodeId> taken;  // sorted
    while (tc.negatives.size() < kEvalNegatives) {
      const auto j = static_cast<NodeId>(
          negative_rng.uniform_index(graph.num_items()));
      if (std::binary_search(row.begin(), row.end(), j)) continue;
      const auto it = std::lower_bound(taken.begin(), taken.end(), j);
      if (it != taken.end() && *it == j) continue;
      taken.insert(it, j);
      tc.negatives.push_back(j);
    }
    held_out.push_back({u, positive});
    split.test.push_back(std::move(tc));
  }
  split.train_graph = graph.without_interactions(held_out);
  return split;
}

std::string format_split_manifest(const Split& split) {
  std::ostringstream out;
  out << "# dgnn split manifest: test<TAB>user<TAB>item<TAB>negatives\n";
  out << "seed\t" << split.seed << '\n';
  out << "skipped_sparse\t" << split.skipped_sparse << '\n';
  out << "skipped_saturated\t" << split.skipped_saturated << '\n';
  for (const auto& tc : split.test) {
    out << "test\t" << tc.user << '\t' << tc.item << '\t';
    for (std::size_t i = 0; i < tc.negatives.size(); ++i) {
      if (i) out << ',';
      out << tc.negatives[i];
    }
    out << '\n';
  }
  return out.str();
}

void write_split_manifest(const std::filesystem::path& path,
                          const Split& split) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << format_split_manifest(split);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Split read_split_manifest(const std::filesystem::path& path,
                          const HeteroGraph& full_graph) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open manifest " + path.string());

  Split split;
  EdgeList held_out;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& why) {
    throw ParseError(path.string() + ": line " + std::to_string(line_no) +
                         ": " + why,
                     line_no);
  };
  auto to_u64 = [&](std::string_view s) {
    std::uint64_t v = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || ptr != s.data() + s.size()) fail("bad number");
    return v;
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line.front() == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    while (true) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields[0] == "seed" && fields.size() == 2) {
      split.seed = to_u64(fields[1]);
    } else if (fields[0] == "skipped_sparse" && fields.size() == 2) {
      split.skipped_sparse = to_u64(fields[1]);
    } else if (fields[0] == "skipped_saturated" && fields.size() == 2) {
      split.skipped_saturated = to_u64(fields[1]);
    } else if (fields[0] == "test" && fields.size() == 4) {
      TestCase tc;
      tc.user = static_cast<NodeId>(to_u64(fields[1]));
      tc.item = static_cast<NodeId>(to_u64(fields[2]));
      if (tc.user >= full_graph.num_users() ||
          tc.item >= full_graph.num_items() ||
          !full_graph.user_items().contains(tc.user, tc.item)) {
        fail("test pair is not an interaction of the graph");
      }
      std::string_view negs = fields[3];
      while (!negs.empty()) {
        const auto comma = negs.find(',');
        const auto j = static_cast<NodeId>(to_u64(negs.substr(0, comma)));
        if (j >= full_graph.num_items() ||
            full_graph.user_items().contains(tc.user, j)) {
          fail("negative item is out of range or interacted");
        }
        tc.negatives.push_back(j);
        if (comma == std::string_view::npos) break;
        negs.remove_prefix(comma + 1);
      }
      if (tc.negatives.size() != kEvalNegatives) {
        fail("expected " + std::to_string(kEvalNegatives) + " negatives");
      }
      held_out.push_back({tc.user, tc.item});
      split.test.push_back(std::move(tc));
    } else {
      fail("unrecognized record");
    }
  }
  split.train_graph = full_graph.without_interactions(held_out);
  return split;
}

// ---------------------------------------------------------------------------

Triplet sample_bpr_triplet(const HeteroGraph& train_graph, Rng& rng) {
  const auto& items = train_graph.user_items();
  const std::size_t edges = items.edge_count();
  if (edges == 0) throw SamplingError("sample_bpr_triplet: no interactions");
  const std::size_t num_items = train_graph.num_items();

  constexpr int kUserRetries = 64;
  constexpr int kNegativeRetries = 1024;
  for (int attempt = 0; attempt < kUserRetries; ++attempt) {
    const std::size_t e = rng.uniform_index(edges);
    const auto offsets = items.offsets();
    const auto user = static_cast<NodeId>(
        std::upper_bound(offsets.begin(), offsets.end(), e) - offsets.begin() -
        1);
    const NodeId positive = items.targets()[e];
    const auto row = items.neighbors(user);
    if (row.size() >= num_items) continue;

    for (int k = 0; k < kNegativeRetries; ++k) {
      const auto j = static_cast<NodeId>(rng.uniform_index(num_items));
      if (!std::binary_search(row.begin(), row.end(), j)) {
        return {user, positive, j};
      }
    }
    // Dense user: draw uniformly from the explicit complement.
    std::vector<NodeId> complement;
    complement.reserve(num_items - row.size());
    for (NodeId j = 0; j < num_items; ++j) {
      if (!std::binary_search(row.begin(), row.end(), j)) {
        complement.push_back(j);
      }
    }
    return {user, positive, complement[rng.uniform_index(complement.size())]};
  }
  throw SamplingError(
      "sample_bpr_triplet: every sampled user has interacted with all items");
}

}  // namespace dgnn::graph
