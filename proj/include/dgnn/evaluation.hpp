#pragma once

// Top-N evaluation against 100 fixed negatives per test user, sparsity
// groups, module/relation ablations and memory-attention export.

#include <array>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dgnn/hetgraph.hpp"
#include "dgnn/model.hpp"
#include "dgnn/training.hpp"

namespace dgnn::eval {

using core::DenseMatrix;
using graph::HeteroGraph;
using graph::NodeId;
using graph::Split;

inline const std::vector<std::size_t> kDefaultCutoffs{5, 10, 20};

/// 1-based rank of the positive among itself and the negatives; score ties
/// go to the smaller item id. Throws on duplicate candidate ids.
std::size_t rank_of_positive(NodeId positive, double positive_score,
                             std::span<const NodeId> negatives,
                             std::span<const double> negative_scores);

struct RankOutcome {
  std::size_t rank = 0;
  bool hit = false;
  double ndcg = 0.0;  // 1 / log2(rank + 1) on a hit, ideal DCG being 1
};

RankOutcome outcome_at(std::size_t rank, std::size_t cutoff);

RankOutcome rank_and_score(NodeId user, NodeId positive,
                           std::span<const NodeId> negatives,
                           const DenseMatrix& final, const HeteroGraph& graph,
                           std::size_t cutoff, bool recalibration = true);

struct CutoffMetrics {
  std::size_t cutoff = 0;
  double hr = 0.0;
  double ndcg = 0.0;
  bool operator==(const CutoffMetrics&) const = default;
};

struct GroupReport {
  std::string label;
  std::size_t users = 0;
  double mean_interactions = 0.0;
  std::vector<CutoffMetrics> metrics;
  bool operator==(const GroupReport&) const = default;
};

struct EvalReport {
  std::size_t users = 0;
  std::vector<CutoffMetrics> metrics;
  std::vector<GroupReport> groups;  // empty unless a sparsity report was run

  const CutoffMetrics& at(std::size_t cutoff) const;
  bool operator==(const EvalReport&) const = default;
};

using ScoreFn = std::function<double(NodeId user, NodeId item)>;

/// Averages rank outcomes over every test case of the split.
EvalReport evaluate_scores(const Split& split,
                           std::span<const std::size_t> cutoffs,
                           const ScoreFn& score, std::size_t threads = 1);

EvalReport evaluate(const DenseMatrix& final, const Split& split,
                    const HeteroGraph& graph,
                    std::span<const std::size_t> cutoffs = kDefaultCutoffs,
                    bool recalibration = true, std::size_t threads = 1);

/// Test users ordered by training-interaction count (ties by user id) and cut
/// into four quartile groups of (near-)equal size.
std::vector<GroupReport> sparsity_groups(
    const Split& split, std::span<const std::size_t> cutoffs,
    const ScoreFn& score, std::size_t threads = 1);

/// Overall metrics plus the four interaction-count groups.
EvalReport sparsity_report(const Split& split, const DenseMatrix& final,
                           const HeteroGraph& graph,
                           std::span<const std::size_t> cutoffs = kDefaultCutoffs,
                           bool recalibration = true, std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Ablations

enum class AblationVariant {
  Full,
  NoMemory,             // -M
  NoRecalibration,      // -tau
  NoLayerNorm,          // -LN
  NoItemRelations,      // -T
  NoSocial,             // -S
  NoSocialNoRelations,  // -ST
};

inline constexpr std::array<AblationVariant, 7> kAllAblations{
    AblationVariant::Full,          AblationVariant::NoMemory,
    AblationVariant::NoRecalibration, AblationVariant::NoLayerNorm,
    AblationVariant::NoItemRelations, AblationVariant::NoSocial,
    AblationVariant::NoSocialNoRelations};

std::string_view ablation_name(AblationVariant v);
/// Accepts "full", "-M", "-tau", "-LN", "-T", "-S", "-ST" (and the same
/// without the dash, case-insensitive).
std::optional<AblationVariant> parse_ablation(std::string_view name);

core::ModelVariant model_variant_for(AblationVariant v);
/// The training graph the variant trains and scores on.
HeteroGraph graph_for(AblationVariant v, const HeteroGraph& train_graph);

struct AblationRun {
  EvalReport report;
  train::TrainingRun training;
};

/// Trains the variant from scratch with config.seed and evaluates it.
AblationRun run_ablation(AblationVariant variant, const Split& split,
                         const train::TrainingConfig& config,
                         std::span<const std::size_t> cutoffs = kDefaultCutoffs);

// ---------------------------------------------------------------------------
// Serialization

/// Shortest round-trip decimal for a double.
std::string format_double(double v);

/// `metric<TAB>N<TAB>group<TAB>value` lines; group is "all" or "G1".."G4".
std::string format_report_lines(const EvalReport& report);
/// Human-readable table.
std::string format_report_table(const EvalReport& report);

/// Per user: `user<TAB>UU<TAB>eta_1,...,eta_M` then the same for UI, using
/// the last propagation layer as the attention target.
std::string format_memory_attention(const core::LayerState& state,
                                    const core::ModelParams& params);
void export_memory_attention(const core::LayerState& state,
                             const core::ModelParams& params,
                             const std::filesystem::path& path);

}  // namespace dgnn::eval
