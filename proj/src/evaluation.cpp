#include "dgnn/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "dgnn/parallel.hpp"

namespace dgnn::eval {

std::size_t rank_of_positive(NodeId positive, double positive_score,
                             std::span<const NodeId> negatives,
                             std::span<const double> negative_scores) {
  if (negatives.size() != negative_scores.size()) {
    throw std::invalid_argument("rank_of_positive: score count mismatch");
  }
  std::vector<NodeId> ids(negatives.begin(), negatives.end());
  ids.push_back(positive);
  std::sort(ids.begin(), ids.end());
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::invalid_argument("rank_of_positive: duplicate candidate ids");
  }
  std::size_t ahead = 0;
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    const double s = negative_scores[i];
    if (s > positive_score || (s == positive_score && negatives[i] < positive)) {
      ++ahead;
    }
  }
  return ahead + 1;
}

RankOutcome outcome_at(std::size_t rank, std::size_t cutoff) {
  RankOutcome out;
  out.rank = rank;
  out.hit = rank <= cutoff;
  out.ndcg = out.hit ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
  return out;
}

RankOutcome rank_and_score(NodeId user, NodeId positive,
                           std::span<const NodeId> negatives,
                           const DenseMatrix& final, const HeteroGraph& graph,
                           std::size_t cutoff, bool recalibration) {
  std::vector<double> scores(negatives.size());
  for (std::size_t i = 0; i < negatives.size(); ++i) {
    scores[i] = core::predict(user, negatives[i], final, graph, recalibration);
  }
  const double pos = core::predict(user, positive, final, graph, recalibration);
  return outcome_at(rank_of_positive(positive, pos, negatives, scores), cutoff);
}

const CutoffMetrics& EvalReport::at(std::size_t cutoff) const {
  for (const auto& m : metrics) {
    if (m.cutoff == cutoff) return m;
  }
  throw std::out_of_range("EvalReport: cutoff " + std::to_string(cutoff) +
                          " not evaluated");
}

namespace {

std::vector<std::size_t> compute_ranks(const Split& split, const ScoreFn& score,
                                       std::size_t threads) {
  std::vector<std::size_t> ranks(split.test.size());
  parallel_for(split.test.size(), threads,
               [&](std::size_t begin, std::size_t end) {
                 std::vector<double> neg_scores;
                 for (std::size_t i = begin; i < end; ++i) {
                   const auto& tc = split.test[i];
                   neg_scores.resize(tc.negatives.size());
                   for (std::size_t k = 0; k < tc.negatives.size(); ++k) {
                     neg_scores[k] = score(tc.user, tc.negatives[k]);
                   }
                   ranks[i] = rank_of_positive(tc.item, score(tc.user, tc.item),
                                               tc.negatives, neg_scores);
                 }
               });
  return ranks;
}

std::vector<CutoffMetrics> metrics_from_ranks(
    std::span<const std::size_t> ranks, std::span<const std::size_t> cutoffs) {
  std::vector<CutoffMetrics> out;
  for (std::size_t n : cutoffs) {
    CutoffMetrics m;
    m.cutoff = n;
    for (std::size_t r : ranks) {
      const auto o = outcome_at(r, n);
      m.hr += o.hit ? 1.0 : 0.0;
      m.ndcg += o.ndcg;
    }
    if (!ranks.empty()) {
      m.hr /= static_cast<double>(ranks.size());
      m.ndcg /= static_cast<double>(ranks.size());
    }
    out.push_back(m);
  }
  return out;
}

ScoreFn model_scorer(const DenseMatrix& final, const HeteroGraph& graph,
                     bool recalibration) {
  return [&final, &graph, recalibration](NodeId u, NodeId v) {
    return core::predict(u, v, final, graph, recalibration);
  };
}

}  // namespace

EvalReport evaluate_scores(const Split& split,
                           std::span<const std::size_t> cutoffs,
                           const ScoreFn& score, std::size_t threads) {
  if (split.test.empty()) throw std::invalid_argument("evaluate: empty test set");
  const auto ranks = compute_ranks(split, score, threads);
  EvalReport report;
  report.users = split.test.size();
  report.metrics = metrics_from_ranks(ranks, cutoffs);
  return report;
}

EvalReport evaluate(const DenseMatrix& final, const Split& split,
                    const HeteroGraph& graph,
                    std::span<const std::size_t> cutoffs, bool recalibration,
                    std::size_t threads) {
  return evaluate_scores(split, cutoffs,
                         model_scorer(final, graph, recalibration), threads);
}

std::vector<GroupReport> sparsity_groups(const Split& split,
                                         std::span<const std::size_t> cutoffs,
                                         const ScoreFn& score,
                                         std::size_t threads) {
  constexpr std::size_t kGroups = 4;
  const std::size_t m = split.test.size();
  if (m < kGroups) {
    throw std::invalid_argument("sparsity report needs at least 4 test users");
  }
  const auto ranks = compute_ranks(split, score, threads);
  const auto& train_items = split.train_graph.user_items();

  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto ua = split.test[a].user;
    const auto ub = split.test[b].user;
    const auto da = train_items.degree(ua);
    const auto db = train_items.degree(ub);
    return da != db ? da < db : ua < ub;
  });

  std::vector<GroupReport> groups;
  for (std::size_t g = 0; g < kGroups; ++g) {
    const std::size_t begin = g * m / kGroups;
    const std::size_t end = (g + 1) * m / kGroups;
    GroupReport gr;
    gr.label = "G" + std::to_string(g + 1);
    gr.users = end - begin;
    std::vector<std::size_t> group_ranks;
    double interactions = 0.0;
    for (std::size_t i = begin; i < end; ++i) {
      group_ranks.push_back(ranks[order[i]]);
      interactions += static_cast<double>(
          train_items.degree(split.test[order[i]].user));
    }
    gr.mean_interactions = interactions / static_cast<double>(gr.users);
    gr.metrics = metrics_from_ranks(group_ranks, cutoffs);
    groups.push_back(std::move(gr));
  }
  return groups;
}

EvalReport sparsity_report(const Split& split, const DenseMatrix& final,
                           const HeteroGraph& graph,
                           std::span<const std::size_t> cutoffs,
                           bool recalibration, std::size_t threads) {
  const auto scorer = model_scorer(final, graph, recalibration);
  EvalReport report = evaluate_scores(split, cutoffs, scorer, threads);
  report.groups = sparsity_groups(split, cutoffs, scorer, threads);
  return report;
}

// ---------------------------------------------------------------------------

std::string_view ablation_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::Full: return "full";
    case AblationVariant::NoMemory: return "-M";
    case AblationVariant::NoRecalibration: return "-tau";
    case AblationVariant::NoLayerNorm: return "-LN";
    case AblationVariant::NoItemRelations: return "-T";
    case AblationVariant::NoSocial: return "-S";
    case AblationVariant::NoSocialNoRelations: return "-ST";
  }
  return "?";
}

std::optional<AblationVariant> parse_ablation(std::string_view name) {
  std::string key;
  for (char c : name) {
    key.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  if (!key.empty() && key.front() == '-') key.erase(0, 1);
  if (key == "full") return AblationVariant::Full;
  if (key == "m") return AblationVariant::NoMemory;
  if (key == "tau") return AblationVariant::NoRecalibration;
  if (key == "ln") return AblationVariant::NoLayerNorm;
  if (key == "t") return AblationVariant::NoItemRelations;
  if (key == "s") return AblationVariant::NoSocial;
  if (key == "st") return AblationVariant::NoSocialNoRelations;
  return std::nullopt;
}

core::ModelVariant model_variant_for(AblationVariant v) {
  core::ModelVariant mv;
  mv.memory = v != AblationVariant::NoMemory;
  mv.layer_norm = v != AblationVariant::NoLayerNorm;
  mv.recalibration = v != AblationVariant::NoRecalibration;
  return mv;
}

HeteroGraph graph_for(AblationVariant v, const HeteroGraph& train_graph) {
  switch (v) {
    case AblationVariant::NoItemRelations: return train_graph.without(false, true);
    case AblationVariant::NoSocial: return train_graph.without(true, false);
    case AblationVariant::NoSocialNoRelations: return train_graph.without(true, true);
    default: return train_graph;
  }
}

AblationRun run_ablation(AblationVariant variant, const Split& split,
                         const train::TrainingConfig& config,
                         std::span<const std::size_t> cutoffs) {
  const HeteroGraph graph = graph_for(variant, split.train_graph);
  const core::ModelVariant mv = model_variant_for(variant);
  AblationRun run{{}, train::train_model(graph, config, mv)};
  const auto state = core::forward(graph, run.training.params, config.threads);
  run.report = evaluate(state.final, split, graph, cutoffs, mv.recalibration,
                        config.threads);
  return run;
}

// ---------------------------------------------------------------------------

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  if (ec != std::errc()) throw std::runtime_error("format_double failed");
  return std::string(buf.data(), ptr);
}

std::string format_report_lines(const EvalReport& report) {
  std::ostringstream out;
  out << "users\t0\tall\t" << report.users << '\n';
  auto emit = [&out](const std::vector<CutoffMetrics>& metrics,
                     const std::string& group) {
    for (const auto& m : metrics) {
      out << "hr\t" << m.cutoff << '\t' << group << '\t' << format_double(m.hr)
          << '\n';
      out << "ndcg\t" << m.cutoff << '\t' << group << '\t'
          << format_double(m.ndcg) << '\n';
    }
  };
  emit(report.metrics, "all");
  for (const auto& g : report.groups) {
    out << "users\t0\t" << g.label << '\t' << g.users << '\n';
    out << "mean_interactions\t0\t" << g.label << '\t'
        << format_double(g.mean_interactions) << '\n';
    emit(g.metrics, g.label);
  }
  return out.str();
}

std::string format_report_table(const EvalReport& report) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "group  users  mean_int";
  for (const auto& m : report.metrics) {
    out << "  HR@" << std::setw(2) << std::left << m.cutoff << std::right
        << "  NDCG@" << std::setw(2) << std::left << m.cutoff << std::right;
  }
  out << '\n';
  auto row = [&out](const std::string& label, std::size_t users,
                    std::optional<double> mean_int,
                    const std::vector<CutoffMetrics>& metrics) {
    out << std::setw(5) << std::left << label << std::right << "  "
        << std::setw(5) << users << "  ";
    if (mean_int) {
      out << std::setw(8) << *mean_int;
    } else {
      out << std::setw(8) << "-";
    }
    for (const auto& m : metrics) {
      out << "  " << std::setw(6) << m.hr << "  " << std::setw(8) << m.ndcg;
    }
    out << '\n';
  };
  row("all", report.users, std::nullopt, report.metrics);
  for (const auto& g : report.groups) {
    row(g.label, g.users, g.mean_interactions, g.metrics);
  }
  return out.str();
}

std::string format_memory_attention(const core::LayerState& state,
                                    const core::ModelParams& params) {
  std::ostringstream out;
  for (NodeId u = 0; u < params.dims().users; ++u) {
    for (core::EdgeType type : {core::EdgeType::UU, core::EdgeType::UI}) {
      const auto eta = core::user_attention(u, state, params, type);
      out << u << '\t' << core::edge_type_name(type) << '\t';
      for (std::size_t m = 0; m < eta.size(); ++m) {
        if (m) out << ',';
        out << format_double(eta[m]);
      }
      out << '\n';
    }
  }
  return out.str();
}

void export_memory_attention(const core::LayerState& state,
                             const core::ModelParams& params,
                             const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write attention export " + path.string());
  out << format_memory_attention(state, params);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace dgnn::eval
