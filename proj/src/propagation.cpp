#include <algorithm>
#include <array>
#include <cmath>

#include "dgnn/model.hpp"
#include "dgnn/parallel.hpp"

namespace dgnn::core {

namespace {

using diff::leaky_relu;
using diff::leaky_relu_derivative;
using graph::Adjacency;

constexpr std::size_t kSlots = 2;        // neighbor banks per node kind, max
constexpr std::size_t kScoreSlots = 3;   // neighbor banks + self bank

struct Slot {
  EdgeType type;
  const Adjacency* adjacency;
  std::size_t source_base;  // global id of the source kind's first node
};

struct NodeSlots {
  std::array<Slot, kSlots> slots{};
  std::size_t count = 0;
  EdgeType self = EdgeType::SelfUser;
  std::size_t local = 0;  // id within the node's kind
};

NodeSlots slots_for(std::size_t node, const ModelDims& dims,
                    const HeteroGraph& g) {
  NodeSlots ns;
  switch (dims.kind_of(node)) {
    case NodeKind::User:
      ns.local = node;
      ns.slots[0] = {EdgeType::UU, &g.user_friends(), 0};
      ns.slots[1] = {EdgeType::UI, &g.user_items(), dims.users};
      ns.count = 2;
      ns.self = EdgeType::SelfUser;
      break;
    case NodeKind::Item:
      ns.local = node - dims.users;
      ns.slots[0] = {EdgeType::IU, &g.item_users(), 0};
      ns.slots[1] = {EdgeType::IR, &g.item_relations(),
                     std::size_t{dims.users} + dims.items};
      ns.count = 2;
      ns.self = EdgeType::SelfItem;
      break;
    case NodeKind::Relation:
      ns.local = node - dims.users - dims.items;
      ns.slots[0] = {EdgeType::RI, &g.relation_items(), dims.users};
      ns.count = 1;
      ns.self = EdgeType::SelfRelation;
      break;
  }
  return ns;
}

std::size_t total_degree(const NodeSlots& ns) {
  std::size_t deg = 0;
  for (std::size_t k = 0; k < ns.count; ++k) {
    deg += ns.slots[k].adjacency->degree(ns.local);
  }
  return deg;
}

void check_graph(const HeteroGraph& g, const ModelDims& dims) {
  if (g.num_users() != dims.users || g.num_items() != dims.items ||
      g.num_relations() != dims.relations) {
    throw diff::ShapeError("graph node counts do not match model dimensions");
  }
}

/// Attention pre-activations into `scores`, weights into `eta`.
void attention_into(std::span<const double> target, const BankView& bank,
                    std::span<double> scores, std::span<double> eta) {
  for (std::size_t m = 0; m < bank.units; ++m) {
    if (bank.attention) {
      scores[m] = diff::dot(target, bank.key(m)) + bank.bias(m);
      eta[m] = leaky_relu(scores[m], kLeakySlope);
    } else {
      scores[m] = 0.0;
      eta[m] = 1.0;
    }
  }
}

/// Mean of encoded neighbor messages for `node`. Optionally records the
/// per-slot neighbor sums and attention pre-activations.
void aggregate_into(std::size_t node, const DenseMatrix& h,
                    const HeteroGraph& g, const ModelParams& p,
                    std::span<double> z, std::span<double> sums_out,
                    std::span<double> scores_out) {
  const auto& dims = p.dims();
  const std::size_t d = dims.dim;
  const NodeSlots ns = slots_for(node, dims, g);
  std::fill(z.begin(), z.end(), 0.0);
  const std::size_t deg = total_degree(ns);

  std::vector<double> local_sum(sums_out.empty() ? d : 0);
  std::vector<double> local_scores(scores_out.empty() ? p.layout().units_per_bank() : 0);
  std::vector<double> eta(p.layout().units_per_bank());

  for (std::size_t k = 0; k < ns.count; ++k) {
    const Slot& slot = ns.slots[k];
    std::span<double> sum = sums_out.empty()
                                ? std::span<double>(local_sum)
                                : sums_out.subspan(k * d, d);
    std::fill(sum.begin(), sum.end(), 0.0);
    for (NodeId s : slot.adjacency->neighbors(ns.local)) {
      const auto row = h.row(slot.source_base + s);
      for (std::size_t i = 0; i < d; ++i) sum[i] += row[i];
    }
    const BankView bank = p.bank(slot.type);
    std::span<double> scores =
        scores_out.empty() ? std::span<double>(local_scores)
                           : scores_out.subspan(k * bank.units, bank.units);
    attention_into(h.row(node), bank, scores, eta);
    if (slot.adjacency->degree(ns.local) == 0) continue;
    for (std::size_t m = 0; m < bank.units; ++m) {
      diff::matvec_accumulate(bank.transform(m), sum, eta[m], z);
    }
  }
  if (deg > 0) {
    const double inv = 1.0 / static_cast<double>(deg);
    for (double& v : z) v *= inv;
  }
}

/// One node of a layer step. `trace` may be null.
void node_step(std::size_t node, const DenseMatrix& h, std::size_t layer,
               const HeteroGraph& g, const ModelParams& p,
               std::span<double> out, LayerTrace* trace) {
  const auto& dims = p.dims();
  const std::size_t d = dims.dim;
  const std::size_t units = p.layout().units_per_bank();

  std::vector<double> z(d);
  std::span<double> sums;
  std::span<double> scores;
  if (trace) {
    sums = std::span<double>(trace->slot_sums).subspan(node * kSlots * d,
                                                       kSlots * d);
    scores = std::span<double>(trace->slot_scores)
                 .subspan(node * kScoreSlots * units, kScoreSlots * units);
  }
  aggregate_into(node, h, g, p, z,
                 sums, scores.empty() ? scores : scores.first(kSlots * units));

  std::vector<double> pre(d);
  if (p.variant().layer_norm) {
    std::vector<double> normalized_local(trace ? 0 : d);
    std::span<double> normalized =
        trace ? trace->normalized.row(node) : std::span<double>(normalized_local);
    const auto stats =
        diff::layer_normalize(z, p.ln_scale(layer), p.ln_shift(layer),
                              kLayerNormEpsilon, normalized, pre);
    if (trace) trace->stats[node] = stats;
  } else {
    pre = z;
  }
  if (trace) std::copy(pre.begin(), pre.end(), trace->pre_activation.row(node).begin());
  for (std::size_t i = 0; i < d; ++i) out[i] = leaky_relu(pre[i], kLeakySlope);

  const NodeSlots ns = slots_for(node, dims, g);
  const BankView self_bank = p.bank(ns.self);
  std::vector<double> self_scores_local(units);
  std::span<double> self_scores =
      trace ? scores.subspan(kSlots * units, units)
            : std::span<double>(self_scores_local);
  std::vector<double> eta(units);
  attention_into(h.row(node), self_bank, self_scores, eta);
  for (std::size_t m = 0; m < units; ++m) {
    diff::matvec_accumulate(self_bank.transform(m), h.row(node), eta[m], out);
  }
}

DenseMatrix step_impl(const DenseMatrix& h, std::size_t layer,
                      const HeteroGraph& g, const ModelParams& p,
                      std::size_t threads, LayerTrace* trace) {
  const auto& dims = p.dims();
  const std::size_t n = dims.node_count();
  const std::size_t d = dims.dim;
  if (h.rows() != n || h.cols() != d) {
    throw diff::ShapeError("layer_step: embedding matrix has the wrong shape");
  }
  if (trace) {
    const std::size_t units = p.layout().units_per_bank();
    trace->pre_activation = DenseMatrix(n, d);
    trace->normalized = DenseMatrix(p.variant().layer_norm ? n : 0, d);
    trace->stats.assign(n, {});
    trace->slot_sums.assign(n * kSlots * d, 0.0);
    trace->slot_scores.assign(n * kScoreSlots * units, 0.0);
  }
  DenseMatrix out(n, d);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      node_step(v, h, layer, g, p, out.row(v), trace);
    }
  });
  return out;
}

DenseMatrix final_impl(const std::vector<DenseMatrix>& layers,
                       DenseMatrix* normalized_out,
                       std::vector<diff::LayerNormStats>* stats_out) {
  if (layers.empty()) throw diff::ShapeError("final_embeddings: no layers");
  const std::size_t n = layers.front().rows();
  const std::size_t d = layers.front().cols();
  const std::size_t width = layers.size() * d;
  DenseMatrix out(n, width);
  if (normalized_out) *normalized_out = DenseMatrix(n, width);
  if (stats_out) stats_out->assign(n, {});
  const std::vector<double> ones(width, 1.0);
  const std::vector<double> zeros(width, 0.0);
  std::vector<double> concat(width);
  std::vector<double> normalized(width);
  for (std::size_t v = 0; v < n; ++v) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
      const auto row = layers[l].row(v);
      std::copy(row.begin(), row.end(), concat.begin() + l * d);
    }
    std::span<double> norm_span =
        normalized_out ? normalized_out->row(v) : std::span<double>(normalized);
    const auto stats = diff::layer_normalize(concat, ones, zeros,
                                             kLayerNormEpsilon, norm_span,
                                             out.row(v));
    if (stats_out) (*stats_out)[v] = stats;
  }
  return out;
}

struct BackwardScratch {
  std::vector<double> upstream;    // N x 3 x d: per-slot gradient of the bank output
  std::vector<double> score_grad;  // N x 3 x units
  std::vector<double> source_grad; // N x 2 x d: gradient w.r.t. neighbor sums
  DenseMatrix act_grad;            // N x d: gradient at the normalized-affine output
};

/// Gradient of one bank application y = (sum_m eta_m W_m) x through the
/// attention scores and the input x. Writes ds into score_grad, adds
/// sum_m ds_m k_m into d_target and A^T g into d_source.
void bank_backward(const BankView& bank, std::span<const double> x,
                   std::span<const double> scores, std::span<const double> g,
                   std::span<double> score_grad, std::span<double> d_target,
                   std::span<double> d_source) {
  const std::size_t d = bank.dim;
  std::vector<double> wx(d);
  for (std::size_t m = 0; m < bank.units; ++m) {
    const double eta =
        bank.attention ? leaky_relu(scores[m], kLeakySlope) : 1.0;
    if (bank.attention) {
      std::fill(wx.begin(), wx.end(), 0.0);
      diff::matvec_accumulate(bank.transform(m), x, 1.0, wx);
      const double ds = diff::dot(g, wx) *
                        leaky_relu_derivative(scores[m], kLeakySlope);
      score_grad[m] = ds;
      const auto key = bank.key(m);
      for (std::size_t i = 0; i < d; ++i) d_target[i] += ds * key[i];
    }
    diff::matvec_transposed_accumulate(bank.transform(m), g, eta, d_source);
  }
}

void layer_backward(std::size_t layer, const DenseMatrix& h,
                    const LayerTrace& trace, const DenseMatrix& d_out,
                    const HeteroGraph& g, const ModelParams& p,
                    DenseMatrix& d_h, ModelParams& grads, std::size_t threads) {
  const auto& dims = p.dims();
  const std::size_t n = dims.node_count();
  const std::size_t d = dims.dim;
  const std::size_t units = p.layout().units_per_bank();

  BackwardScratch s;
  s.upstream.assign(n * kScoreSlots * d, 0.0);
  s.score_grad.assign(n * kScoreSlots * units, 0.0);
  s.source_grad.assign(n * kSlots * d, 0.0);
  s.act_grad = DenseMatrix(n, d);

  // Phase A: node-local gradients.
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> dz(d);
    for (std::size_t v = begin; v < end; ++v) {
      const NodeSlots ns = slots_for(v, dims, g);
      const auto g_out = d_out.row(v);
      const auto scores = std::span<const double>(trace.slot_scores)
                              .subspan(v * kScoreSlots * units,
                                       kScoreSlots * units);
      auto upstream = std::span<double>(s.upstream)
                          .subspan(v * kScoreSlots * d, kScoreSlots * d);
      auto score_grad = std::span<double>(s.score_grad)
                            .subspan(v * kScoreSlots * units,
                                     kScoreSlots * units);
      auto d_row = d_h.row(v);

      // self-propagation
      std::copy(g_out.begin(), g_out.end(), upstream.begin() + kSlots * d);
      bank_backward(p.bank(ns.self), h.row(v),
                    scores.subspan(kSlots * units, units), g_out,
                    score_grad.subspan(kSlots * units, units), d_row, d_row);

      // activation and normalization
      const auto pre = trace.pre_activation.row(v);
      auto act = s.act_grad.row(v);
      for (std::size_t i = 0; i < d; ++i) {
        act[i] = g_out[i] * leaky_relu_derivative(pre[i], kLeakySlope);
      }
      std::fill(dz.begin(), dz.end(), 0.0);
      if (p.variant().layer_norm) {
        diff::layer_normalize_backward(trace.normalized.row(v),
                                       trace.stats[v], p.ln_scale(layer), act,
                                       dz, {}, {});
      } else {
        std::copy(act.begin(), act.end(), dz.begin());
      }

      const std::size_t deg = total_degree(ns);
      if (deg == 0) continue;
      const double inv = 1.0 / static_cast<double>(deg);
      for (std::size_t k = 0; k < ns.count; ++k) {
        if (ns.slots[k].adjacency->degree(ns.local) == 0) continue;
        auto gg = upstream.subspan(k * d, d);
        for (std::size_t i = 0; i < d; ++i) gg[i] = dz[i] * inv;
        const auto sum = std::span<const double>(trace.slot_sums)
                             .subspan((v * kSlots + k) * d, d);
        auto d_source =
            std::span<double>(s.source_grad).subspan((v * kSlots + k) * d, d);
        bank_backward(p.bank(ns.slots[k].type), sum,
                      scores.subspan(k * units, units), gg,
                      score_grad.subspan(k * units, units), d_row, d_source);
      }
    }
  });

  // Phase B: parameter gradients, one task per (bank, unit) plus the
  // normalization parameters. Each task reduces over nodes in id order.
  struct BankTargets {
    EdgeType type;
    std::size_t first;
    std::size_t count;
    std::size_t slot;  // 0/1 neighbor slot, 2 = self
  };
  const std::size_t users = dims.users;
  const std::size_t items = dims.items;
  const std::size_t rels = dims.relations;
  const std::array<BankTargets, kEdgeTypeCount> targets{{
      {EdgeType::UU, 0, users, 0},
      {EdgeType::UI, 0, users, 1},
      {EdgeType::IU, users, items, 0},
      {EdgeType::IR, users, items, 1},
      {EdgeType::RI, users + items, rels, 0},
      {EdgeType::SelfUser, 0, users, 2},
      {EdgeType::SelfItem, users, items, 2},
      {EdgeType::SelfRelation, users + items, rels, 2},
  }};
  const std::size_t bank_tasks = kEdgeTypeCount * units;
  const std::size_t tasks = bank_tasks + (p.variant().layer_norm ? 1 : 0);
  parallel_for(tasks, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t task = begin; task < end; ++task) {
      if (task == bank_tasks) {
        auto d_scale = grads.ln_scale(layer);
        auto d_shift = grads.ln_shift(layer);
        for (std::size_t v = 0; v < n; ++v) {
          const auto act = s.act_grad.row(v);
          const auto normalized = trace.normalized.row(v);
          for (std::size_t i = 0; i < d; ++i) {
            d_scale[i] += act[i] * normalized[i];
            d_shift[i] += act[i];
          }
        }
        continue;
      }
      const BankTargets& bt = targets[task / units];
      const std::size_t m = task % units;
      const BankView bank = p.bank(bt.type);
      MutableBankView d_bank = grads.bank(bt.type);
      auto d_w = d_bank.transform(m);
      for (std::size_t v = bt.first; v < bt.first + bt.count; ++v) {
        const auto gg = std::span<const double>(s.upstream)
                            .subspan((v * kScoreSlots + bt.slot) * d, d);
        const auto x = bt.slot == 2
                           ? h.row(v)
                           : std::span<const double>(trace.slot_sums)
                                 .subspan((v * kSlots + bt.slot) * d, d);
        const double score =
            trace.slot_scores[(v * kScoreSlots + bt.slot) * units + m];
        const double eta =
            bank.attention ? leaky_relu(score, kLeakySlope) : 1.0;
        diff::outer_accumulate(gg, x, eta, d_w);
        if (bank.attention) {
          const double ds =
              s.score_grad[(v * kScoreSlots + bt.slot) * units + m];
          if (ds == 0.0) continue;
          const auto target = h.row(v);
          auto d_key = d_bank.key(m);
          for (std::size_t i = 0; i < d; ++i) d_key[i] += ds * target[i];
          d_bank.bias(m) += ds;
        }
      }
    }
  });

  // Phase C: route neighbor-sum gradients back to each source node.
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    for (std::size_t v = begin; v < end; ++v) {
      auto d_row = d_h.row(v);
      const NodeSlots own = slots_for(v, dims, g);
      auto gather = [&](const Adjacency& targets_of_v, std::size_t target_base,
                        std::size_t slot) {
        for (NodeId t : targets_of_v.neighbors(own.local)) {
          const auto src = std::span<const double>(s.source_grad)
                               .subspan(((target_base + t) * kSlots + slot) * d, d);
          for (std::size_t i = 0; i < d; ++i) d_row[i] += src[i];
        }
      };
      switch (dims.kind_of(v)) {
        case NodeKind::User:
          gather(g.user_friends(), 0, 0);    // as UU source
          gather(g.user_items(), users, 0);  // as IU source
          break;
        case NodeKind::Item:
          gather(g.item_users(), 0, 1);                  // as UI source
          gather(g.item_relations(), users + items, 0);  // as RI source
          break;
        case NodeKind::Relation:
          gather(g.relation_items(), users, 1);  // as IR source
          break;
      }
    }
  });
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<double> aggregate_user(NodeId u, const DenseMatrix& h,
                                   const HeteroGraph& graph,
                                   const ModelParams& params) {
  check_graph(graph, params.dims());
  std::vector<double> z(params.dims().dim);
  aggregate_into(params.dims().user_node(u), h, graph, params, z, {}, {});
  return z;
}

std::vector<double> aggregate_item(NodeId v, const DenseMatrix& h,
                                   const HeteroGraph& graph,
                                   const ModelParams& params) {
  check_graph(graph, params.dims());
  std::vector<double> z(params.dims().dim);
  aggregate_into(params.dims().item_node(v), h, graph, params, z, {}, {});
  return z;
}

std::vector<double> aggregate_relation(NodeId r, const DenseMatrix& h,
                                       const HeteroGraph& graph,
                                       const ModelParams& params) {
  check_graph(graph, params.dims());
  std::vector<double> z(params.dims().dim);
  aggregate_into(params.dims().relation_node(r), h, graph, params, z, {}, {});
  return z;
}

DenseMatrix layer_step(const DenseMatrix& h, std::size_t layer,
                       const HeteroGraph& graph, const ModelParams& params,
                       std::size_t threads) {
  check_graph(graph, params.dims());
  return step_impl(h, layer, graph, params, threads, nullptr);
}

DenseMatrix final_embeddings(const std::vector<DenseMatrix>& layers) {
  return final_impl(layers, nullptr, nullptr);
}

std::vector<double> recalibrate(NodeId u, const DenseMatrix& final,
                                const HeteroGraph& graph) {
  const auto friends = graph.user_friends().neighbors(u);
  const auto own = final.row(u);
  std::vector<double> tau(own.begin(), own.end());
  for (NodeId f : friends) {
    const auto row = final.row(f);
    for (std::size_t i = 0; i < tau.size(); ++i) tau[i] += row[i];
  }
  const double inv = 1.0 / static_cast<double>(friends.size() + 1);
  for (double& v : tau) v *= inv;
  return tau;
}

double predict(NodeId u, NodeId v, const DenseMatrix& final,
               const HeteroGraph& graph, bool recalibration) {
  const auto user = final.row(u);
  const auto item = final.row(std::size_t{graph.num_users()} + v);
  if (!recalibration) return diff::dot(user, item);
  const auto tau = recalibrate(u, final, graph);
  double s = 0.0;
  for (std::size_t i = 0; i < user.size(); ++i) s += (user[i] + tau[i]) * item[i];
  return s;
}

LayerState forward(const HeteroGraph& graph, const ModelParams& params,
                   std::size_t threads) {
  check_graph(graph, params.dims());
  const auto& dims = params.dims();
  LayerState state;
  const auto emb = params.embeddings();
  state.layers.emplace_back(
      dims.node_count(), dims.dim,
      std::vector<double>(emb.values.begin(), emb.values.end()));
  for (std::size_t l = 0; l < dims.layers; ++l) {
    state.layers.push_back(
        step_impl(state.layers.back(), l, graph, params, threads, nullptr));
  }
  state.final = final_embeddings(state.layers);
  return state;
}

ForwardTrace forward_traced(const HeteroGraph& graph, const ModelParams& params,
                            std::size_t threads) {
  check_graph(graph, params.dims());
  const auto& dims = params.dims();
  ForwardTrace trace;
  const auto emb = params.embeddings();
  trace.state.layers.emplace_back(
      dims.node_count(), dims.dim,
      std::vector<double>(emb.values.begin(), emb.values.end()));
  trace.layers.resize(dims.layers);
  for (std::size_t l = 0; l < dims.layers; ++l) {
    trace.state.layers.push_back(step_impl(trace.state.layers.back(), l, graph,
                                           params, threads, &trace.layers[l]));
  }
  trace.state.final = final_impl(trace.state.layers, &trace.final_normalized,
                                 &trace.final_stats);
  return trace;
}

void backward(const HeteroGraph& graph, const ModelParams& params,
              const ForwardTrace& trace, const DenseMatrix& d_final,
              ModelParams& grads, std::size_t threads) {
  const auto& dims = params.dims();
  const std::size_t n = dims.node_count();
  const std::size_t d = dims.dim;
  const std::size_t width = dims.final_dim();
  if (d_final.rows() != n || d_final.cols() != width) {
    throw diff::ShapeError("backward: final gradient has the wrong shape");
  }
  if (!(grads.dims() == dims) || !(grads.variant() == params.variant())) {
    throw diff::ShapeError("backward: gradient buffer shape mismatch");
  }

  std::vector<DenseMatrix> d_layers(dims.layers + 1, DenseMatrix(n, d));
  const std::vector<double> ones(width, 1.0);
  parallel_for(n, threads, [&](std::size_t begin, std::size_t end) {
    std::vector<double> d_concat(width);
    for (std::size_t v = begin; v < end; ++v) {
      const auto up = d_final.row(v);
      if (std::all_of(up.begin(), up.end(), [](double x) { return x == 0.0; })) {
        continue;
      }
      std::fill(d_concat.begin(), d_concat.end(), 0.0);
      diff::layer_normalize_backward(trace.final_normalized.row(v),
                                     trace.final_stats[v], ones, up, d_concat,
                                     {}, {});
      for (std::size_t l = 0; l <= dims.layers; ++l) {
        auto row = d_layers[l].row(v);
        for (std::size_t i = 0; i < d; ++i) row[i] += d_concat[l * d + i];
      }
    }
  });

  for (std::size_t l = dims.layers; l-- > 0;) {
    layer_backward(l, trace.state.layers[l], trace.layers[l], d_layers[l + 1],
                   graph, params, d_layers[l], grads, threads);
  }

  auto d_emb = grads.values().first(n * d);
  const auto src = d_layers[0].values();
  for (std::size_t i = 0; i < n * d; ++i) d_emb[i] += src[i];
}

std::vector<double> user_attention(NodeId u, const LayerState& state,
                                   const ModelParams& params, EdgeType type) {
  return memory_attention(state.layers.back().row(params.dims().user_node(u)),
                          params.bank(type));
}

}  // namespace dgnn::core
