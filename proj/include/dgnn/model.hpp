#pragma once

// Memory-augmented heterogeneous message passing: per-edge-type memory banks,
// typed mean aggregation, layer normalization with self-propagation,
// cross-layer concatenation and the socially recalibrated scoring function.

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dgnn/diffengine.hpp"
#include "dgnn/hetgraph.hpp"

namespace dgnn::core {

using diff::DenseMatrix;
using graph::HeteroGraph;
using graph::NodeId;

/// Negative slope of the attention activation and the layer activation.
inline constexpr double kLeakySlope = 0.2;
inline constexpr double kLayerNormEpsilon = 1e-6;
/// Keys are drawn from the fan-scaled range shrunk by this factor.
inline constexpr double kKeyInitScale = 0.1;

/// Message direction is target <- source.
enum class EdgeType : std::uint8_t {
  UU,  // user <- user (social)
  UI,  // user <- item
  IU,  // item <- user
  IR,  // item <- relation node
  RI,  // relation node <- item
  SelfUser,
  SelfItem,
  SelfRelation,
};

inline constexpr std::size_t kEdgeTypeCount = 8;
inline constexpr std::array<EdgeType, kEdgeTypeCount> kAllEdgeTypes{
    EdgeType::UU,       EdgeType::UI,       EdgeType::IU,
    EdgeType::IR,       EdgeType::RI,       EdgeType::SelfUser,
    EdgeType::SelfItem, EdgeType::SelfRelation};

std::string_view edge_type_name(EdgeType type);

enum class NodeKind : std::uint8_t { User, Item, Relation };

struct ModelDims {
  std::uint32_t users = 0;
  std::uint32_t items = 0;
  std::uint32_t relations = 0;
  std::uint32_t dim = 16;
  std::uint32_t layers = 2;
  std::uint32_t memory_units = 8;

  std::size_t node_count() const {
    return std::size_t{users} + items + relations;
  }
  std::size_t final_dim() const { return std::size_t{layers + 1} * dim; }

  NodeId user_node(NodeId u) const { return u; }
  NodeId item_node(NodeId v) const { return users + v; }
  NodeId relation_node(NodeId r) const { return users + items + r; }
  NodeKind kind_of(std::size_t node) const {
    if (node < users) return NodeKind::User;
    if (node < std::size_t{users} + items) return NodeKind::Item;
    return NodeKind::Relation;
  }

  bool operator==(const ModelDims&) const = default;
};

ModelDims dims_for(const HeteroGraph& graph, std::uint32_t dim,
                   std::uint32_t layers, std::uint32_t memory_units);

/// Architectural switches used by the module ablations.
struct ModelVariant {
  /// false: one transform per edge type, attention weight fixed to 1.
  bool memory = true;
  /// false: the per-layer normalization is skipped (activation kept).
  bool layer_norm = true;
  /// false: score with the plain inner product, no social averaging.
  bool recalibration = true;

  bool operator==(const ModelVariant&) const = default;
};

/// Read-only view over one memory bank: `units` transforms (dim x dim),
/// keys (dim) and scalar biases. Without attention there are no keys or
/// biases and every weight is 1.
struct BankView {
  std::size_t units = 0;
  std::size_t dim = 0;
  bool attention = true;
  std::span<const double> transforms;
  std::span<const double> keys;
  std::span<const double> biases;

  diff::MatrixView transform(std::size_t m) const {
    return {transforms.subspan(m * dim * dim, dim * dim), dim, dim};
  }
  std::span<const double> key(std::size_t m) const {
    return keys.subspan(m * dim, dim);
  }
  double bias(std::size_t m) const { return biases[m]; }
};

struct MutableBankView {
  std::size_t units = 0;
  std::size_t dim = 0;
  bool attention = true;
  std::span<double> transforms;
  std::span<double> keys;
  std::span<double> biases;

  std::span<double> transform(std::size_t m) const {
    return transforms.subspan(m * dim * dim, dim * dim);
  }
  std::span<double> key(std::size_t m) const {
    return keys.subspan(m * dim, dim);
  }
  double& bias(std::size_t m) const { return biases[m]; }
};

/// Standalone owning bank, mostly for tests and tools.
class MemoryBank {
 public:
  MemoryBank(std::size_t units, std::size_t dim, bool attention = true);

  std::size_t units() const { return units_; }
  std::size_t dim() const { return dim_; }

  BankView view() const;
  MutableBankView mutable_view();

 private:
  std::size_t units_;
  std::size_t dim_;
  bool attention_;
  std::vector<double> transforms_;
  std::vector<double> keys_;
  std::vector<double> biases_;
};

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

/// Offsets of every parameter group inside the flat parameter vector.
/// Order: embeddings; banks in EdgeType order (transforms, keys, biases);
/// per-layer (scale, shift).
class ParamLayout {
 public:
  ParamLayout(const ModelDims& dims, const ModelVariant& variant);

  std::size_t size() const { return total_; }
  std::size_t units_per_bank() const { return units_; }
  std::size_t embeddings_offset() const { return 0; }
  std::size_t transforms_offset(EdgeType t) const;
  std::size_t keys_offset(EdgeType t) const;
  std::size_t biases_offset(EdgeType t) const;
  std::size_t bank_size() const { return bank_size_; }
  std::size_t ln_scale_offset(std::size_t layer) const;
  std::size_t ln_shift_offset(std::size_t layer) const;

  /// Named groups: "embeddings", "<bank>.W", "<bank>.k", "<bank>.b",
  /// "ln<l>.scale", "ln<l>.shift".
  std::vector<ParamGroup> groups() const;

  bool operator==(const ParamLayout&) const = default;

 private:
  ModelDims dims_;
  ModelVariant variant_;
  std::size_t units_ = 0;
  std::size_t bank_size_ = 0;
  std::size_t banks_offset_ = 0;
  std::size_t ln_offset_ = 0;
  std::size_t total_ = 0;
};

/// All trainable parameters in one flat vector. Also used for gradients.
class ModelParams {
 public:
  ModelParams(const ModelDims& dims, const ModelVariant& variant);

  const ModelDims& dims() const { return dims_; }
  const ModelVariant& variant() const { return variant_; }
  const ParamLayout& layout() const { return layout_; }

  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  std::span<double> embedding(std::size_t node);
  std::span<const double> embedding(std::size_t node) const;
  diff::MatrixView embeddings() const {
    return {std::span<const double>(values_).first(dims_.node_count() *
                                                   dims_.dim),
            dims_.node_count(), dims_.dim};
  }

  BankView bank(EdgeType type) const;
  MutableBankView bank(EdgeType type);

  /// Normalization parameters of the step producing layer `layer + 1`.
  std::span<double> ln_scale(std::size_t layer);
  std::span<const double> ln_scale(std::size_t layer) const;
  std::span<double> ln_shift(std::size_t layer);
  std::span<const double> ln_shift(std::size_t layer) const;

  std::size_t parameter_count() const { return values_.size(); }
  double squared_norm() const;

  /// Zero-valued parameters of the same shape.
  ModelParams zeros_like() const { return ModelParams(dims_, variant_); }

  bool operator==(const ModelParams&) const = default;

 private:
  ModelDims dims_;
  ModelVariant variant_;
  ParamLayout layout_;
  std::vector<double> values_;
};

/// Fan-scaled uniform initialization: embeddings and transforms drawn from
/// U(-a, a) with a = sqrt(6 / (fan_in + fan_out)), keys from the same range
/// times kKeyInitScale; biases 0; layer-norm scale 1 and shift 0.
ModelParams initialize_params(const ModelDims& dims, const ModelVariant& variant,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Per-edge encoder

/// eta_m = leaky_relu(<target, k_m> + b_m). Unnormalized.
std::vector<double> memory_attention(std::span<const double> target,
                                     const BankView& bank);

/// (sum_m eta_m(target) W_m) source.
std::vector<double> encode_message(std::span<const double> target,
                                   std::span<const double> source,
                                   const BankView& bank);

// ---------------------------------------------------------------------------
// Propagation

/// Per-layer embeddings over all nodes (layers[0] = initial embeddings) and
/// the cross-layer normalized concatenation.
struct LayerState {
  std::vector<DenseMatrix> layers;
  DenseMatrix final;
};

/// Typed mean aggregation for one node of layer `h` (rows = global nodes).
std::vector<double> aggregate_user(NodeId u, const DenseMatrix& h,
                                   const HeteroGraph& graph,
                                   const ModelParams& params);
std::vector<double> aggregate_item(NodeId v, const DenseMatrix& h,
                                   const HeteroGraph& graph,
                                   const ModelParams& params);
std::vector<double> aggregate_relation(NodeId r, const DenseMatrix& h,
                                       const HeteroGraph& graph,
                                       const ModelParams& params);

/// Computes layer `layer + 1` from layer `layer`.
DenseMatrix layer_step(const DenseMatrix& h, std::size_t layer,
                       const HeteroGraph& graph, const ModelParams& params,
                       std::size_t threads = 1);

/// Per node, layer-normalizes the concatenation of all layers (scale 1,
/// shift 0).
DenseMatrix final_embeddings(const std::vector<DenseMatrix>& layers);

/// Mean of the user's final embedding and its social neighbors'.
std::vector<double> recalibrate(NodeId u, const DenseMatrix& final,
                                const HeteroGraph& graph);

/// (H*[u] + tau(u))^T H*[v], or H*[u]^T H*[v] when `recalibration` is off.
double predict(NodeId u, NodeId v, const DenseMatrix& final,
               const HeteroGraph& graph, bool recalibration = true);

LayerState forward(const HeteroGraph& graph, const ModelParams& params,
                   std::size_t threads = 1);

// ---------------------------------------------------------------------------
// Forward with saved intermediates, and the matching backward.

struct LayerTrace {
  DenseMatrix pre_activation;  // normalized-affine (or raw) aggregate, N x d
  DenseMatrix normalized;      // pre-scale normalized aggregate, N x d
  std::vector<diff::LayerNormStats> stats;  // N
  std::vector<double> slot_sums;    // N x 2 x d neighbor sums
  std::vector<double> slot_scores;  // N x 3 x units attention pre-activations
};

struct ForwardTrace {
  LayerState state;
  std::vector<LayerTrace> layers;                 // one per step
  DenseMatrix final_normalized;                   // N x d*
  std::vector<diff::LayerNormStats> final_stats;  // N
};

ForwardTrace forward_traced(const HeteroGraph& graph, const ModelParams& params,
                            std::size_t threads = 1);

/// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(H*).
void backward(const HeteroGraph& graph, const ModelParams& params,
              const ForwardTrace& trace, const DenseMatrix& d_final,
              ModelParams& grads, std::size_t threads = 1);

/// Attention weights eta(H^{(L)}[u], .) of bank `type` for user u.
std::vector<double> user_attention(NodeId u, const LayerState& state,
                                   const ModelParams& params, EdgeType type);

}  // namespace dgnn::core
