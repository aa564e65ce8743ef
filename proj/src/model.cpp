#include "dgnn/model.hpp"

#include <algorithm>
#include <cmath>

#include "dgnn/rng.hpp"

namespace dgnn::core {

std::string_view edge_type_name(EdgeType type) {
  switch (type) {
    case EdgeType::UU: return "UU";
    case EdgeType::UI: return "UI";
    case EdgeType::IU: return "IU";
    case EdgeType::IR: return "IR";
    case EdgeType::RI: return "RI";
    case EdgeType::SelfUser: return "SelfUser";
    case EdgeType::SelfItem: return "SelfItem";
    case EdgeType::SelfRelation: return "SelfRelation";
  }
  return "?";
}

ModelDims dims_for(const HeteroGraph& graph, std::uint32_t dim,
                   std::uint32_t layers, std::uint32_t memory_units) {
  ModelDims dims;
  dims.users = graph.num_users();
  dims.items = graph.num_items();
  dims.relations = graph.num_relations();
  dims.dim = dim;
  dims.layers = layers;
  dims.memory_units = memory_units;
  return dims;
}

// ---------------------------------------------------------------------------

MemoryBank::MemoryBank(std::size_t units, std::size_t dim, bool attention)
    : units_(units),
      dim_(dim),
      attention_(attention),
      transforms_(units * dim * dim, 0.0),
      keys_(attention ? units * dim : 0, 0.0),
      biases_(attention ? units : 0, 0.0) {
  if (units == 0 || dim == 0) {
    throw std::invalid_argument("MemoryBank: units and dim must be >= 1");
  }
}

BankView MemoryBank::view() const {
  return {units_, dim_, attention_, transforms_, keys_, biases_};
}

MutableBankView MemoryBank::mutable_view() {
  return {units_, dim_, attention_, transforms_, keys_, biases_};
}

// ---------------------------------------------------------------------------

ParamLayout::ParamLayout(const ModelDims& dims, const ModelVariant& variant)
    : dims_(dims), variant_(variant) {
  if (dims.dim == 0 || dims.memory_units == 0) {
    throw std::invalid_argument("ParamLayout: dim and memory units must be >= 1");
  }
  const std::size_t d = dims.dim;
  units_ = variant.memory ? dims.memory_units : 1;
  bank_size_ = units_ * d * d + (variant.memory ? units_ * d + units_ : 0);
  banks_offset_ = dims.node_count() * d;
  ln_offset_ = banks_offset_ + kEdgeTypeCount * bank_size_;
  total_ = ln_offset_ + (variant.layer_norm ? std::size_t{dims.layers} * 2 * d : 0);
}

std::size_t ParamLayout::transforms_offset(EdgeType t) const {
  return banks_offset_ + static_cast<std::size_t>(t) * bank_size_;
}

std::size_t ParamLayout::keys_offset(EdgeType t) const {
  return transforms_offset(t) + units_ * dims_.dim * dims_.dim;
}

std::size_t ParamLayout::biases_offset(EdgeType t) const {
  return keys_offset(t) + (variant_.memory ? units_ * dims_.dim : 0);
}

std::size_t ParamLayout::ln_scale_offset(std::size_t layer) const {
  return ln_offset_ + layer * 2 * dims_.dim;
}

std::size_t ParamLayout::ln_shift_offset(std::size_t layer) const {
  return ln_scale_offset(layer) + dims_.dim;
}

std::vector<ParamGroup> ParamLayout::groups() const {
  const std::size_t d = dims_.dim;
  std::vector<ParamGroup> out;
  out.push_back({"embeddings", 0, dims_.node_count() * d});
  for (EdgeType t : kAllEdgeTypes) {
    const std::string name(edge_type_name(t));
    out.push_back({name + ".W", transforms_offset(t), units_ * d * d});
    if (variant_.memory) {
      out.push_back({name + ".k", keys_offset(t), units_ * d});
      out.push_back({name + ".b", biases_offset(t), units_});
    }
  }
  if (variant_.layer_norm) {
    for (std::size_t l = 0; l < dims_.layers; ++l) {
      out.push_back({"ln" + std::to_string(l) + ".scale", ln_scale_offset(l), d});
      out.push_back({"ln" + std::to_string(l) + ".shift", ln_shift_offset(l), d});
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

ModelParams::ModelParams(const ModelDims& dims, const ModelVariant& variant)
    : dims_(dims),
      variant_(variant),
      layout_(dims, variant),
      values_(layout_.size(), 0.0) {}

std::span<double> ModelParams::embedding(std::size_t node) {
  return std::span<double>(values_).subspan(node * dims_.dim, dims_.dim);
}

std::span<const double> ModelParams::embedding(std::size_t node) const {
  return std::span<const double>(values_).subspan(node * dims_.dim, dims_.dim);
}

BankView ModelParams::bank(EdgeType type) const {
  const std::size_t d = dims_.dim;
  const std::size_t u = layout_.units_per_bank();
  const std::span<const double> all(values_);
  BankView view;
  view.units = u;
  view.dim = d;
  view.attention = variant_.memory;
  view.transforms = all.subspan(layout_.transforms_offset(type), u * d * d);
  if (variant_.memory) {
    view.keys = all.subspan(layout_.keys_offset(type), u * d);
    view.biases = all.subspan(layout_.biases_offset(type), u);
  }
  return view;
}

MutableBankView ModelParams::bank(EdgeType type) {
  const std::size_t d = dims_.dim;
  const std::size_t u = layout_.units_per_bank();
  const std::span<double> all(values_);
  MutableBankView view;
  view.units = u;
  view.dim = d;
  view.attention = variant_.memory;
  view.transforms = all.subspan(layout_.transforms_offset(type), u * d * d);
  if (variant_.memory) {
    view.keys = all.subspan(layout_.keys_offset(type), u * d);
    view.biases = all.subspan(layout_.biases_offset(type), u);
  }
  return view;
}

std::span<double> ModelParams::ln_scale(std::size_t layer) {
  return std::span<double>(values_).subspan(layout_.ln_scale_offset(layer),
                                            dims_.dim);
}
std::span<const double> ModelParams::ln_scale(std::size_t layer) const {
  return std::span<const double>(values_).subspan(
      layout_.ln_scale_offset(layer), dims_.dim);
}
std::span<double> ModelParams::ln_shift(std::size_t layer) {
  return std::span<double>(values_).subspan(layout_.ln_shift_offset(layer),
                                            dims_.dim);
}
std::span<const double> ModelParams::ln_shift(std::size_t layer) const {
  return std::span<const double>(values_).subspan(
      layout_.ln_shift_offset(layer), dims_.dim);
}

double ModelParams::squared_norm() const {
  double s = 0.0;
  for (double v : values_) s += v * v;
  return s;
}

ModelParams initialize_params(const ModelDims& dims, const ModelVariant& variant,
                              std::uint64_t seed) {
  ModelParams params(dims, variant);
  Rng rng(derive_seed(seed, SeedPurpose::Init));
  const double d = dims.dim;
  auto fill_uniform = [&rng](std::span<double> out, double fan_in,
                             double fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : out) v = rng.uniform(-a, a);
  };

  fill_uniform(params.values().first(dims.node_count() * dims.dim),
               static_cast<double>(dims.node_count()), d);
  for (EdgeType t : kAllEdgeTypes) {
    auto bank = params.bank(t);
    fill_uniform(bank.transforms, d, d);
    if (bank.attention) {
      // Keys start at a tenth of the fan-scaled bound so the initial
      // attention stays close to its zero-bias value.
      fill_uniform(bank.keys, d, 1.0);
      for (double& k : bank.keys) k *= kKeyInitScale;
      std::fill(bank.biases.begin(), bank.biases.end(), 0.0);
    }
  }
  if (variant.layer_norm) {
    for (std::size_t l = 0; l < dims.layers; ++l) {
      auto scale = params.ln_scale(l);
      std::fill(scale.begin(), scale.end(), 1.0);
    }
  }
  return params;
}

// ---------------------------------------------------------------------------

std::vector<double> memory_attention(std::span<const double> target,
                                     const BankView& bank) {
  if (target.size() != bank.dim) {
    throw diff::ShapeError("memory_attention: dimension mismatch");
  }
  std::vector<double> eta(bank.units, 1.0);
  if (!bank.attention) return eta;
  for (std::size_t m = 0; m < bank.units; ++m) {
    eta[m] = diff::leaky_relu(diff::dot(target, bank.key(m)) + bank.bias(m),
                              kLeakySlope);
  }
  return eta;
}

std::vector<double> encode_message(std::span<const double> target,
                                   std::span<const double> source,
                                   const BankView& bank) {
  if (source.size() != bank.dim) {
    throw diff::ShapeError("encode_message: dimension mismatch");
  }
  const auto eta = memory_attention(target, bank);
  std::vector<double> out(bank.dim, 0.0);
  for (std::size_t m = 0; m < bank.units; ++m) {
    diff::matvec_accumulate(bank.transform(m), source, eta[m], out);
  }
  return out;
}

}  // namespace dgnn::core
