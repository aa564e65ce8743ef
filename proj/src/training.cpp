#include "dgnn/training.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

namespace dgnn::train {

void TrainingConfig::validate() const {
  auto require = [](bool ok, const char* what) {
    if (!ok) throw std::invalid_argument(std::string("invalid config: ") + what);
  };
  require(dim >= 1, "dim must be >= 1");
  require(memory_units >= 1, "memory_units must be >= 1");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(lr >= 0.0 && std::isfinite(lr), "lr must be finite and >= 0");
  require(lambda >= 0.0 && std::isfinite(lambda), "lambda must be finite and >= 0");
  require(threads >= 1, "threads must be >= 1");
}

double bpr_loss(double score_pos, double score_neg, double param_sq_norm,
                double lambda) {
  return diff::softplus(-(score_pos - score_neg)) + lambda * param_sq_norm;
}

BatchResult batch_objective(const HeteroGraph& graph, const ModelParams& params,
                            std::span<const Triplet> triplets, double lambda,
                            ModelParams* grads, std::size_t threads) {
  if (triplets.empty()) {
    throw std::invalid_argument("batch_objective: empty batch");
  }
  const auto& dims = params.dims();
  const bool recal = params.variant().recalibration;
  const std::size_t width = dims.final_dim();

  core::ForwardTrace trace;
  core::LayerState plain;
  if (grads) {
    trace = core::forward_traced(graph, params, threads);
  } else {
    plain = core::forward(graph, params, threads);
  }
  const core::DenseMatrix& final = grads ? trace.state.final : plain.final;

  core::DenseMatrix d_final;
  if (grads) d_final = core::DenseMatrix(final.rows(), width);

  const double inv_batch = 1.0 / static_cast<double>(triplets.size());
  double ranking = 0.0;
  std::vector<double> anchor(width);  // H*[u] + tau(u), or H*[u]
  for (const Triplet& t : triplets) {
    const auto user = final.row(t.user);
    const auto friends = graph.user_friends().neighbors(t.user);
    const double w = 1.0 / static_cast<double>(friends.size() + 1);
    std::copy(user.begin(), user.end(), anchor.begin());
    if (recal) {
      for (std::size_t i = 0; i < width; ++i) anchor[i] += w * user[i];
      for (graph::NodeId f : friends) {
        const auto row = final.row(f);
        for (std::size_t i = 0; i < width; ++i) anchor[i] += w * row[i];
      }
    }
    const std::size_t pos_node = dims.item_node(t.positive);
    const std::size_t neg_node = dims.item_node(t.negative);
    const double margin = diff::dot(anchor, final.row(pos_node)) -
                          diff::dot(anchor, final.row(neg_node));
    ranking += diff::softplus(-margin);
    if (!grads) continue;

    // d softplus(-margin) / d margin
    const double coef = -diff::sigmoid(-margin) * inv_batch;
    const auto pos = final.row(pos_node);
    const auto neg = final.row(neg_node);
    auto d_pos = d_final.row(pos_node);
    auto d_neg = d_final.row(neg_node);
    for (std::size_t i = 0; i < width; ++i) {
      d_pos[i] += coef * anchor[i];
      d_neg[i] -= coef * anchor[i];
    }
    auto d_user = d_final.row(t.user);
    const double self_weight = recal ? 1.0 + w : 1.0;
    for (std::size_t i = 0; i < width; ++i) {
      d_user[i] += coef * self_weight * (pos[i] - neg[i]);
    }
    if (recal) {
      for (graph::NodeId f : friends) {
        auto d_friend = d_final.row(f);
        for (std::size_t i = 0; i < width; ++i) {
          d_friend[i] += coef * w * (pos[i] - neg[i]);
        }
      }
    }
  }

  BatchResult result;
  result.ranking_loss = ranking * inv_batch;
  // The summed objective carries the weight decay once per batch; dividing
  // it by the batch size leaves lambda / |batch| on the decay term.
  const double decay = lambda * inv_batch;
  result.loss = result.ranking_loss + decay * params.squared_norm();

  if (grads) {
    core::backward(graph, params, trace, d_final, *grads, threads);
    if (decay != 0.0) {
      auto g = grads->values();
      const auto p = params.values();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * decay * p[i];
    }
  }
  return result;
}

EpochResult train_epoch(const HeteroGraph& graph, ModelParams& params,
                        diff::AdamState& adam, const TrainingConfig& config,
                        std::uint64_t epoch_index) {
  config.validate();
  const std::size_t interactions = graph.interaction_count();
  if (interactions == 0) throw TrainingError("train_epoch: no interactions");
  if (adam.first_moment.size() != params.parameter_count()) {
    adam = diff::AdamState(params.parameter_count());
  }

  Rng rng(derive_seed(config.seed, SeedPurpose::Triplets, epoch_index));
  const std::size_t batches =
      (interactions + config.batch_size - 1) / config.batch_size;
  std::vector<Triplet> batch(config.batch_size);
  ModelParams grads = params.zeros_like();

  EpochResult result;
  double total = 0.0;
  for (std::size_t b = 0; b < batches; ++b) {
    for (auto& t : batch) t = graph::sample_bpr_triplet(graph, rng);
    std::fill(grads.values().begin(), grads.values().end(), 0.0);
    const BatchResult br =
        batch_objective(graph, params, batch, config.lambda, &grads,
                        config.threads);
    if (!std::isfinite(br.loss)) {
      double grad_sq = 0.0;
      for (double g : grads.values()) grad_sq += g * g;
      std::ostringstream msg;
      msg << "non-finite loss at epoch " << epoch_index << ", batch " << b
          << " (||params|| = " << std::sqrt(params.squared_norm())
          << ", ||grad|| = " << std::sqrt(grad_sq) << ")";
      throw TrainingError(msg.str());
    }
    diff::adam_step(params.values(), grads.values(), adam, config.lr);
    total += br.loss;
    ++result.batches;
  }
  result.mean_loss = total / static_cast<double>(result.batches);
  return result;
}

TrainingRun train_model(const HeteroGraph& graph, const TrainingConfig& config,
                        const core::ModelVariant& variant,
                        const EpochCallback& on_epoch) {
  config.validate();
  const auto dims = core::dims_for(graph, config.dim, config.layers,
                                   config.memory_units);
  TrainingRun run{core::initialize_params(dims, variant, config.seed), {}, {}};
  run.adam = diff::AdamState(run.params.parameter_count());
  continue_training(graph, config, run.params, run.adam, 0, &run.epoch_losses,
                    on_epoch);
  return run;
}

void continue_training(const HeteroGraph& graph, const TrainingConfig& config,
                       ModelParams& params, diff::AdamState& adam,
                       std::uint64_t first_epoch,
                       std::vector<double>* epoch_losses,
                       const EpochCallback& on_epoch) {
  for (std::uint64_t e = first_epoch; e < config.epochs; ++e) {
    const EpochResult r = train_epoch(graph, params, adam, config, e);
    if (epoch_losses) epoch_losses->push_back(r.mean_loss);
    if (on_epoch) on_epoch(e, r, params);
  }
}

// ---------------------------------------------------------------------------
// Checkpoint encoding: little-endian regardless of host order.

namespace {

constexpr char kMagic[8] = {'D', 'G', 'N', 'N', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kFlagAdam = 1u << 0;
constexpr std::uint32_t kFlagNoMemory = 1u << 1;
constexpr std::uint32_t kFlagNoLayerNorm = 1u << 2;
constexpr std::uint32_t kFlagNoRecalibration = 1u << 3;
constexpr std::uint32_t kKnownFlags =
    kFlagAdam | kFlagNoMemory | kFlagNoLayerNorm | kFlagNoRecalibration;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<char>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<char>(v >> (8 * i)));
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void f64s(std::span<const double> vs) {
    for (double v : vs) f64(v);
  }
  void raw(const char* p, std::size_t n) { bytes_.insert(bytes_.end(), p, p + n); }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  explicit Reader(std::vector<char> bytes) : bytes_(std::move(bytes)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError(CheckpointErrorCode::Truncated,
                            "checkpoint truncated at byte " +
                                std::to_string(bytes_.size()));
    }
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_++]))
           << (8 * i);
    }
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_++]))
           << (8 * i);
    }
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }
  void f64s(std::span<double> out) {
    need(out.size() * 8);
    for (double& v : out) v = f64();
  }
  void raw(char* out, std::size_t n) {
    need(n);
    std::memcpy(out, bytes_.data() + pos_, n);
    pos_ += n;
  }
  bool at_end() const { return pos_ == bytes_.size(); }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params, const diff::AdamState* adam,
                     const CheckpointMeta& meta) {
  const auto& dims = params.dims();
  const auto& variant = params.variant();
  std::uint32_t flags = 0;
  if (adam) flags |= kFlagAdam;
  if (!variant.memory) flags |= kFlagNoMemory;
  if (!variant.layer_norm) flags |= kFlagNoLayerNorm;
  if (!variant.recalibration) flags |= kFlagNoRecalibration;

  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u32(kCheckpointVersion);
  w.u32(dims.users);
  w.u32(dims.items);
  w.u32(dims.relations);
  w.u32(dims.dim);
  w.u32(dims.layers);
  w.u32(dims.memory_units);
  w.u32(flags);
  w.u64(meta.epoch);
  w.f64(meta.loss);
  w.u64(params.parameter_count());
  w.f64s(params.values());
  if (adam) {
    if (adam->first_moment.size() != params.parameter_count() ||
        adam->second_moment.size() != params.parameter_count()) {
      throw CheckpointError(CheckpointErrorCode::Malformed,
                            "optimizer state does not match parameters");
    }
    w.u64(adam->step);
    w.f64(adam->beta1);
    w.f64(adam->beta2);
    w.f64(adam->epsilon);
    w.f64s(adam->first_moment);
    w.f64s(adam->second_moment);
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw CheckpointError(CheckpointErrorCode::Io,
                          "cannot write checkpoint " + path.string());
  }
  out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
  if (!out) {
    throw CheckpointError(CheckpointErrorCode::Io,
                          "write failed for checkpoint " + path.string());
  }
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw CheckpointError(CheckpointErrorCode::Io,
                          "cannot open checkpoint " + path.string());
  }
  Reader r(std::vector<char>(std::istreambuf_iterator<char>(in), {}));

  char magic[8];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(CheckpointErrorCode::BadMagic,
                          path.string() + " is not a DGNN checkpoint");
  }
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw CheckpointError(CheckpointErrorCode::UnsupportedVersion,
                          "unsupported checkpoint version " +
                              std::to_string(version));
  }
  core::ModelDims dims;
  dims.users = r.u32();
  dims.items = r.u32();
  dims.relations = r.u32();
  dims.dim = r.u32();
  dims.layers = r.u32();
  dims.memory_units = r.u32();
  const std::uint32_t flags = r.u32();
  if ((flags & ~kKnownFlags) != 0 || dims.dim == 0 || dims.memory_units == 0) {
    throw CheckpointError(CheckpointErrorCode::Malformed,
                          "checkpoint header has invalid fields");
  }
  core::ModelVariant variant;
  variant.memory = (flags & kFlagNoMemory) == 0;
  variant.layer_norm = (flags & kFlagNoLayerNorm) == 0;
  variant.recalibration = (flags & kFlagNoRecalibration) == 0;

  CheckpointMeta meta;
  meta.epoch = r.u64();
  meta.loss = r.f64();
  const std::uint64_t count = r.u64();

  Checkpoint ckpt{ModelParams(dims, variant), std::nullopt, meta};
  if (count != ckpt.params.parameter_count()) {
    throw CheckpointError(CheckpointErrorCode::Malformed,
                          "parameter count does not match header dimensions");
  }
  r.f64s(ckpt.params.values());
  if (flags & kFlagAdam) {
    diff::AdamState adam(count);
    adam.step = r.u64();
    adam.beta1 = r.f64();
    adam.beta2 = r.f64();
    adam.epsilon = r.f64();
    r.f64s(adam.first_moment);
    r.f64s(adam.second_moment);
    ckpt.adam = std::move(adam);
  }
  if (!r.at_end()) {
    throw CheckpointError(CheckpointErrorCode::Malformed,
                          "trailing bytes after checkpoint payload");
  }
  return ckpt;
}

}  // namespace dgnn::train
