#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dgnn/diffengine.hpp"
#include "dgnn/hetgraph.hpp"
#include "dgnn/model.hpp"

namespace dgnn::train {

using core::ModelParams;
using graph::HeteroGraph;
using graph::Triplet;

struct TrainingConfig {
  std::uint32_t dim = 16;
  std::uint32_t layers = 2;
  std::uint32_t memory_units = 8;
  double lr = 0.01;
  std::uint32_t batch_size = 2048;
  double lambda = 1e-4;
  std::uint32_t epochs = 60;
  std::uint64_t seed = 2023;
  std::size_t threads = 1;

  /// Throws std::invalid_argument naming the first violated constraint.
  void validate() const;
};

/// -log sigmoid(pos - neg) + lambda * ||Theta||^2 for one triplet.
double bpr_loss(double score_pos, double score_neg, double param_sq_norm,
                double lambda);

struct BatchResult {
  double loss = 0.0;           // (sum of BPR terms + lambda ||Theta||^2) / |batch|
  double ranking_loss = 0.0;   // mean BPR term only
};

/// Full-graph forward; the summed BPR objective with one weight-decay term,
/// divided by the batch size.
/// When `grads` is non-null the exact gradient is accumulated into it.
BatchResult batch_objective(const HeteroGraph& graph, const ModelParams& params,
                            std::span<const Triplet> triplets, double lambda,
                            ModelParams* grads, std::size_t threads = 1);

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EpochResult {
  double mean_loss = 0.0;
  std::size_t batches = 0;
};

/// One pass of ceil(|Y_train| / batch_size) sampled batches, each followed by
/// a single Adam step. Sampling is seeded by (config.seed, epoch_index).
EpochResult train_epoch(const HeteroGraph& graph, ModelParams& params,
                        diff::AdamState& adam, const TrainingConfig& config,
                        std::uint64_t epoch_index);

using EpochCallback = std::function<void(std::uint64_t epoch,
                                        const EpochResult& result,
                                        const ModelParams& params)>;

struct TrainingRun {
  ModelParams params;
  diff::AdamState adam;
  std::vector<double> epoch_losses;
};

/// Initializes parameters from config.seed and runs config.epochs epochs.
TrainingRun train_model(const HeteroGraph& graph, const TrainingConfig& config,
                        const core::ModelVariant& variant = {},
                        const EpochCallback& on_epoch = {});

/// Runs epochs [first_epoch, config.epochs) on existing state.
void continue_training(const HeteroGraph& graph, const TrainingConfig& config,
                       ModelParams& params, diff::AdamState& adam,
                       std::uint64_t first_epoch,
                       std::vector<double>* epoch_losses = nullptr,
                       const EpochCallback& on_epoch = {});

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointErrorCode {
  Io,
  Truncated,
  BadMagic,
  UnsupportedVersion,
  Malformed,
};

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  CheckpointErrorCode code() const { return code_; }

 private:
  CheckpointErrorCode code_;
};

struct CheckpointMeta {
  std::uint64_t epoch = 0;
  double loss = 0.0;
  bool operator==(const CheckpointMeta&) const = default;
};

struct Checkpoint {
  ModelParams params;
  std::optional<diff::AdamState> adam;
  CheckpointMeta meta;
};

void save_checkpoint(const std::filesystem::path& path,
                     const ModelParams& params, const diff::AdamState* adam,
                     const CheckpointMeta& meta);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dgnn::train
