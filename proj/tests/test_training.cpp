#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "dgnn/rng.hpp"
#include "dgnn/synthetic.hpp"
#include "dgnn/training.hpp"
#include "support/fixtures.hpp"

namespace fx = dgnn::testing;

using namespace dgnn;
using namespace dgnn::train;
using core::ModelParams;
using graph::Triplet;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "dgnn_training_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::vector<char> read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void write_bytes(const std::filesystem::path& p, const std::vector<char>& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

CheckpointErrorCode load_error(const std::filesystem::path& p) {
  try {
    load_checkpoint(p);
  } catch (const CheckpointError& e) {
    return e.code();
  }
  ADD_FAILURE() << "load succeeded";
  return CheckpointErrorCode::Io;
}

graph::HeteroGraph small_planted() {
  synth::PlantedConfig cfg;
  cfg.users = 40;
  cfg.items = 80;
  cfg.relations = 10;
  cfg.seed = 3;
  return synth::generate_planted(cfg).build();
}

TrainingConfig small_config() {
  TrainingConfig c;
  c.dim = 8;
  c.layers = 2;
  c.memory_units = 4;
  c.batch_size = 64;
  c.epochs = 4;
  c.seed = 11;
  return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// Loss

TEST(BprLoss, EqualScores) { EXPECT_NEAR(bpr_loss(2.0, 2.0, 5.0, 0.0), std::log(2.0), 1e-15); }

TEST(BprLoss, UnitMargin) {
  // independent scalar evaluation of -log(1 / (1 + e^-1))
  EXPECT_NEAR(bpr_loss(1.0, 0.0, 0.0, 0.0), std::log1p(std::exp(-1.0)), 1e-15);
  EXPECT_NEAR(bpr_loss(1.0, 0.0, 0.0, 0.0), 0.3133, 5e-5);
}

TEST(BprLoss, LargeMarginsStayFinite) {
  EXPECT_GE(bpr_loss(1000.0, 0.0, 0.0, 0.0), 0.0);
  EXPECT_LT(bpr_loss(1000.0, 0.0, 0.0, 0.0), 1e-300);
  EXPECT_NEAR(bpr_loss(0.0, 1000.0, 0.0, 0.0), 1000.0, 1e-9);
}

TEST(BprLoss, WeightDecayAddsLinearly) {
  EXPECT_NEAR(bpr_loss(0.0, 0.0, 3.0, 0.5), std::log(2.0) + 1.5, 1e-15);
}

TEST(BprLoss, NonNegativeProperty) {
  Rng rng(1);
  for (int i = 0; i < 2000; ++i) {
    const double pos = rng.uniform(-50.0, 50.0);
    const double neg = rng.uniform(-50.0, 50.0);
    EXPECT_GE(bpr_loss(pos, neg, rng.uniform(0.0, 10.0), rng.uniform(0.0, 1.0)), 0.0);
  }
}

TEST(BatchObjective, MeanRankingLossPlusScaledDecay) {
  const auto g = small_planted();
  const auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 5);
  Rng rng(2);
  std::vector<Triplet> batch;
  for (int i = 0; i < 7; ++i) batch.push_back(graph::sample_bpr_triplet(g, rng));
  const auto state = core::forward(g, p);
  double sum = 0.0;
  for (const auto& t : batch) {
    sum += bpr_loss(core::predict(t.user, t.positive, state.final, g),
                    core::predict(t.user, t.negative, state.final, g), 0.0, 0.0);
  }
  const double lambda = 0.3;
  const auto r = batch_objective(g, p, batch, lambda, nullptr);
  EXPECT_NEAR(r.ranking_loss, sum / 7.0, 1e-12);
  EXPECT_NEAR(r.loss, (sum + lambda * p.squared_norm()) / 7.0, 1e-12);
}

TEST(BatchObjective, EmptyBatchThrows) {
  const auto g = small_planted();
  const auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 5);
  EXPECT_THROW(batch_objective(g, p, {}, 0.0, nullptr), std::invalid_argument);
}

// Every parameter group, every variant switch, against central differences.
TEST(BatchObjective, GradientMatchesFiniteDifferences) {
  const core::ModelVariant variants[] = {
      {}, {false, true, true}, {true, false, true}, {true, true, false}};
  for (int inst = 0; inst < 8; ++inst) {
    const auto g = synth::generate_uniform(5, 6, 3, 12, 6, 6, 100 + inst).build();
    const std::uint32_t d = inst % 2 ? 4 : 2;
    const std::uint32_t layers = inst % 3;
    const std::uint32_t units = 1 + inst % 3;
    const auto p = fx::random_params(g, d, layers, units, inst, variants[inst % 4], 0.3);
    Rng rng(inst);
    std::vector<Triplet> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(graph::sample_bpr_triplet(g, rng));
    const double lambda = 1e-3;
    auto grads = p.zeros_like();
    batch_objective(g, p, batch, lambda, &grads);
    auto f = [&](std::span<const double> x) {
      ModelParams q = p;
      std::copy(x.begin(), x.end(), q.values().begin());
      return batch_objective(g, q, batch, lambda, nullptr).loss;
    };
    const auto report = diff::finite_diff_check(f, p.values(), grads.values(), 1e-5, 1e-4);
    EXPECT_TRUE(report.passed) << "instance " << inst << " coordinate " << report.worst_coordinate
                               << " rel " << report.max_rel_error;
    for (const auto& group : p.layout().groups()) {
      bool nonzero = false;
      for (std::size_t i = 0; i < group.size; ++i) nonzero |= grads.values()[group.offset + i] != 0.0;
      EXPECT_TRUE(nonzero || group.size == 0) << group.name;
    }
  }
}

TEST(BatchObjective, ThreadCountDoesNotChangeBits) {
  const auto g = small_planted();
  const auto p = fx::random_params(g, 8, 2, 4, 1);
  Rng rng(3);
  std::vector<Triplet> batch;
  for (int i = 0; i < 50; ++i) batch.push_back(graph::sample_bpr_triplet(g, rng));
  auto g1 = p.zeros_like();
  auto g4 = p.zeros_like();
  const auto r1 = batch_objective(g, p, batch, 1e-4, &g1, 1);
  const auto r4 = batch_objective(g, p, batch, 1e-4, &g4, 4);
  EXPECT_EQ(r1.loss, r4.loss);
  EXPECT_EQ(g1, g4);
}

// ---------------------------------------------------------------------------
// Epochs

TEST(TrainEpoch, ZeroLearningRateLeavesParams) {
  const auto g = small_planted();
  auto config = small_config();
  config.lr = 0.0;
  config.lambda = 0.0;
  auto p = core::initialize_params(core::dims_for(g, config.dim, config.layers, config.memory_units), {}, 1);
  const auto before = p;
  diff::AdamState adam(p.parameter_count());
  const auto r = train_epoch(g, p, adam, config, 0);
  EXPECT_EQ(p, before);
  EXPECT_TRUE(std::isfinite(r.mean_loss));
  EXPECT_GT(r.mean_loss, 0.0);
}

TEST(TrainEpoch, BatchCountIsCeilOfInteractionsOverBatch) {
  const auto g = small_planted();
  auto config = small_config();
  auto p = core::initialize_params(core::dims_for(g, config.dim, config.layers, config.memory_units), {}, 1);
  diff::AdamState adam(p.parameter_count());
  const auto r = train_epoch(g, p, adam, config, 0);
  EXPECT_EQ(r.batches, (g.interaction_count() + config.batch_size - 1) / config.batch_size);
}

TEST(TrainEpoch, NoInteractionsThrows) {
  const auto g = graph::build_graph({}, {}, {}, 2, 2, 0);
  auto config = small_config();
  auto p = core::initialize_params(core::dims_for(g, 4, 1, 1), {}, 1);
  diff::AdamState adam(p.parameter_count());
  EXPECT_THROW(train_epoch(g, p, adam, config, 0), TrainingError);
}

TEST(TrainModel, SameSeedSameTrajectory) {
  const auto g = small_planted();
  const auto config = small_config();
  const auto a = train_model(g, config);
  const auto b = train_model(g, config);
  EXPECT_EQ(a.epoch_losses, b.epoch_losses);
  EXPECT_EQ(a.params, b.params);
}

TEST(TrainModel, ThreadCountDoesNotChangeTrajectory) {
  const auto g = small_planted();
  auto config = small_config();
  const auto a = train_model(g, config);
  config.threads = 3;
  EXPECT_EQ(train_model(g, config).params, a.params);
}

TEST(TrainModel, LossDecreasesOnPlantedData) {
  synth::PlantedConfig data;
  data.users = 120;
  data.items = 240;
  data.relations = 15;
  const auto g = synth::generate_planted(data).build();
  auto config = small_config();
  config.epochs = 20;
  config.batch_size = 256;
  const auto run = train_model(g, config);
  ASSERT_EQ(run.epoch_losses.size(), 20u);
  EXPECT_LT(run.epoch_losses.back(), run.epoch_losses.front());
  for (double l : run.epoch_losses) EXPECT_GE(l, 0.0);
}

TEST(TrainModel, ResumeReproducesUninterruptedRun) {
  const auto g = small_planted();
  auto config = small_config();
  config.epochs = 6;
  const auto full = train_model(g, config);

  auto half_config = config;
  half_config.epochs = 3;
  const auto half = train_model(g, half_config);
  const auto path = temp_path("resume.ckpt");
  save_checkpoint(path, half.params, &half.adam, {3, half.epoch_losses.back()});

  auto ck = load_checkpoint(path);
  ASSERT_TRUE(ck.adam.has_value());
  std::vector<double> losses = half.epoch_losses;
  continue_training(g, config, ck.params, *ck.adam, ck.meta.epoch, &losses);
  EXPECT_EQ(losses, full.epoch_losses);
  EXPECT_EQ(ck.params, full.params);
  EXPECT_EQ(*ck.adam, full.adam);
}

TEST(TrainModel, ZeroEpochsReturnsInitialization) {
  const auto g = small_planted();
  auto config = small_config();
  config.epochs = 0;
  const auto run = train_model(g, config);
  EXPECT_TRUE(run.epoch_losses.empty());
  EXPECT_EQ(run.params, core::initialize_params(
                            core::dims_for(g, config.dim, config.layers, config.memory_units), {},
                            config.seed));
}

TEST(TrainingConfig, ValidationNamesTheField) {
  TrainingConfig c;
  EXPECT_NO_THROW(c.validate());
  c.lr = -1.0;
  try {
    c.validate();
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
  c = {};
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = {};
  c.lambda = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

// Only the initial embeddings move; the margin must grow at every step.
TEST(TrainModel, EmbeddingOnlyDescentGrowsMargin) {
  const auto g = graph::build_graph({{0, 0}}, {}, {}, 1, 2, 0);
  auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 9);
  const std::vector<Triplet> batch{{0, 0, 1}};
  const std::size_t embedding_count = p.dims().node_count() * p.dims().dim;
  auto margin = [&] {
    const auto s = core::forward(g, p);
    return core::predict(0, 0, s.final, g) - core::predict(0, 1, s.final, g);
  };
  double previous = margin();
  for (int step = 0; step < 100; ++step) {
    auto grads = p.zeros_like();
    batch_objective(g, p, batch, 0.0, &grads);
    for (std::size_t i = 0; i < embedding_count; ++i) p.values()[i] -= 0.05 * grads.values()[i];
    const double now = margin();
    ASSERT_GT(now, previous) << "step " << step;
    previous = now;
  }
  EXPECT_GT(diff::sigmoid(previous), 0.9);
}

// ---------------------------------------------------------------------------
// Checkpoints

TEST(Checkpoint, RoundTripIsBitwise) {
  const auto g = small_planted();
  const auto run = train_model(g, small_config());
  const auto path = temp_path("round.ckpt");
  save_checkpoint(path, run.params, &run.adam, {4, 0.125});
  const auto ck = load_checkpoint(path);
  EXPECT_EQ(ck.params, run.params);
  ASSERT_TRUE(ck.adam.has_value());
  EXPECT_EQ(*ck.adam, run.adam);
  EXPECT_EQ(ck.meta, (CheckpointMeta{4, 0.125}));
}

TEST(Checkpoint, VariantFlagsRoundTrip) {
  const auto g = small_planted();
  for (const core::ModelVariant v :
       {core::ModelVariant{false, true, true}, core::ModelVariant{true, false, false}}) {
    const auto p = core::initialize_params(core::dims_for(g, 4, 2, 3), v, 1);
    const auto path = temp_path("variant.ckpt");
    save_checkpoint(path, p, nullptr, {});
    const auto ck = load_checkpoint(path);
    EXPECT_EQ(ck.params, p);
    EXPECT_FALSE(ck.adam.has_value());
  }
}

TEST(Checkpoint, TruncatedByOneByte) {
  const auto g = small_planted();
  const auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 1);
  const auto path = temp_path("trunc.ckpt");
  save_checkpoint(path, p, nullptr, {});
  auto bytes = read_bytes(path);
  bytes.pop_back();
  write_bytes(path, bytes);
  EXPECT_EQ(load_error(path), CheckpointErrorCode::Truncated);
}

TEST(Checkpoint, UnsupportedVersion) {
  const auto g = small_planted();
  const auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 1);
  const auto path = temp_path("version.ckpt");
  save_checkpoint(path, p, nullptr, {});
  auto bytes = read_bytes(path);
  const std::uint32_t v = 999;  // little-endian u32 after the 8-byte magic
  for (int i = 0; i < 4; ++i) bytes[8 + i] = static_cast<char>((v >> (8 * i)) & 0xff);
  write_bytes(path, bytes);
  EXPECT_EQ(load_error(path), CheckpointErrorCode::UnsupportedVersion);
}

TEST(Checkpoint, BadMagic) {
  const auto g = small_planted();
  const auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 1);
  const auto path = temp_path("magic.ckpt");
  save_checkpoint(path, p, nullptr, {});
  auto bytes = read_bytes(path);
  bytes[0] = 'X';
  write_bytes(path, bytes);
  EXPECT_EQ(load_error(path), CheckpointErrorCode::BadMagic);
}

TEST(Checkpoint, TrailingBytesAreMalformed) {
  const auto g = small_planted();
  const auto p = core::initialize_params(core::dims_for(g, 4, 1, 2), {}, 1);
  const auto path = temp_path("trailing.ckpt");
  save_checkpoint(path, p, nullptr, {});
  auto bytes = read_bytes(path);
  bytes.push_back(0);
  write_bytes(path, bytes);
  EXPECT_EQ(load_error(path), CheckpointErrorCode::Malformed);
}

TEST(Checkpoint, MissingFileIsIo) {
  EXPECT_EQ(load_error(temp_path("does_not_exist.ckpt")), CheckpointErrorCode::Io);
}

TEST(Checkpoint, HeaderLayout) {
  const auto g = graph::build_graph({{0, 0}}, {}, {}, 2, 3, 1);
  const auto p = core::initialize_params(core::dims_for(g, 4, 2, 5), {}, 1);
  const auto path = temp_path("layout.ckpt");
  save_checkpoint(path, p, nullptr, {});
  const auto bytes = read_bytes(path);
  ASSERT_GE(bytes.size(), 36u);
  EXPECT_EQ(std::string(bytes.data(), 8), "DGNNCKPT");
  auto u32 = [&](std::size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(bytes[off + i])) << (8 * i);
    return v;
  };
  EXPECT_EQ(u32(8), kCheckpointVersion);
  EXPECT_EQ(u32(12), 2u);
  EXPECT_EQ(u32(16), 3u);
  EXPECT_EQ(u32(20), 1u);
  EXPECT_EQ(u32(24), 4u);
  EXPECT_EQ(u32(28), 2u);
  EXPECT_EQ(u32(32), 5u);
}
