#pragma once

// Gradient verification over random small instances and the per-epoch
// scaling benchmark. Shared by the `grad-check` and `bench` commands and the
// acceptance suite.

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dgnn/model.hpp"

namespace dgnn::diagnostics {

struct GradCheckInstance {
  std::uint32_t dim = 0;
  std::uint32_t memory_units = 0;
  std::uint32_t layers = 0;
  core::ModelVariant variant;
  std::size_t coordinates = 0;
  double max_rel_error = 0.0;
  std::string worst_group;
  bool passed = false;
};

struct GradCheckSummary {
  std::vector<GradCheckInstance> instances;
  double max_rel_error = 0.0;
  /// Parameter-group kinds ("embeddings", "W", "k", "b", "ln.scale",
  /// "ln.shift") that at least one instance checked.
  std::vector<std::string> groups_covered;
  bool passed = false;
};

/// Instance i uses d = {2,4,8}[i % 3], M = {1,2,4}[(i / 3) % 3],
/// L = {0,1,2}[(i / 9) % 3] on a small uniform graph, random parameters and a
/// random triplet batch; every coordinate is checked with central differences.
GradCheckSummary run_gradient_suite(std::size_t instances, std::uint64_t seed,
                                    double h = 1e-5, double tol = 1e-4);

struct BenchConfig {
  std::uint32_t users = 1000;
  std::uint32_t items = 2000;
  std::uint32_t relations = 50;
  std::size_t interactions = 10000;  // social = interactions / 2, item-relations = items
  std::uint32_t dim = 16;
  std::uint32_t layers = 2;
  std::uint32_t memory_units = 4;
  std::size_t repeats = 3;
  std::size_t threads = 1;
  std::uint64_t seed = 1;
};

struct BenchRow {
  std::string axis;  // "edges" or "memory"
  std::size_t edges = 0;
  std::uint32_t memory_units = 0;
  double epoch_seconds = 0.0;  // median over repeats
  double ratio = 1.0;          // against the previous row on the same axis
};

/// Times one training epoch (a single batch covering every interaction) at
/// 1x, 2x and 4x the edge count with M fixed, then at 1x, 2x and 4x M with
/// the edges fixed.
std::vector<BenchRow> run_scaling_bench(const BenchConfig& config);

std::string format_bench_table(const std::vector<BenchRow>& rows);

}  // namespace dgnn::diagnostics
