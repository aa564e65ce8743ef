#include "dgnn/diagnostics.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <set>
#include <sstream>

#include "dgnn/rng.hpp"
#include "dgnn/synthetic.hpp"
#include "dgnn/training.hpp"

namespace dgnn::diagnostics {

namespace {

std::string group_kind(const std::string& name) {
  if (name == "embeddings") return name;
  if (name.starts_with("ln")) return name.ends_with("scale") ? "ln.scale" : "ln.shift";
  return name.substr(name.rfind('.') + 1);
}

}  // namespace

GradCheckSummary run_gradient_suite(std::size_t instances, std::uint64_t seed,
                                    double h, double tol) {
  constexpr std::uint32_t kDims[] = {2, 4, 8};
  constexpr std::uint32_t kUnits[] = {1, 2, 4};
  constexpr std::uint32_t kLayers[] = {0, 1, 2};
  constexpr double kLambda = 1e-3;

  GradCheckSummary summary;
  summary.passed = instances > 0;
  std::set<std::string> covered;
  for (std::size_t i = 0; i < instances; ++i) {
    const std::uint64_t s = derive_seed(seed, SeedPurpose::GradCheck, i);
    Rng rng(s);
    const auto graph = synth::generate_uniform(5, 6, 3, 14, 6, 7, s).build();

    GradCheckInstance inst;
    inst.dim = kDims[i % 3];
    inst.memory_units = kUnits[(i / 3) % 3];
    inst.layers = kLayers[(i / 9) % 3];
    // Every fourth instance exercises one ablated architecture.
    if (i % 4 == 3) {
      switch ((i / 4) % 3) {
        case 0: inst.variant.memory = false; break;
        case 1: inst.variant.layer_norm = false; break;
        default: inst.variant.recalibration = false; break;
      }
    }

    auto params = core::initialize_params(
        core::dims_for(graph, inst.dim, inst.layers, inst.memory_units),
        inst.variant, s);
    // Perturb so biases, keys and layer-norm terms sit away from their
    // initial values and the attention is not degenerate.
    for (double& x : params.values()) x += 0.3 * rng.normal();

    std::vector<graph::Triplet> batch;
    for (int t = 0; t < 6; ++t) batch.push_back(graph::sample_bpr_triplet(graph, rng));

    auto grads = params.zeros_like();
    train::batch_objective(graph, params, batch, kLambda, &grads);
    auto objective = [&](std::span<const double> x) {
      core::ModelParams probe = params;
      std::copy(x.begin(), x.end(), probe.values().begin());
      return train::batch_objective(graph, probe, batch, kLambda, nullptr).loss;
    };
    const auto report = diff::finite_diff_check(objective, params.values(),
                                                grads.values(), h, tol);
    inst.coordinates = params.parameter_count();
    inst.max_rel_error = report.max_rel_error;
    inst.passed = report.passed;
    for (const auto& g : params.layout().groups()) {
      if (g.size == 0) continue;
      covered.insert(group_kind(g.name));
      if (report.worst_coordinate >= g.offset &&
          report.worst_coordinate < g.offset + g.size) {
        inst.worst_group = g.name;
      }
    }
    summary.max_rel_error = std::max(summary.max_rel_error, inst.max_rel_error);
    summary.passed = summary.passed && inst.passed;
    summary.instances.push_back(inst);
  }
  summary.groups_covered.assign(covered.begin(), covered.end());
  return summary;
}

namespace {

double time_epoch(const BenchConfig& c, std::size_t interactions,
                  std::uint32_t units) {
  const auto data = synth::generate_uniform(c.users, c.items, c.relations,
                                            interactions, interactions / 2,
                                            interactions / 10, c.seed);
  const auto graph = data.build();
  train::TrainingConfig tc;
  tc.dim = c.dim;
  tc.layers = c.layers;
  tc.memory_units = units;
  tc.batch_size = static_cast<std::uint32_t>(graph.interaction_count());
  tc.threads = c.threads;
  tc.seed = c.seed;
  auto params = core::initialize_params(
      core::dims_for(graph, tc.dim, tc.layers, tc.memory_units), {}, tc.seed);
  diff::AdamState adam(params.parameter_count());

  std::vector<double> seconds;
  for (std::size_t r = 0; r < std::max<std::size_t>(1, c.repeats); ++r) {
    const auto start = std::chrono::steady_clock::now();
    train::train_epoch(graph, params, adam, tc, r);
    seconds.push_back(std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - start)
                          .count());
  }
  std::sort(seconds.begin(), seconds.end());
  return seconds[seconds.size() / 2];
}

}  // namespace

std::vector<BenchRow> run_scaling_bench(const BenchConfig& config) {
  std::vector<BenchRow> rows;
  for (std::size_t f : {1u, 2u, 4u}) {
    BenchRow row{"edges", config.interactions * f, config.memory_units,
                 time_epoch(config, config.interactions * f, config.memory_units)};
    if (f > 1) row.ratio = row.epoch_seconds / rows.back().epoch_seconds;
    rows.push_back(row);
  }
  for (std::uint32_t f : {1u, 2u, 4u}) {
    BenchRow row{"memory", config.interactions, config.memory_units * f,
                 time_epoch(config, config.interactions, config.memory_units * f)};
    if (f > 1) row.ratio = row.epoch_seconds / rows.back().epoch_seconds;
    rows.push_back(row);
  }
  return rows;
}

std::string format_bench_table(const std::vector<BenchRow>& rows) {
  std::ostringstream out;
  out << "axis\tinteractions\tmemory_units\tepoch_seconds\tratio\n";
  out << std::fixed;
  for (const auto& r : rows) {
    out << r.axis << '\t' << r.edges << '\t' << r.memory_units << '\t'
        << std::setprecision(4) << r.epoch_seconds << '\t'
        << std::setprecision(3) << r.ratio << '\n';
  }
  return out.str();
}

}  // namespace dgnn::diagnostics
