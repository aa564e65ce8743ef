#include "dgnn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>

#include "dgnn/config.hpp"
#include "dgnn/diagnostics.hpp"
#include "dgnn/evaluation.hpp"
#include "dgnn/hetgraph.hpp"
#include "dgnn/synthetic.hpp"
#include "dgnn/training.hpp"

namespace dgnn::cli {

namespace fs = std::filesystem;
using config::RunConfig;

namespace {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::size_t> threads;
  std::optional<std::uint32_t> dim;
  std::optional<std::uint32_t> layers;
  std::optional<std::uint32_t> memory_units;
  std::optional<double> lr;
  std::optional<std::uint32_t> batch;
  std::optional<double> lambda;
  std::optional<std::uint32_t> epochs;
};

void add_common(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "key = value run configuration");
  cmd->add_option("--seed", o.seed, "root random seed");
  cmd->add_option("--out", o.out, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads")->check(CLI::PositiveNumber);
  cmd->add_option("--dim", o.dim, "embedding dimension");
  cmd->add_option("--layers", o.layers, "propagation layers");
  cmd->add_option("--memory-units", o.memory_units, "memory units per bank");
  cmd->add_option("--lr", o.lr, "Adam learning rate");
  cmd->add_option("--batch", o.batch, "triplets per batch");
  cmd->add_option("--lambda", o.lambda, "weight decay");
  cmd->add_option("--epochs", o.epochs, "training epochs");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c;
  if (const char* env = std::getenv(kThreadsEnv); env && *env) {
    c = config::parse_config(std::string("threads = ") + env, c);
  }
  if (!o.config.empty()) c = config::load_config(o.config, c);
  auto& t = c.training;
  if (o.seed) t.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.threads) t.threads = *o.threads;
  if (o.dim) t.dim = *o.dim;
  if (o.layers) t.layers = *o.layers;
  if (o.memory_units) t.memory_units = *o.memory_units;
  if (o.lr) t.lr = *o.lr;
  if (o.batch) t.batch_size = *o.batch;
  if (o.lambda) t.lambda = *o.lambda;
  if (o.epochs) t.epochs = *o.epochs;
  return c;
}

std::uint32_t count_from(std::uint32_t configured, std::uint32_t max_seen_plus_one) {
  return configured ? configured : max_seen_plus_one;
}

graph::HeteroGraph load_graph(const RunConfig& c) {
  config::validate(c);
  const auto y = graph::load_edge_file(c.interactions, graph::EdgeKind::Interaction);
  if (y.empty()) throw InputError("no interactions in " + c.interactions.string());
  graph::EdgeList s, t;
  if (!c.social.empty()) s = graph::load_edge_file(c.social, graph::EdgeKind::Social);
  if (!c.item_relations.empty()) {
    t = graph::load_edge_file(c.item_relations, graph::EdgeKind::ItemRelation);
  }
  std::uint32_t users = 0, items = 0, relations = 0;
  for (const auto& e : y) {
    users = std::max(users, e.src + 1);
    items = std::max(items, e.dst + 1);
  }
  for (const auto& e : s) users = std::max({users, e.src + 1, e.dst + 1});
  for (const auto& e : t) {
    items = std::max(items, e.src + 1);
    relations = std::max(relations, e.dst + 1);
  }
  return graph::build_graph(y, s, t, count_from(c.users, users),
                            count_from(c.items, items),
                            count_from(c.relations, relations));
}

fs::path split_path(const RunConfig& c) { return c.out / "split.tsv"; }
fs::path checkpoint_path(const RunConfig& c) { return c.out / "model.ckpt"; }

/// Reuses the manifest in the output directory when it was drawn with the
/// same seed; otherwise draws and writes a fresh one.
graph::Split obtain_split(const graph::HeteroGraph& g, const RunConfig& c) {
  const auto path = split_path(c);
  if (fs::exists(path)) {
    auto split = graph::read_split_manifest(path, g);
    if (split.seed == c.training.seed) return split;
  }
  auto split = graph::split_leave_one_out(g, c.training.seed);
  fs::create_directories(c.out);
  graph::write_split_manifest(path, split);
  return split;
}

eval::AblationVariant variant_of(const RunConfig& c) {
  return *eval::parse_ablation(c.variant);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

std::string percent(double fraction) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4) << fraction * 100.0 << '%';
  return s.str();
}

/// Loads the checkpoint and checks it matches the graph it will run on.
train::Checkpoint load_matching_checkpoint(const fs::path& path,
                                           const graph::HeteroGraph& g) {
  auto ck = train::load_checkpoint(path);
  const auto& d = ck.params.dims();
  if (d.users != g.num_users() || d.items != g.num_items() ||
      d.relations != g.num_relations()) {
    throw train::CheckpointError(
        train::CheckpointErrorCode::Malformed,
        path.string() + ": node counts " + std::to_string(d.users) + "/" +
            std::to_string(d.items) + "/" + std::to_string(d.relations) +
            " do not match the graph");
  }
  return ck;
}

std::size_t headline_cutoff(const RunConfig& c) {
  return std::find(c.cutoffs.begin(), c.cutoffs.end(), 10) != c.cutoffs.end()
             ? 10
             : c.cutoffs.front();
}

// ---------------------------------------------------------------------------

int cmd_build(const RunConfig& c, std::ostream& out) {
  const auto g = load_graph(c);
  const auto split = obtain_split(g, c);
  out << "users\t" << g.num_users() << '\n'
      << "items\t" << g.num_items() << '\n'
      << "relations\t" << g.num_relations() << '\n'
      << "interactions\t" << g.interaction_count() << '\n'
      << "social_ties\t" << g.social_entry_count() / 2 << '\n'
      << "item_relations\t" << g.item_relation_count() << '\n'
      << "interaction_density\t" << percent(g.interaction_density()) << '\n'
      << "social_density\t" << percent(g.social_density()) << '\n'
      << "test_users\t" << split.test.size() << '\n'
      << "skipped_sparse\t" << split.skipped_sparse << '\n'
      << "skipped_saturated\t" << split.skipped_saturated << '\n'
      << "manifest\t" << split_path(c).string() << '\n';
  return kOk;
}

int cmd_train(const RunConfig& c, bool resume, std::ostream& out) {
  const auto full = load_graph(c);
  const auto split = obtain_split(full, c);
  const auto variant = variant_of(c);
  const auto g = eval::graph_for(variant, split.train_graph);
  fs::create_directories(c.out);
  write_text(c.out / "run.conf", config::format_config(c));

  std::ostringstream log;
  log << "epoch\tloss\tseconds\thr@" << headline_cutoff(c) << "\tndcg@"
      << headline_cutoff(c) << '\n';
  auto last = std::chrono::steady_clock::now();
  double total_seconds = 0.0;
  const std::vector<std::size_t> headline{headline_cutoff(c)};
  auto on_epoch = [&](std::uint64_t epoch, const train::EpochResult& r,
                      const core::ModelParams& params) {
    const auto now = std::chrono::steady_clock::now();
    const double seconds = std::chrono::duration<double>(now - last).count();
    total_seconds += seconds;
    log << epoch + 1 << '\t' << eval::format_double(r.mean_loss) << '\t'
        << std::fixed << std::setprecision(4) << seconds << std::defaultfloat;
    if (c.eval_every && (epoch + 1) % c.eval_every == 0 && !split.test.empty()) {
      const auto state = core::forward(g, params, c.training.threads);
      const auto report = eval::evaluate(state.final, split, g, headline,
                                         params.variant().recalibration,
                                         c.training.threads);
      log << '\t' << eval::format_double(report.metrics[0].hr) << '\t'
          << eval::format_double(report.metrics[0].ndcg);
    } else {
      log << "\t\t";
    }
    log << '\n';
    last = std::chrono::steady_clock::now();
  };

  std::uint64_t first_epoch = 0;
  auto run = [&]() -> train::TrainingRun {
    if (resume && fs::exists(checkpoint_path(c))) {
      auto ck = load_matching_checkpoint(checkpoint_path(c), g);
      if (!ck.adam) {
        throw train::CheckpointError(train::CheckpointErrorCode::Malformed,
                                     "checkpoint has no optimizer state to resume from");
      }
      train::TrainingRun resumed{std::move(ck.params), std::move(*ck.adam), {}};
      first_epoch = ck.meta.epoch;
      last = std::chrono::steady_clock::now();
      train::continue_training(g, c.training, resumed.params, resumed.adam,
                               first_epoch, &resumed.epoch_losses, on_epoch);
      return resumed;
    }
    last = std::chrono::steady_clock::now();
    return train::train_model(g, c.training, eval::model_variant_for(variant), on_epoch);
  }();

  const std::uint64_t epochs = std::max<std::uint64_t>(first_epoch, c.training.epochs);
  const double final_loss = run.epoch_losses.empty() ? 0.0 : run.epoch_losses.back();
  train::save_checkpoint(checkpoint_path(c), run.params, &run.adam, {epochs, final_loss});
  std::ofstream log_file;
  const auto log_path = c.out / "train_log.tsv";
  if (resume && first_epoch > 0 && fs::exists(log_path)) {
    // Append rows after the existing header.
    std::string rows = log.str();
    rows.erase(0, rows.find('\n') + 1);
    std::ofstream append(log_path, std::ios::binary | std::ios::app);
    append << rows;
    if (!append) throw std::runtime_error("write failed: " + log_path.string());
  } else {
    write_text(log_path, log.str());
  }

  out << "variant\t" << eval::ablation_name(variant) << '\n'
      << "parameters\t" << run.params.parameter_count() << '\n'
      << "epochs\t" << epochs << '\n'
      << "final_loss\t" << eval::format_double(final_loss) << '\n';
  if (!run.epoch_losses.empty()) {
    out << "mean_epoch_seconds\t" << std::fixed << std::setprecision(4)
        << total_seconds / static_cast<double>(run.epoch_losses.size())
        << std::defaultfloat << '\n';
  }
  out << "checkpoint\t" << checkpoint_path(c).string() << '\n';
  return kOk;
}

int cmd_eval(const RunConfig& c, const std::string& checkpoint, std::ostream& out) {
  const auto full = load_graph(c);
  const auto split = obtain_split(full, c);
  if (split.test.empty()) throw InputError("no test users: every user has fewer than 2 interactions");
  const auto g = eval::graph_for(variant_of(c), split.train_graph);
  const auto ck = load_matching_checkpoint(
      checkpoint.empty() ? checkpoint_path(c) : fs::path(checkpoint), g);
  const auto state = core::forward(g, ck.params, c.training.threads);
  const bool recal = ck.params.variant().recalibration;
  const auto report =
      split.test.size() >= 4
          ? eval::sparsity_report(split, state.final, g, c.cutoffs, recal, c.training.threads)
          : eval::evaluate(state.final, split, g, c.cutoffs, recal, c.training.threads);
  fs::create_directories(c.out);
  write_text(c.out / "metrics.tsv", eval::format_report_lines(report));
  out << eval::format_report_table(report);
  return kOk;
}

int cmd_ablate(const RunConfig& c, const std::string& variants, std::ostream& out) {
  std::vector<eval::AblationVariant> chosen;
  if (variants.empty()) {
    chosen.assign(eval::kAllAblations.begin(), eval::kAllAblations.end());
  } else {
    std::stringstream list(variants);
    std::string name;
    while (std::getline(list, name, ',')) {
      const auto v = eval::parse_ablation(name);
      if (!v) throw config::ConfigError("unknown ablation variant '" + name + "'");
      chosen.push_back(*v);
    }
  }
  const auto full = load_graph(c);
  const auto split = obtain_split(full, c);
  if (split.test.empty()) throw InputError("no test users");
  fs::create_directories(c.out);
  const std::size_t n = headline_cutoff(c);
  out << "variant\thr@" << n << "\tndcg@" << n << '\n';
  for (const auto v : chosen) {
    const auto result = eval::run_ablation(v, split, c.training, c.cutoffs);
    write_text(c.out / ("ablation_" + std::string(eval::ablation_name(v)) + ".tsv"),
               eval::format_report_lines(result.report));
    const auto& m = result.report.at(n);
    out << eval::ablation_name(v) << '\t' << std::fixed << std::setprecision(4) << m.hr
        << '\t' << m.ndcg << std::defaultfloat << '\n';
  }
  return kOk;
}

int cmd_export_attn(const RunConfig& c, const std::string& checkpoint, std::ostream& out) {
  const auto full = load_graph(c);
  const auto split = obtain_split(full, c);
  const auto g = eval::graph_for(variant_of(c), split.train_graph);
  const auto ck = load_matching_checkpoint(
      checkpoint.empty() ? checkpoint_path(c) : fs::path(checkpoint), g);
  const auto state = core::forward(g, ck.params, c.training.threads);
  fs::create_directories(c.out);
  const auto path = c.out / "attention.tsv";
  eval::export_memory_attention(state, ck.params, path);
  out << "rows\t" << std::size_t{g.num_users()} * 2 << '\n'
      << "attention\t" << path.string() << '\n';
  return kOk;
}

int cmd_grad_check(const RunConfig& c, std::size_t instances, std::ostream& out) {
  const auto summary = diagnostics::run_gradient_suite(instances, c.training.seed);
  out << "instance\td\tM\tL\tvariant\tcoordinates\tmax_rel_err\tworst_group\n";
  for (std::size_t i = 0; i < summary.instances.size(); ++i) {
    const auto& r = summary.instances[i];
    const char* variant = !r.variant.memory        ? "-M"
                          : !r.variant.layer_norm  ? "-LN"
                          : !r.variant.recalibration ? "-tau"
                                                     : "full";
    out << i << '\t' << r.dim << '\t' << r.memory_units << '\t' << r.layers << '\t'
        << variant << '\t' << r.coordinates << '\t' << std::scientific
        << std::setprecision(3) << r.max_rel_error << std::defaultfloat << '\t'
        << r.worst_group << '\n';
  }
  out << "groups\t";
  for (std::size_t i = 0; i < summary.groups_covered.size(); ++i) {
    out << (i ? "," : "") << summary.groups_covered[i];
  }
  out << '\n';
  if (summary.passed) {
    out << "PASS, max rel err < 1e-4\n";
    return kOk;
  }
  out << "FAIL, max rel err " << std::scientific << std::setprecision(3)
      << summary.max_rel_error << " >= 1e-4\n";
  return kCheckFailed;
}

int cmd_bench(const RunConfig& c, const diagnostics::BenchConfig& base, std::ostream& out) {
  auto bench = base;
  bench.dim = c.training.dim;
  bench.layers = c.training.layers;
  bench.threads = c.training.threads;
  bench.seed = c.training.seed;
  const auto rows = diagnostics::run_scaling_bench(bench);
  out << diagnostics::format_bench_table(rows);
  double edges_max = 0.0, memory_max = 0.0;
  for (const auto& r : rows) {
    if (r.axis == "edges" && r.edges != bench.interactions) edges_max = std::max(edges_max, r.ratio);
    if (r.axis == "memory" && r.memory_units != bench.memory_units) memory_max = std::max(memory_max, r.ratio);
  }
  out << "max_ratio_doubling_edges\t" << std::fixed << std::setprecision(3) << edges_max << '\n'
      << "max_ratio_doubling_memory\t" << memory_max << std::defaultfloat << '\n';
  return kOk;
}

int cmd_synth(const RunConfig& c, const synth::PlantedConfig& planted, std::ostream& out) {
  const auto data = synth::generate_planted(planted);
  fs::create_directories(c.out);
  data.write(c.out);
  RunConfig generated = c;
  generated.interactions = c.out / "interactions.tsv";
  generated.social = c.out / "social.tsv";
  generated.item_relations = c.out / "item_relations.tsv";
  generated.users = data.users;
  generated.items = data.items;
  generated.relations = data.relations;
  write_text(c.out / "run.conf", config::format_config(generated));
  out << "users\t" << data.users << '\n'
      << "items\t" << data.items << '\n'
      << "relations\t" << data.relations << '\n'
      << "interactions\t" << data.interactions.size() << '\n'
      << "social_ties\t" << data.build().social_entry_count() / 2 << '\n'
      << "item_relations\t" << data.item_relations.size() << '\n'
      << "config\t" << (c.out / "run.conf").string() << '\n';
  return kOk;
}

}  // namespace

int run(std::span<const std::string> args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disentangled graph neural network recommender", "dgnn"};
  app.require_subcommand(1, 1);
  Overrides o;

  auto* build = app.add_subcommand("build", "load edge files, print a summary and write the split manifest");
  auto* train = app.add_subcommand("train", "train and write model.ckpt and train_log.tsv");
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint and write metrics.tsv");
  auto* ablate = app.add_subcommand("ablate", "train and evaluate ablated variants");
  auto* attn = app.add_subcommand("export-attn", "write per-user memory attention");
  auto* grad = app.add_subcommand("grad-check", "check analytical gradients by finite differences");
  auto* bench = app.add_subcommand("bench", "per-epoch scaling in edges and memory units");
  auto* synth = app.add_subcommand("synth", "write a planted-factor dataset and matching config");
  for (auto* cmd : {build, train, evalc, ablate, attn, grad, bench, synth}) add_common(cmd, o);

  bool resume = false;
  train->add_flag("--resume", resume, "continue from model.ckpt in the output directory");
  std::string checkpoint;
  evalc->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/model.ckpt)");
  attn->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/model.ckpt)");
  std::string variants;
  ablate->add_option("--variants", variants, "comma-separated, e.g. full,-M,-ST (default all)");
  std::size_t instances = 27;
  grad->add_option("--instances", instances, "random instances")->check(CLI::PositiveNumber);
  diagnostics::BenchConfig bench_config;
  bench->add_option("--users", bench_config.users);
  bench->add_option("--items", bench_config.items);
  bench->add_option("--interactions", bench_config.interactions, "interactions at 1x");
  bench->add_option("--base-memory-units", bench_config.memory_units, "M at 1x");
  bench->add_option("--repeats", bench_config.repeats);
  synth::PlantedConfig planted;
  synth->add_option("--users", planted.users);
  synth->add_option("--items", planted.items);
  synth->add_option("--relations", planted.relations);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsageError;
  }

  try {
    RunConfig c = resolve(o);
    if (o.seed) planted.seed = *o.seed;
    if (*build) return cmd_build(c, out);
    if (*train) return cmd_train(c, resume, out);
    if (*evalc) return cmd_eval(c, checkpoint, out);
    if (*ablate) return cmd_ablate(c, variants, out);
    if (*attn) return cmd_export_attn(c, checkpoint, out);
    if (*grad) return cmd_grad_check(c, instances, out);
    if (*bench) return cmd_bench(c, bench_config, out);
    if (*synth) return cmd_synth(c, planted, out);
  } catch (const config::ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const train::CheckpointError& e) {
    err << "checkpoint error: " << e.what() << '\n';
    return kCheckpointError;
  } catch (const train::TrainingError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const diff::NumericError& e) {
    err << "numeric error: " << e.what() << '\n';
    return kNumericError;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const graph::ParseError& e) {
    err << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const graph::RangeError& e) {
    err << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const graph::BuildError& e) {
    err << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const graph::SamplingError& e) {
    err << "input error: " << e.what() << '\n';
    return kInputError;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kInternalError;
  }
  return kInternalError;
}

}  // namespace dgnn::cli
