#pragma once

// Run configuration: a plain `key = value` file, one key per line, `#`
// comments. Keys:
//
//   interactions, social, item_relations   edge files (social and
//                                          item_relations may be empty)
//   out                                    output directory
//   users, items, relations                node counts (0 = max id + 1)
//   dim, layers, memory_units, lr, batch, lambda, epochs, seed, threads
//   cutoffs                                comma-separated, e.g. 5,10,20
//   variant                                full, -M, -tau, -LN, -T, -S, -ST
//   eval_every                             log HR/NDCG every k epochs (0 = off)

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dgnn/training.hpp"

namespace dgnn::config {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::filesystem::path interactions;
  std::filesystem::path social;
  std::filesystem::path item_relations;
  std::filesystem::path out = "dgnn_out";
  std::uint32_t users = 0;
  std::uint32_t items = 0;
  std::uint32_t relations = 0;
  train::TrainingConfig training;
  std::vector<std::size_t> cutoffs{5, 10, 20};
  std::string variant = "full";
  std::uint32_t eval_every = 0;

  bool operator==(const RunConfig& other) const;
};

/// Applies `key = value` lines on top of `base`. Unknown keys, malformed
/// lines and unparsable values throw ConfigError naming the line.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Every key, in a form parse_config reads back to an equal RunConfig.
std::string format_config(const RunConfig& config);

/// Checks hyperparameters, the variant name, cutoffs, and that every
/// non-empty input path exists.
void validate(const RunConfig& config);

}  // namespace dgnn::config
