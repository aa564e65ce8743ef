#pragma once

// Command-line front end: build, train, eval, ablate, export-attn,
// grad-check, bench and synth.

#include <ostream>
#include <span>
#include <string>

namespace dgnn::cli {

/// Process exit codes, one per failure class.
enum ExitCode : int {
  kOk = 0,
  kInternalError = 1,    // unexpected failure, including output write errors
  kUsageError = 2,       // bad flags, config file or missing input path
  kInputError = 3,       // unreadable or inconsistent edge data
  kNumericError = 4,     // non-finite loss or gradient
  kCheckpointError = 5,  // unreadable or mismatched checkpoint
  kCheckFailed = 6,      // grad-check found a gradient outside tolerance
};

/// Default thread count when neither a flag nor the config sets one.
inline constexpr const char* kThreadsEnv = "DGNN_THREADS";

/// Runs one command. `args` excludes the program name.
int run(std::span<const std::string> args, std::ostream& out, std::ostream& err);

}  // namespace dgnn::cli
