#pragma once

#include <filesystem>
#include <iosfwd>

#include "invflow/invconv.hpp"

namespace invflow {

/// Exit codes of the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 1;      // bad arguments, config, or input files
inline constexpr int kExitDiverged = 2;    // training hit a non-finite loss
inline constexpr int kExitSingular = 3;    // check: kernel is not invertible

/// Entry point of the `invflow` tool with subcommands train, sample, eval,
/// check and bench.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

// Kernel fixture: a raw tensor of shape (k, k, C*C) holding K[a][b][ci][co]
// at channel ci*C + co, plus a JSON sidecar <path>.json with
// {"variant": "masked" | "block", "k": k, "C": C}.
void save_kernel_fixture(const std::filesystem::path& path, const ConvKernel& k);
ConvKernel load_kernel_fixture(const std::filesystem::path& path);

}  // namespace invflow
