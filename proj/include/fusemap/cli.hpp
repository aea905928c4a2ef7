#pragma once

/// @file cli.hpp
/// @brief Command-line subcommands: optimize, oracle-check, exhaustive,
///        baseline, report. Exit codes: 0 success, 1 usage or input error,
///        2 infeasible best-effort result. User input never aborts.

#include <filesystem>
#include <string>

namespace fusemap::cli {

inline constexpr const char* kToolVersion = "0.1.0";

/// Provenance record written alongside every output set; re-running with
/// the same manifest reproduces identical outputs.
struct RunManifest {
  std::string workload;
  std::string hardware;
  std::string optimizer_config;  // empty when defaults were used
  std::string output_dir;
  uint64_t seed = 0;
  std::string command;
  std::string tool_version = kToolVersion;
};

void write_manifest(const RunManifest& manifest,
                    const std::filesystem::path& path);

/// Parses argv and dispatches to the subcommand. Returns the process exit
/// code; all errors are reported on stderr rather than thrown.
int run(int argc, const char* const* argv);

}  // namespace fusemap::cli
