#pragma once

// SPDX-License-Identifier: Apache-2.0

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

namespace evprobe::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitConfig = 3,
};

/// Environment variable overriding output_dir (command-line flag wins).
inline constexpr const char* kOutputDirEnv = "EVPROBE_OUTPUT_DIR";

/// All run parameters with their defaults. Every field is also a
/// `--<field>` flag and a `<field> = value` key in the config file.
struct RunConfig {
  std::filesystem::path dataset;
  std::filesystem::path labels;     // default: <dataset>.labels.jsonl
  std::filesystem::path questions;  // JSONL with id/answer, used by `label`
  std::size_t k_evidence = 10;
  std::string transform = "relu";
  std::string au_form = "verbatim";
  std::size_t k_agg = 10;
  std::size_t k_bound = 10;
  double tau_c = 0.6;
  double tau_e = 0.4;
  double theta = 0.5;
  std::vector<int> layers;               // empty: every manifest layer
  std::vector<std::string> selections;   // empty: the default sweep columns
  std::string rank_by = "eu";
  double l2 = 1.0;
  int max_iter = 1000;
  double tol = 1e-6;
  std::uint64_t split_seed = 42;
  unsigned threads = 1;
  std::vector<std::string> transitions = {"WOC:E->WCC:C", "WOC:C->WIC:E"};
  std::string kde_score = "eu_lower";
  std::string pooling = "response";
  double kde_bandwidth = 0.0;  // 0: Silverman
  std::filesystem::path output_dir = "evprobe-out";
};

/// Throws Config when a value is out of range or unparseable.
void check_config(const RunConfig& config);
nlohmann::json echo(const RunConfig& config);

/// Runs the command line `args` (args[0] is the program name).
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace evprobe::cli
