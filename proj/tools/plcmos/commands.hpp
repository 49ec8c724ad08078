#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "plcmos/pipeline.hpp"

namespace plcmos::cli {

enum ExitCode : int
{
  exit_ok = 0,
  exit_partial = 1,
  exit_invocation = 2,
};

struct Session
{
  std::string config_path;
  nlohmann::json config = nlohmann::json::object();
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  bool strict = false;
  std::string run_manifest_path;
  /// Primary output; the run manifest defaults to <primary>.run.json.
  std::string primary_output;
  RunManifest manifest;

  std::uint64_t seed_or(std::uint64_t fallback) const { return seed.value_or(fallback); }
  nlohmann::json section(const char* name) const;
};

using Command = std::function<int(Session&)>;

/// Parses and runs one invocation; args exclude the program name.
int run(const std::vector<std::string>& args);

/// Adds every subcommand to app; the matching runner is stored per subcommand.
void register_commands(CLI::App& app, std::map<const CLI::App*, Command>& commands);

} // namespace plcmos::cli
