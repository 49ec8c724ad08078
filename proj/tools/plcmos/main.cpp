#include <chrono>
#include <ctime>
#include <iostream>

#include "commands.hpp"
#include "plcmos/error.hpp"

namespace plcmos::cli {

namespace {

std::string utc_now()
{
  const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string version_text()
{
  return "plcmos " + std::string{tool_version} + "\nweight format " + std::to_string(weight_format_version);
}

} // namespace

int run(const std::vector<std::string>& args)
{
  CLI::App app{"Packet loss concealment MOS toolkit"};
  app.fallthrough();
  app.require_subcommand(1);
  app.set_version_flag("--version", version_text());

  Session s;
  std::uint64_t seed = 0;
  app.add_option("--config", s.config_path, "JSON config with model/train/sampling/gilbert sections; flags override it");
  auto* seed_opt = app.add_option("--seed", seed, "Base seed for all randomness");
  app.add_option("-j,--jobs", s.jobs, "Worker threads for per-file work")->check(CLI::PositiveNumber);
  app.add_flag("--strict", s.strict, "Treat sampling shortfalls as failures");
  app.add_option("--run-manifest", s.run_manifest_path, "Where to write the run manifest");

  std::map<const CLI::App*, Command> commands;
  register_commands(app, commands);

  try
  {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  }
  catch (const CLI::ParseError& e)
  {
    const int code = app.exit(e);
    return code == 0 ? int{exit_ok} : int{exit_invocation};
  }
  if (seed_opt->count() > 0)
    s.seed = seed;

  const auto* sub = app.get_subcommands().front();
  s.manifest.command = sub->get_name();
  s.manifest.argv = args;
  s.manifest.started_utc = utc_now();
  const auto start = std::chrono::steady_clock::now();

  int code = exit_ok;
  try
  {
    if (!s.config_path.empty())
    {
      s.config = nlohmann::json::parse(read_text_file(s.config_path));
      if (!s.config.is_object())
        throw InvalidArgument("config file must hold a JSON object");
      s.manifest.inputs.push_back(s.config_path);
    }
    code = commands.at(sub)(s);
  }
  catch (const InvalidArgument& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    return exit_invocation;
  }
  catch (const nlohmann::json::parse_error& e)
  {
    std::cerr << "error: invalid JSON: " << e.what() << "\n";
    return exit_invocation;
  }
  catch (const std::exception& e)
  {
    std::cerr << "error: " << e.what() << "\n";
    code = exit_partial;
  }

  s.manifest.exit_code = code;
  s.manifest.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto manifest_path = !s.run_manifest_path.empty() ? s.run_manifest_path
                             : !s.primary_output.empty()  ? s.primary_output + ".run.json"
                                                          : std::string{};
  if (!manifest_path.empty() && s.manifest.command != "replay")
  {
    try
    {
      write_text_file(manifest_path, to_json(s.manifest).dump(2) + "\n");
    }
    catch (const std::exception& e)
    {
      std::cerr << "error: " << e.what() << "\n";
      code = exit_partial;
    }
  }
  return code;
}

} // namespace plcmos::cli

int main(int argc, char** argv)
{
  return plcmos::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
