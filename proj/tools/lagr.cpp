#include <algorithm>
#include <iostream>
#include <map>
#include <string>

#include "CLI11.hpp"
#include "lagr/harness.hpp"

using namespace lagr::harness;

int main(int argc, char** argv) {
  CLI::App app{"lagr: equivariance, spectral, sheaf and training experiments"};
  app.require_subcommand(1);

  struct Sub {
    CLI::App* app = nullptr;
    std::string config;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;
  };
  std::map<std::string, Sub> subs;
  for (const std::string& name : command_names()) {
    Sub& s = subs[name];
    s.app = app.add_subcommand(name, command_summary(name));
    s.app->add_option("--config", s.config, "key = value file; flags override it")->check(CLI::ExistingFile);
    for (const ParamSpec& p : command_params(name)) {
      std::string flag = "--" + p.key;
      std::replace(flag.begin(), flag.end(), '_', '-');
      s.options[p.key] = s.app->add_option(flag, s.values[p.key], p.help + " (default " + p.def + ")");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitPass : kExitUsage;
  }

  for (auto& [name, s] : subs) {
    if (!s.app->parsed()) continue;
    RunConfig cfg(name);
    try {
      if (!s.config.empty()) cfg.load_file(s.config);
      for (const auto& [key, opt] : s.options)
        if (opt->count() > 0) cfg.set(key, s.values[key]);
    } catch (const lagr::ConfigError& e) {
      std::cerr << "usage error: " << e.what() << '\n';
      return kExitUsage;
    }
    return run_command(cfg, std::cout, std::cerr);
  }
  return kExitUsage;
}
