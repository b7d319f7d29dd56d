// sst: command-line driver for the dataset, training, generation,
// evaluation and serving pipeline.

#include <CLI11.hpp>

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <map>
#include <memory>
#include <optional>

#include "sst/cli.hpp"
#include "sst/service.hpp"

namespace {

enum Exit : int {
  kInternal = 1,
  kUsage = 2,
  kConfig = 3,
  kIo = 4,
  kParse = 5,
  kValue = 6,
  kShape = 7,
  kNumeric = 8,
  kGeometry = 9,
  kMismatch = 10,
};

int exit_code(const std::string& category) {
  static const std::map<std::string, int> codes{{"usage", kUsage},       {"config", kConfig}, {"io", kIo},
                                                {"parse", kParse},       {"value", kValue},   {"shape", kShape},
                                                {"numeric", kNumeric},   {"geometry", kGeometry},
                                                {"mismatch", kMismatch}};
  const auto it = codes.find(category);
  return it == codes.end() ? kInternal : it->second;
}

int fail(const std::string& category, const std::string& message) {
  std::cerr << "error: category=" << category << " message=" << sst::json(message).dump() << "\n";
  return exit_code(category);
}

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? v : fallback;
}

httplib::Server* g_server = nullptr;

void stop_server(int) {
  if (g_server) g_server->stop();
}

const char* type_label(sst::json::value_t t) {
  switch (t) {
    case sst::json::value_t::number_unsigned: return "UINT";
    case sst::json::value_t::number_integer: return "INT";
    case sst::json::value_t::number_float: return "FLOAT";
    case sst::json::value_t::boolean: return "BOOL";
    case sst::json::value_t::array: return "LIST";
    default: return "TEXT";
  }
}

struct RunOptions {
  const sst::cli::Command* command = nullptr;
  std::vector<sst::cli::Flag> flags;
  std::vector<std::optional<std::string>> values;
  std::string config_file, out;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"sst: shape generation with traversable latent subspaces"};
  app.require_subcommand(1);
  app.set_version_flag("--version", sst::cli::kToolVersion);

  std::vector<std::unique_ptr<RunOptions>> runs;
  for (const auto& cmd : sst::cli::commands()) {
    auto opts = std::make_unique<RunOptions>();
    opts->command = &cmd;
    opts->flags = sst::cli::config_flags(cmd.defaults);
    opts->values.resize(opts->flags.size());
    auto* sub = app.add_subcommand(cmd.name, cmd.help);
    sub->add_option("--config", opts->config_file, "JSON file overlaid on the defaults (flags win)");
    sub->add_option("--out", opts->out, "Run directory (default $SST_RUN_ROOT/<command>-<config hash>)");
    for (std::size_t i = 0; i < opts->flags.size(); ++i) {
      const auto& f = opts->flags[i];
      sst::json def = cmd.defaults;
      for (const auto& key : f.path) def = def.at(key);
      const std::string shown = def.is_string() ? def.get<std::string>() : def.dump();
      sub->add_option("--" + f.name, opts->values[i], "default: " + (shown.empty() ? "none" : shown))
          ->type_name(type_label(f.type));
    }
    runs.push_back(std::move(opts));
  }

  std::string rerun_manifest, rerun_out;
  auto* rerun = app.add_subcommand("rerun", "Replay a run manifest and compare artifact hashes");
  rerun->add_option("manifest", rerun_manifest, "Path to manifest.json")->required();
  rerun->add_option("--out", rerun_out, "Replay directory (default <run dir>-rerun)");

  std::string host = "127.0.0.1", vae_path = env_or("SST_VAE", ""), gan_path = env_or("SST_GAN", "");
  int port = std::atoi(env_or("SST_PORT", "8080").c_str());
  sst::ServiceConfig service_cfg;
  auto* serve = app.add_subcommand("serve", "Serve the traversal HTTP API");
  serve->add_option("--host", host, "Bind address")->capture_default_str();
  serve->add_option("--port", port, "Port (env SST_PORT)")->capture_default_str();
  serve->add_option("--vae", vae_path, "VAE checkpoint (env SST_VAE)");
  serve->add_option("--gan", gan_path, "GAN checkpoint (env SST_GAN)");
  serve->add_option("--workers", service_cfg.workers, "Concurrent decodes")->capture_default_str();
  serve->add_option("--mesh-cache", service_cfg.mesh_cache, "Meshes kept in memory")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }

  try {
    if (rerun->parsed()) {
      sst::cli::rerun(rerun_manifest, rerun_out);
      return 0;
    }
    if (serve->parsed()) {
      if (vae_path.empty() || gan_path.empty()) return fail("usage", "serve needs --vae and --gan (or SST_VAE, SST_GAN)");
      if (port < 0 || port > 65535) return fail("usage", "port must lie in [0, 65535]");
      sst::TraverseService service(service_cfg);
      service.load_files(vae_path, gan_path);
      httplib::Server server;
      service.mount(server);
      g_server = &server;
      std::signal(SIGINT, stop_server);
      std::signal(SIGTERM, stop_server);
      std::cout << "serving on http://" << host << ":" << port << std::endl;
      if (!server.listen(host, port)) throw sst::IoError("cannot listen on " + host + ":" + std::to_string(port));
      return 0;
    }
    for (const auto& opts : runs) {
      if (!app.got_subcommand(opts->command->name)) continue;
      sst::json overrides = sst::json::object();
      if (!opts->config_file.empty()) overrides = sst::cli::read_json_file(opts->config_file);
      for (std::size_t i = 0; i < opts->flags.size(); ++i) {
        if (!opts->values[i]) continue;
        sst::cli::set_flag(overrides, opts->flags[i], sst::cli::parse_flag_value(opts->flags[i], *opts->values[i]));
      }
      sst::cli::run_command(opts->command->name, overrides, opts->out);
      return 0;
    }
    return fail("usage", "no command given");
  } catch (const sst::Error& e) {
    return fail(e.category(), e.what());
  } catch (const std::bad_alloc&) {
    return fail("internal", "out of memory");
  } catch (const std::exception& e) {
    return fail("internal", e.what());
  }
}
