#include <csignal>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "heal/checkpoint.hpp"
#include "heal/error.hpp"
#include "heal/harness.hpp"
#include "heal/kernels.hpp"
#include "heal/service.hpp"

namespace fs = std::filesystem;
using namespace heal;

namespace {

constexpr int kConfigFailure = 2;
constexpr int kRunFailure = 1;

heal::HttpServer* g_server = nullptr;

void on_signal(int) {
  if (g_server) g_server->stop();
}

int cmd_run(const fs::path& config_path, bool resume, std::optional<std::size_t> workers,
            std::optional<std::size_t> stop_after) {
  RunConfig cfg;
  try {
    cfg = load_run_config(config_path);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << config_path.string() << ": " << e.what() << "\n";
    return kConfigFailure;
  }
  if (workers) cfg.workers = *workers;
  RunOptions opts;
  opts.resume = resume;
  opts.stop_after_rounds = stop_after;
  const auto result = run_learning_curve(cfg, opts);
  bool failed = false;
  for (const auto& r : result.runs) {
    std::cout << to_string(r.strategy) << " seed=" << r.seed << " " << to_string(r.status);
    if (!r.curve.points.empty()) {
      const auto& p = r.curve.points.back();
      std::cout << " labeled=" << p.labeled_count << " accuracy=" << format_double(p.test_accuracy);
    }
    if (!r.error.empty()) std::cout << " error: " << r.error;
    std::cout << "\n";
    failed |= r.status == RunStatus::failed;
  }
  std::cout << "outputs in " << cfg.output.string() << "\n";
  return failed ? kRunFailure : 0;
}

int cmd_entropy_hist(const std::optional<fs::path>& config_path, const std::vector<std::uint64_t>& seeds,
                     std::optional<std::size_t> workers) {
  EntropyHistConfig cfg;
  try {
    if (config_path) cfg = load_entropy_hist_config(*config_path);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << config_path->string() << ": " << e.what() << "\n";
    return kConfigFailure;
  }
  if (!seeds.empty()) cfg.seeds = seeds;
  if (workers) cfg.experiment.workers = *workers;

  std::ostringstream out;
  std::size_t isolated_wins = 0;
  for (std::uint64_t seed : cfg.seeds) {
    double gaps[3] = {};
    std::size_t m = 0;
    for (PriorMode mode : {PriorMode::none, PriorMode::combined, PriorMode::isolated}) {
      const auto r = run_ood_experiment(seed, mode, cfg.experiment);
      out << "# seed=" << seed << " in_dist_accuracy=" << format_double(r.in_dist_accuracy) << "\n"
          << format_histogram_table(r.histogram) << "\n";
      gaps[m++] = r.histogram.gap();
    }
    const bool wins = gaps[2] > 0.0 && gaps[2] > gaps[0] && gaps[2] > gaps[1];
    isolated_wins += wins;
    out << "# seed=" << seed << " gap none=" << format_double(gaps[0]) << " combined=" << format_double(gaps[1])
        << " isolated=" << format_double(gaps[2]) << " isolated_largest=" << (wins ? "yes" : "no") << "\n\n";
  }
  out << "# isolated gap largest in " << isolated_wins << "/" << cfg.seeds.size() << " seeds\n";
  std::cout << out.str();
  if (cfg.output) {
    if (cfg.output->has_parent_path()) fs::create_directories(cfg.output->parent_path());
    write_file_atomic(*cfg.output, out.str());
  }
  return 0;
}

int cmd_pairwise(const fs::path& output_dir) {
  const auto curves = import_curves(output_dir);
  if (curves.empty()) {
    std::cerr << "error: no curves under " << output_dir.string() << "\n";
    return kRunFailure;
  }
  std::cout << format_matrix_csv(pairwise_matrix(curves));
  return 0;
}

int cmd_serve(const std::string& address, const fs::path& state_dir, const fs::path& data_root,
              std::size_t workers) {
  const auto colon = address.rfind(':');
  if (colon == std::string::npos) {
    std::cerr << "error: address must be host:port\n";
    return kConfigFailure;
  }
  const std::string host = address.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(address.substr(colon + 1));
  } catch (const std::exception&) {
    std::cerr << "error: invalid port in '" << address << "'\n";
    return kConfigFailure;
  }
  SessionStore store({state_dir, data_root, workers});
  HttpServer server(store);
  const int bound = server.bind(host, port);
  g_server = &server;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving on " << host << ":" << bound << " (" << store.size() << " sessions loaded, state in "
            << state_dir.string() << ")\n";
  server.listen();
  g_server = nullptr;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hyperdimensional active learning toolkit"};
  app.require_subcommand(1);
  app.set_version_flag("--version", HEAL_VERSION);

  fs::path run_config;
  bool resume = false;
  std::optional<std::size_t> run_workers, stop_after;
  auto* run = app.add_subcommand("run", "Run the learning-curve benchmark described by a config file");
  run->add_option("config", run_config, "Run config (JSON)")->required();
  run->add_flag("--resume", resume, "Continue interrupted runs from their last completed round");
  run->add_option("--workers", run_workers, "Worker threads per run (0 = all cores)");
  run->add_option("--stop-after", stop_after, "Stop each run after this many rounds")->group("");

  std::optional<fs::path> hist_config;
  std::vector<std::uint64_t> hist_seeds;
  std::optional<std::size_t> hist_workers;
  auto* hist = app.add_subcommand("entropy-hist", "Predictive-entropy histograms on the synthetic OOD fixture");
  hist->add_option("config", hist_config, "Experiment config (JSON); defaults are used when omitted");
  hist->add_option("--seed", hist_seeds, "Seeds to run (repeatable)");
  hist->add_option("--workers", hist_workers, "Worker threads");

  fs::path pairwise_dir;
  auto* pairwise = app.add_subcommand("pairwise", "Print the pairwise comparison matrix of a results directory");
  pairwise->add_option("output", pairwise_dir, "Results directory")->required();

  std::string address = "127.0.0.1:8080";
  fs::path state_dir = "heal-state", data_root = ".";
  std::size_t serve_workers = 0;
  auto* serve = app.add_subcommand("serve", "Serve annotation sessions over HTTP");
  serve->add_option("--address", address, "host:port to listen on")->capture_default_str();
  serve->add_option("--state-dir", state_dir, "Directory for persisted sessions")->capture_default_str();
  serve->add_option("--data-root", data_root, "Base directory for relative dataset_ref values")
      ->capture_default_str();
  serve->add_option("--workers", serve_workers, "Worker threads per session (0 = all cores)");

  app.add_subcommand("isa", "Print the kernel instruction set in use");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) return cmd_run(run_config, resume, run_workers, stop_after);
    if (*hist) return cmd_entropy_hist(hist_config, hist_seeds, hist_workers);
    if (*pairwise) return cmd_pairwise(pairwise_dir);
    if (*serve) return cmd_serve(address, state_dir, data_root, serve_workers);
    std::cout << (kernels::active().isa == kernels::Isa::avx2 ? "avx2" : "scalar") << "\n";
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kConfigFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunFailure;
  }
}
