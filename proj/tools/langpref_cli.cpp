#include <csignal>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <thread>

#include <CLI11.hpp>

#include "langpref/gateway.hpp"
#include "langpref/harness.hpp"

using namespace langpref;
namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

harness::ExperimentConfig resolve_config(const Options& o) {
  harness::ExperimentConfig cfg = o.config.empty() ? harness::ExperimentConfig{} : harness::load_config(o.config);
  if (o.seed) cfg.master_seed = *o.seed;
  cfg.latent.seed = cfg.master_seed;
  if (!o.out.empty()) cfg.output_dir = o.out;
  cfg.validate();
  return cfg;
}

fs::path prepare_out(const harness::ExperimentConfig& cfg) {
  const fs::path out = cfg.output_dir;
  fs::create_directories(out);
  io::write_json(out / harness::kConfigFile, harness::config_to_json(cfg));
  return out;
}

const char* checkpoint_name(bool frozen) { return frozen ? "checkpoint_frozen.json" : harness::kCheckpointFile; }

int gen_data(const harness::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const harness::DataBundle data = harness::generate_data(cfg);
  harness::write_data(out, data);
  const harness::DataSummary summary = harness::summarize(data);
  std::cout << harness::format_summary(summary);
  std::cout << "wrote " << out.string() << "\n";
  return summary.unsound_labels == 0 ? 0 : 1;
}

int train_latent(const harness::ExperimentConfig& cfg, bool frozen, bool resume) {
  const fs::path out = prepare_out(cfg);
  const harness::DataBundle data = harness::load_data(out);
  std::optional<harness::LatentCheckpoint> start;
  if (resume) start = harness::load_checkpoint(out / checkpoint_name(frozen), data.catalog);
  const harness::LatentRun run = harness::run_train_latent(cfg, data, frozen, start ? &*start : nullptr);
  io::write_json(out / checkpoint_name(frozen), harness::checkpoint_to_json(run.checkpoint));
  run.table.write(out / (frozen ? "latent_history_frozen.csv" : harness::kHistoryFile));
  for (const latent::EpochRecord& e : run.result.history) {
    std::printf("epoch %3d  %-10s train %.4f  val %.4f  val_acc %.3f\n", e.epoch, latent::phase_name(e.phase),
                e.train_loss, e.val_loss, e.val_accuracy);
  }
  std::printf("best epoch %d, test accuracy %.3f\n", run.checkpoint.best_epoch, run.test_accuracy);
  return 0;
}

harness::LatentCheckpoint require_checkpoint(const fs::path& out, const harness::DataBundle& data) {
  const fs::path path = out / harness::kCheckpointFile;
  if (!fs::exists(path)) throw std::runtime_error("no checkpoint at " + path.string() + "; run train-latent first");
  return harness::load_checkpoint(path, data.catalog);
}

int run_improve(const harness::ExperimentConfig& cfg) {
  const fs::path out = prepare_out(cfg);
  const harness::DataBundle data = harness::load_data(out);
  const harness::LatentCheckpoint ckpt = require_checkpoint(out, data);
  const harness::ImproveRun run = harness::run_improve(cfg, data, ckpt.encoders);
  run.table.write(out / harness::kImproveFile);
  std::ofstream(out / harness::kTracesFile) << run.traces_csv;
  for (std::size_t i = 0; i < run.mean.size(); ++i) {
    std::printf("iteration %2zu  normalized reward %.3f +- %.3f\n", i, run.mean[i], run.stddev[i]);
  }
  if (run.incomplete > 0) std::printf("%d runs stopped early\n", run.incomplete);
  return 0;
}

int learn_reward(const harness::ExperimentConfig& cfg, const std::string& methods) {
  const fs::path out = prepare_out(cfg);
  const harness::DataBundle data = harness::load_data(out);
  const harness::LatentCheckpoint ckpt = require_checkpoint(out, data);
  const harness::RewardStudy study =
      harness::run_learn_reward(cfg, data, ckpt.encoders, harness::methods_from_list(methods));
  study.table.write(out / harness::kRewardFile);
  std::map<std::string, std::pair<double, int>> ce_auc, best_auc;
  for (const harness::RewardCell& c : study.cells) {
    auto& a = ce_auc[harness::method_name(c.method)];
    auto& b = best_auc[harness::method_name(c.method)];
    if (c.run.cross_entropy.points.size() >= 2) {
      a.first += reward::auc(c.run.cross_entropy);
      a.second += 1;
      b.first += reward::auc(c.run.true_reward);
      b.second += 1;
    }
  }
  for (const auto& [name, a] : ce_auc) {
    const auto& b = best_auc[name];
    std::printf("%-18s cross-entropy AUC %.4f  best-of-pool AUC %.4f  (%d runs)\n", name.c_str(),
                a.second ? a.first / a.second : 0.0, b.second ? b.first / b.second : 0.0, a.second);
  }
  return 0;
}

int serve(const harness::ExperimentConfig& cfg, std::optional<int> port_override) {
  const fs::path out = cfg.output_dir;
  auto assets = std::make_shared<gateway::Assets>();
  {
    harness::DataBundle data = harness::load_data(out);
    harness::LatentCheckpoint ckpt = require_checkpoint(out, data);
    assets->pool = std::move(data.pool);
    assets->catalog = std::move(data.catalog);
    assets->encoders = std::move(ckpt.encoders);
  }
  gateway::GatewayConfig g;
  g.improve_max_iterations = cfg.gateway.improve_max_iterations;
  g.learn_max_iterations = cfg.gateway.learn_max_iterations;
  g.rate_every = cfg.gateway.rate_every;
  g.reference_w = cfg.gateway.reference_w;
  g.improver = cfg.improve.improver;
  g.reward = cfg.reward.model;
  g.seed = derive_seed(cfg.master_seed, stream::kGateway);
  g.config_digest = harness::config_digest(cfg);
  g.log_dir = out / "sessions";

  // Signals go to a dedicated thread; every other thread inherits the mask.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  gateway::Service service(assets, g);
  gateway::Server server(service);
  const int port = server.bind("0.0.0.0", port_override.value_or(cfg.gateway.port));
  std::printf("serving on port %d (config %s)\n", port, g.config_digest.c_str());
  std::fflush(stdout);

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    server.stop();
  });
  server.listen();
  // listen() also returns if the socket fails; wake the waiter so it can exit.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  service.flush();
  std::printf("shut down; session logs in %s\n", g.log_dir.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Language-conditioned trajectory improvement and reward learning"};
  app.require_subcommand(1);
  Options opt;
  app.add_option("--config", opt.config, "Experiment config JSON")->check(CLI::ExistingFile);
  app.add_option("--seed", opt.seed, "Master seed (overrides the config)");
  app.add_option("--out", opt.out, "Output directory (overrides the config)");

  app.add_subcommand("gen-data", "Generate the trajectory pool, splits and labeled triplets");
  auto* train = app.add_subcommand("train-latent", "Train the trajectory and language encoders");
  bool frozen = false, resume = false;
  train->add_flag("--frozen-language", frozen, "Keep the language encoder at its initial weights");
  train->add_flag("--resume", resume, "Continue from the saved checkpoint and optimizer state");
  app.add_subcommand("improve", "Run the simulated improvement study");
  auto* learn = app.add_subcommand("learn-reward", "Run the simulated reward-learning study");
  std::string methods = "all";
  learn->add_option("--method", methods, "all, or a comma list of language,comparison,ablation-explicit,ablation-implicit");
  auto* serve_cmd = app.add_subcommand("serve", "Serve live sessions over HTTP");
  std::optional<int> port;
  serve_cmd->add_option("--port", port, "Port (overrides the config)")->check(CLI::Range(0, 65535));

  CLI11_PARSE(app, argc, argv);
  try {
    const harness::ExperimentConfig cfg = resolve_config(opt);
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen-data") return gen_data(cfg);
    if (cmd == "train-latent") return train_latent(cfg, frozen, resume);
    if (cmd == "improve") return run_improve(cfg);
    if (cmd == "learn-reward") return learn_reward(cfg, methods);
    if (cmd == "serve") return serve(cfg, port);
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 2;
  }
  return 0;
}
