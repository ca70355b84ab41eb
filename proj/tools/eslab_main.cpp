#include <csignal>
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "eslab/cli.hpp"

namespace {

// Flags are a thin layer over the config file: every option is optional and,
// when given, overrides the corresponding config key after the file loads.
struct Overrides {
  std::optional<std::string> output_dir;
  std::optional<std::string> dataset_kind;
  std::optional<std::string> dataset_path;
  std::optional<uint64_t> dataset_seed;
  std::optional<std::string> victim_model;
  std::optional<int> victim_epochs;
  std::optional<std::string> victim_checkpoint;
  std::optional<int> rounding;
  std::optional<int> topk;
  std::optional<int64_t> budget;
  std::optional<std::string> endpoint;
  std::optional<std::string> mode;
  std::optional<std::string> substitute;
  std::optional<int64_t> stealing_epochs;
  std::optional<int> train_epochs;
  std::optional<int> opt_iterations;
  std::optional<int64_t> samples_per_epoch;
  std::optional<double> kd_lr;
  std::optional<double> synth_lr;
  std::optional<uint64_t> seed;
  std::optional<int> fillup_k;
  std::optional<std::string> resume;
  std::optional<std::string> substitute_checkpoint;
  std::optional<std::string> pool_path;
  std::optional<double> pgd_epsilon;
  std::optional<double> detector_delta;
};

void add_options(CLI::App* cmd, std::string& config_path, Overrides& ov) {
  cmd->add_option("-c,--config", config_path, "experiment config (JSON)");
  cmd->add_option("-o,--output-dir", ov.output_dir, "where reports and artifacts go");
  cmd->add_option("--dataset", ov.dataset_kind, "dataset kind: blobs | digits-like | file");
  cmd->add_option("--dataset-path", ov.dataset_path, "dataset file for kind 'file'");
  cmd->add_option("--dataset-seed", ov.dataset_seed, "dataset generation/split seed");
  cmd->add_option("--model", ov.victim_model, "victim architecture");
  cmd->add_option("--victim-epochs", ov.victim_epochs, "victim training epochs");
  cmd->add_option("--victim-checkpoint", ov.victim_checkpoint, "victim checkpoint path");
  cmd->add_option("--rounding", ov.rounding, "defense: round predictions to r decimals");
  cmd->add_option("--topk", ov.topk, "defense: expose only the top K' probabilities");
  cmd->add_option("--budget", ov.budget, "max queries the oracle will answer");
  cmd->add_option("--endpoint", ov.endpoint, "query a served oracle at host:port");
  cmd->add_option("--mode", ov.mode, "attack: opt-syn | dnn-syn | random | auxiliary");
  cmd->add_option("--substitute", ov.substitute, "substitute architecture");
  cmd->add_option("-N,--stealing-epochs", ov.stealing_epochs, "outer attack rounds");
  cmd->add_option("-M,--train-epochs", ov.train_epochs, "substitute epochs per round");
  cmd->add_option("-m,--opt-iterations", ov.opt_iterations, "per-sample synthesis steps");
  cmd->add_option("-S,--samples-per-epoch", ov.samples_per_epoch, "synthetic pool size");
  cmd->add_option("--kd-lr", ov.kd_lr, "distillation learning rate");
  cmd->add_option("--synth-lr", ov.synth_lr, "synthesis learning rate");
  cmd->add_option("--seed", ov.seed, "attack seed");
  cmd->add_option("--fillup-k", ov.fillup_k, "reconstruct top-K' answers before training");
  cmd->add_option("--resume", ov.resume, "substitute checkpoint to resume from");
  cmd->add_option("--substitute-checkpoint", ov.substitute_checkpoint,
                  "substitute checkpoint path for evaluation");
  cmd->add_option("--pool", ov.pool_path, "synthetic pool file for metrics/detect");
  cmd->add_option("--pgd-epsilon", ov.pgd_epsilon, "PGD l-inf budget");
  cmd->add_option("--detector-delta", ov.detector_delta, "detection threshold on W'");
}

eslab::ExperimentConfig make_config(const std::string& config_path, const Overrides& ov) {
  eslab::ExperimentConfig cfg =
      config_path.empty() ? eslab::ExperimentConfig{} : eslab::load_config(config_path);
  if (ov.output_dir) cfg.output_dir = *ov.output_dir;
  if (ov.dataset_kind) cfg.dataset.kind = *ov.dataset_kind;
  if (ov.dataset_path) cfg.dataset.path = *ov.dataset_path;
  if (ov.dataset_seed) cfg.dataset.seed = *ov.dataset_seed;
  if (ov.victim_model) cfg.victim.model = *ov.victim_model;
  if (ov.victim_epochs) cfg.victim.epochs = *ov.victim_epochs;
  if (ov.victim_checkpoint) cfg.victim.checkpoint = *ov.victim_checkpoint;
  if (ov.rounding) cfg.oracle.rounding_decimals = *ov.rounding;
  if (ov.topk) cfg.oracle.topk = *ov.topk;
  if (ov.budget) cfg.oracle.budget = *ov.budget;
  if (ov.endpoint) cfg.oracle.endpoint = *ov.endpoint;
  if (ov.mode) cfg.attack.mode = *ov.mode;
  if (ov.substitute) cfg.attack.substitute = *ov.substitute;
  if (ov.stealing_epochs) cfg.attack.stealing_epochs = *ov.stealing_epochs;
  if (ov.train_epochs) cfg.attack.train_epochs = *ov.train_epochs;
  if (ov.opt_iterations) cfg.attack.opt_iterations = *ov.opt_iterations;
  if (ov.samples_per_epoch) cfg.attack.samples_per_epoch = *ov.samples_per_epoch;
  if (ov.kd_lr) cfg.attack.kd_lr = *ov.kd_lr;
  if (ov.synth_lr) cfg.attack.synth_lr = *ov.synth_lr;
  if (ov.seed) cfg.attack.seed = *ov.seed;
  if (ov.fillup_k) cfg.attack.fillup_k = *ov.fillup_k;
  if (ov.resume) cfg.attack.resume_checkpoint = *ov.resume;
  if (ov.substitute_checkpoint) cfg.evaluation.substitute_checkpoint = *ov.substitute_checkpoint;
  if (ov.pool_path) cfg.evaluation.pool_path = *ov.pool_path;
  if (ov.pgd_epsilon) cfg.evaluation.pgd_epsilon = *ov.pgd_epsilon;
  if (ov.detector_delta) cfg.evaluation.detector_delta = *ov.detector_delta;
  return cfg;
}

eslab::OracleServer* g_server = nullptr;

void handle_sigint(int) {
  if (g_server) g_server->stop();
}

int run_serve(const eslab::ExperimentConfig& cfg, uint16_t port) {
  eslab::detail::prepare_output(cfg);
  eslab::Network victim =
      eslab::load_checkpoint(eslab::detail::resolve_path(cfg, cfg.victim.checkpoint));
  eslab::OracleSession session(std::move(victim), eslab::to_defense(cfg.oracle),
                               cfg.oracle.budget, cfg.oracle.price_per_1k);
  eslab::OracleServer server(session, port);
  g_server = &server;
  std::signal(SIGINT, handle_sigint);
  std::signal(SIGTERM, handle_sigint);
  std::printf("serving on 127.0.0.1:%u\n", server.port());
  std::fflush(stdout);
  server.run();
  g_server = nullptr;
  std::printf("served %lld queries (estimated cost %s)\n",
              static_cast<long long>(session.query_count()),
              eslab::format_double(session.estimate_cost()).c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"model-extraction laboratory"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides ov;
  uint16_t port = 0;

  auto* train = app.add_subcommand("train-victim", "train and checkpoint a victim");
  auto* serve = app.add_subcommand("serve", "serve a victim oracle over TCP");
  serve->add_option("--port", port, "listen port (0 picks a free one)");
  auto* steal = app.add_subcommand("steal", "run an extraction attack or baseline");
  auto* evaluate = app.add_subcommand("evaluate", "score a stolen substitute");
  auto* pgd = app.add_subcommand("pgd", "adversarial-example transfer evaluation");
  auto* detect = app.add_subcommand("detect", "replay a query stream through the detector");
  auto* metrics = app.add_subcommand("metrics", "IS/FID of a synthetic pool");
  for (auto* cmd : {train, serve, steal, evaluate, pgd, detect, metrics})
    add_options(cmd, config_path, ov);

  CLI11_PARSE(app, argc, argv);

  try {
    const eslab::ExperimentConfig cfg = make_config(config_path, ov);
    nlohmann::ordered_json report;
    if (train->parsed())
      report = eslab::cmd_train_victim(cfg);
    else if (serve->parsed())
      return run_serve(cfg, port);
    else if (steal->parsed())
      report = eslab::cmd_steal(cfg);
    else if (evaluate->parsed())
      report = eslab::cmd_evaluate(cfg);
    else if (pgd->parsed())
      report = eslab::cmd_pgd(cfg);
    else if (detect->parsed())
      report = eslab::cmd_detect(cfg);
    else if (metrics->parsed())
      report = eslab::cmd_metrics(cfg);
    std::cout << report.dump(2) << std::endl;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << std::endl;
    return 1;
  }
  return 0;
}
