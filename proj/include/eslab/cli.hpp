#pragma once

#include <filesystem>
#include <string>
#include <utility>

#include <json.hpp>

#include "eslab/adversarial.hpp"
#include "eslab/config.hpp"
#include "eslab/detect.hpp"
#include "eslab/metrics.hpp"
#include "eslab/serve.hpp"
#include "eslab/steal.hpp"
#include "eslab/train.hpp"

namespace eslab {

// Command bodies behind the CLI. Each one creates the output directory,
// echoes the fully-resolved config there, does its work, writes a
// <command>_report.json, and returns the same report. Reports carry no
// wall-time fields, so a fixed config and seed reproduce them byte for byte.

namespace detail {

/// Relative artifact paths land in the run's output directory.
inline std::string resolve_path(const ExperimentConfig& cfg, const std::string& name) {
  std::filesystem::path p(name);
  if (p.is_absolute()) return name;
  return (std::filesystem::path(cfg.output_dir) / p).string();
}

inline void prepare_output(const ExperimentConfig& cfg) {
  std::filesystem::create_directories(cfg.output_dir);
  save_config(cfg, detail::resolve_path(cfg, "resolved_config.json"));
}

inline void write_report(const ExperimentConfig& cfg, const std::string& name,
                         const nlohmann::ordered_json& report) {
  std::ofstream os(resolve_path(cfg, name));
  if (!os) throw std::runtime_error("cannot open for writing: " + resolve_path(cfg, name));
  os << report.dump(2) << '\n';
}

/// Every S-th row of the auxiliary data so baselines query as much as one
/// synthetic epoch does.
inline Tensor strided_rows(const Tensor& inputs, int64_t want) {
  const int64_t n = inputs.dim(0);
  if (n <= want) return inputs;
  std::vector<int64_t> idx;
  idx.reserve(static_cast<size_t>(want));
  for (int64_t i = 0; i < want; ++i) idx.push_back(i * (n / want));
  return take_rows(inputs, idx);
}

}  // namespace detail

inline LabeledDataset build_dataset(const DatasetSection& d) {
  if (d.kind == "blobs") return gen_blobs(d.classes, d.dim, d.samples, d.spread, d.seed);
  if (d.kind == "digits-like") return gen_digits_like(d.samples, d.seed);
  return load_dataset(d.path);  // kind "file"; missing file throws with the path
}

inline std::pair<LabeledDataset, LabeledDataset> build_split(const DatasetSection& d) {
  return split_dataset(build_dataset(d), d.test_size, d.seed);
}

inline Shape sample_shape(const LabeledDataset& ds) {
  return Shape(ds.inputs.shape().begin() + 1, ds.inputs.shape().end());
}

inline DefenseConfig to_defense(const OracleSection& o) {
  DefenseConfig d;
  d.rounding_decimals = o.rounding_decimals;
  d.topk = o.topk;
  d.detection_enabled = o.detection_enabled;
  return d;
}

inline nlohmann::ordered_json cmd_train_victim(const ExperimentConfig& cfg) {
  detail::prepare_output(cfg);
  auto [train, test] = build_split(cfg.dataset);
  Network victim =
      make_model(cfg.victim.model, sample_shape(train), train.class_count, cfg.victim.seed);
  TrainConfig tc;
  tc.epochs = cfg.victim.epochs;
  tc.batch = cfg.victim.batch;
  tc.lr = cfg.victim.lr;
  tc.seed = cfg.victim.seed;
  TrainReport rep = train_supervised(victim, train, test, tc);
  const std::string ckpt = detail::resolve_path(cfg, cfg.victim.checkpoint);
  save_checkpoint(victim, ckpt);

  nlohmann::ordered_json report;
  report["command"] = "train-victim";
  report["dataset"] = train.name;
  report["train_size"] = train.size();
  report["test_size"] = test.size();
  report["model"] = cfg.victim.model;
  report["epochs"] = cfg.victim.epochs;
  report["best_test_accuracy"] = rep.best_test_accuracy;
  report["final_test_accuracy"] = rep.final_test_accuracy;
  report["checkpoint"] = ckpt;
  detail::write_report(cfg, "train_victim_report.json", report);
  return report;
}

namespace detail {

template <class Oracle>
StealResult dispatch_attack(Oracle& oracle, const ExperimentConfig& cfg,
                            const LabeledDataset& train, const LabeledDataset& test,
                            Network substitute) {
  const auto& a = cfg.attack;
  if (a.mode == "random" || a.mode == "auxiliary") {
    BaselineConfig bcfg;
    bcfg.pool_size = a.samples_per_epoch;
    bcfg.epochs = a.stealing_epochs;
    bcfg.train_epochs = a.train_epochs;
    bcfg.kd_lr = a.kd_lr;
    bcfg.kd_batch = a.kd_batch;
    bcfg.seed = a.seed;
    const BaselineKind kind =
        a.mode == "random" ? BaselineKind::random : BaselineKind::auxiliary;
    Tensor aux;
    if (kind == BaselineKind::auxiliary)
      aux = strided_rows(make_auxiliary(train, a.aux_shift, a.seed).inputs,
                         a.samples_per_epoch);
    return baseline_steal(oracle, std::move(substitute), kind, bcfg, &test, aux);
  }
  return run_es_attack(oracle, std::move(substitute), to_steal_config(a), &test);
}

}  // namespace detail

inline nlohmann::ordered_json cmd_steal(const ExperimentConfig& cfg) {
  detail::prepare_output(cfg);
  auto [train, test] = build_split(cfg.dataset);

  Network substitute =
      cfg.attack.resume_checkpoint.empty()
          ? make_model(cfg.attack.substitute, sample_shape(train), train.class_count,
                       cfg.attack.seed)
          : load_checkpoint(detail::resolve_path(cfg, cfg.attack.resume_checkpoint));

  StealResult result;
  double estimated_cost = 0.0;
  if (!cfg.oracle.endpoint.empty()) {
    auto [host, port] = parse_endpoint(cfg.oracle.endpoint);
    RemoteOracle oracle(host, port);
    result = detail::dispatch_attack(oracle, cfg, train, test, std::move(substitute));
    estimated_cost = estimate_cost(oracle.query_count(), cfg.oracle.price_per_1k);
  } else {
    Network victim = load_checkpoint(detail::resolve_path(cfg, cfg.victim.checkpoint));
    OracleSession oracle(std::move(victim), to_defense(cfg.oracle), cfg.oracle.budget,
                         cfg.oracle.price_per_1k);
    result = detail::dispatch_attack(oracle, cfg, train, test, std::move(substitute));
    estimated_cost = oracle.estimate_cost();
  }

  const std::string ckpt = detail::resolve_path(cfg, cfg.evaluation.substitute_checkpoint);
  save_checkpoint(result.model, ckpt);
  std::string best_ckpt;
  if (result.best_model.defined()) {
    best_ckpt = detail::resolve_path(cfg, "substitute_best.ckpt");
    save_checkpoint(result.best_model, best_ckpt);
  }
  save_trace_csv(result.trace, detail::resolve_path(cfg, "trace.csv"));
  if (result.first_pool.inputs.defined())
    save_dataset(result.first_pool, detail::resolve_path(cfg, "first_pool.esd"));
  if (result.last_pool.inputs.defined())
    save_dataset(result.last_pool, detail::resolve_path(cfg, "last_pool.esd"));

  const auto& recs = result.trace.records;
  nlohmann::ordered_json report;
  report["command"] = "steal";
  report["mode"] = cfg.attack.mode;
  report["epochs_completed"] = recs.size();
  report["budget_exhausted"] = result.trace.budget_exhausted;
  report["queries"] = recs.empty() ? 0 : recs.back().queries;
  report["estimated_cost"] = estimated_cost;
  report["final_accuracy"] = recs.empty() ? 0.0 : recs.back().accuracy;
  report["best_accuracy"] = result.trace.best_accuracy;
  report["best_epoch"] = result.trace.best_epoch;
  report["checkpoint"] = ckpt;
  report["best_checkpoint"] = best_ckpt;
  report["trace"] = detail::resolve_path(cfg, "trace.csv");
  detail::write_report(cfg, "steal_report.json", report);
  return report;
}

inline nlohmann::ordered_json cmd_evaluate(const ExperimentConfig& cfg) {
  detail::prepare_output(cfg);
  auto [train, test] = build_split(cfg.dataset);
  Network victim = load_checkpoint(detail::resolve_path(cfg, cfg.victim.checkpoint));
  Network substitute =
      load_checkpoint(detail::resolve_path(cfg, cfg.evaluation.substitute_checkpoint));

  nlohmann::ordered_json report;
  report["command"] = "evaluate";
  if (cfg.evaluation.accuracy) {
    const double va = accuracy(victim, test);
    const double sa = accuracy(substitute, test);
    report["victim_accuracy"] = va;
    report["substitute_accuracy"] = sa;
    report["accuracy_ratio"] = va > 0.0 ? sa / va : 0.0;
  }
  if (cfg.evaluation.agreement) report["agreement"] = agreement(substitute, victim, test.inputs);

  if (cfg.evaluation.inception_score || cfg.evaluation.fid) {
    auto fx = feature_extractor(victim);
    const GaussianSummary real = gaussian_summary(extract_features(fx, train.inputs));
    auto pool_block = [&](const std::string& path) {
      SoftDataset pool = load_soft_dataset(path);
      nlohmann::ordered_json block;
      if (cfg.evaluation.inception_score)
        block["inception_score"] = inception_score(victim, pool.inputs);
      if (cfg.evaluation.fid)
        block["fid"] = fid(real, gaussian_summary(extract_features(fx, pool.inputs)));
      return block;
    };
    if (!cfg.evaluation.pool_path.empty()) {
      report["pool"] = pool_block(detail::resolve_path(cfg, cfg.evaluation.pool_path));
    } else {
      // default to the pools the steal command drops in the output directory
      const std::string first = detail::resolve_path(cfg, "first_pool.esd");
      const std::string last = detail::resolve_path(cfg, "last_pool.esd");
      if (std::filesystem::exists(first)) report["first_pool"] = pool_block(first);
      if (std::filesystem::exists(last)) report["last_pool"] = pool_block(last);
    }
  }
  detail::write_report(cfg, "evaluate_report.json", report);
  return report;
}

inline nlohmann::ordered_json cmd_pgd(const ExperimentConfig& cfg) {
  detail::prepare_output(cfg);
  auto [train, test] = build_split(cfg.dataset);
  Network victim = load_checkpoint(detail::resolve_path(cfg, cfg.victim.checkpoint));
  Network substitute =
      load_checkpoint(detail::resolve_path(cfg, cfg.evaluation.substitute_checkpoint));

  PgdConfig pcfg;
  pcfg.epsilon = cfg.evaluation.pgd_epsilon;
  pcfg.step_size = cfg.evaluation.pgd_step;
  pcfg.iterations = cfg.evaluation.pgd_iterations;
  pcfg.random_start = cfg.evaluation.pgd_random_start;
  pcfg.random_start_seed = cfg.attack.seed;
  OracleSession oracle(std::move(victim), to_defense(cfg.oracle), cfg.oracle.budget,
                       cfg.oracle.price_per_1k);
  TransferReport tr = transfer_eval(substitute, oracle, test, pcfg);

  nlohmann::ordered_json report;
  report["command"] = "pgd";
  report["epsilon"] = pcfg.epsilon;
  report["step_size"] = pcfg.step_size;
  report["iterations"] = pcfg.iterations;
  report["crafted"] = tr.crafted;
  report["white_box_success"] = tr.white_sub;
  report["black_box_success"] = tr.black_victim;
  detail::write_report(cfg, "pgd_report.json", report);
  return report;
}

inline nlohmann::ordered_json cmd_detect(const ExperimentConfig& cfg) {
  detail::prepare_output(cfg);
  Network victim = load_checkpoint(detail::resolve_path(cfg, cfg.victim.checkpoint));

  Tensor queries;
  std::vector<int> predicted;
  if (!cfg.evaluation.pool_path.empty()) {
    SoftDataset pool = load_soft_dataset(detail::resolve_path(cfg, cfg.evaluation.pool_path));
    queries = pool.inputs;
    predicted = predict(victim, queries);
  }

  DetectorConfig dcfg;
  dcfg.delta = cfg.evaluation.detector_delta;
  dcfg.min_history = cfg.evaluation.detector_min_history;
  Detector detector(victim.class_count(), dcfg);
  DetectionReport rep =
      replay_attack_stream(detector, queries, predicted, cfg.evaluation.detect_every);

  nlohmann::ordered_json report;
  report["command"] = "detect";
  report["queries"] = rep.queries;
  report["indeterminate"] = rep.verdict.indeterminate;
  report["flagged"] = rep.verdict.flagged;
  report["normality"] = rep.verdict.normality;
  report["first_flag_query"] = rep.first_flag_query;
  detail::write_report(cfg, "detect_report.json", report);
  return report;
}

inline nlohmann::ordered_json cmd_metrics(const ExperimentConfig& cfg) {
  detail::prepare_output(cfg);
  if (cfg.evaluation.pool_path.empty())
    throw std::invalid_argument("metrics: evaluation.pool_path is required");
  auto [train, test] = build_split(cfg.dataset);
  Network victim = load_checkpoint(detail::resolve_path(cfg, cfg.victim.checkpoint));
  SoftDataset pool = load_soft_dataset(detail::resolve_path(cfg, cfg.evaluation.pool_path));

  nlohmann::ordered_json report;
  report["command"] = "metrics";
  report["pool"] = cfg.evaluation.pool_path;
  report["samples"] = pool.inputs.dim(0);
  if (cfg.evaluation.inception_score)
    report["inception_score"] = inception_score(victim, pool.inputs);
  if (cfg.evaluation.fid) {
    auto fx = feature_extractor(victim);
    const GaussianSummary real = gaussian_summary(extract_features(fx, train.inputs));
    report["fid"] = fid(real, gaussian_summary(extract_features(fx, pool.inputs)));
  }
  detail::write_report(cfg, "metrics_report.json", report);
  return report;
}

}  // namespace eslab
