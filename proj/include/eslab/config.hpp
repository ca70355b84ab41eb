#pragma once

#include <algorithm>
#include <array>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "eslab/steal.hpp"

namespace eslab {

// Experiment configs are JSON with five fixed sections plus an output
// directory. Unknown keys are rejected so a typo cannot silently fall back
// to a default, and every command echoes the fully-resolved config next to
// its outputs.

struct DatasetSection {
  std::string kind = "blobs";  // blobs | digits-like | file
  int64_t classes = 10;        // blobs only
  int64_t dim = 64;            // blobs only
  int64_t samples = 2000;
  double spread = 0.3;         // blobs only
  uint64_t seed = 42;
  int64_t test_size = 400;
  std::string path;            // file only, binary dataset
};

struct VictimSection {
  std::string model = "mlp-small";
  int epochs = 25;
  int64_t batch = 64;
  double lr = 1e-3;
  uint64_t seed = 42;
  std::string checkpoint = "victim.ckpt";  // relative paths land in output_dir
};

struct OracleSection {
  std::optional<int> rounding_decimals;
  std::optional<int> topk;
  bool detection_enabled = false;
  std::optional<int64_t> budget;
  double price_per_1k = 0.25;
  std::string endpoint;  // "host:port" queries a served oracle instead
};

struct AttackSection {
  std::string mode = "opt-syn";  // opt-syn | dnn-syn | random | auxiliary
  std::string substitute = "mlp-small";
  int64_t stealing_epochs = 50;     // N
  int train_epochs = 10;            // M
  int opt_iterations = 30;          // m
  int64_t samples_per_epoch = 256;  // S
  double kd_lr = 1e-3;
  int64_t kd_batch = 64;
  double synth_lr = 0.01;
  double lambda_ms = 1.0;
  int64_t latent_dim = 16;
  int64_t generator_hidden = 128;
  int generator_steps = 50;
  int64_t generator_batch = 64;
  bool reinit_generator = false;
  uint64_t seed = 1;
  bool augment = false;
  bool replay_all = false;
  std::optional<int> fillup_k;
  double aux_shift = 2.5;  // displacement of the auxiliary baseline's data
  std::string resume_checkpoint;
};

struct EvaluationSection {
  bool accuracy = true;
  bool agreement = true;
  bool inception_score = true;
  bool fid = true;
  std::string substitute_checkpoint = "substitute.ckpt";
  std::string pool_path;  // metrics/detect input; steal writes pool CSVs
  double pgd_epsilon = 0.5;
  double pgd_step = 0.05;
  int pgd_iterations = 40;
  bool pgd_random_start = false;
  double detector_delta = 0.9;
  int64_t detector_min_history = 30;
  int64_t detect_every = 256;
};

struct ExperimentConfig {
  DatasetSection dataset;
  VictimSection victim;
  OracleSection oracle;
  AttackSection attack;
  EvaluationSection evaluation;
  std::string output_dir = "out";
};

namespace detail {

using JsonHandler = std::function<void(const nlohmann::json&)>;

/// Applies every key through its handler; a key without a handler is a
/// config error.
inline void apply_section(const nlohmann::json& j, const std::string& section,
                          const std::map<std::string, JsonHandler>& handlers) {
  if (!j.is_object())
    throw std::invalid_argument("config: section '" + section + "' must be an object");
  for (const auto& [key, value] : j.items()) {
    const auto it = handlers.find(key);
    if (it == handlers.end())
      throw std::invalid_argument("config: unknown key '" + section + "." + key + "'");
    try {
      it->second(value);
    } catch (const nlohmann::json::exception&) {
      throw std::invalid_argument("config: bad value for '" + section + "." + key + "'");
    }
  }
}

template <class T>
JsonHandler assign(T& target) {
  return [&target](const nlohmann::json& v) { target = v.get<T>(); };
}

template <class T>
JsonHandler assign(std::optional<T>& target) {
  return [&target](const nlohmann::json& v) {
    if (v.is_null())
      target.reset();
    else
      target = v.get<T>();
  };
}

template <class T>
nlohmann::ordered_json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::json& root) {
  if (!root.is_object()) throw std::invalid_argument("config: top level must be an object");
  ExperimentConfig cfg;
  auto& d = cfg.dataset;
  auto& v = cfg.victim;
  auto& o = cfg.oracle;
  auto& a = cfg.attack;
  auto& e = cfg.evaluation;
  const std::map<std::string, detail::JsonHandler> sections = {
      {"dataset",
       [&](const nlohmann::json& j) {
         detail::apply_section(j, "dataset",
                               {{"kind", detail::assign(d.kind)},
                                {"classes", detail::assign(d.classes)},
                                {"dim", detail::assign(d.dim)},
                                {"samples", detail::assign(d.samples)},
                                {"spread", detail::assign(d.spread)},
                                {"seed", detail::assign(d.seed)},
                                {"test_size", detail::assign(d.test_size)},
                                {"path", detail::assign(d.path)}});
       }},
      {"victim",
       [&](const nlohmann::json& j) {
         detail::apply_section(j, "victim",
                               {{"model", detail::assign(v.model)},
                                {"epochs", detail::assign(v.epochs)},
                                {"batch", detail::assign(v.batch)},
                                {"lr", detail::assign(v.lr)},
                                {"seed", detail::assign(v.seed)},
                                {"checkpoint", detail::assign(v.checkpoint)}});
       }},
      {"oracle",
       [&](const nlohmann::json& j) {
         detail::apply_section(j, "oracle",
                               {{"rounding_decimals", detail::assign(o.rounding_decimals)},
                                {"topk", detail::assign(o.topk)},
                                {"detection_enabled", detail::assign(o.detection_enabled)},
                                {"budget", detail::assign(o.budget)},
                                {"price_per_1k", detail::assign(o.price_per_1k)},
                                {"endpoint", detail::assign(o.endpoint)}});
       }},
      {"attack",
       [&](const nlohmann::json& j) {
         detail::apply_section(
             j, "attack",
             {{"mode", detail::assign(a.mode)},
              {"substitute", detail::assign(a.substitute)},
              {"stealing_epochs", detail::assign(a.stealing_epochs)},
              {"train_epochs", detail::assign(a.train_epochs)},
              {"opt_iterations", detail::assign(a.opt_iterations)},
              {"samples_per_epoch", detail::assign(a.samples_per_epoch)},
              {"kd_lr", detail::assign(a.kd_lr)},
              {"kd_batch", detail::assign(a.kd_batch)},
              {"synth_lr", detail::assign(a.synth_lr)},
              {"lambda_ms", detail::assign(a.lambda_ms)},
              {"latent_dim", detail::assign(a.latent_dim)},
              {"generator_hidden", detail::assign(a.generator_hidden)},
              {"generator_steps", detail::assign(a.generator_steps)},
              {"generator_batch", detail::assign(a.generator_batch)},
              {"reinit_generator", detail::assign(a.reinit_generator)},
              {"seed", detail::assign(a.seed)},
              {"augment", detail::assign(a.augment)},
              {"replay_all", detail::assign(a.replay_all)},
              {"fillup_k", detail::assign(a.fillup_k)},
              {"aux_shift", detail::assign(a.aux_shift)},
              {"resume_checkpoint", detail::assign(a.resume_checkpoint)}});
       }},
      {"evaluation",
       [&](const nlohmann::json& j) {
         detail::apply_section(
             j, "evaluation",
             {{"accuracy", detail::assign(e.accuracy)},
              {"agreement", detail::assign(e.agreement)},
              {"inception_score", detail::assign(e.inception_score)},
              {"fid", detail::assign(e.fid)},
              {"substitute_checkpoint", detail::assign(e.substitute_checkpoint)},
              {"pool_path", detail::assign(e.pool_path)},
              {"pgd_epsilon", detail::assign(e.pgd_epsilon)},
              {"pgd_step", detail::assign(e.pgd_step)},
              {"pgd_iterations", detail::assign(e.pgd_iterations)},
              {"pgd_random_start", detail::assign(e.pgd_random_start)},
              {"detector_delta", detail::assign(e.detector_delta)},
              {"detector_min_history", detail::assign(e.detector_min_history)},
              {"detect_every", detail::assign(e.detect_every)}});
       }},
      {"output_dir", detail::assign(cfg.output_dir)},
  };
  detail::apply_section(root, "config", sections);

  static const std::array<std::string, 3> kinds = {"blobs", "digits-like", "file"};
  if (std::find(kinds.begin(), kinds.end(), d.kind) == kinds.end())
    throw std::invalid_argument("config: unknown dataset.kind '" + d.kind + "'");
  static const std::array<std::string, 4> modes = {"opt-syn", "dnn-syn", "random", "auxiliary"};
  if (std::find(modes.begin(), modes.end(), a.mode) == modes.end())
    throw std::invalid_argument("config: unknown attack.mode '" + a.mode + "'");
  if (d.kind == "file" && d.path.empty())
    throw std::invalid_argument("config: dataset.kind 'file' needs dataset.path");
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open config: " + path);
  const nlohmann::json root = nlohmann::json::parse(is, nullptr, /*allow_exceptions=*/false);
  if (root.is_discarded()) throw std::invalid_argument("config: " + path + " is not valid JSON");
  return parse_config(root);
}

/// Fully-resolved config with a stable key order; defaults are spelled out
/// so the echo describes the run completely.
inline nlohmann::ordered_json config_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j;
  const auto& d = cfg.dataset;
  j["dataset"] = {{"kind", d.kind},     {"classes", d.classes}, {"dim", d.dim},
                  {"samples", d.samples}, {"spread", d.spread},   {"seed", d.seed},
                  {"test_size", d.test_size}, {"path", d.path}};
  const auto& v = cfg.victim;
  j["victim"] = {{"model", v.model}, {"epochs", v.epochs},       {"batch", v.batch},
                 {"lr", v.lr},       {"seed", v.seed}, {"checkpoint", v.checkpoint}};
  const auto& o = cfg.oracle;
  j["oracle"] = {{"rounding_decimals", detail::opt_json(o.rounding_decimals)},
                 {"topk", detail::opt_json(o.topk)},
                 {"detection_enabled", o.detection_enabled},
                 {"budget", detail::opt_json(o.budget)},
                 {"price_per_1k", o.price_per_1k},
                 {"endpoint", o.endpoint}};
  const auto& a = cfg.attack;
  j["attack"] = {{"mode", a.mode},
                 {"substitute", a.substitute},
                 {"stealing_epochs", a.stealing_epochs},
                 {"train_epochs", a.train_epochs},
                 {"opt_iterations", a.opt_iterations},
                 {"samples_per_epoch", a.samples_per_epoch},
                 {"kd_lr", a.kd_lr},
                 {"kd_batch", a.kd_batch},
                 {"synth_lr", a.synth_lr},
                 {"lambda_ms", a.lambda_ms},
                 {"latent_dim", a.latent_dim},
                 {"generator_hidden", a.generator_hidden},
                 {"generator_steps", a.generator_steps},
                 {"generator_batch", a.generator_batch},
                 {"reinit_generator", a.reinit_generator},
                 {"seed", a.seed},
                 {"augment", a.augment},
                 {"replay_all", a.replay_all},
                 {"fillup_k", detail::opt_json(a.fillup_k)},
                 {"aux_shift", a.aux_shift},
                 {"resume_checkpoint", a.resume_checkpoint}};
  const auto& e = cfg.evaluation;
  j["evaluation"] = {{"accuracy", e.accuracy},
                     {"agreement", e.agreement},
                     {"inception_score", e.inception_score},
                     {"fid", e.fid},
                     {"substitute_checkpoint", e.substitute_checkpoint},
                     {"pool_path", e.pool_path},
                     {"pgd_epsilon", e.pgd_epsilon},
                     {"pgd_step", e.pgd_step},
                     {"pgd_iterations", e.pgd_iterations},
                     {"pgd_random_start", e.pgd_random_start},
                     {"detector_delta", e.detector_delta},
                     {"detector_min_history", e.detector_min_history},
                     {"detect_every", e.detect_every}};
  j["output_dir"] = cfg.output_dir;
  return j;
}

inline void save_config(const ExperimentConfig& cfg, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  os << config_json(cfg).dump(2) << '\n';
  if (!os) throw std::runtime_error("write failed: " + path);
}

/// Attack section -> the attack loop's own config type.
inline StealConfig to_steal_config(const AttackSection& a) {
  StealConfig cfg;
  cfg.stealing_epochs = a.stealing_epochs;
  cfg.train_epochs = a.train_epochs;
  cfg.kd_lr = a.kd_lr;
  cfg.kd_batch = a.kd_batch;
  cfg.seed = a.seed;
  cfg.augment_enabled = a.augment;
  cfg.replay_all = a.replay_all;
  cfg.fillup_k = a.fillup_k;
  cfg.synthesis.mode = a.mode == "dnn-syn" ? SynthesisMode::dnn_syn
                       : a.mode == "opt-syn" ? SynthesisMode::opt_syn
                                             : SynthesisMode::random_noise;
  cfg.synthesis.samples_per_epoch = a.samples_per_epoch;
  cfg.synthesis.opt_iterations = a.opt_iterations;
  cfg.synthesis.synth_lr = a.synth_lr;
  cfg.synthesis.lambda_ms = a.lambda_ms;
  cfg.synthesis.latent_dim = a.latent_dim;
  cfg.synthesis.generator_hidden = a.generator_hidden;
  cfg.synthesis.generator_steps = a.generator_steps;
  cfg.synthesis.generator_batch = a.generator_batch;
  cfg.synthesis.reinit_generator = a.reinit_generator;
  return cfg;
}

}  // namespace eslab
