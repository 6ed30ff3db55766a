#pragma once

#include <cstdint>
#include <string>

#include "umami/datamodel.hpp"
#include "umami/dialogue_forge.hpp"
#include "umami/instruction_forge.hpp"
#include "umami/model.hpp"
#include "umami/trainer.hpp"

namespace umami {

// One structured document driving every command. All defaults mirror the
// shipped training recipe; unknown keys anywhere in the document are a
// ConfigError so typos cannot silently fall back to defaults.
struct RunConfig {
  std::uint64_t seed = 0;

  struct Paths {
    std::string corpus;      // corpus manifest (or its directory)
    std::string shards;      // forged-shard directory
    std::string out;         // run outputs (checkpoints, logs, reports)
    std::string checkpoint;  // model file for eval
  } paths;

  ModelConfig model;
  LossWeights loss;
  std::string loss_profile = "main-text-lambdas";  // or "table9-lambdas"
  ReferMixPolicy refer_policy;
  StagePlan stage1;
  StagePlan stage2;
  TopicRoundPolicy dialogue;

  struct Stage2Gen {
    int max_retries = 3;
    bool use_env_backend = false;  // true: BACKEND_URL/BACKEND_KEY endpoint
  } stage2_gen;

  struct Eval {
    long max_new_tokens = 96;
    std::string report_basename = "report";
  } eval;

  static RunConfig defaults();
  void validate() const;

  // Applies the named loss profile to `loss` (called by defaults()/parsing).
  void apply_loss_profile();
};

// Strict parse: unknown keys rejected with their full path. Sections may be
// omitted (defaults fill in), but present keys must be spelled exactly.
RunConfig config_from_json_text(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Canonical fully-resolved dump (fixed key order, canonical numbers); feeding
// it back through config_from_json_text reproduces the same config.
std::string config_to_json_text(const RunConfig& config);

}  // namespace umami
