#pragma once

// Command layer behind the CLI: corpus synthesis, the two forge passes,
// training, evaluation, and report rendering. Everything works through the
// filesystem and derives its randomness from config.seed, so equal configs
// produce byte-identical artifacts wherever the output root lives.

#include <map>
#include <string>
#include <vector>

#include "umami/evalkit.hpp"
#include "umami/instruction_forge.hpp"
#include "umami/model.hpp"
#include "umami/runconfig.hpp"
#include "umami/trainer.hpp"

namespace umami {

struct MakeCorpusResult {
  std::string manifest;
  long datasets = 0;
  long records = 0;
};
// Synthesizes the demo corpus under paths.corpus (images sized to the model).
MakeCorpusResult cmd_make_corpus(const RunConfig& config);

struct ForgeStage1Result {
  std::vector<std::string> shard_paths;  // one per dataset x task
  std::string stats_path;
  ForgeStats stats;
};
// Builds single-round conversations for every dataset task in the manifest.
ForgeStage1Result cmd_forge_stage1(const RunConfig& config);

struct ForgeStage2Result {
  std::string dialogue_shard;
  std::string reasonseg_shard;
  std::string rejection_log;
  long dialogues = 0;
  long reason_segs = 0;
  long rejections = 0;
};
// Generates multi-round dialogues and reasoning-segmentation conversations
// for every record via the (mock or remote) backend; unsuitable records and
// unparseable responses land in the rejection log.
ForgeStage2Result cmd_forge_stage2(const RunConfig& config);

struct TrainResult {
  std::string checkpoint;
  std::string log_path;
  long steps = 0;
};
// stage 1 trains a fresh model; stage 2 resumes from paths.checkpoint (or the
// stage-1 final checkpoint under paths.out when no checkpoint is configured).
TrainResult cmd_train(const RunConfig& config, int stage);

struct EvalResult {
  MetricReport report;
  std::string json_path;
  std::string text_path;
};
// Greedy-decodes every assistant answer in the forged shards under the
// checkpointed model and scores it against the reference turns.
EvalResult cmd_eval(const RunConfig& config);

// JSON report -> human rendering; returns the path written (out_path, or the
// report path with its extension swapped to .txt when empty).
std::string cmd_report(const std::string& report_json, const std::string& out_path);

// ---- shared evaluation plumbing (also used by the acceptance harness) --------

// One assistant answer generated from its conversation prefix, with the task
// token outputs collected from a second teacher-forced pass.
struct AnswerPrediction {
  std::string text;                      // decoded continuation, stop stripped
  std::map<TaskToken, double> values;    // nutrition heads (log1p space)
  std::map<TaskToken, MaskImage> masks;  // seg masks thresholded at 0.5
};
AnswerPrediction predict_answer(const FoodModel& model, const PreparedSample& sample,
                                const TurnSpan& span, long max_new_tokens);

// Greedy answers for every segmentation-style assistant turn of `conv`,
// scored against the reference decisions. `name_pool` lists every candidate
// object name the queries may mention (present or absent).
std::vector<SegEvalSample> seg_responses(const FoodModel& model, const Conversation& conv,
                                         const std::vector<std::string>& name_pool,
                                         const std::string& image_root, long max_new_tokens);

}  // namespace umami
