#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "umami/datamodel.hpp"
#include "umami/losses.hpp"
#include "umami/model.hpp"
#include "umami/tokenizer.hpp"

namespace umami {

// ---- optimizer -----------------------------------------------------------------

struct OptimizerConfig {
  double lr = 3e-4;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long warmup_steps = 100;  // linear warmup, then linear decay to 0
  double grad_clip = 1.0;   // global norm
  void validate() const;
};

// Step-dependent learning rate: (t+1)/warmup during warmup, linear decay after.
double lr_at(const OptimizerConfig& opt, long step, long total_steps);

// Decoupled-weight-decay Adam over the model's trainable parameters.
class AdamW {
 public:
  explicit AdamW(OptimizerConfig cfg);
  // Applies one update with the given per-parameter gradients; ignores frozen
  // parameters by construction (only names present in `grads` move).
  void step(FoodModel& model, const std::map<std::string, ag::Tensor>& grads, double lr_now);
  long steps_taken() const { return t_; }
  const OptimizerConfig& config() const { return cfg_; }

 private:
  OptimizerConfig cfg_;
  long t_ = 0;
  std::map<std::string, ag::Tensor> m_, v_;
};

// ---- shards and sampling ----------------------------------------------------------

class ShardRegistry {
 public:
  void add(std::string dataset, TaskTag task, std::vector<Conversation> items);
  const std::vector<Conversation>* find(const std::string& dataset, TaskTag task) const;
  std::vector<TaskTag> tasks_of(const std::string& dataset) const;
  std::vector<std::string> datasets() const;
  bool empty() const { return shards_.empty(); }

 private:
  std::map<std::string, std::map<TaskTag, std::vector<Conversation>>> shards_;
};

struct StagePlan {
  int stage = 1;
  // Across-task draw ratios. Keys: vqa, nutrition, segmentation (stage 1) or
  // dialogue, reason_seg (stage-2 single-task variants).
  std::map<std::string, double> task_ratios;
  // Per-dataset weights inside each category.
  std::map<std::string, double> dataset_weights;
  // Stage-2 outer split between generated corpora and public-task replay.
  double generated_weight = 15.0;
  double public_weight = 7.0;
  long batch_size = 4;
  long steps = 2000;
  long checkpoint_every = 0;  // 0: final checkpoint only
  OptimizerConfig optim;

  static StagePlan stage1_defaults();
  static StagePlan stage2_defaults();
  // One task ratio set to 1, the rest absent: single-task fine-tuning.
  static StagePlan single_task(const std::string& ratio_key);
  void validate() const;
};

struct SamplerEntry {
  std::string dataset;
  double weight = 0.0;
  std::vector<const Conversation*> items;
};

struct SamplerCategory {
  std::string name;
  double weight = 0.0;
  std::vector<SamplerEntry> entries;
};

struct SamplerPlan {
  std::vector<SamplerCategory> categories;
};

// Resolves a stage plan against loaded shards. ConfigError when a referenced
// category would be empty.
SamplerPlan make_sampler_plan(const StagePlan& plan, const ShardRegistry& registry);

struct SampledItem {
  const Conversation* conv = nullptr;
  const SamplerCategory* category = nullptr;
  const SamplerEntry* entry = nullptr;
};

// Random-access deterministic sampler: draw(t) depends only on (seed, t).
class Sampler {
 public:
  Sampler(SamplerPlan plan, std::uint64_t seed);
  SampledItem draw(long t) const;
  const SamplerPlan& plan() const { return plan_; }

 private:
  SamplerPlan plan_;
  std::uint64_t seed_;
};

// ---- training ------------------------------------------------------------------

struct PreparedSample {
  RenderedSample rendered;
  ag::Tensor visual;                  // encoded patch embeddings
  std::vector<long> site_positions;   // text positions of every task token
};

// Renders a conversation and encodes its image (path resolved under image_root).
PreparedSample prepare_sample(const FoodModel& model, const Conversation& conv,
                              const std::string& image_root);

struct TrainStepResult {
  LossBreakdown breakdown;
  double grad_norm = 0.0;  // pre-clip global norm
  std::vector<TaskTag> tasks;
};

// One optimizer step on a batch; NumericError with diagnostics when the loss
// or a gradient is non-finite.
TrainStepResult train_step(FoodModel& model, const std::vector<const PreparedSample*>& batch,
                           const LossWeights& weights, AdamW& opt, double lr_now,
                           std::uint64_t step_seed);

struct StageResult {
  std::vector<std::string> log_lines;  // one line per step, fixed field order
  std::string final_checkpoint;
};

// Runs plan.steps steps, checkpoints at the configured cadence plus a final
// checkpoint, writes the log next to the checkpoints, and returns both.
StageResult run_stage(FoodModel& model, const StagePlan& plan, const ShardRegistry& registry,
                      const LossWeights& weights, const std::string& out_dir,
                      const std::string& image_root, std::uint64_t seed);

// ---- overfit harness ----------------------------------------------------------------

struct FitReport {
  double mask_iou = 0.0;           // mean IoU at threshold 0.5, teacher forced
  double nutrition_mae_pct = 0.0;  // pooled MAE after expm1, % of target mean
  double exact_match = 0.0;        // greedy-decode answer matches, fraction
  long steps = 0;
  long mask_sites = 0;
  long nutrition_values = 0;
  long answers = 0;
};

// Training-set fit of the current model (no training).
FitReport evaluate_fit(const FoodModel& model, const std::vector<Conversation>& corpus,
                       const std::string& image_root);

// Uniform sampling over the corpus for `budget_steps`, then evaluate_fit.
FitReport overfit_harness(FoodModel& model, const std::vector<Conversation>& corpus,
                          long budget_steps, const LossWeights& weights,
                          const OptimizerConfig& optim, long batch_size,
                          const std::string& image_root, std::uint64_t seed);

}  // namespace umami
