#pragma once

#include <optional>
#include <string>
#include <vector>

#include "umami/autograd.hpp"
#include "umami/datamodel.hpp"
#include "umami/model.hpp"
#include "umami/tokenizer.hpp"

namespace umami {

inline constexpr double kDiceEps = 1.0;
inline constexpr double kBceClip = 1e-7;

// ---- plain (test-facing) losses ----------------------------------------------

struct TextCeResult {
  double value = 0.0;
  bool empty_mask = false;  // no masked positions; value defined as 0
};

// logits row i predicts targets[i]; spans are [begin,end) indices into targets.
TextCeResult text_ce(const ag::Tensor& logits, const std::vector<long>& targets,
                     const std::vector<std::pair<long, long>>& spans);

double nutrition_loss(const std::vector<double>& predictions, const std::vector<double>& targets,
                      double lambda_mae, double lambda_mse);

double bce_loss(const ag::Tensor& prob, const ag::Tensor& target);
double dice_loss(const ag::Tensor& prob, const ag::Tensor& target, double eps = kDiceEps);
double mask_loss(const std::vector<ag::Tensor>& probs, const std::vector<ag::Tensor>& targets,
                 double lambda_bce, double lambda_dice, double eps = kDiceEps);

// ---- breakdown ------------------------------------------------------------------

struct LossBreakdown {
  double l_txt = 0.0;
  double mae_term = 0.0;  // unweighted mean absolute error
  double mse_term = 0.0;  // unweighted mean squared error
  double l_nutrition = 0.0;
  double bce_term = 0.0;  // unweighted mean BCE
  double dice_term = 0.0;  // unweighted mean Dice loss
  double l_mask = 0.0;
  double total = 0.0;
  bool empty_text_mask = false;

  // "l_txt=... l_nutrition=... l_mask=... total=..." with canonical doubles
  std::string log_fields() const;
};

LossBreakdown total_loss(double l_txt, double l_nutrition, double l_mask, const LossWeights& w);

// ---- graph (training-facing) losses ---------------------------------------------

// Per-sample losses wired into an existing forward graph.
struct SampleLossGraph {
  ag::NodeId txt = -1;  // CE scalar; a zero constant when the loss mask is empty
  bool empty_text_mask = false;
  std::optional<ag::NodeId> nutrition;  // lambda-weighted per-sample value
  std::optional<ag::NodeId> mae;        // raw terms, for reporting
  std::optional<ag::NodeId> mse;
  std::optional<ag::NodeId> mask;  // lambda-weighted per-sample value
  std::optional<ag::NodeId> bce;
  std::optional<ag::NodeId> dice;
};

// Pairs the graph's task sites with the sample's labels. Nutrition targets are
// taken to log1p space here; mask targets are converted to patch layout so both
// sides of the elementwise losses share the prediction's layout.
SampleLossGraph sample_losses(ag::Tape& tape, const GraphOutput& out, const RenderedSample& sample,
                              const LossWeights& weights, long image_size, long patch_size);

// Batch composition: component = mean over the samples that have it.
struct BatchLossGraph {
  ag::NodeId total = -1;
  ag::NodeId l_txt = -1;
  std::optional<ag::NodeId> l_nutrition;
  std::optional<ag::NodeId> l_mask;
  std::optional<ag::NodeId> mae_term, mse_term, bce_term, dice_term;
  bool empty_text_mask = false;

  LossBreakdown values(const ag::Tape& tape) const;
};

BatchLossGraph combine_batch(ag::Tape& tape, const std::vector<SampleLossGraph>& samples,
                             const LossWeights& weights);

}  // namespace umami
