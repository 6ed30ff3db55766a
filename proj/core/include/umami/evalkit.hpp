#pragma once

#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "umami/datamodel.hpp"

namespace umami {

// ---- segmentation metrics -------------------------------------------------------

struct SegEvalSample {
  std::vector<MaskImage> predicted;  // paired index-wise with targets
  std::vector<MaskImage> targets;
  std::vector<bool> refusal_predicted;  // one flag per referred object
  std::vector<bool> refusal_expected;
};

// Cumulative intersection over cumulative union across every mask pair.
double ciou(const std::vector<SegEvalSample>& samples);
// Mean over samples of the per-sample mean pair IoU (both-empty pair -> 1).
// Samples without mask pairs (pure refusal queries) are skipped.
double giou(const std::vector<SegEvalSample>& samples);

struct ResponseAccuracy {
  double acc_existent = 1.0;  // no existing referred object refused
  double acc_absent = 1.0;    // every absent object refused (one-to-zero queries)
  long existent_queries = 0;
  long absent_queries = 0;
};
ResponseAccuracy response_accuracy(const std::vector<SegEvalSample>& samples);

// ---- scalar and set metrics --------------------------------------------------------

struct NutritionMetric {
  double mae = 0.0;
  double mae_pct = 0.0;  // MAE / mean(targets) * 100
};
NutritionMetric nutrition_metrics(const std::vector<double>& predictions,
                                  const std::vector<double>& targets);

struct SetMetric {
  double iou = 0.0;
  double f1 = 0.0;
};
// Names are canonicalized and deduplicated; both-empty -> (1,1).
SetMetric ingredient_set_metrics_single(const std::vector<std::string>& predicted,
                                        const std::vector<std::string>& target);
// Macro average over samples.
SetMetric ingredient_set_metrics(
    const std::vector<std::pair<std::vector<std::string>, std::vector<std::string>>>& samples);

// ---- text metrics -------------------------------------------------------------------

std::vector<std::string> bleu_tokenize(const std::string& text);
long lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b);

// Corpus-level 4-gram BLEU on a 0-100 scale. Unigram precision is unsmoothed
// (no overlap -> 0); higher orders get add-one smoothing when their match
// count is zero. Standard brevity penalty.
double bleu4(const std::vector<std::pair<std::string, std::string>>& candidate_reference);
// LCS F-measure (beta = 1) on one pair.
double rouge_l(const std::string& candidate, const std::string& reference);

struct RecipeMetric {
  double bleu = 0.0;     // 0-100
  double rouge_l = 0.0;  // 0-1, mean over pairs
};
RecipeMetric recipe_metrics(
    const std::vector<std::pair<std::string, std::string>>& candidate_reference);

// ---- prediction parsing ----------------------------------------------------------------

struct ParseContext {
  std::vector<std::string> class_names;     // classification label space
  std::vector<std::string> referred_names;  // segmentation: query order
  std::map<TaskToken, double> token_values;  // regression head outputs by token
};

struct SegAssignment {
  std::string name;  // canonical referred name
  std::optional<TaskToken> token;  // seg token bound to the name, if any
  bool refused = false;
};

struct ParsedPrediction {
  bool parsed = false;
  std::string class_name;
  std::vector<std::string> ingredient_names;
  std::map<TaskToken, double> values;   // nutrition tokens found, with head values
  std::vector<TaskToken> seg_tokens;    // every seg token, in appearance order
  std::vector<SegAssignment> assignments;  // one per referred name
  std::string recipe_text;
};

// Total: never throws on malformed text; unparseable yields parsed=false.
ParsedPrediction parse_prediction(const std::string& text, TaskTag task, const ParseContext& ctx);

// ---- report -----------------------------------------------------------------------------

struct MetricReport {
  struct NutritionRow {
    std::string field;
    double mae = 0.0;
    double mae_pct = 0.0;
    long count = 0;
  };
  struct SegRow {
    long refer_k = 0;  // referred-object count of the bucket
    double ciou = 0.0;
    double acc = 0.0;  // accurate-response rate for existing objects
    long queries = 0;
  };
  struct ReasonRow {
    double giou = 0.0;
    double ciou = 0.0;
    long samples = 0;
  };
  struct VqaRow {
    double top1 = 0.0;
    double ingredient_iou = 0.0;
    double ingredient_f1 = 0.0;
    double bleu = 0.0;
    double rouge_l = 0.0;
    long classification_n = 0;
    long ingredient_n = 0;
    long recipe_n = 0;
  };

  std::vector<NutritionRow> nutrition;
  std::vector<SegRow> segmentation;  // ascending refer_k
  std::optional<double> one_to_zero_acc;
  long one_to_zero_queries = 0;
  std::optional<ReasonRow> reasoning;
  std::optional<VqaRow> vqa;
};

std::string render_report_human(const MetricReport& report);
std::string report_to_json(const MetricReport& report);
MetricReport report_from_json(const std::string& text);

}  // namespace umami
