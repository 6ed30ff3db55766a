#include "umami/losses.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <variant>

#include "umami/common.hpp"

namespace umami {

using ag::NodeId;
using ag::Tape;
using ag::Tensor;

// ---- plain losses --------------------------------------------------------------

TextCeResult text_ce(const Tensor& logits, const std::vector<long>& targets,
                     const std::vector<std::pair<long, long>>& spans) {
  long n = static_cast<long>(targets.size());
  if (logits.rows() != n) throw DataError("text_ce: logits rows disagree with targets");
  std::vector<long> masked;
  for (auto [b, e] : spans) {
    if (b < 0 || e > n || b > e) throw DataError("text_ce: span out of range");
    for (long j = b; j < e; ++j) masked.push_back(j);
  }
  if (masked.empty()) return {0.0, true};
  long v = logits.cols();
  double sum = 0.0;
  for (long j : masked) {
    if (targets[j] < 0 || targets[j] >= v) throw DataError("text_ce: target id out of range");
    double mx = logits.at(j, 0);
    for (long c = 1; c < v; ++c) mx = std::max(mx, logits.at(j, c));
    double lse = 0.0;
    for (long c = 0; c < v; ++c) lse += std::exp(logits.at(j, c) - mx);
    sum += mx + std::log(lse) - logits.at(j, targets[j]);
  }
  return {sum / static_cast<double>(masked.size()), false};
}

double nutrition_loss(const std::vector<double>& predictions, const std::vector<double>& targets,
                      double lambda_mae, double lambda_mse) {
  if (predictions.size() != targets.size())
    throw DataError("nutrition_loss: prediction/target length mismatch");
  if (predictions.empty()) throw DataError("nutrition_loss: needs at least one pair");
  double mae = 0.0, mse = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    double d = targets[i] - predictions[i];
    mae += std::abs(d);
    mse += d * d;
  }
  double n = static_cast<double>(predictions.size());
  return lambda_mae * (mae / n) + lambda_mse * (mse / n);
}

double bce_loss(const Tensor& prob, const Tensor& target) {
  if (prob.shape != target.shape) throw DataError("bce_loss: shape mismatch");
  double sum = 0.0;
  for (long i = 0; i < prob.numel(); ++i) {
    double p = std::clamp(prob[i], kBceClip, 1.0 - kBceClip);
    double t = target[i];
    sum -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return sum / static_cast<double>(prob.numel());
}

double dice_loss(const Tensor& prob, const Tensor& target, double eps) {
  if (prob.shape != target.shape) throw DataError("dice_loss: shape mismatch");
  double inter = 0.0, psum = 0.0, tsum = 0.0;
  for (long i = 0; i < prob.numel(); ++i) {
    inter += prob[i] * target[i];
    psum += prob[i];
    tsum += target[i];
  }
  return 1.0 - (2.0 * inter + eps) / (psum + tsum + eps);
}

double mask_loss(const std::vector<Tensor>& probs, const std::vector<Tensor>& targets,
                 double lambda_bce, double lambda_dice, double eps) {
  if (probs.size() != targets.size()) throw DataError("mask_loss: count mismatch");
  if (probs.empty()) throw DataError("mask_loss: needs at least one mask");
  double bce = 0.0, dice = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    bce += bce_loss(probs[i], targets[i]);
    dice += dice_loss(probs[i], targets[i], eps);
  }
  double n = static_cast<double>(probs.size());
  return lambda_bce * (bce / n) + lambda_dice * (dice / n);
}

// ---- breakdown -------------------------------------------------------------------

std::string LossBreakdown::log_fields() const {
  return "l_txt=" + format_double(l_txt) + " l_nutrition=" + format_double(l_nutrition) +
         " l_mask=" + format_double(l_mask) + " total=" + format_double(total);
}

LossBreakdown total_loss(double l_txt, double l_nutrition, double l_mask, const LossWeights& w) {
  w.validate();
  LossBreakdown b;
  b.l_txt = l_txt;
  b.l_nutrition = l_nutrition;
  b.l_mask = l_mask;
  b.total = w.lambda_txt * l_txt + w.lambda_nutrition * l_nutrition + w.lambda_mask * l_mask;
  return b;
}

// ---- graph losses ------------------------------------------------------------------

SampleLossGraph sample_losses(Tape& tape, const GraphOutput& out, const RenderedSample& sample,
                              const LossWeights& weights, long image_size, long patch_size) {
  SampleLossGraph r;
  long n = static_cast<long>(sample.ids.size());

  std::vector<long> rows;
  std::vector<long> tgts;
  for (auto [b, e] : sample.loss_spans) {
    if (b < 1 || e > n || b > e)
      throw DataError("loss span out of range");  // position 0 has no predictor row
    for (long j = b; j < e; ++j) {
      rows.push_back(out.visual_rows + j - 1);
      tgts.push_back(sample.ids[static_cast<std::size_t>(j)]);
    }
  }
  if (rows.empty()) {
    r.txt = tape.constant(Tensor::scalar(0.0));
    r.empty_text_mask = true;
  } else {
    r.txt = ag::ce_mean(tape, ag::gather_rows(tape, out.logits, rows), tgts);
  }

  std::map<long, double> value_labels;
  std::map<long, const MaskImage*> mask_labels;
  for (const auto& site : sample.sites) {
    if (std::holds_alternative<double>(site.label))
      value_labels[site.text_pos] = std::get<double>(site.label);
    else
      mask_labels[site.text_pos] = &std::get<MaskImage>(site.label);
  }

  std::vector<NodeId> preds;
  std::vector<double> tvals;
  for (const auto& site : out.nutrition_sites) {
    auto it = value_labels.find(site.position);
    if (it == value_labels.end())
      throw DataError("nutrition site at position " + std::to_string(site.position) +
                      " has no label");
    preds.push_back(site.value);
    tvals.push_back(std::log1p(it->second));
  }
  if (preds.size() != value_labels.size())
    throw DataError("not every nutrition label reached the forward graph");
  if (!preds.empty()) {
    NodeId stacked = preds.size() == 1 ? preds[0] : ag::concat_rows(tape, preds);
    Tensor tt({static_cast<long>(tvals.size()), 1});
    std::copy(tvals.begin(), tvals.end(), tt.data.begin());
    NodeId diff = ag::sub(tape, stacked, tape.constant(std::move(tt)));
    r.mae = ag::mean_all(tape, ag::abs_(tape, diff));
    r.mse = ag::mean_all(tape, ag::square(tape, diff));
    r.nutrition = ag::add(tape, ag::scale(tape, *r.mae, weights.lambda_mae),
                          ag::scale(tape, *r.mse, weights.lambda_mse));
  }

  std::vector<NodeId> bces, dices;
  for (const auto& site : out.mask_sites) {
    auto it = mask_labels.find(site.position);
    if (it == mask_labels.end())
      throw DataError("segmentation site at position " + std::to_string(site.position) +
                      " has no label");
    const MaskImage& m = *it->second;
    if (m.height != image_size || m.width != image_size)
      throw DataError("target mask size disagrees with the model image size");
    Tensor target = to_patch_layout(mask_to_tensor(m), patch_size);
    double tsum = 0.0;
    Tensor omt(target.shape);
    for (long i = 0; i < target.numel(); ++i) {
      tsum += target[i];
      omt[i] = 1.0 - target[i];
    }
    NodeId tc = tape.constant(target);

    NodeId pc = ag::clip(tape, site.probabilities, kBceClip, 1.0 - kBceClip);
    NodeId pos_term = ag::mul(tape, tc, ag::log_(tape, pc));
    NodeId neg_term =
        ag::mul(tape, tape.constant(std::move(omt)),
                ag::log_(tape, ag::sub(tape, tape.constant(Tensor::full(target.shape, 1.0)), pc)));
    bces.push_back(ag::scale(tape, ag::mean_all(tape, ag::add(tape, pos_term, neg_term)), -1.0));

    NodeId inter = ag::sum_all(tape, ag::mul(tape, site.probabilities, tc));
    NodeId num = ag::add_scalar(tape, ag::scale(tape, inter, 2.0), kDiceEps);
    NodeId den = ag::add_scalar(tape, ag::sum_all(tape, site.probabilities), tsum + kDiceEps);
    dices.push_back(ag::add_scalar(tape, ag::scale(tape, ag::div(tape, num, den), -1.0), 1.0));
  }
  if (bces.size() != mask_labels.size())
    throw DataError("not every mask label reached the forward graph");
  if (!bces.empty()) {
    r.bce = ag::mean_of(tape, bces);
    r.dice = ag::mean_of(tape, dices);
    r.mask = ag::add(tape, ag::scale(tape, *r.bce, weights.lambda_bce),
                     ag::scale(tape, *r.dice, weights.lambda_dice));
  }
  return r;
}

BatchLossGraph combine_batch(Tape& tape, const std::vector<SampleLossGraph>& samples,
                             const LossWeights& weights) {
  if (samples.empty()) throw DataError("combine_batch: empty batch");
  weights.validate();
  BatchLossGraph b;
  std::vector<NodeId> txts, nuts, maes, mses, masks, bces, dices;
  for (const auto& s : samples) {
    txts.push_back(s.txt);
    b.empty_text_mask = b.empty_text_mask || s.empty_text_mask;
    if (s.nutrition) {
      nuts.push_back(*s.nutrition);
      maes.push_back(*s.mae);
      mses.push_back(*s.mse);
    }
    if (s.mask) {
      masks.push_back(*s.mask);
      bces.push_back(*s.bce);
      dices.push_back(*s.dice);
    }
  }
  b.l_txt = ag::mean_of(tape, txts);
  if (!nuts.empty()) {
    b.l_nutrition = ag::mean_of(tape, nuts);
    b.mae_term = ag::mean_of(tape, maes);
    b.mse_term = ag::mean_of(tape, mses);
  }
  if (!masks.empty()) {
    b.l_mask = ag::mean_of(tape, masks);
    b.bce_term = ag::mean_of(tape, bces);
    b.dice_term = ag::mean_of(tape, dices);
  }
  b.total = ag::scale(tape, b.l_txt, weights.lambda_txt);
  if (b.l_nutrition)
    b.total = ag::add(tape, b.total, ag::scale(tape, *b.l_nutrition, weights.lambda_nutrition));
  if (b.l_mask) b.total = ag::add(tape, b.total, ag::scale(tape, *b.l_mask, weights.lambda_mask));
  return b;
}

LossBreakdown BatchLossGraph::values(const Tape& tape) const {
  LossBreakdown v;
  v.l_txt = tape.val(l_txt)[0];
  if (l_nutrition) {
    v.l_nutrition = tape.val(*l_nutrition)[0];
    v.mae_term = tape.val(*mae_term)[0];
    v.mse_term = tape.val(*mse_term)[0];
  }
  if (l_mask) {
    v.l_mask = tape.val(*l_mask)[0];
    v.bce_term = tape.val(*bce_term)[0];
    v.dice_term = tape.val(*dice_term)[0];
  }
  v.total = tape.val(total)[0];
  v.empty_text_mask = empty_text_mask;
  return v;
}

}  // namespace umami
