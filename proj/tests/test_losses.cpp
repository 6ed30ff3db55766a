#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "umami/autograd.hpp"
#include "umami/common.hpp"
#include "umami/datamodel.hpp"
#include "umami/losses.hpp"
#include "umami/model.hpp"
#include "umami/tokenizer.hpp"

using namespace umami;
using ag::Tensor;

namespace {

MaskImage half_mask(long size) {
  MaskImage m;
  m.height = size;
  m.width = size;
  m.values.assign(static_cast<std::size_t>(size * size), 0);
  for (long i = 0; i < size * size / 2; ++i) m.values[static_cast<std::size_t>(i)] = 1;
  return m;
}

// One conversation per loss component, all over the same tiny phrasebook.
Conversation conv_text_only() {
  Conversation c;
  c.task_tag = TaskTag::classification;
  c.source_record = "r";
  c.turns.resize(3);
  c.turns[0].speaker = Speaker::system;
  c.turns[0].text = "Sys.";
  c.turns[1].speaker = Speaker::user;
  c.turns[1].text = "What dish?";
  c.turns[2].speaker = Speaker::assistant;
  c.turns[2].text = "Fried rice.";
  return c;
}

Conversation conv_nutrition() {
  Conversation c = conv_text_only();
  c.task_tag = TaskTag::nutrition;
  c.turns[1].text = "How heavy?";
  c.turns[2].text = "It weighs <mass_1> grams.";
  c.turns[2].token_labels[TaskToken::ingredient(NutritionField::mass, 1)] = 120.0;
  return c;
}

Conversation conv_mask(long image_size) {
  Conversation c = conv_text_only();
  c.task_tag = TaskTag::segmentation;
  c.turns[1].text = "Segment the rice.";
  c.turns[2].text = "Here: <seg_1>.";
  c.turns[2].token_labels[TaskToken::seg(1)] = half_mask(image_size);
  return c;
}

struct GraphFixture {
  ModelConfig mc;
  Vocabulary vocab;
  FoodModel model;
  Tensor visual;

  static GraphFixture make() {
    ModelConfig mc;
    mc.d_model = 32;
    mc.n_layers = 1;
    mc.n_heads = 2;
    mc.image_size = 16;
    mc.patch_size = 8;
    mc.max_seq_len = 96;
    mc.ff_mult = 2;
    mc.proj_dims = {32, 16};
    mc.head_dims = {16, 1};
    mc.mask_decode_dim = 16;
    std::vector<std::string> flats = {
        "Sys.<stop>\nUSER: What dish?<stop>\nASSISTANT: Fried rice.<stop>\n",
        "Sys.<stop>\nUSER: How heavy?<stop>\nASSISTANT: It weighs <mass_1> grams.<stop>\n",
        "Sys.<stop>\nUSER: Segment the rice.<stop>\nASSISTANT: Here: <seg_1>.<stop>\n",
    };
    Vocabulary vocab = extend_vocabulary(Vocabulary::build(flats), 2);
    mc.vocab_size = vocab.size();
    FoodModel model(mc, vocab, 7);
    Tensor raw = Tensor::zeros({mc.image_size, mc.image_size, 3});
    std::mt19937_64 rng(5);
    for (auto& v : raw.data) v = static_cast<double>(rng() % 256) / 255.0;
    Tensor visual = model.encode_image(raw);
    return {mc, vocab, std::move(model), std::move(visual)};
  }

  // Builds the full per-sample graph; returns the live tape via out-params.
  SampleLossGraph build(ag::Tape& tape, const Conversation& conv, const LossWeights& w) const {
    RenderedSample sample = render_for_training(conv, vocab);
    std::vector<long> positions;
    for (const auto& site : sample.sites) positions.push_back(site.text_pos);
    ParamBinding binding = model.bind(tape);
    GraphOutput out =
        model.forward_graph(tape, binding, tape.val(tape.constant(visual)), sample.ids, positions, {});
    return sample_losses(tape, out, sample, w, mc.image_size, mc.patch_size);
  }
};

}  // namespace

TEST_CASE("nutrition loss reproduces the worked example to 1e-12") {
  // targets (10,20), predictions (12,19), weights (0.1, 0.0001):
  //   MAE = (2+1)/2 = 1.5, MSE = (4+1)/2 = 2.5 -> 0.1*1.5 + 0.0001*2.5 = 0.15025
  double v = nutrition_loss({12.0, 19.0}, {10.0, 20.0}, 0.1, 0.0001);
  CHECK(std::abs(v - 0.15025) < 1e-12);

  // table profile emphasis on the same pair
  double t = nutrition_loss({12.0, 19.0}, {10.0, 20.0}, 1e-3, 1.0);
  CHECK(std::abs(t - (1e-3 * 1.5 + 1.0 * 2.5)) < 1e-12);

  CHECK_THROWS_AS(nutrition_loss({1.0}, {1.0, 2.0}, 0.1, 0.1), DataError);
  CHECK_THROWS_AS(nutrition_loss({}, {}, 0.1, 0.1), DataError);
}

TEST_CASE("uniform logits cost exactly ln(vocab)") {
  for (long v : {2L, 11L, 57L}) {
    Tensor logits = Tensor::full({4, v}, 0.37);  // any constant row is uniform
    std::vector<long> targets = {0, v - 1, v / 2, 1};
    TextCeResult r = text_ce(logits, targets, {{0, 4}});
    CHECK_FALSE(r.empty_mask);
    CHECK(std::abs(r.value - std::log(static_cast<double>(v))) < 1e-12);
  }
}

TEST_CASE("text CE averages only over span positions") {
  // two-class rows with logit gap g: CE(correct) = ln(1+e^-g)
  Tensor logits = Tensor::zeros({3, 2});
  logits.at(0, 0) = 2.0;  // target 0 -> ln(1+e^-2)
  logits.at(1, 1) = 4.0;  // target 1 -> ln(1+e^-4)
  logits.at(2, 0) = 99.0; // excluded by the span
  std::vector<long> targets = {0, 1, 1};
  TextCeResult r = text_ce(logits, targets, {{0, 2}});
  double want = (std::log(1.0 + std::exp(-2.0)) + std::log(1.0 + std::exp(-4.0))) / 2.0;
  CHECK(r.value == doctest::Approx(want).epsilon(1e-12));

  // empty span list: defined as zero with the flag set
  TextCeResult empty = text_ce(logits, targets, {});
  CHECK(empty.empty_mask);
  CHECK(empty.value == 0.0);

  CHECK_THROWS_AS(text_ce(logits, targets, {{0, 4}}), DataError);
  CHECK_THROWS_AS(text_ce(logits, {0, 1, 5}, {{0, 3}}), DataError);
}

TEST_CASE("coin-flip probabilities cost ln 2 under BCE") {
  Tensor prob = Tensor::full({4, 4}, 0.5);
  Tensor target = Tensor::zeros({4, 4});
  for (long i = 0; i < 8; ++i) target[i] = 1.0;  // any target: p=0.5 is ln 2 regardless
  CHECK(std::abs(bce_loss(prob, target) - std::log(2.0)) < 1e-9);

  // clipping keeps confident mistakes finite
  Tensor wrong = Tensor::zeros({1, 2});
  Tensor ones = Tensor::full({1, 2}, 1.0);
  double clipped = bce_loss(wrong, ones);
  CHECK(std::isfinite(clipped));
  CHECK(clipped == doctest::Approx(-std::log(kBceClip)).epsilon(1e-9));
}

TEST_CASE("dice reproduces the 2x2 worked example") {
  Tensor prob = Tensor::full({2, 2}, 1.0);
  Tensor target = Tensor::zeros({2, 2});
  target[0] = 1.0;
  target[1] = 1.0;
  // eps -> 0: 1 - 2*2/(4+2) = 1/3
  CHECK(std::abs(dice_loss(prob, target, 0.0) - 1.0 / 3.0) < 1e-12);
  // shipped smoothing eps = 1: 1 - (4+1)/(6+1) = 2/7
  CHECK(std::abs(dice_loss(prob, target) - 2.0 / 7.0) < 1e-12);
  // perfect binary agreement costs zero at eps -> 0
  CHECK(std::abs(dice_loss(target, target, 0.0)) < 1e-12);
}

TEST_CASE("mask loss blends means of BCE and dice") {
  Tensor p1 = Tensor::full({2, 2}, 0.5);
  Tensor t1 = Tensor::zeros({2, 2});
  Tensor p2 = Tensor::full({2, 2}, 1.0 - kBceClip);
  Tensor t2 = Tensor::full({2, 2}, 1.0);
  double want_bce = (bce_loss(p1, t1) + bce_loss(p2, t2)) / 2.0;
  double want_dice = (dice_loss(p1, t1) + dice_loss(p2, t2)) / 2.0;
  double v = mask_loss({p1, p2}, {t1, t2}, 2.0, 0.5);
  CHECK(v == doctest::Approx(2.0 * want_bce + 0.5 * want_dice).epsilon(1e-12));
  CHECK_THROWS_AS(mask_loss({}, {}, 2.0, 0.5), DataError);
}

TEST_CASE("unit sub-losses combine to 2.1 under the default weights") {
  LossWeights w;  // lambda_txt 1.0, lambda_nutrition 0.1, lambda_mask 1.0
  LossBreakdown b = total_loss(1.0, 1.0, 1.0, w);
  CHECK(std::abs(b.total - 2.1) < 1e-12);
  CHECK(b.log_fields() == "l_txt=1 l_nutrition=1 l_mask=1 total=2.1");
}

TEST_CASE("graph text loss equals the plain CE over the same spans") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;
  Conversation conv = conv_text_only();
  RenderedSample sample = render_for_training(conv, fx.vocab);

  ag::Tape tape;
  SampleLossGraph sl = fx.build(tape, conv, w);
  CHECK_FALSE(sl.empty_text_mask);

  // recompute with the inference path + plain text_ce on shifted rows
  ModelOutput out = fx.model.forward(fx.visual, sample.ids, {});
  long v = out.logits.cols();
  std::vector<std::pair<long, long>> spans;
  Tensor rows({static_cast<long>(sample.ids.size()), v});
  for (long j = 0; j < static_cast<long>(sample.ids.size()); ++j)
    for (long c = 0; c < v; ++c)
      rows.at(j, c) = j == 0 ? 0.0 : out.logits.at(out.visual_rows + j - 1, c);
  TextCeResult plain = text_ce(rows, sample.ids, sample.loss_spans);
  CHECK(tape.val(sl.txt)[0] == doctest::Approx(plain.value).epsilon(1e-10));
  CHECK_FALSE(sl.nutrition.has_value());
  CHECK_FALSE(sl.mask.has_value());
}

TEST_CASE("graph nutrition loss works in log1p space") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;
  Conversation conv = conv_nutrition();
  ag::Tape tape;
  SampleLossGraph sl = fx.build(tape, conv, w);
  REQUIRE(sl.nutrition.has_value());

  RenderedSample sample = render_for_training(conv, fx.vocab);
  std::vector<long> positions = {sample.sites[0].text_pos};
  ModelOutput out = fx.model.forward(fx.visual, sample.ids, positions);
  REQUIRE(out.nutrition_predictions.size() == 1);
  double pred = out.nutrition_predictions[0].value;
  double want = nutrition_loss({pred}, {std::log1p(120.0)}, w.lambda_mae, w.lambda_mse);
  CHECK(tape.val(*sl.nutrition)[0] == doctest::Approx(want).epsilon(1e-10));
  CHECK(tape.val(*sl.mae)[0] == doctest::Approx(std::abs(pred - std::log1p(120.0))).epsilon(1e-10));
}

TEST_CASE("graph mask loss matches the plain BCE and dice on model probabilities") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;
  Conversation conv = conv_mask(fx.mc.image_size);
  ag::Tape tape;
  SampleLossGraph sl = fx.build(tape, conv, w);
  REQUIRE(sl.mask.has_value());

  RenderedSample sample = render_for_training(conv, fx.vocab);
  std::vector<long> positions = {sample.sites[0].text_pos};
  ModelOutput out = fx.model.forward(fx.visual, sample.ids, positions);
  REQUIRE(out.mask_predictions.size() == 1);
  Tensor prob = to_patch_layout(out.mask_predictions[0].probabilities, fx.mc.patch_size);
  Tensor target = to_patch_layout(mask_to_tensor(half_mask(fx.mc.image_size)), fx.mc.patch_size);
  CHECK(tape.val(*sl.bce)[0] == doctest::Approx(bce_loss(prob, target)).epsilon(1e-9));
  CHECK(tape.val(*sl.dice)[0] == doctest::Approx(dice_loss(prob, target)).epsilon(1e-9));
  double want = w.lambda_bce * bce_loss(prob, target) + w.lambda_dice * dice_loss(prob, target);
  CHECK(tape.val(*sl.mask)[0] == doctest::Approx(want).epsilon(1e-9));
}

TEST_CASE("batch composition averages each component over its owners") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;
  ag::Tape tape;
  SampleLossGraph s_text = fx.build(tape, conv_text_only(), w);
  SampleLossGraph s_nut = fx.build(tape, conv_nutrition(), w);
  SampleLossGraph s_mask = fx.build(tape, conv_mask(fx.mc.image_size), w);
  BatchLossGraph batch = combine_batch(tape, {s_text, s_nut, s_mask}, w);
  LossBreakdown bd = batch.values(tape);

  double txts = (tape.val(s_text.txt)[0] + tape.val(s_nut.txt)[0] + tape.val(s_mask.txt)[0]) / 3.0;
  CHECK(bd.l_txt == doctest::Approx(txts).epsilon(1e-12));
  // nutrition/mask are means over the single owning sample, not over the batch
  CHECK(bd.l_nutrition == doctest::Approx(tape.val(*s_nut.nutrition)[0]).epsilon(1e-12));
  CHECK(bd.l_mask == doctest::Approx(tape.val(*s_mask.mask)[0]).epsilon(1e-12));
  double want_total =
      w.lambda_txt * bd.l_txt + w.lambda_nutrition * bd.l_nutrition + w.lambda_mask * bd.l_mask;
  CHECK(bd.total == doctest::Approx(want_total).epsilon(1e-12));
  CHECK(bd.log_fields().rfind("l_txt=", 0) == 0);
}

TEST_CASE("batch composition is invariant to sample order") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;
  double totals[2];
  for (int order = 0; order < 2; ++order) {
    ag::Tape tape;
    SampleLossGraph a = fx.build(tape, conv_nutrition(), w);
    SampleLossGraph b = fx.build(tape, conv_mask(fx.mc.image_size), w);
    SampleLossGraph c = fx.build(tape, conv_text_only(), w);
    std::vector<SampleLossGraph> batch = order == 0
                                             ? std::vector<SampleLossGraph>{a, b, c}
                                             : std::vector<SampleLossGraph>{c, b, a};
    totals[order] = combine_batch(tape, batch, w).values(tape).total;
  }
  CHECK(totals[0] == doctest::Approx(totals[1]).epsilon(1e-12));
}

TEST_CASE("a missing component leaves its term out of the total") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;
  ag::Tape tape;
  SampleLossGraph s1 = fx.build(tape, conv_text_only(), w);
  SampleLossGraph s2 = fx.build(tape, conv_text_only(), w);
  BatchLossGraph batch = combine_batch(tape, {s1, s2}, w);
  LossBreakdown bd = batch.values(tape);
  CHECK_FALSE(batch.l_nutrition.has_value());
  CHECK_FALSE(batch.l_mask.has_value());
  CHECK(bd.l_nutrition == 0.0);
  CHECK(bd.l_mask == 0.0);
  CHECK(bd.total == doctest::Approx(w.lambda_txt * bd.l_txt).epsilon(1e-12));
}

TEST_CASE("loss gradients agree with finite differences through the whole graph") {
  GraphFixture fx = GraphFixture::make();
  LossWeights w;

  // evaluate total over the three-sample batch, optionally sweeping backward
  auto evaluate = [&](bool backward, const std::string& pname, long elem,
                      double* grad_out) -> double {
    ag::Tape tape;
    RenderedSample samples[3] = {render_for_training(conv_text_only(), fx.vocab),
                                 render_for_training(conv_nutrition(), fx.vocab),
                                 render_for_training(conv_mask(fx.mc.image_size), fx.vocab)};
    ParamBinding binding = fx.model.bind(tape);
    std::vector<SampleLossGraph> parts;
    for (const auto& sample : samples) {
      std::vector<long> positions;
      for (const auto& site : sample.sites) positions.push_back(site.text_pos);
      GraphOutput out = fx.model.forward_graph(tape, binding, tape.val(tape.constant(fx.visual)),
                                               sample.ids, positions, {});
      parts.push_back(sample_losses(tape, out, sample, w, fx.mc.image_size, fx.mc.patch_size));
    }
    BatchLossGraph batch = combine_batch(tape, parts, w);
    double total = tape.val(batch.total)[0];
    if (backward) {
      tape.backward(batch.total);
      *grad_out = tape.grad(binding.at(pname))[elem];
    }
    return total;
  };

  // a handful of trainable elements spread across the mechanism
  std::vector<std::string> picks;
  for (const auto& name : fx.model.params().names()) {
    const Param& p = fx.model.params().at(name);
    if (!p.trainable) continue;
    if (picks.size() < 6 &&
        (picks.empty() || picks.back().substr(0, 5) != name.substr(0, 5)))
      picks.push_back(name);
  }
  REQUIRE(picks.size() >= 3);

  for (const auto& pname : picks) {
    CAPTURE(pname);
    Param& p = fx.model.params().at(pname);
    long elem = p.value.numel() / 2;
    double analytic = 0.0;
    evaluate(true, pname, elem, &analytic);

    const double h = 1e-5;
    double keep = p.value[elem];
    p.value[elem] = keep + h;
    double up = evaluate(false, pname, elem, nullptr);
    p.value[elem] = keep - h;
    double down = evaluate(false, pname, elem, nullptr);
    p.value[elem] = keep;
    double fd = (up - down) / (2.0 * h);
    double denom = std::max({1.0, std::abs(fd), std::abs(analytic)});
    CHECK(std::abs(fd - analytic) / denom < 2e-6);
  }
}

TEST_CASE("log fields print canonical shortest doubles") {
  LossBreakdown b;
  b.l_txt = 0.5;
  b.l_nutrition = 0.25;
  b.l_mask = 1.0 / 3.0;
  b.total = 2.0;
  std::string s = b.log_fields();
  CHECK(s.find("l_txt=0.5 ") != std::string::npos);
  CHECK(s.find("l_nutrition=0.25 ") != std::string::npos);
  CHECK(s.find("total=2") != std::string::npos);
  // round-trip: every printed value parses back to the exact double
  CHECK(format_double(1.0 / 3.0) == format_double(std::stod(format_double(1.0 / 3.0))));
}
