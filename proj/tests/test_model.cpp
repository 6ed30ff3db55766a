#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "umami/common.hpp"
#include "umami/datamodel.hpp"
#include "umami/model.hpp"
#include "umami/tokenizer.hpp"

using namespace umami;
using ag::Tensor;

namespace {

ModelConfig tiny_config(long image = 16, long patch = 8) {
  ModelConfig mc;
  mc.d_model = 32;
  mc.n_layers = 2;
  mc.n_heads = 2;
  mc.image_size = image;
  mc.patch_size = patch;
  mc.max_seq_len = 128;
  mc.ff_mult = 2;
  mc.proj_dims = {32, 16};
  mc.head_dims = {16, 1};
  mc.mask_decode_dim = 16;
  return mc;
}

Vocabulary tiny_vocab(int max_indices = 2) {
  return extend_vocabulary(
      Vocabulary::build({"Sys.<stop>\nUSER: What is here? <image><stop>\n"
                         "ASSISTANT: The rice weighs <mass_1> grams, mask <seg_1>.<stop>\n"}),
      max_indices);
}

Tensor random_image(long size, std::uint64_t seed) {
  Tensor img = Tensor::zeros({size, size, 3});
  std::mt19937_64 rng(seed);
  for (auto& v : img.data) v = static_cast<double>(rng() % 256) / 255.0;
  return img;
}

// ids for "a b <mass_1> c <seg_1>" style probe sequences, built from vocab
std::vector<long> probe_ids(const Vocabulary& vocab, int n_text, long mass_pos, long seg_pos) {
  std::vector<long> ids;
  long filler = *vocab.id_of(" rice");
  for (int i = 0; i < n_text; ++i) ids.push_back(filler);
  if (mass_pos >= 0)
    ids[static_cast<std::size_t>(mass_pos)] =
        *vocab.task_token_id(TaskToken::ingredient(NutritionField::mass, 1));
  if (seg_pos >= 0) ids[static_cast<std::size_t>(seg_pos)] = *vocab.task_token_id(TaskToken::seg(1));
  return ids;
}

long expected_trainable(const ModelConfig& c, int max_indices, bool lora) {
  long d = c.d_model;
  long count = (5 + 6L * max_indices) * d;  // embed.task
  long prev = d;
  for (long dim : c.proj_dims) {
    count += dim * prev + dim;
    prev = dim;
  }
  long proj_out = prev;
  long per_head = 0;
  long in = proj_out;
  for (long dim : c.head_dims) {
    per_head += dim * in + dim;
    in = dim;
  }
  count += 10 * per_head;
  long m = c.mask_decode_dim;
  count += (m * proj_out + m) + 3 * (m * d + m);      // wq/bq, wk/bk, wv/bv, wf/bf
  count += 2 * (m * m + m + m * m + m);               // two rounds of FF
  count += (m * 2 * m + m);                           // px.w1/b1
  count += c.patch_size * c.patch_size * (m + 1);     // px.w2/b2
  if (lora) count += c.n_layers * 4 * 2 * (static_cast<long>(c.lora_rank) * d);
  return count;
}

}  // namespace

TEST_CASE("config validation rejects inconsistent dimensions") {
  ModelConfig mc = tiny_config();
  CHECK_NOTHROW(mc.validate());
  mc.d_model = 30;  // not divisible by n_heads=2? it is; use 31
  mc.d_model = 31;
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_config();
  mc.patch_size = 7;  // 16 % 7 != 0
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_config();
  mc.max_seq_len = 4;  // under the visual prefix
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_config();
  mc.head_dims = {16, 3};
  CHECK_THROWS_AS(mc.validate(), ConfigError);
  mc = tiny_config();
  mc.lora_rank = 64;  // exceeds d_model
  CHECK_THROWS_AS(mc.validate(), ConfigError);
}

TEST_CASE("construction insists on an extended vocabulary") {
  Vocabulary bare = Vocabulary::build({"some words"});
  CHECK_THROWS_AS(FoodModel(tiny_config(), bare, 1), ConfigError);
  CHECK_NOTHROW(FoodModel(tiny_config(), tiny_vocab(), 1));

  ModelConfig wrong = tiny_config();
  wrong.vocab_size = 7;  // disagrees with the vocabulary
  CHECK_THROWS_AS(FoodModel(wrong, tiny_vocab(), 1), ConfigError);
}

TEST_CASE("patch layout conversions invert each other") {
  std::mt19937_64 rng(3);
  for (auto [image, patch] : std::vector<std::pair<long, long>>{{16, 4}, {16, 8}, {32, 8}}) {
    Tensor hw = Tensor::zeros({image, image});
    for (auto& v : hw.data) v = static_cast<double>(rng()) / 1e19;
    Tensor patches = to_patch_layout(hw, patch);
    CHECK(patches.shape == std::vector<long>{(image / patch) * (image / patch), patch * patch});
    Tensor back = from_patch_layout(patches, image, patch);
    CHECK(back.shape == hw.shape);
    CHECK(back.data == hw.data);  // bitwise
    // and the other direction
    Tensor again = to_patch_layout(back, patch);
    CHECK(again.data == patches.data);
  }
}

TEST_CASE("patch encoding is local: swapping patches swaps embedding rows") {
  ModelConfig mc = tiny_config(16, 8);  // 4 patches
  FoodModel model(mc, tiny_vocab(), 11);
  Tensor img = random_image(16, 21);
  Tensor base = model.encode_image(img);

  // swap patch 0 (rows 0-7, cols 0-7) with patch 3 (rows 8-15, cols 8-15)
  Tensor swapped = img;
  for (long r = 0; r < 8; ++r)
    for (long c = 0; c < 8; ++c)
      for (long ch = 0; ch < 3; ++ch) {
        double a = swapped.data[static_cast<std::size_t>(((r)*16 + c) * 3 + ch)];
        double b = swapped.data[static_cast<std::size_t>(((r + 8) * 16 + c + 8) * 3 + ch)];
        swapped.data[static_cast<std::size_t>(((r)*16 + c) * 3 + ch)] = b;
        swapped.data[static_cast<std::size_t>(((r + 8) * 16 + c + 8) * 3 + ch)] = a;
      }
  Tensor after = model.encode_image(swapped);
  for (long c = 0; c < mc.d_model; ++c) {
    CHECK(after.at(0, c) == base.at(3, c));
    CHECK(after.at(3, c) == base.at(0, c));
    CHECK(after.at(1, c) == base.at(1, c));
    CHECK(after.at(2, c) == base.at(2, c));
  }
}

TEST_CASE("forward shapes hold across image and patch sizes") {
  for (auto [image, patch] : std::vector<std::pair<long, long>>{{16, 4}, {16, 8}, {32, 8}}) {
    CAPTURE(image);
    CAPTURE(patch);
    ModelConfig mc = tiny_config(image, patch);
    mc.max_seq_len = mc.n_patches() + 32;
    Vocabulary vocab = tiny_vocab();
    FoodModel model(mc, vocab, 5);
    Tensor visual = model.encode_image(random_image(image, 33));
    CHECK(visual.shape == std::vector<long>{mc.n_patches(), mc.d_model});

    std::vector<long> ids = probe_ids(vocab, 8, 3, 6);
    ModelOutput out = model.forward(visual, ids, {3, 6});
    CHECK(out.visual_rows == mc.n_patches());
    CHECK(out.logits.shape == std::vector<long>{mc.n_patches() + 8, vocab.size()});
    CHECK(out.logits.all_finite());

    REQUIRE(out.nutrition_predictions.size() == 1);
    CHECK(out.nutrition_predictions[0].position == 3);
    CHECK(out.nutrition_predictions[0].token == TaskToken::ingredient(NutritionField::mass, 1));
    CHECK(std::isfinite(out.nutrition_predictions[0].value));

    REQUIRE(out.mask_predictions.size() == 1);
    const MaskPrediction& mp = out.mask_predictions[0];
    CHECK(mp.token == TaskToken::seg(1));
    CHECK(mp.logits.shape == std::vector<long>{image, image});
    CHECK(mp.probabilities.shape == std::vector<long>{image, image});
    for (long i = 0; i < mp.probabilities.numel(); ++i) {
      CHECK(mp.probabilities[i] > 0.0);
      CHECK(mp.probabilities[i] < 1.0);
      CHECK(mp.probabilities[i] ==
            doctest::Approx(1.0 / (1.0 + std::exp(-mp.logits[i]))).epsilon(1e-12));
    }

    REQUIRE(out.task_embeddings.count(3) == 1);
    CHECK(out.task_embeddings.at(3).numel() == mc.proj_dims.back());
  }
}

TEST_CASE("forward validates task positions") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 5);
  Tensor visual = model.encode_image(random_image(16, 1));
  std::vector<long> ids = probe_ids(vocab, 6, 2, -1);
  CHECK_THROWS_AS(model.forward(visual, ids, {99}), DataError);
  CHECK_THROWS_AS(model.forward(visual, ids, {0}), DataError);  // plain word, not a task token
  CHECK_NOTHROW(model.forward(visual, ids, {2}));

  // sequences beyond max_seq_len are rejected rather than silently truncated
  std::vector<long> too_long = probe_ids(vocab, 200, -1, -1);
  CHECK_THROWS_AS(model.forward(visual, too_long, {}), DataError);
}

TEST_CASE("text attention is causal") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 9);
  Tensor visual = model.encode_image(random_image(16, 2));
  std::vector<long> ids = probe_ids(vocab, 10, -1, -1);
  ModelOutput before = model.forward(visual, ids, {});

  std::vector<long> mutated = ids;
  mutated[7] = Vocabulary::kStopId;  // change a late token
  ModelOutput after = model.forward(visual, mutated, {});

  // rows strictly before the mutated position are bit-identical
  long v = vocab.size();
  for (long row = 0; row < before.visual_rows + 7; ++row)
    for (long c = 0; c < v; ++c) CHECK(before.logits.at(row, c) == after.logits.at(row, c));
  // the mutated position's own row changes (token embedding feeds its row)
  bool changed = false;
  for (long c = 0; c < v; ++c)
    if (before.logits.at(before.visual_rows + 7, c) != after.logits.at(after.visual_rows + 7, c))
      changed = true;
  CHECK(changed);
}

TEST_CASE("fresh adapters leave the forward bit-identical") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 13);
  Tensor visual = model.encode_image(random_image(16, 3));
  std::vector<long> ids = probe_ids(vocab, 8, 3, 6);
  ModelOutput before = model.forward(visual, ids, {3, 6});

  model.apply_lora(4, 8.0, 0.0);
  CHECK(model.lora_active());
  ModelOutput after = model.forward(visual, ids, {3, 6});
  CHECK(before.logits.data == after.logits.data);  // bitwise
  CHECK(before.nutrition_predictions[0].value == after.nutrition_predictions[0].value);
  CHECK(before.mask_predictions[0].logits.data == after.mask_predictions[0].logits.data);

  CHECK_THROWS_AS(model.apply_lora(4, 8.0, 0.0), ConfigError);  // double apply
}

TEST_CASE("merging trained adapters preserves the function to 1e-5") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 17);
  model.apply_lora(4, 8.0, 0.0);

  // push the adapters away from zero so the merge actually moves weights
  std::mt19937_64 rng(99);
  for (const auto& name : model.params().names()) {
    if (name.rfind("lora.", 0) != 0) continue;
    for (auto& v : model.params().at(name).value.data)
      v += (static_cast<double>(rng() % 1000) / 1000.0 - 0.5) * 0.02;
  }

  Tensor visual = model.encode_image(random_image(16, 4));
  std::vector<long> ids = probe_ids(vocab, 8, 3, 6);
  ModelOutput before = model.forward(visual, ids, {3, 6});
  CHECK(model.params().has("lora.0.q.a"));

  model.merge_lora();
  CHECK_FALSE(model.lora_active());
  CHECK_FALSE(model.params().has("lora.0.q.a"));
  ModelOutput after = model.forward(visual, ids, {3, 6});

  double max_diff = 0.0;
  for (long i = 0; i < before.logits.numel(); ++i)
    max_diff = std::max(max_diff, std::abs(before.logits[i] - after.logits[i]));
  CHECK(max_diff < 1e-5);
  CHECK(std::abs(before.nutrition_predictions[0].value - after.nutrition_predictions[0].value) <
        1e-5);
  CHECK_THROWS_AS(model.merge_lora(), ConfigError);  // nothing left to merge
}

TEST_CASE("trainable parameter count matches the analytic formula") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab(2);
  FoodModel model(mc, vocab, 23);
  CHECK(model.params().trainable_count() == expected_trainable(mc, 2, false));

  model.apply_lora(mc.lora_rank, mc.lora_alpha, 0.0);
  CHECK(model.params().trainable_count() == expected_trainable(mc, 2, true));

  // frozen backbone: embeddings, positions, blocks, final LN, vision tower
  for (const char* frozen : {"embed.base", "pos", "vision.patch", "blocks.0.attn.q",
                             "blocks.1.ff.w1", "final_ln.gain"})
    CHECK_FALSE(model.params().at(frozen).trainable);
  for (const char* trained : {"embed.task", "proj.w0", "heads.dish_cal.w0",
                              "heads.ing_mass.w1", "maskdec.wq", "lora.1.v.a"})
    CHECK(model.params().at(trained).trainable);
}

TEST_CASE("checkpoints round-trip the model bit-exactly") {
  namespace fs = std::filesystem;
  std::string path = (fs::temp_directory_path() / "umami_test_model.ckpt").string();
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 29);
  model.apply_lora(4, 8.0, 0.05);
  std::mt19937_64 rng(7);
  for (const auto& name : model.params().names())
    if (name.rfind("lora.", 0) == 0)
      for (auto& v : model.params().at(name).value.data)
        v += (static_cast<double>(rng() % 100) / 100.0 - 0.5) * 0.01;

  model.save(path);
  FoodModel loaded = FoodModel::load(path);
  CHECK(loaded.config().d_model == mc.d_model);
  CHECK(loaded.config().lora_rank == 4);
  CHECK(loaded.lora_active());
  CHECK(loaded.vocabulary().size() == vocab.size());
  CHECK(loaded.vocabulary().tokens() == vocab.tokens());
  CHECK(loaded.params().names() == model.params().names());
  for (const auto& name : model.params().names()) {
    const Param& a = model.params().at(name);
    const Param& b = loaded.params().at(name);
    CHECK(a.trainable == b.trainable);
    CHECK(a.value.shape == b.value.shape);
    CHECK(a.value.data == b.value.data);  // bitwise
  }

  Tensor visual = model.encode_image(random_image(16, 8));
  std::vector<long> ids = probe_ids(vocab, 8, 3, 6);
  ModelOutput a = model.forward(visual, ids, {3, 6});
  ModelOutput b = loaded.forward(visual, ids, {3, 6});
  CHECK(a.logits.data == b.logits.data);

  // a second save of the loaded model produces identical bytes
  std::string path2 = (fs::temp_directory_path() / "umami_test_model2.ckpt").string();
  loaded.save(path2);
  CHECK(read_file(path) == read_file(path2));

  CHECK_THROWS_AS(FoodModel::load("/nonexistent/umami.ckpt"), DataError);
}

TEST_CASE("generation is deterministic, bounded and stops after the stop id") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 31);
  Tensor visual = model.encode_image(random_image(16, 9));
  std::vector<long> prompt = probe_ids(vocab, 5, -1, -1);

  std::vector<long> a = model.generate(visual, prompt, 12);
  std::vector<long> b = model.generate(visual, prompt, 12);
  CHECK(a == b);
  CHECK(a.size() <= 12);
  REQUIRE(!a.empty());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] >= 0);
    CHECK(a[i] < vocab.size());
    if (a[i] == Vocabulary::kStopId) CHECK(i + 1 == a.size());
  }

  // zero budget means an empty continuation
  CHECK(model.generate(visual, prompt, 0).empty());
}

TEST_CASE("forward and graph forward agree at inference settings") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel model(mc, vocab, 37);
  Tensor visual = model.encode_image(random_image(16, 10));
  std::vector<long> ids = probe_ids(vocab, 8, 3, 6);
  ModelOutput out = model.forward(visual, ids, {3, 6});

  ag::Tape tape;
  ParamBinding binding = model.bind(tape);
  GraphOutput g = model.forward_graph(tape, binding, visual, ids, {3, 6}, {});
  CHECK(g.visual_rows == out.visual_rows);
  const Tensor& gl = tape.val(g.logits);
  REQUIRE(gl.shape == out.logits.shape);
  for (long i = 0; i < gl.numel(); ++i)
    CHECK(gl[i] == doctest::Approx(out.logits[i]).epsilon(1e-10));

  REQUIRE(g.nutrition_sites.size() == 1);
  CHECK(tape.val(g.nutrition_sites[0].value)[0] ==
        doctest::Approx(out.nutrition_predictions[0].value).epsilon(1e-10));

  REQUIRE(g.mask_sites.size() == 1);
  Tensor gp = from_patch_layout(tape.val(g.mask_sites[0].probabilities), mc.image_size,
                                mc.patch_size);
  for (long i = 0; i < gp.numel(); ++i)
    CHECK(gp[i] == doctest::Approx(out.mask_predictions[0].probabilities[i]).epsilon(1e-10));
}

TEST_CASE("different seeds give different weights, same seed identical weights") {
  ModelConfig mc = tiny_config();
  Vocabulary vocab = tiny_vocab();
  FoodModel a(mc, vocab, 41);
  FoodModel b(mc, vocab, 41);
  FoodModel c(mc, vocab, 42);
  CHECK(a.params().at("proj.w0").value.data == b.params().at("proj.w0").value.data);
  CHECK(a.params().at("proj.w0").value.data != c.params().at("proj.w0").value.data);
}
